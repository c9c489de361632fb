"""Command-line harness: seeded experiments with CSV/JSON/SVG outputs.

Subcommands:

* ``reversal-check``  - retrace-error convergence study (exit 0 iff the
  fitted order is at least 0.8, or a single step count was given).
* ``edit``            - replicated edits (sync / resampling / independent)
  with per-replicate JSON, aggregate CSV and a per-step deviation plot.
* ``coupling-bench``  - one-step greedy-optimality experiment plus the
  trace-identity sweep (exit 0 iff synchronous is the argmin and every
  Monte-Carlo trace check passes).
* ``marginal-check``  - fresh-noise reverse sampling against the analytic
  target moments; the velocity form also two-sample-KS-compares against the
  score form.

Exit codes: 0 pass, 1 assertion failure, 2 usage/config error.  Outputs are
byte-identical across reruns with the same config and seed: no timestamps,
fixed float formatting, deterministic iteration order.  Config validation
happens before any computation, so a failing config never leaves partial
output files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import stats as sstats

from . import _backend
from .config import ConfigError, RunConfig, load_config
from .coupling import (Reflection, Synchronous, greedy_optimality_experiment,
                       rule_label, trace_identity_check)
from .editing import EditConfig, independent_edit, resampling_ode_edit, sync_edit
from .paths import write_brownian_csv, write_trajectory_csv
from .schedule import RectifiedFlow, ScheduleDomainError
from .scores import ConditionalGaussianFamily
from .svgplot import Series, line_plot
from .verify import convergence_study, marginal_check, sample_reverse_endpoints

ORDER_GATE = 0.8
KS_GATE = 0.01


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _replicate_seeds(base_seed: int, n: int) -> np.ndarray:
    """Two independent 64-bit words per replicate (y0 draw, edit seed)."""
    return np.random.SeedSequence(base_seed).generate_state(2 * n, dtype=np.uint64)


def cmd_reversal_check(cfg: RunConfig) -> int:
    if isinstance(cfg.schedule, RectifiedFlow):
        raise ConfigError("reversal-check needs a schedule defined at forward "
                          "time 1 (the rectified schedule is not)")
    spec = cfg.reversal
    ns = [int(n) for n in spec["steps_list"]]
    res = convergence_study(cfg.oracle, spec["label"], cfg.schedule, ns,
                            seeds=int(spec["seeds"]), base_seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    _write_csv(os.path.join(cfg.out, "convergence.csv"),
               ["n_steps", "median_sup_error"],
               zip(res.n_steps, res.medians))
    passed = res.order is None or res.order >= ORDER_GATE
    _write_json(os.path.join(cfg.out, "summary.json"), {
        "command": "reversal-check",
        "n_steps": list(res.n_steps),
        "medians": list(res.medians),
        "order": res.order,
        "monotone": res.monotone,
        "order_gate": ORDER_GATE,
        "passed": bool(passed),
    })
    line_plot([Series("median retrace error", res.n_steps, res.medians)],
              os.path.join(cfg.out, "convergence.svg"),
              title="Pathwise retrace error vs step count",
              xlabel="steps", ylabel="median sup error", logx=True, logy=True)
    return 0 if passed else 1


def _monge_shift(cfg: RunConfig):
    """Translation optimal-transport map, defined for equal-std Gaussian labels."""
    oracle = cfg.oracle
    if not isinstance(oracle, ConditionalGaussianFamily):
        return None
    if abs(oracle.std(cfg.c_src) - oracle.std(cfg.c_tar)) > 1e-12:
        return None
    return oracle.mean(cfg.c_tar) - oracle.mean(cfg.c_src)


def _run_one_edit(cfg: RunConfig, y0_word: int, edit_word: int):
    rng = np.random.default_rng(y0_word)
    y0 = cfg.oracle.sample_data(cfg.c_src, 1, rng)[0]
    ecfg = EditConfig(cfg.grid, start_step=cfg.start_step, w_src=cfg.w_src,
                      w_tar=cfg.w_tar, seed=int(edit_word))
    if cfg.method == "sync":
        result = sync_edit(y0, cfg.c_src, cfg.c_tar, cfg.oracle, cfg.schedule, ecfg)
        return y0, result.edited, result
    if cfg.method == "resampling":
        result = resampling_ode_edit(y0, cfg.c_src, cfg.c_tar, cfg.oracle,
                                     cfg.schedule, ecfg)
        return y0, result.edited, result
    edited = independent_edit(y0, cfg.c_tar, cfg.oracle, cfg.schedule, ecfg)
    return y0, edited, None


def cmd_edit(cfg: RunConfig) -> int:
    words = _replicate_seeds(cfg.seed, cfg.replicates)
    tasks = [(int(words[2 * i]), int(words[2 * i + 1])) for i in range(cfg.replicates)]
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outputs = list(pool.map(lambda t: _run_one_edit(cfg, *t), tasks))
    else:
        outputs = [_run_one_edit(cfg, *t) for t in tasks]

    shift = _monge_shift(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    edits_dir = os.path.join(cfg.out, "edits")
    os.makedirs(edits_dir, exist_ok=True)

    d = cfg.oracle.dim
    header = ["replicate", "seed"]
    header += [f"y0_{i}" for i in range(d)] + [f"edited_{i}" for i in range(d)]
    if shift is not None:
        header += [f"monge_dev_{i}" for i in range(d)]
    rows = []
    deviations = []
    step_dev = []
    for i, ((y0_word, edit_word), (y0, edited, result)) in enumerate(zip(tasks, outputs)):
        row = [i, edit_word] + [float(v) for v in y0] + [float(v) for v in edited]
        record = {"replicate": i, "seed": edit_word,
                  "y0": [float(v) for v in y0],
                  "edited": [float(v) for v in edited]}
        if shift is not None:
            dev = edited - (y0 + shift)
            row += [float(v) for v in dev]
            record["monge_deviation"] = [float(v) for v in dev]
            deviations.append(dev)
        if result is not None:
            diag = result.diagnostics
            finite = diag.deviation_norms[np.isfinite(diag.deviation_norms)]
            record["max_step_deviation"] = float(finite.max()) if finite.size else None
            step_dev.append(diag.deviation_norms)
        rows.append(row)
        _write_json(os.path.join(edits_dir, f"replicate_{i:04d}.json"), record)
    _write_csv(os.path.join(cfg.out, "replicates.csv"), header, rows)

    first = outputs[0][2]
    if first is not None:
        traj_dir = os.path.join(cfg.out, "trajectories")
        os.makedirs(traj_dir, exist_ok=True)
        with open(os.path.join(traj_dir, "replicate_0000_source.csv"), "w") as fh:
            write_trajectory_csv(first.source_reverse, fh)
        with open(os.path.join(traj_dir, "replicate_0000_target.csv"), "w") as fh:
            write_trajectory_csv(first.target_reverse, fh)
        if first.backward_path is not None:
            with open(os.path.join(traj_dir, "replicate_0000_backward.csv"), "w") as fh:
                write_brownian_csv(first.backward_path, fh)

    diffs = np.array([e - y for (_, _), (y, e, _) in zip(tasks, outputs)])
    summary = {
        "command": "edit",
        "method": cfg.method,
        "replicates": cfg.replicates,
        "start_step": cfg.start_step,
        "mean_shift": diffs.mean(axis=0),
        "std_shift": diffs.std(axis=0, ddof=1) if cfg.replicates > 1 else None,
    }
    if shift is not None:
        devs = np.array(deviations)
        summary["monge_shift"] = shift
        summary["monge_mean_deviation"] = devs.mean(axis=0)
        summary["monge_mse"] = float(np.mean(np.sum(devs**2, axis=1)))
    _write_json(os.path.join(cfg.out, "summary.json"), summary)

    if step_dev:
        stacked = np.array(step_dev)[:, cfg.start_step:]
        mean_dev = stacked.mean(axis=0)
        ks = np.arange(cfg.start_step, cfg.start_step + mean_dev.size)
        line_plot([Series("mean ||Z_k - Y_k||", tuple(ks), tuple(mean_dev))],
                  os.path.join(cfg.out, "deviation.svg"),
                  title=f"Per-step source-target deviation ({cfg.method})",
                  xlabel="reverse step", ylabel="deviation norm")
    return 0


def cmd_coupling_bench(cfg: RunConfig) -> int:
    rules = cfg.coupling_rules()
    if not any(isinstance(r, Synchronous) for r in rules):
        raise ConfigError("coupling.rules must include 'synchronous'")
    spec = cfg.coupling
    step_index = int(spec.get("step_index", -1))
    ecfg = EditConfig(cfg.grid, start_step=cfg.start_step, w_src=cfg.w_src,
                      w_tar=cfg.w_tar, seed=cfg.seed)
    try:
        report = greedy_optimality_experiment(
            cfg.oracle, cfg.schedule, ecfg, rules, int(spec["n_draws"]),
            cfg.c_src, cfg.c_tar,
            step_index=None if step_index < 0 else step_index)
    except ScheduleDomainError as exc:
        raise ConfigError(str(exc)) from exc

    d = cfg.oracle.dim
    mc_draws = int(spec["mc_draws"])
    checks = []
    for i, rule in enumerate(rules):
        if isinstance(rule, Reflection):
            q = np.eye(d)
            q[0, 0] = -1.0  # canonical unit-direction reflection
        else:
            q = rule.matrix(d)
        chk = trace_identity_check(q, report.dt, mc_draws, seed=cfg.seed + 1000 + i)
        checks.append((rule_label(rule), chk))

    trace_ok = all(c.passed for _, c in checks)
    passed = report.synchronous_is_argmin and trace_ok

    os.makedirs(cfg.out, exist_ok=True)
    _write_csv(os.path.join(cfg.out, "one_step.csv"),
               ["rule", "one_step_mean", "one_step_se", "gap_mean", "gap_se",
                "gap_z", "gap_p", "end_mean", "end_se"],
               [(s.rule, s.one_step_mean, s.one_step_se, s.gap_mean, s.gap_se,
                 s.gap_z, s.gap_p, s.end_mean, s.end_se) for s in report.rules])
    _write_csv(os.path.join(cfg.out, "trace_identity.csv"),
               ["rule", "dim", "expected", "mc_mean", "mc_se", "z", "passed"],
               [(name, d, c.expected, c.mc_mean, c.mc_se, float(c.z), c.passed)
                for name, c in checks])
    _write_json(os.path.join(cfg.out, "summary.json"), {
        "command": "coupling-bench",
        "report": report.to_dict(),
        "trace_identity_passed": bool(trace_ok),
        "passed": bool(passed),
    })
    idx = list(range(len(report.rules)))
    line_plot([Series("one-step E||Z-Y||^2", idx,
                      [s.one_step_mean for s in report.rules])],
              os.path.join(cfg.out, "one_step.svg"),
              title="One-step expected squared deviation by rule",
              xlabel="rule index (see one_step.csv)", ylabel="cost")
    return 0 if passed else 1


def _sched_spec(cfg: RunConfig) -> dict:
    spec = cfg.raw.get("schedule", {})
    return spec if isinstance(spec, dict) else {}


def _mixture_cdf(oracle, label, xs):
    tab = oracle.table(label)
    w = np.exp(tab.log_weights)
    cdf = np.zeros_like(xs)
    for wi, mu, s2 in zip(w, tab.means[:, 0], tab.sigma2):
        cdf += wi * sstats.norm.cdf(xs, loc=mu, scale=np.sqrt(s2))
    return cdf


def cmd_marginal_check(cfg: RunConfig) -> int:
    spec = cfg.marginal
    n_samples = int(spec["samples"])
    label = spec["label"]
    form = spec["form"]
    start = int(spec.get("start_step", 1))
    n_steps = int(spec.get("steps", 256))
    sched = cfg.schedule
    if isinstance(sched, RectifiedFlow) and "t_max" not in _sched_spec(cfg):
        sched = RectifiedFlow.for_steps(n_steps)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2, dtype=np.uint64)
    try:
        samples = sample_reverse_endpoints(cfg.oracle, label, sched,
                                           n_steps, n_samples,
                                           int(seeds[0]), start_step=start,
                                           form=form)
    except (ValueError, ScheduleDomainError) as exc:
        raise ConfigError(str(exc)) from exc
    mean, var = cfg.oracle.marginal_moments(label, 0.0, sched)
    report = marginal_check(samples, mean, var)

    ks_vs_score = None
    passed = report.passed
    if form == "velocity":
        score_samples = sample_reverse_endpoints(cfg.oracle, label, sched,
                                                 n_steps, n_samples,
                                                 int(seeds[1]), start_step=start,
                                                 form="score")
        ks_vs_score = []
        for i in range(samples.shape[1]):
            res = sstats.ks_2samp(samples[:, i], score_samples[:, i])
            ks_vs_score.append({"coordinate": i, "statistic": float(res.statistic),
                                "pvalue": float(res.pvalue)})
        passed = passed and all(item["pvalue"] > KS_GATE for item in ks_vs_score)

    os.makedirs(cfg.out, exist_ok=True)
    d = samples.shape[1]
    _write_csv(os.path.join(cfg.out, "samples.csv"),
               [f"x{i}" for i in range(d)],
               ([float(v) for v in row] for row in samples))
    _write_csv(os.path.join(cfg.out, "moments.csv"),
               ["coordinate", "target_mean", "target_var", "z_mean", "z_var",
                "ks_stat", "ks_p"],
               [(i, float(mean[i]), float(var[i]), float(report.z_mean[i]),
                 float(report.z_var[i]), float(report.ks_stat[i]),
                 float(report.ks_p[i])) for i in range(d)])
    summary = {
        "command": "marginal-check",
        "form": form,
        "samples": n_samples,
        "steps": n_steps,
        "start_step": start,
        "z_mean": report.z_mean,
        "z_var": report.z_var,
        "ks_stat": report.ks_stat,
        "ks_p": report.ks_p,
        "moments_passed": bool(report.passed),
        "passed": bool(passed),
    }
    if ks_vs_score is not None:
        summary["ks_vs_score_form"] = ks_vs_score
    _write_json(os.path.join(cfg.out, "summary.json"), summary)

    xs = np.sort(samples[:, 0])
    emp = (np.arange(1, n_samples + 1)) / n_samples
    line_plot([Series("empirical", tuple(xs), tuple(emp)),
               Series("target", tuple(xs), tuple(_mixture_cdf(cfg.oracle, label, xs)))],
              os.path.join(cfg.out, "cdf.svg"),
              title=f"Endpoint CDF vs target ({form} form)",
              xlabel="x", ylabel="CDF", markers=False)
    return 0 if passed else 1


_COMMANDS = {
    "reversal-check": cmd_reversal_check,
    "edit": cmd_edit,
    "coupling-bench": cmd_coupling_bench,
    "marginal-check": cmd_marginal_check,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sdesync",
        description="Coupled reverse-time SDE experiments on analytic-score toys.")
    parser.add_argument("--backend", action="store_true",
                        help="print the kernel backend in use and exit")
    sub = parser.add_subparsers(dest="command")
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--jobs", type=int, default=None, help="override run.jobs")
        p.add_argument("--out", default=None, help="override run.out")
    args = parser.parse_args(argv)

    if args.backend:
        print(_backend.backend_name())
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2

    overrides: dict = {"run": {}}
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    if args.jobs is not None:
        overrides["run"]["jobs"] = args.jobs
    if args.out is not None:
        overrides["run"]["out"] = args.out
    try:
        cfg = load_config(args.config, overrides=overrides)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
