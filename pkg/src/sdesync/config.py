"""Declarative run configuration: TOML files, defaults, validation.

A config is a TOML document with optional sections (``[schedule]``,
``[grid]``, ``[oracle]``, ``[edit]``, ``[run]`` plus per-command sections);
anything omitted falls back to the built-in defaults, so every subcommand
also runs without a config file.  ``schedule`` may be a bare string
(``schedule = "rectified"``) or a table
(``schedule = {kind = "constant_ou", alpha = 1.0, g = 1.0}``).

Validation happens before any computation; a :class:`ConfigError` maps to
exit code 2 and never leaves partial output files behind.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .coupling import (CouplingRule, FixedOrthonormal, RandomOrthonormal,
                       Reflection, Synchronous)
from .paths import TimeGrid
from .schedule import ConstantOU, NoiseSchedule, RectifiedFlow, Tabulated
from .scores import ConditionalGaussianFamily, ConditionalMixtureFamily

__all__ = ["ConfigError", "RunConfig", "load_config", "DEFAULTS"]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


DEFAULTS: dict[str, Any] = {
    "schedule": {"kind": "constant_ou", "alpha": 1.0, "g": 1.0},
    "grid": {"steps": 28},
    "oracle": {
        "labels": {
            "src": {"mean": [-2.0], "std": 0.5},
            "tar": {"mean": [2.0], "std": 0.5},
        },
    },
    "edit": {
        "method": "sync",
        "source": "src",
        "target": "tar",
        "start_step": 4,
        "w_src": 1.0,
        "w_tar": 1.0,
    },
    "run": {"seed": 0, "replicates": 16, "jobs": 1, "out": "out"},
    "reversal": {"steps_list": [16, 32, 64, 128], "seeds": 100, "label": "src"},
    # the 3-SE moment gates need a finer grid than the editing default of 28
    # steps; 256 keeps the Euler bias well inside the gates at 10^4 samples
    "marginal": {"samples": 10000, "label": "src", "form": "score",
                 "start_step": 1, "steps": 256},
    "coupling": {
        "n_draws": 1000,
        "step_index": -1,  # -1: middle of the grid
        "mc_draws": 200000,
        "rules": ["synchronous", "reflection", {"kind": "random", "seed": 17, "count": 4}],
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build_schedule(spec, n_steps: int) -> NoiseSchedule:
    if isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"schedule must be a kind string or a table with 'kind', got {spec!r}")
    kind = spec["kind"]
    try:
        if kind in ("constant_ou", "ou"):
            return ConstantOU(float(spec.get("alpha", 1.0)), float(spec.get("g", 1.0)),
                              t_max=float(spec.get("t_max", 1.0)))
        if kind in ("rectified", "rectified_flow"):
            if "t_max" in spec:
                return RectifiedFlow(t_max=float(spec["t_max"]))
            return RectifiedFlow.for_steps(n_steps)
        if kind == "tabulated":
            return Tabulated(np.asarray(spec["times"], dtype=float),
                             np.asarray(spec["alphas"], dtype=float),
                             np.asarray(spec["gs"], dtype=float))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad schedule spec: {exc}") from exc
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _build_oracle(spec: dict):
    labels = spec.get("labels")
    if not isinstance(labels, dict) or not labels:
        raise ConfigError("oracle.labels must map label names to distributions")
    gaussian = all("weights" not in v for v in labels.values())
    try:
        if gaussian:
            return ConditionalGaussianFamily(
                {c: (v["mean"], float(v["std"])) for c, v in labels.items()})
        mixture = {}
        for c, v in labels.items():
            if "weights" in v:
                comps = list(zip(v["weights"], v["means"], v["stds"]))
            else:
                comps = [(1.0, v["mean"], float(v["std"]))]
            mixture[c] = comps
        return ConditionalMixtureFamily(mixture)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad oracle spec: {exc}") from exc


def _build_rules(specs, dim: int) -> list[CouplingRule]:
    rules: list[CouplingRule] = []
    for item in specs:
        if isinstance(item, str):
            if item == "synchronous":
                rules.append(Synchronous())
            elif item == "reflection":
                rules.append(Reflection())
            else:
                raise ConfigError(f"unknown rule {item!r}")
            continue
        if not isinstance(item, dict) or "kind" not in item:
            raise ConfigError(f"bad rule spec {item!r}")
        kind = item["kind"]
        if kind == "synchronous":
            rules.append(Synchronous())
        elif kind == "reflection":
            rules.append(Reflection())
        elif kind == "fixed":
            try:
                rules.append(FixedOrthonormal(np.asarray(item["q"], dtype=float)))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad fixed rule: {exc}") from exc
        elif kind == "random":
            count = int(item.get("count", 1))
            seed = int(item.get("seed", 0))
            rules.extend(RandomOrthonormal(seed=seed + i) for i in range(count))
        else:
            raise ConfigError(f"unknown rule kind {kind!r}")
    return rules


@dataclass
class RunConfig:
    """Validated configuration shared by the CLI subcommands."""

    raw: dict
    schedule: NoiseSchedule
    grid: TimeGrid
    oracle: object
    method: str
    c_src: str
    c_tar: str
    start_step: int
    w_src: float
    w_tar: float
    seed: int
    replicates: int
    jobs: int
    out: str
    reversal: dict = field(default_factory=dict)
    marginal: dict = field(default_factory=dict)
    coupling: dict = field(default_factory=dict)

    def coupling_rules(self) -> list[CouplingRule]:
        return _build_rules(self.coupling["rules"], self.oracle.dim)


def load_config(path: str | None, *, overrides: dict | None = None) -> RunConfig:
    """Parse, merge with defaults and validate; raises ConfigError on problems."""
    user: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    merged = _merge(DEFAULTS, user)
    if overrides:
        merged = _merge(merged, overrides)

    grid_spec = merged["grid"]
    try:
        steps = int(grid_spec["steps"])
        if "nodes" in grid_spec:
            grid = TimeGrid(np.asarray(grid_spec["nodes"], dtype=float))
        else:
            grid = TimeGrid.uniform(steps)
    except ValueError as exc:
        raise ConfigError(f"bad grid spec: {exc}") from exc

    sched = _build_schedule(merged["schedule"], grid.n_steps)
    oracle = _build_oracle(merged["oracle"])

    edit = merged["edit"]
    method = edit.get("method", "sync")
    if method not in ("sync", "resampling", "independent"):
        raise ConfigError(f"unknown edit method {method!r}")
    c_src, c_tar = edit.get("source"), edit.get("target")
    for label in (c_src, c_tar):
        if label not in oracle.labels:
            raise ConfigError(f"edit label {label!r} not defined in oracle.labels")
    start_step = int(edit.get("start_step", 0))
    if not 0 <= start_step <= grid.n_steps:
        raise ConfigError(f"start_step must lie in [0, {grid.n_steps}], got {start_step}")

    run = merged["run"]
    replicates = int(run.get("replicates", 1))
    if replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {replicates}")
    jobs = int(run.get("jobs", 1))
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")

    reversal = merged["reversal"]
    ns = list(reversal.get("steps_list", []))
    if not ns or any(int(b) <= int(a) for a, b in zip(ns, ns[1:])):
        raise ConfigError(f"reversal.steps_list must be a nonempty increasing list, got {ns}")
    if reversal.get("label") not in oracle.labels:
        raise ConfigError(f"reversal.label {reversal.get('label')!r} unknown")

    marginal = merged["marginal"]
    if int(marginal.get("samples", 0)) < 100:
        raise ConfigError("marginal.samples must be at least 100")
    if marginal.get("form") not in ("score", "velocity"):
        raise ConfigError(f"marginal.form must be 'score' or 'velocity', got {marginal.get('form')!r}")
    if marginal.get("label") not in oracle.labels:
        raise ConfigError(f"marginal.label {marginal.get('label')!r} unknown")

    coupling = merged["coupling"]
    _build_rules(coupling.get("rules", []), oracle.dim)  # validate early (exit 2 on bad Q)

    return RunConfig(
        raw=merged, schedule=sched, grid=grid, oracle=oracle, method=method,
        c_src=c_src, c_tar=c_tar, start_step=start_step,
        w_src=float(edit.get("w_src", 1.0)), w_tar=float(edit.get("w_tar", 1.0)),
        seed=int(run.get("seed", 0)), replicates=replicates, jobs=jobs,
        out=str(run.get("out", "out")), reversal=reversal, marginal=marginal,
        coupling=coupling,
    )
