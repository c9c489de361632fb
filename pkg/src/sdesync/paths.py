"""Time grids, Brownian paths, forward simulation and time reversal.

The reversal machinery realizes the pathwise reverse-time construction: a
forward path driven by increments {dW_k} determines "structured" backward
increments

    dWbar_k = -dW_{N-1-k} - g(1-t_k) S(Ybar_k, c, 1-t_k) dt_k

which are Brownian with respect to the reversed information flow, and
reverse Euler integration driven by them retraces the forward path (up to
the O(dt) discretization error).  The index N-1-k is the forward increment
covering [1 - t_{k+1}, 1 - t_k]; it requires the grid to be symmetric under
t -> 1 - t, which is why `backward_increments` rejects asymmetric grids.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .schedule import NoiseSchedule
from .scores import PromptLabel, ScoreOracle

__all__ = [
    "Direction",
    "TimeGrid",
    "BrownianPath",
    "Trajectory",
    "sample_brownian",
    "forward_closed_form",
    "forward_euler",
    "reverse_trajectory",
    "backward_increments",
    "write_trajectory_csv",
    "write_brownian_csv",
]

SYMMETRY_TOL = 1e-12


class Direction(enum.Enum):
    FORWARD = "forward"
    REVERSED = "reversed"


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes t_0 = 0 < ... < t_N <= 1.

    ``symmetric`` asserts that the node set is invariant under t -> 1 - t
    (within 1e-12); passing ``symmetric=None`` autodetects it.
    """

    nodes: np.ndarray
    symmetric: bool | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError(f"grid must start at 0, got t_0 = {nodes[0]}")
        if nodes[-1] > 1.0:
            raise ValueError(f"grid must end at or below 1, got t_N = {nodes[-1]}")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing (no zero steps)")
        is_symmetric = bool(np.max(np.abs(nodes + nodes[::-1] - 1.0)) <= SYMMETRY_TOL)
        if self.symmetric is True and not is_symmetric:
            raise ValueError("grid is not symmetric under t -> 1 - t")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if self.symmetric is None:
            object.__setattr__(self, "symmetric", is_symmetric)

    @classmethod
    def uniform(cls, n_steps: int) -> "TimeGrid":
        """Uniform symmetric grid t_k = k / n on [0, 1]."""
        if n_steps < 1:
            raise ValueError(f"n_steps must be positive, got {n_steps}")
        return cls(np.arange(n_steps + 1) / n_steps, symmetric=True)

    @property
    def n_steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(frozen=True)
class BrownianPath:
    """Per-step Gaussian increments; increments[k] spans [t_k, t_{k+1}]."""

    grid: TimeGrid
    increments: np.ndarray  # (N, d)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] != self.grid.n_steps:
            raise ValueError(
                f"increments must be (n_steps, d) = ({self.grid.n_steps}, d), "
                f"got {inc.shape}"
            )
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def dim(self) -> int:
        return self.increments.shape[1]


@dataclass(frozen=True)
class Trajectory:
    """States aligned to the grid nodes, forward or reversed in time."""

    grid: TimeGrid
    states: np.ndarray  # (N+1, d)
    direction: Direction = Direction.FORWARD

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"states must be (n_steps + 1, d) = ({self.grid.n_steps + 1}, d), "
                f"got {states.shape}"
            )
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def sample_brownian(grid: TimeGrid, d: int, rng: np.random.Generator) -> BrownianPath:
    """Increments dW_k ~ Normal(0, dt_k I_d), i.i.d. across steps."""
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    inc = rng.standard_normal((grid.n_steps, d)) * np.sqrt(grid.dt)[:, None]
    return BrownianPath(grid, inc)


def _as_vector(y0, d: int | None = None) -> np.ndarray:
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.ndim != 1:
        raise ValueError(f"state must be a vector, got shape {y0.shape}")
    if d is not None and y0.shape[0] != d:
        raise ValueError(f"dimension mismatch: state has {y0.shape[0]}, path has {d}")
    return y0


def forward_closed_form(y0, sched: NoiseSchedule, grid: TimeGrid,
                        path: BrownianPath) -> Trajectory:
    """Exact solution on the grid: Y_k = m(t_k) y0 + sum_{j<k} Phi(t_k,t_j) g(t_j) dW_j.

    The sum stops at j = k-1 so Y_k only sees noise up to t_k and Y_0 = y0
    exactly.
    """
    if path.grid is not grid and not np.array_equal(path.grid.nodes, grid.nodes):
        raise ValueError("path and grid do not match")
    y0 = _as_vector(y0, path.dim)
    tables = _backend.build_tables(sched, grid, reverse=False)
    states = _backend.forward_closed_form(y0, tables, path.increments)
    return Trajectory(grid, states, Direction.FORWARD)


def forward_euler(y0, sched: NoiseSchedule, grid: TimeGrid,
                  path: BrownianPath) -> Trajectory:
    """Euler-Maruyama discretization: Y_{k+1} = Y_k - alpha(t_k) Y_k dt_k + g(t_k) dW_k."""
    if path.grid is not grid and not np.array_equal(path.grid.nodes, grid.nodes):
        raise ValueError("path and grid do not match")
    y0 = _as_vector(y0, path.dim)
    tables = _backend.build_tables(sched, grid, reverse=False)
    states = _backend.forward_euler(y0, tables, path.increments)
    return Trajectory(grid, states, Direction.FORWARD)


def reverse_trajectory(traj: Trajectory) -> Trajectory:
    """Reindex states by t -> 1 - t (list reversal on a symmetric grid)."""
    if not traj.grid.symmetric:
        raise ValueError("reversal requires a symmetric time grid")
    direction = (Direction.REVERSED if traj.direction is Direction.FORWARD
                 else Direction.FORWARD)
    return Trajectory(traj.grid, traj.states[::-1].copy(), direction)


def backward_increments(path: BrownianPath, rev_traj: Trajectory,
                        oracle: ScoreOracle, label: PromptLabel,
                        sched: NoiseSchedule, *, guidance: float = 1.0,
                        start: int = 0) -> BrownianPath:
    """Structured backward Brownian increments along a reversed path.

    Steps below ``start`` are NaN-filled: the rectified schedule has no
    coefficients at forward time 1, so its k = 0 increment is not
    constructible and reverse integration must begin later.

    With ``guidance`` != 1 the score entering the construction is biased and
    the exact-retrace property no longer holds.
    """
    grid = path.grid
    if not grid.symmetric:
        raise ValueError("backward increments are defined on symmetric grids only")
    if rev_traj.direction is not Direction.REVERSED:
        raise ValueError("rev_traj must be a reversed trajectory")
    if rev_traj.dim != path.dim:
        raise ValueError("path and trajectory dimensions differ")
    if not np.array_equal(rev_traj.grid.nodes, grid.nodes):
        raise ValueError("path and trajectory grids differ")
    tables = _backend.build_tables(sched, grid, start=start)
    pool = oracle.pool_table if guidance != 1.0 else None
    inc = _backend.backward_increments(path.increments, rev_traj.states, tables,
                                       oracle.table(label), pool, guidance)
    return BrownianPath(grid, inc)


def write_trajectory_csv(traj: Trajectory, fileobj: io.TextIOBase) -> None:
    """One row per node: t, x_0, ..., x_{d-1}."""
    cols = ",".join(f"x{i}" for i in range(traj.dim))
    fileobj.write(f"t,{cols}\n")
    for t, row in zip(traj.grid.nodes, traj.states):
        fileobj.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")


def write_brownian_csv(path: BrownianPath, fileobj: io.TextIOBase) -> None:
    """One row per step: t_k, t_{k+1}, dW_0, ..., dW_{d-1}."""
    cols = ",".join(f"dw{i}" for i in range(path.dim))
    fileobj.write(f"t_from,t_to,{cols}\n")
    nodes = path.grid.nodes
    for k, row in enumerate(path.increments):
        vals = [repr(float(nodes[k])), repr(float(nodes[k + 1]))]
        vals += [repr(float(v)) for v in row]
        fileobj.write(",".join(vals) + "\n")
