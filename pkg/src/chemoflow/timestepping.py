"""Uniform implicit-Euler time loop and the piecewise reconstructions in time.

A trajectory is the sequence of states produced by the per-step solver on a
uniform grid, together with two reconstructions: the piecewise-linear
interpolant (continuous in time) and the right-continuous piecewise-constant
step function.  Both agree with the states at grid nodes; the exact L2-in-time
gap between them shrinks linearly with the step size, which the refinement
study verifies.

A step that fails to converge is retried with the step halved, recursively up
to a configured depth; the substeps are merged back so the stored grid stays
uniform.  Retries are logged because the scheme itself fixes no fallback.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import OperatorSet
from .fluid import project_divergence_free
from .step_solver import FixedPointDiagnostics, SolverOptions, StepInputs, StepResult, outer_step

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CFCK"
CHECKPOINT_VERSION = 1


class StepFailure(Exception):
    """A step did not converge after all retries, or produced non-finite data."""

    def __init__(self, message, step=None, time=None, residual=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.residual = residual


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with N steps; k = T/N, t_m = m T / N."""

    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def k(self) -> float:
        return self.T / self.N

    def time(self, m: int) -> float:
        # the endpoint is T by definition, immune to rounding in (m T)/N
        return self.T if m == self.N else (m * self.T) / self.N

    def times(self) -> np.ndarray:
        out = (np.arange(self.N + 1) * self.T) / self.N
        out[-1] = self.T
        return out


@dataclass(frozen=True)
class State:
    """Discrete fields at one time level; velocity vanishes on the boundary."""

    c: np.ndarray
    n: np.ndarray
    u: np.ndarray
    p: np.ndarray
    t: float

    def finite(self) -> bool:
        return all(np.all(np.isfinite(f)) for f in (self.c, self.n, self.u, self.p))

    def first_nonfinite_field(self):
        for name in ("c", "n", "u", "p"):
            if not np.all(np.isfinite(getattr(self, name))):
                return name
        return None


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: tuple
    diagnostics: tuple  # per step: tuple of FixedPointDiagnostics (retries included)
    data_hash: str

    def __post_init__(self):
        if len(self.states) != self.grid.N + 1:
            raise ValueError("trajectory must hold N+1 states")


def initial_state(ops: OperatorSet, c0, n0, u0, project_velocity: bool = True) -> State:
    """Package initial fields; nonzero velocities are projected solenoidal."""
    c0 = np.asarray(c0, dtype=float)
    n0 = np.asarray(n0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    nv = ops.mesh.n_vertices
    if c0.shape != (nv,) or n0.shape != (nv,):
        raise ValueError("initial scalar fields do not match the mesh")
    if u0.shape != (ops.vspace.n_velocity,):
        raise ValueError("initial velocity does not match the velocity space")
    if project_velocity and np.any(u0 != 0.0):
        u0 = project_divergence_free(u0, ops)
    else:
        u0 = ops.vspace.zero_boundary(u0)
    return State(c=c0, n=n0, u=u0, p=np.zeros(nv), t=0.0)


def trajectory_data_hash(ops: OperatorSet, params, state0: State, T: float) -> str:
    """Identifies (mesh, coefficients, initial data, horizon) independent of N."""
    h = hashlib.sha256()
    h.update(ops.mesh.data_hash().encode())
    h.update(repr(params).encode())
    h.update(struct.pack("<d", T))
    for f in (state0.c, state0.n, state0.u):
        h.update(np.ascontiguousarray(f).tobytes())
    return h.hexdigest()


def _advance(ops, params, state: State, k: float, t_next: float, options, depth: int, step: int, caches: dict):
    """One step of size k ending at t_next, halving on failure up to depth."""
    from .fluid import SaddleCache

    if k not in caches:
        caches[k] = SaddleCache(ops, params, k)
    inputs = StepInputs(
        c_prev=state.c,
        c_trace_prev=ops.trace.restrict(state.c),
        n_prev=state.n,
        u_prev=state.u,
        dt=k,
    )
    result: StepResult = outer_step(inputs, params, ops, options, saddle_cache=caches[k])
    diags = [result.diagnostics]
    if not result.diagnostics.converged:
        if depth <= 0:
            raise StepFailure(
                f"step {step} at t={t_next:g} failed to converge "
                f"(residual {result.diagnostics.final_residual:.3e}) after exhausting retries",
                step=step,
                time=t_next,
                residual=result.diagnostics.final_residual,
            )
        logger.warning(
            "step %d at t=%g did not converge with k=%g; retrying with k/2 "
            "(local rescue, the uniform grid is unchanged)",
            step,
            t_next,
            k,
        )
        mid_state, d1 = _advance(ops, params, state, k / 2, t_next - k / 2, options, depth - 1, step, caches)
        end_state, d2 = _advance(ops, params, mid_state, k / 2, t_next, options, depth - 1, step, caches)
        return end_state, d1 + d2
    new = State(c=result.c, n=result.n, u=result.u, p=result.p, t=t_next)
    bad = new.first_nonfinite_field()
    if bad is not None:
        raise StepFailure(
            f"non-finite values in field '{bad}' at step {step}, t={t_next:g}",
            step=step,
            time=t_next,
        )
    return new, diags


def run(
    ops: OperatorSet,
    params,
    grid: TimeGrid,
    state0: State,
    options: SolverOptions = SolverOptions(),
    retry_depth: int = 3,
    checkpoint_dir=None,
    resume: bool = False,
    step_callback=None,
) -> Trajectory:
    """March the coupled system over the uniform grid.

    Optionally writes one checkpoint file per step and resumes from the last
    complete checkpoint found in ``checkpoint_dir``.
    """
    if not state0.finite():
        raise StepFailure(
            f"non-finite values in initial field '{state0.first_nonfinite_field()}'", step=0
        )
    data_hash = trajectory_data_hash(ops, params, state0, grid.T)
    mesh_hash = ops.mesh.data_hash()

    states = [state0]
    diagnostics: list[tuple] = [()]
    start = 0
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        if resume:
            for m in range(grid.N, 0, -1):
                path = checkpoint_dir / checkpoint_name(m)
                if path.exists():
                    states = [None] * m + [read_checkpoint(path, mesh_hash, grid)[1]]
                    for j in range(m):
                        states[j] = read_checkpoint(
                            checkpoint_dir / checkpoint_name(j), mesh_hash, grid
                        )[1]
                    diagnostics = [()] * (m + 1)
                    start = m
                    break
        write_checkpoint(checkpoint_dir / checkpoint_name(0), mesh_hash, grid, 0, states[0])

    state = states[-1]
    caches: dict = {}
    for m in range(start + 1, grid.N + 1):
        t_next = grid.time(m)
        state, diags = _advance(ops, params, state, grid.k, t_next, options, retry_depth, m, caches)
        states.append(state)
        diagnostics.append(tuple(diags))
        if checkpoint_dir is not None:
            write_checkpoint(checkpoint_dir / checkpoint_name(m), mesh_hash, grid, m, state)
        if step_callback is not None:
            step_callback(m, state, diags)
    return Trajectory(
        grid=grid, states=tuple(states), diagnostics=tuple(diagnostics), data_hash=data_hash
    )


def _locate(grid: TimeGrid, t: float) -> tuple[int, np.ndarray]:
    if t < 0 or t > grid.T:
        raise ValueError(f"time {t} outside [0, {grid.T}]")
    times = grid.times()
    idx = min(int(np.searchsorted(times, t, side="left")), grid.N)
    return idx, times


def interpolate_state(traj: Trajectory, t: float) -> State:
    """Piecewise-linear-in-time evaluation; exact states at grid nodes."""
    idx, times = _locate(traj.grid, t)
    if idx <= traj.grid.N and times[idx] == t:
        return traj.states[idx]
    a, b = traj.states[idx - 1], traj.states[idx]
    theta = (t - times[idx - 1]) / (times[idx] - times[idx - 1])
    w0, w1 = 1.0 - theta, theta
    return State(
        c=w0 * a.c + w1 * b.c,
        n=w0 * a.n + w1 * b.n,
        u=w0 * a.u + w1 * b.u,
        p=w0 * a.p + w1 * b.p,
        t=t,
    )


def sample_state(traj: Trajectory, t: float) -> State:
    """Right-continuous piecewise-constant selection; the value at 0 is the
    initial state, on (t_{m-1}, t_m] it is states[m]."""
    idx, times = _locate(traj.grid, t)
    if idx <= traj.grid.N and times[idx] == t:
        return traj.states[idx]
    return traj.states[idx]


def interpolant_step_gap(traj: Trajectory, ops: OperatorSet) -> dict:
    """Exact L2(0,T) norms of (linear interpolant - step function) per field.

    On each interval the difference is (t_m - t) times the discrete time
    derivative, whose squared time integral is k |increment|^2 / 3; the sum
    over intervals is exact, no quadrature involved.
    """
    k = traj.grid.k
    acc = {"c": 0.0, "n": 0.0, "u": 0.0}
    for prev, cur in zip(traj.states[:-1], traj.states[1:]):
        acc["c"] += ops.scalar_norm_sq(cur.c - prev.c)
        acc["n"] += ops.scalar_norm_sq(cur.n - prev.n)
        acc["u"] += ops.velocity_norm_sq(cur.u - prev.u)
    return {name: float(np.sqrt(k * v / 3.0)) for name, v in acc.items()}


def checkpoint_name(m: int) -> str:
    return f"step_{m:06d}.ckpt"


def write_checkpoint(path, mesh_hash: str, grid: TimeGrid, m: int, state: State) -> None:
    """Binary checkpoint: versioned header, mesh hash, then raw field arrays.

    Layout: magic, u32 version, 64-byte mesh hash, u64 N, u64 m, f64 T,
    f64 t, u64 nv, u64 n_velocity, then c, n, u, p as little-endian f64.
    """
    nv = state.c.shape[0]
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(mesh_hash.encode())
        f.write(struct.pack("<QQddQQ", grid.N, m, grid.T, state.t, nv, state.u.shape[0]))
        for arr in (state.c, state.n, state.u, state.p):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path, mesh_hash: str, grid: TimeGrid | None = None):
    """Read one checkpoint, refusing version or mesh mismatches."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise StepFailure(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise StepFailure(f"{path}: checkpoint version {version} not supported")
        stored_hash = f.read(64).decode()
        if stored_hash != mesh_hash:
            raise StepFailure(f"{path}: checkpoint belongs to a different mesh")
        N, m, T, t, nv, nvel = struct.unpack("<QQddQQ", f.read(48))
        if grid is not None and (N != grid.N or T != grid.T):
            raise StepFailure(f"{path}: checkpoint grid (T={T}, N={N}) does not match")
        c = np.frombuffer(f.read(8 * nv), dtype="<f8").copy()
        n = np.frombuffer(f.read(8 * nv), dtype="<f8").copy()
        u = np.frombuffer(f.read(8 * nvel), dtype="<f8").copy()
        p = np.frombuffer(f.read(8 * nv), dtype="<f8").copy()
    return m, State(c=c, n=n, u=u, p=p, t=t)


def load_trajectory(checkpoint_dir, ops: OperatorSet, grid: TimeGrid, params) -> Trajectory:
    """Rebuild a trajectory from a complete run of checkpoints."""
    checkpoint_dir = Path(checkpoint_dir)
    mesh_hash = ops.mesh.data_hash()
    states = []
    for m in range(grid.N + 1):
        path = checkpoint_dir / checkpoint_name(m)
        if not path.exists():
            raise StepFailure(f"missing checkpoint for step {m} in {checkpoint_dir}")
        states.append(read_checkpoint(path, mesh_hash, grid)[1])
    data_hash = trajectory_data_hash(ops, params, states[0], grid.T)
    return Trajectory(
        grid=grid,
        states=tuple(states),
        diagnostics=tuple(() for _ in states),
        data_hash=data_hash,
    )
