"""One implicit time step of the coupled system via nested fixed points.

A step advances (c, n, u) by solving the nonlinear elliptic system

    c + k alpha A_c c + k conv(u) c = prev_c - k n f(c)      (+ boundary terms)
    n + k beta  K n   + k conv(u) n = prev_n + k chem(n, c)
    u + k xi    K u   + k conv(u) u + k grad p = prev_u + k n grad_sigma

with two nested loops replacing abstract fixed-point existence arguments:

* the inner loop freezes the velocity and Picard-iterates the (c, n) pair,
  each pass solving two *linear* systems because the nonlinear products
  n f(c) and g(n, c) are evaluated at the frozen iterate;
* the outer loop freezes the convecting velocity, runs the inner loop, then
  solves the linearised fluid step with the fresh cell density, and repeats
  until the velocity update stalls and the fully nonlinear residual is small.

The oxygen equation carries the dynamic boundary condition: its mass and
stiffness include the boundary operators scaled by alpha/b, so the boundary
trace evolves with its own surface diffusion driven by the bulk flux.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    OperatorSet,
    assemble_chemotaxis_rhs,
    assemble_convection,
    assemble_convection_velocity,
)
from .fluid import build_saddle_system, solve_saddle


class LinearSolveError(Exception):
    """A sparse linear solve failed or left too large a residual."""


@dataclass(frozen=True)
class StepInputs:
    """Previous-step fields feeding one implicit step.

    ``c_trace_prev`` must be the boundary trace of ``c_prev``; both come from
    the same previous state, and inconsistent pairs are rejected.
    """

    c_prev: np.ndarray
    c_trace_prev: np.ndarray
    n_prev: np.ndarray
    u_prev: np.ndarray
    dt: float

    def validate(self, ops: OperatorSet) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        nv = ops.mesh.n_vertices
        if self.c_prev.shape != (nv,) or self.n_prev.shape != (nv,):
            raise ValueError("scalar fields do not match the mesh vertex count")
        if self.u_prev.shape != (ops.vspace.n_velocity,):
            raise ValueError("velocity field does not match the velocity space")
        if self.c_trace_prev.shape != (ops.trace.n_boundary,):
            raise ValueError("boundary trace has the wrong length")
        trace = ops.trace.restrict(self.c_prev)
        scale = max(float(np.max(np.abs(trace))), 1.0)
        if np.max(np.abs(trace - self.c_trace_prev)) > 1e-12 * scale:
            raise ValueError("c_trace_prev is not the trace of c_prev")


@dataclass
class FixedPointDiagnostics:
    """Iteration counts and update-norm history for one step solve.

    ``residual_history`` belongs to the loop the object describes (inner for
    picard_inner, outer for outer_step); an outer diagnostics object also
    carries the concatenated inner histories for serialisation.
    """

    inner_iterations: int = 0
    outer_iterations: int = 0
    residual_history: list = field(default_factory=list)
    inner_history: list = field(default_factory=list)
    converged: bool = False
    damping: float = 1.0
    final_residual: float = float("nan")

    def csv_rows(self, step: int, level: str = "outer"):
        rows = [
            f"{step},inner,{i + 1},{r:.17g}" for i, r in enumerate(self.inner_history)
        ]
        rows += [
            f"{step},{level},{i + 1},{r:.17g}" for i, r in enumerate(self.residual_history)
        ]
        return rows


@dataclass(frozen=True)
class SolverOptions:
    inner_tol: float = 1e-11
    outer_tol: float = 1e-10
    linear_tol: float = 1e-10
    max_inner: int = 60
    max_outer: int = 60
    damping: float = 1.0

    def validate(self) -> None:
        for name in ("inner_tol", "outer_tol", "linear_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration limits must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


def c_system_matrix(ops: OperatorSet, params, k: float, convection: sp.spmatrix) -> sp.csc_matrix:
    """Left side of the oxygen step, boundary evolution included."""
    a_ob = params.alpha / params.b
    return (
        ops.M_vol
        + a_ob * ops.M_bnd_global
        + k * params.alpha * ops.K_vol
        + k * a_ob * ops.K_bnd_global
        + k * convection
    ).tocsc()


def n_system_matrix(ops: OperatorSet, params, k: float, convection: sp.spmatrix) -> sp.csc_matrix:
    return (ops.M_vol + k * params.beta * ops.K_vol + k * convection).tocsc()


def c_step_rhs(ops: OperatorSet, params, inputs: StepInputs, c_hat, n_hat, consumption_fn):
    a_ob = params.alpha / params.b
    consumption = n_hat * consumption_fn(c_hat)
    return (
        ops.M_vol @ inputs.c_prev
        + a_ob * (ops.M_bnd_global @ ops.trace.prolong(inputs.c_trace_prev))
        - inputs.dt * (ops.M_vol @ consumption)
    )


def _factor(matrix, what):
    try:
        return splu(matrix)
    except RuntimeError as exc:
        raise LinearSolveError(f"{what} system factorisation failed: {exc}") from exc


def _checked_solve(lu, matrix, rhs, tol, what):
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError(f"{what} solve produced non-finite values")
    res = np.linalg.norm(matrix @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if res > tol:
        raise LinearSolveError(f"{what} solve residual {res:.3e} exceeds tolerance {tol:.1e}")
    return x


def solve_c_linear(
    inputs: StepInputs,
    c_hat: np.ndarray,
    n_hat: np.ndarray,
    u_hat: np.ndarray,
    params,
    ops: OperatorSet,
    tol: float = 1e-10,
) -> np.ndarray:
    """Oxygen update with frozen iterates: one sparse direct solve."""
    inputs.validate(ops)
    C = assemble_convection(ops, u_hat)
    A = c_system_matrix(ops, params, inputs.dt, C)
    rhs = c_step_rhs(ops, params, inputs, c_hat, n_hat, params.consumption())
    return _checked_solve(_factor(A, "oxygen"), A, rhs, tol, "oxygen")


def solve_n_linear(
    inputs: StepInputs,
    n_hat: np.ndarray,
    c: np.ndarray,
    u_hat: np.ndarray,
    params,
    ops: OperatorSet,
    tol: float = 1e-10,
) -> np.ndarray:
    """Cell-density update with the freshly computed oxygen field.

    The flux boundary condition cancels every boundary term of the weak form,
    so the system has no boundary operators over and above the volume ones.
    """
    inputs.validate(ops)
    C = assemble_convection(ops, u_hat)
    A = n_system_matrix(ops, params, inputs.dt, C)
    G = assemble_chemotaxis_rhs(ops, n_hat, c, params.sensitivity())
    rhs = ops.M_vol @ inputs.n_prev + inputs.dt * G
    return _checked_solve(_factor(A, "cell-density"), A, rhs, tol, "cell-density")


def _pair_update_norm(ops, dc, dn, c, n):
    num = np.sqrt(ops.scalar_norm_sq(dc) + ops.scalar_norm_sq(dn))
    den = np.sqrt(ops.scalar_norm_sq(c) + ops.scalar_norm_sq(n))
    return num, den


def picard_inner(
    inputs: StepInputs,
    u_hat: np.ndarray,
    params,
    ops: OperatorSet,
    tol: float = 1e-11,
    max_iter: int = 60,
    damping: float = 1.0,
    initial_guess=None,
):
    """Iterate the frozen-coefficient (c, n) map to its fixed point.

    Starts from the previous-step fields unless a warmer guess is supplied.
    Non-convergence is reported through the diagnostics, not raised; the
    caller owns the retry policy.
    """
    inputs.validate(ops)
    if not tol > 0 or max_iter < 1 or not 0 < damping <= 1:
        raise ValueError("need tol > 0, max_iter >= 1, damping in (0, 1]")
    k = inputs.dt
    C = assemble_convection(ops, u_hat)
    A_c = c_system_matrix(ops, params, k, C)
    A_n = n_system_matrix(ops, params, k, C)
    lu_c = _factor(A_c, "oxygen")
    lu_n = _factor(A_n, "cell-density")
    f = params.consumption()
    g = params.sensitivity()

    if initial_guess is None:
        c_hat, n_hat = inputs.c_prev, inputs.n_prev
    else:
        c_hat, n_hat = initial_guess

    diag = FixedPointDiagnostics(damping=damping)
    linear_tol = min(tol, 1e-10)
    for it in range(1, max_iter + 1):
        rhs_c = c_step_rhs(ops, params, inputs, c_hat, n_hat, f)
        c = _checked_solve(lu_c, A_c, rhs_c, linear_tol, "oxygen")
        rhs_n = ops.M_vol @ inputs.n_prev + k * assemble_chemotaxis_rhs(ops, n_hat, c, g)
        n = _checked_solve(lu_n, A_n, rhs_n, linear_tol, "cell-density")
        if damping < 1.0:
            c = c_hat + damping * (c - c_hat)
            n = n_hat + damping * (n - n_hat)
        num, den = _pair_update_norm(ops, c - c_hat, n - n_hat, c, n)
        diag.inner_iterations = it
        diag.residual_history.append(num / den if den > 0 else num)
        c_hat, n_hat = c, n
        if num <= tol * den:
            diag.converged = True
            break
    return c_hat, n_hat, diag


def step_residual(ops: OperatorSet, params, inputs: StepInputs, c, n, u, p) -> float:
    """Relative residual of the fully coupled nonlinear step at (c, n, u, p)."""
    k = inputs.dt
    a_ob = params.alpha / params.b
    C = assemble_convection(ops, u)
    r_c = (
        c_system_matrix(ops, params, k, C) @ c
        + k * (ops.M_vol @ (n * params.consumption()(c)))
        - ops.M_vol @ inputs.c_prev
        - a_ob * (ops.M_bnd_global @ ops.trace.prolong(inputs.c_trace_prev))
    )
    r_n = (
        n_system_matrix(ops, params, k, C) @ n
        - k * assemble_chemotaxis_rhs(ops, n, c, params.sensitivity())
        - ops.M_vol @ inputs.n_prev
    )
    Cu = assemble_convection_velocity(ops, u)
    A_u = ops.M_u + k * params.xi * ops.K_u + k * Cu
    force = ops.buoyancy_load(n, np.asarray(params.grad_sigma, dtype=float))
    idx = ops.vspace.interior_velocity
    r_u = (A_u @ u - k * (ops.B.T @ p) - k * force - ops.M_u @ inputs.u_prev)[idx]
    r_div = ops.B @ u
    num = np.sqrt(
        np.sum(r_c**2) + np.sum(r_n**2) + np.sum(r_u**2) + np.sum(r_div**2)
    )
    scale = np.sqrt(
        np.sum((ops.M_vol @ inputs.c_prev) ** 2)
        + np.sum((ops.M_vol @ inputs.n_prev) ** 2)
        + np.sum(((ops.M_u @ inputs.u_prev)[idx]) ** 2)
        + (k * np.linalg.norm(force)) ** 2
    )
    return num / max(scale, 1e-300)


@dataclass(frozen=True)
class StepResult:
    c: np.ndarray
    n: np.ndarray
    u: np.ndarray
    p: np.ndarray
    diagnostics: FixedPointDiagnostics


def outer_step(
    inputs: StepInputs,
    params,
    ops: OperatorSet,
    options: SolverOptions = SolverOptions(),
    saddle_cache=None,
) -> StepResult:
    """Full coupled step: alternate the (c, n) fixed point with fluid solves.

    Convection in the fluid is linearised at the previous outer velocity
    iterate.  Convergence requires the inner loop converged, the velocity
    update below tolerance, and the fully nonlinear residual below tolerance;
    failure is reported in the diagnostics.  A SaddleCache for this step size
    avoids refactorising the fluid matrix every outer iteration.
    """
    inputs.validate(ops)
    options.validate()
    saddle_solver = saddle_cache.solve if saddle_cache is not None else solve_saddle
    k = inputs.dt
    u_hat = np.asarray(inputs.u_prev, dtype=float)
    guess = None
    diag = FixedPointDiagnostics(damping=options.damping)
    c = n = None
    u, p = u_hat, np.zeros(ops.mesh.n_vertices)
    for it in range(1, options.max_outer + 1):
        c, n, inner = picard_inner(
            inputs,
            u_hat,
            params,
            ops,
            tol=options.inner_tol,
            max_iter=options.max_inner,
            damping=options.damping,
            initial_guess=guess,
        )
        guess = (c, n)
        diag.inner_iterations += inner.inner_iterations
        diag.inner_history.extend(inner.residual_history)
        system = build_saddle_system(ops, u_hat, n, inputs.u_prev, k, params)
        u, p = saddle_solver(system, tol=options.linear_tol)
        du = u - u_hat
        num = np.sqrt(ops.velocity_norm_sq(du))
        den = np.sqrt(ops.velocity_norm_sq(u))
        diag.outer_iterations = it
        diag.residual_history.append(num / den if den > 0 else num)
        if options.damping < 1.0:
            u_hat = u_hat + options.damping * du
        else:
            u_hat = u
        if inner.converged and num <= options.outer_tol * den:
            residual = step_residual(ops, params, inputs, c, n, u, p)
            diag.final_residual = residual
            if residual <= max(options.outer_tol, 10 * options.linear_tol):
                diag.converged = True
                break
    if not diag.converged and c is not None and np.isnan(diag.final_residual):
        diag.final_residual = step_residual(ops, params, inputs, c, n, u, p)
    return StepResult(c=c, n=n, u=u, p=p, diagnostics=diag)
