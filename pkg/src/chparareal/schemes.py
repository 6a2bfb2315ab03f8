"""One-step propagators for the phase-field evolution.

All three convex-splitting steps solve a shifted system of the form

    (I - a * Lap * diag(c) + b * Lap^2) u_new = rhs

* stabilized linear step: variable diffusion coefficient frozen at (u^n)^2,
  explicit -Lap u^n contribution;
* constant-coefficient linear step: implicit matrix depends only on
  (dt, eps, grid), so its factorization is cached and reused;
* fully implicit step: plain (undamped) Newton iteration on the nonlinear
  residual, stopping on the cell-weighted L2 norm of the residual.

1D systems are pentadiagonal and go through LAPACK banded routines; 2D
systems use a sparse LU with fill-reducing ordering.  A failed direct solve
falls back to LGMRES at relative tolerance 1e-12 before raising
``LinearSolveError``.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import DiscreteOperator, Field, build_laplacian, energy, norm_of_values

if TYPE_CHECKING:  # pragma: no cover
    from .ddm import NNParams

__all__ = [
    "Scheme",
    "PropagatorSpec",
    "StepReport",
    "NewtonStats",
    "LinearSolveError",
    "NewtonDivergenceError",
    "step_linear_a",
    "step_linear_b",
    "step_nonlinear",
    "propagate",
    "clear_factorization_cache",
]


class Scheme(enum.Enum):
    """Which one-step method advances the field over one dt."""

    LINEAR_A = "linear-a"
    LINEAR_B = "linear-b"
    NONLINEAR_EYRE = "nonlinear-eyre"
    NN_LINEAR_A = "nn-linear-a"


@dataclass(frozen=True)
class PropagatorSpec:
    """Immutable description of a one-step propagator.

    ``nn`` carries the Neumann-Neumann sub-solver parameters and is required
    exactly when ``scheme`` is ``NN_LINEAR_A``.
    """

    scheme: Scheme
    dt: float
    eps: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    nn: "NNParams | None" = None

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if (self.scheme is Scheme.NN_LINEAR_A) != (self.nn is not None):
            raise ValueError("nn parameters go with, and only with, the NN scheme")


@dataclass(frozen=True)
class StepReport:
    """Diagnostics of a single implicit step."""

    newton_iterations: int
    residual_norm: float
    energy_before: float
    energy_after: float
    residual_history: tuple[float, ...] = ()


class NewtonStats:
    """Thread-safe aggregate of Newton behaviour across many steps."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.steps = 0
        self.total_iterations = 0
        self.max_iterations = 0
        self.max_residual = 0.0

    def record(self, report: StepReport) -> None:
        with self._lock:
            self.steps += 1
            self.total_iterations += report.newton_iterations
            self.max_iterations = max(self.max_iterations, report.newton_iterations)
            self.max_residual = max(self.max_residual, report.residual_norm)


class LinearSolveError(RuntimeError):
    """Direct and fallback solves of an implicit step system both failed."""


class NewtonDivergenceError(RuntimeError):
    """Newton iteration did not reach the residual tolerance."""

    def __init__(self, iterations: int, residual: float, tol: float):
        super().__init__(
            f"Newton did not converge in {iterations} iterations: "
            f"residual {residual:.3e} > tol {tol:.3e}"
        )
        self.iterations = iterations
        self.residual = residual


# Cached factorizations of the constant-coefficient implicit matrix,
# keyed by (dim, nodes_per_axis, dt, eps).
_FACTOR_CACHE: dict[tuple, Callable[[np.ndarray], np.ndarray]] = {}
_FACTOR_LOCK = threading.Lock()


def clear_factorization_cache() -> None:
    with _FACTOR_LOCK:
        _FACTOR_CACHE.clear()


def _assemble_banded(op: DiscreteOperator, a: float, b: float, c: np.ndarray) -> np.ndarray:
    """LAPACK (2,2)-banded storage of I - a*Lap*diag(c) + b*Lap^2 (1D)."""
    m = op.grid.interior_count
    ab = np.zeros((5, m))
    ab[2, :] = 1.0 - a * op.lap_main * c + b * op.sq_main
    ab[1, 1:] = -a * op.lap_off * c[1:] + b * op.sq_off1
    ab[3, :-1] = -a * op.lap_off * c[:-1] + b * op.sq_off1
    ab[0, 2:] = b * op.sq_off2
    ab[4, :-2] = b * op.sq_off2
    return ab


def _assemble_sparse(op: DiscreteOperator, a: float, b: float, c: np.ndarray):
    n = op.grid.interior_count
    mat = sp.eye_array(n) - a * (op.matrix @ sp.diags_array(c)) + b * op.squared
    return sp.csc_array(mat)


def _iterative_fallback(op: DiscreteOperator, a: float, b: float, c: np.ndarray,
                        rhs: np.ndarray, cause: Exception) -> np.ndarray:
    mat = _assemble_sparse(op, a, b, c)
    x, info = spla.lgmres(mat, rhs, rtol=1e-12, atol=0.0)
    if info != 0:
        raise LinearSolveError(
            f"direct solve failed ({cause}) and LGMRES fallback did not converge "
            f"(info={info}); matrix 1-norm estimate {spla.onenormest(mat):.3e}"
        ) from cause
    return x


def _solve_shifted(op: DiscreteOperator, a: float, b: float, c: np.ndarray,
                   rhs: np.ndarray) -> np.ndarray:
    """Solve (I - a*Lap*diag(c) + b*Lap^2) x = rhs."""
    if op.grid.dim == 1:
        ab = _assemble_banded(op, a, b, c)
        try:
            return sla.solve_banded((2, 2), ab, rhs, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            return _iterative_fallback(op, a, b, c, rhs, exc)
    try:
        lu = spla.splu(_assemble_sparse(op, a, b, c))
        return lu.solve(rhs)
    except RuntimeError as exc:
        return _iterative_fallback(op, a, b, c, rhs, exc)


def _constant_coefficient_solver(op: DiscreteOperator, dt: float, eps: float):
    """Factorize I - 2*dt*Lap + eps^2*dt*Lap^2 once per (grid, dt, eps).

    The matrix is symmetric positive definite, so 1D uses a banded Cholesky
    factor.  The 2D sparse LU is guarded by a lock: the cached factor is
    shared between concurrent fine sweeps.
    """
    key = (op.grid.dim, op.grid.nodes_per_axis, float(dt), float(eps))
    solver = _FACTOR_CACHE.get(key)
    if solver is not None:
        return solver
    with _FACTOR_LOCK:
        solver = _FACTOR_CACHE.get(key)
        if solver is not None:
            return solver
        a, b = 2.0 * dt, eps**2 * dt
        if op.grid.dim == 1:
            m = op.grid.interior_count
            ab = np.zeros((3, m))
            ab[2, :] = 1.0 - a * op.lap_main + b * op.sq_main
            ab[1, 1:] = -a * op.lap_off + b * op.sq_off1
            ab[0, 2:] = b * op.sq_off2
            factor = sla.cholesky_banded(ab, check_finite=False)

            def solver(rhs: np.ndarray) -> np.ndarray:
                return sla.cho_solve_banded((factor, False), rhs, check_finite=False)

        else:
            lu = spla.splu(_assemble_sparse(op, a, b, np.ones(op.grid.interior_count)))
            lock = threading.Lock()

            def solver(rhs: np.ndarray) -> np.ndarray:
                with lock:
                    return lu.solve(rhs)

        _FACTOR_CACHE[key] = solver
        return solver


def _require(spec: PropagatorSpec, scheme: Scheme) -> None:
    if spec.scheme is not scheme:
        raise ValueError(f"spec.scheme is {spec.scheme}, expected {scheme}")


def step_linear_a(u: Field, spec: PropagatorSpec) -> Field:
    """One stabilized-splitting step.

    Solves (I - dt*Lap*diag((u^n)^2) + eps^2*dt*Lap^2) u_new = (I - dt*Lap) u^n
    with the actual frozen coefficient (u^n)^2.
    """
    _require(spec, Scheme.LINEAR_A)
    op = build_laplacian(u.grid)
    v = u.values
    rhs = v - spec.dt * (op.matrix @ v)
    x = _solve_shifted(op, spec.dt, spec.eps**2 * spec.dt, v * v, rhs)
    return Field(u.grid, x)


def step_linear_b(u: Field, spec: PropagatorSpec) -> Field:
    """One step of the second linear splitting.

    Solves (I - 2*dt*Lap + eps^2*dt*Lap^2) u_new
         = u^n + dt*Lap((u^n)^3 - 3*u^n), cube taken elementwise.
    The implicit matrix is constant per (dt, eps, grid); its factorization
    is cached.
    """
    _require(spec, Scheme.LINEAR_B)
    op = build_laplacian(u.grid)
    v = u.values
    rhs = v + spec.dt * (op.matrix @ (v**3 - 3.0 * v))
    solver = _constant_coefficient_solver(op, spec.dt, spec.eps)
    try:
        x = solver(rhs)
    except (ValueError, np.linalg.LinAlgError) as exc:
        x = _iterative_fallback(op, 2.0 * spec.dt, spec.eps**2 * spec.dt,
                                np.ones(v.size), rhs, exc)
    return Field(u.grid, x)


def step_nonlinear(u: Field, spec: PropagatorSpec) -> tuple[Field, StepReport]:
    """One fully implicit convex-splitting step solved by Newton iteration.

    The residual is H(Y) = Y + eps^2*dt*Lap^2 Y - dt*Lap Y^3 - (I - dt*Lap)u^n
    and the update solves
    (I + eps^2*dt*Lap^2 - 3*dt*Lap*diag(Y^2)) Y_next = (I - dt*Lap)u^n - 2*dt*Lap Y^3.
    The initial guess is u^n; iteration stops when the cell-weighted L2 norm
    of H drops below ``newton_tol``.
    """
    _require(spec, Scheme.NONLINEAR_EYRE)
    op = build_laplacian(u.grid)
    d = spec.dt
    b = spec.eps**2 * d
    y_hat = u.values - d * (op.matrix @ u.values)
    y = u.values
    history: list[float] = []
    for m in range(spec.newton_max_iter + 1):
        cube = y**3
        residual = y + b * (op.squared @ y) - d * (op.matrix @ cube) - y_hat
        res_norm = norm_of_values(u.grid, residual)
        history.append(res_norm)
        if res_norm <= spec.newton_tol:
            out = Field(u.grid, y)
            report = StepReport(
                newton_iterations=m,
                residual_norm=res_norm,
                energy_before=energy(u, spec.eps),
                energy_after=energy(out, spec.eps),
                residual_history=tuple(history),
            )
            return out, report
        if m == spec.newton_max_iter or not np.isfinite(res_norm):
            raise NewtonDivergenceError(m, res_norm, spec.newton_tol)
        rhs = y_hat - 2.0 * d * (op.matrix @ cube)
        y = _solve_shifted(op, 3.0 * d, b, y * y, rhs)
    raise AssertionError("unreachable")


def _advance(u: Field, spec: PropagatorSpec, stats: NewtonStats | None) -> Field:
    if spec.scheme is Scheme.LINEAR_A:
        return step_linear_a(u, spec)
    if spec.scheme is Scheme.LINEAR_B:
        return step_linear_b(u, spec)
    if spec.scheme is Scheme.NONLINEAR_EYRE:
        out, report = step_nonlinear(u, spec)
        if stats is not None:
            stats.record(report)
        return out
    raise ValueError(f"cannot advance scheme {spec.scheme} here")


def propagate(u: Field, spec: PropagatorSpec, steps: int,
              stats: NewtonStats | None = None) -> Field:
    """Compose ``steps`` single steps of the given scheme."""
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    if spec.scheme is Scheme.NN_LINEAR_A:
        from .ddm import nn_propagate

        return nn_propagate(u, spec, steps)
    cur = u
    for _ in range(steps):
        cur = _advance(cur, spec, stats)
    return cur
