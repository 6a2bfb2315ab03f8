"""Executable forms of the stability and convergence bounds.

The linearized one-step operators are rational functions of the discrete
Laplacian, so every operator norm needed by the bounds reduces to scanning
a scalar gain function over the (analytic) spectrum:

* ``mode_gain`` - amplification factor of one implicit step on an
  eigenmode with -lambda = y > 0; always in (0, 1);
* ``mode_gain_gap`` - difference between the composed fine-step gain and
  the single coarse-step gain; always in (-1, 1);
* ``propagator_norm`` / ``contraction_params`` - spectral norms of the
  one-coarse-step and J-fine-step operators and of their difference, i.e.
  the contraction pair (alpha, beta) of the linear variants.

For the nonlinear variants the role of alpha is played by C * coarse_dt^2
with a numerically estimated truncation-difference constant
(``truncation_constant``).  The strictly-lower-triangular Toeplitz algebra
behind the error recursion (closed-form inverse, powers and the
min{geometric, binomial} norm bound) is provided for direct verification
against dense computations.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .grid import Field, SpatialGrid, l2_norm, operator_eigenvalues
from .parareal import AlgorithmVariant, TimePartition, propagator_pair
from .schemes import NewtonStats, propagate

__all__ = [
    "BoundParams",
    "PropagatorMatrixSpec",
    "mode_gain",
    "mode_gain_gap",
    "propagator_norm",
    "contraction_params",
    "npa_contraction_params",
    "error_envelope",
    "truncation_constant",
    "DegenerateTrajectoryError",
    "toeplitz_inverse",
    "toeplitz_power_first_column",
    "toeplitz_power_norm_bound",
    "stability_envelope",
]


@dataclass(frozen=True)
class BoundParams:
    """Contraction pair of the error recursion.

    ``alpha`` is the fine/coarse defect norm (or C * coarse_dt^2 for the
    nonlinear variants); ``beta`` is the coarse propagator norm.
    """

    alpha: float
    beta: float
    num_slices: int
    variant: AlgorithmVariant

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.num_slices < 1:
            raise ValueError("num_slices must be at least 1")


@dataclass(frozen=True)
class PropagatorMatrixSpec:
    """One-coarse-step operator (substeps=None) or its J-fine-step composition.

    ``splitting_index`` is the stabilization multiplicity i in
    (I - i*dT*Lap + eps^2*dT*Lap^2)^{-1} (I - i*dT*Lap); the composed form
    exists for i in {1, 2} only.
    """

    splitting_index: int
    window: float
    eps: float
    substeps: int | None = None

    def __post_init__(self) -> None:
        if self.splitting_index not in (1, 2, 3):
            raise ValueError("splitting_index must be 1, 2 or 3")
        if self.window <= 0 or self.eps < 0:
            raise ValueError("window must be positive and eps non-negative")
        if self.substeps is not None:
            if self.splitting_index == 3:
                raise ValueError("the composed fine form exists for i in {1, 2} only")
            if self.substeps < 1:
                raise ValueError("substeps must be at least 1")


def mode_gain(splitting_index: int, y, window: float, eps: float):
    """Per-mode gain (1 + i*dT*y) / (1 + i*dT*y + eps^2*dT*y^2) for y > 0.

    Accepts a scalar or an array of y values; the result lies in (0, 1)
    whenever eps > 0.
    """
    if splitting_index not in (1, 2, 3):
        raise ValueError("splitting_index must be 1, 2 or 3")
    if window <= 0:
        raise ValueError("window must be positive")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr <= 0):
        raise ValueError("y must be positive")
    num = 1.0 + splitting_index * window * y_arr
    out = num / (num + eps**2 * window * y_arr**2)
    return float(out) if np.isscalar(y) else out


def mode_gain_gap(splitting_index: int, y, window: float, eps: float, substeps: int):
    """Composed fine gain minus coarse gain for one eigenmode.

    Indices 1 and 2 pair a scheme with itself; index 3 pairs the J-substep
    composition of scheme 2 with one coarse step of scheme 1 (the mixed
    variant).  The fine factor evaluates the gain at window/substeps and is
    raised to the substeps-th power, mirroring the composed operator.
    """
    if substeps < 2:
        raise ValueError("substeps must be at least 2")
    if splitting_index == 3:
        fine = mode_gain(2, y, window / substeps, eps)
        coarse = mode_gain(1, y, window, eps)
    else:
        fine = mode_gain(splitting_index, y, window / substeps, eps)
        coarse = mode_gain(splitting_index, y, window, eps)
    return fine**substeps - coarse


def propagator_norm(spec: PropagatorMatrixSpec, grid: SpatialGrid) -> float:
    """Spectral norm, exact via the shared eigenbasis of the Laplacian."""
    ys = -operator_eigenvalues(grid)
    if spec.substeps is None:
        gains = mode_gain(spec.splitting_index, ys, spec.window, spec.eps)
    else:
        gains = (
            mode_gain(spec.splitting_index, ys, spec.window / spec.substeps, spec.eps)
            ** spec.substeps
        )
    return float(np.max(np.abs(gains)))


_GAP_INDEX = {
    AlgorithmVariant.PA1: (1, 1),
    AlgorithmVariant.PA2: (2, 2),
    AlgorithmVariant.PA3: (3, 1),
}


def contraction_params(
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    grid: SpatialGrid,
) -> BoundParams:
    """(alpha, beta) of the linear variants from the analytic spectrum."""
    if variant not in _GAP_INDEX:
        raise ValueError(
            f"{variant} has no spectral contraction pair; "
            "use truncation_constant and npa_contraction_params"
        )
    gap_index, coarse_index = _GAP_INDEX[variant]
    ys = -operator_eigenvalues(grid)
    alpha = float(np.max(np.abs(
        mode_gain_gap(gap_index, ys, partition.coarse_dt, eps, partition.fine_steps)
    )))
    beta = propagator_norm(
        PropagatorMatrixSpec(coarse_index, partition.coarse_dt, eps), grid
    )
    return BoundParams(alpha=alpha, beta=beta, num_slices=partition.num_slices,
                       variant=variant)


def npa_contraction_params(
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    grid: SpatialGrid,
    constant: float,
) -> BoundParams:
    """Contraction pair of the nonlinear variants: alpha = C * coarse_dt^2.

    beta is the norm of the linearized coarse operator: splitting index 1
    when the coarse solver is the stabilized linear step, index 3 when it
    is the Newton-solved implicit step.
    """
    if variant is AlgorithmVariant.NPA1:
        coarse_index = 1
    elif variant is AlgorithmVariant.NPA2:
        coarse_index = 3
    else:
        raise ValueError(f"{variant} is not a nonlinear variant")
    beta = propagator_norm(
        PropagatorMatrixSpec(coarse_index, partition.coarse_dt, eps), grid
    )
    return BoundParams(
        alpha=constant * partition.coarse_dt**2,
        beta=beta,
        num_slices=partition.num_slices,
        variant=variant,
    )


def error_envelope(params: BoundParams, k: int, e0: float) -> float:
    """Bound on the error after k+1 iterations, scaled by the initial error.

    alpha^{k+1} * min{((1 - beta^{N-1})/(1 - beta))^{k+1}, C(N-1, k+1)} * e0.
    The binomial factor vanishes for k+1 > N-1, so the envelope hits exactly
    zero at finite k (finite-step convergence).
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if e0 < 0:
        raise ValueError("e0 must be non-negative")
    n = params.num_slices
    geometric = ((1.0 - params.beta ** (n - 1)) / (1.0 - params.beta)) ** (k + 1)
    binomial = float(comb(n - 1, k + 1)) if k + 1 <= n - 1 else 0.0
    return params.alpha ** (k + 1) * min(geometric, binomial) * e0


class DegenerateTrajectoryError(RuntimeError):
    """The sampled states are too close to estimate the truncation constant."""


def truncation_constant(
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    grid: SpatialGrid,
    u0: Field,
    *,
    newton_tol: float = 1e-10,
    newton_max_iter: int = 50,
) -> float:
    """Estimate the constant C in ||(F-G)(U) - (F-G)(V)|| <= C*dT^2*||U-V||.

    The estimator runs the serial fine trajectory and the coarse-sweep
    trajectory from u0, applies the fine/coarse defect F-G to both states at
    every coarse node, and takes the largest difference quotient, skipping
    node pairs closer than 1e-14.  If every pair degenerates but the defect
    itself vanishes along the trajectory (F and G coincide), the constant
    is zero; otherwise the trajectory cannot support an estimate.
    """
    if grid is not u0.grid and grid != u0.grid:
        raise ValueError("grid does not match the initial field")
    fine, coarse = propagator_pair(
        variant, partition, eps,
        newton_tol=newton_tol, newton_max_iter=newton_max_iter,
    )
    stats = NewtonStats()

    fine_traj = [u0]
    coarse_traj = [u0]
    for _ in range(partition.num_slices):
        fine_traj.append(propagate(fine_traj[-1], fine, partition.fine_steps, stats))
        coarse_traj.append(propagate(coarse_traj[-1], coarse, 1, stats))

    def defect(state: Field) -> np.ndarray:
        f_val = propagate(state, fine, partition.fine_steps, stats)
        g_val = propagate(state, coarse, 1, stats)
        return f_val.values - g_val.values

    dt2 = partition.coarse_dt**2
    best = None
    defect_scale = 0.0
    for u_fine, u_coarse in zip(fine_traj, coarse_traj):
        d_fine = defect(u_fine)
        defect_scale = max(defect_scale, l2_norm(Field(grid, d_fine)))
        separation = l2_norm(Field(grid, u_fine.values - u_coarse.values))
        if separation <= 1e-14:
            continue
        d_coarse = defect(u_coarse)
        quotient = l2_norm(Field(grid, d_fine - d_coarse)) / (dt2 * separation)
        best = quotient if best is None else max(best, quotient)
    if best is None:
        if defect_scale <= 1e-12:
            return 0.0
        raise DegenerateTrajectoryError(
            "all trajectory pairs are within 1e-14 but the fine/coarse defect "
            f"is {defect_scale:.3e}; cannot form a difference quotient"
        )
    return best


def toeplitz_inverse(beta: float, n: int) -> np.ndarray:
    """Closed-form inverse of the unit lower bidiagonal matrix with -beta
    on the subdiagonal: lower triangular with entries beta^(row-col)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    idx = np.arange(n)
    powers = idx[:, None] - idx[None, :]
    return np.where(powers >= 0, float(beta) ** np.maximum(powers, 0), 0.0)


def toeplitz_power_first_column(beta: float, size: int, power: int) -> np.ndarray:
    """First column of the k-th power of the strictly lower triangular
    Toeplitz matrix whose first column is (0, 1, beta, beta^2, ...).

    Entry i (1-based) equals C(i-2, k-1) * beta^(i-1-k) for i > k and is
    zero otherwise; the power is the zero vector once k >= size.
    """
    if size < 2:
        raise ValueError("size must be at least 2")
    if power < 1:
        raise ValueError("power must be at least 1")
    col = np.zeros(size)
    for i in range(power + 1, size + 1):
        col[i - 1] = comb(i - 2, power - 1) * float(beta) ** (i - 1 - power)
    return col


def toeplitz_power_norm_bound(beta: float, size: int, power: int) -> float:
    """min{((1 - beta^(N-1))/(1 - beta))^k, C(N-1, k)} dominating ||T^k||_inf."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if size < 2 or power < 0:
        raise ValueError("size must be >= 2 and power >= 0")
    geometric = ((1.0 - beta ** (size - 1)) / (1.0 - beta)) ** power
    binomial = float(comb(size - 1, power)) if power <= size - 1 else 0.0
    return min(geometric, binomial)


def stability_envelope(
    variant: AlgorithmVariant,
    u0_norm: float,
    previous_norms,
    slice_index: int,
    *,
    window: float | None = None,
    constant: float | None = None,
) -> float:
    """Right-hand side of the iterate-norm stability bound.

    For the linear variants the norm of U_{n+1}^{k+1} is bounded by
    ||u0|| + (n+1) * max_{0<=j<=n} ||U_j^k||; the nonlinear variants carry
    an extra factor C * coarse_dt^2 on the history term.
    """
    if slice_index < 0 or slice_index >= len(previous_norms):
        raise ValueError("slice_index out of range of the previous iterate")
    history = max(previous_norms[: slice_index + 1])
    if variant.is_nonlinear:
        if window is None or constant is None:
            raise ValueError("nonlinear envelope needs window and constant")
        return u0_norm + constant * (slice_index + 1) * window**2 * history
    return u0_norm + (slice_index + 1) * history
