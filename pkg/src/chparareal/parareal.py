"""The parareal engine: coarse sweep, prediction-correction iteration and
error measurement against the serial fine reference.

Five fine/coarse pairings are supported.  Fine evaluations over the time
slices are independent and run concurrently; the coarse-plus-correction
update is the sequential recursion

    U_{n+1}^{k+1} = G(U_n^{k+1}) + F(U_n^k) - G(U_n^k),

with the coarse values of the frozen iterate cached from the previous sweep
so each slice costs one coarse solve per iteration.  Results are bit
identical for any worker count: every fine evaluation is a deterministic
function of its frozen input and results are collected by slice index.
"""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .grid import Field, energy, l2_norm, mass
from .schemes import NewtonStats, PropagatorSpec, Scheme, propagate

__all__ = [
    "AlgorithmVariant",
    "TimePartition",
    "PararealState",
    "IterationRecord",
    "RunTrace",
    "propagator_pair",
    "serial_fine_reference",
    "coarse_init",
    "initial_state",
    "parareal_iteration",
    "error_against_reference",
    "run",
]


class AlgorithmVariant(enum.Enum):
    """Fine/coarse scheme pairing of the five parareal variants."""

    PA1 = "pa1"
    PA2 = "pa2"
    PA3 = "pa3"
    NPA1 = "npa1"
    NPA2 = "npa2"

    @property
    def fine_scheme(self) -> Scheme:
        return _PAIRINGS[self][0]

    @property
    def coarse_scheme(self) -> Scheme:
        return _PAIRINGS[self][1]

    @property
    def is_nonlinear(self) -> bool:
        return self in (AlgorithmVariant.NPA1, AlgorithmVariant.NPA2)


_PAIRINGS = {
    AlgorithmVariant.PA1: (Scheme.LINEAR_A, Scheme.LINEAR_A),
    AlgorithmVariant.PA2: (Scheme.LINEAR_B, Scheme.LINEAR_B),
    AlgorithmVariant.PA3: (Scheme.LINEAR_B, Scheme.LINEAR_A),
    AlgorithmVariant.NPA1: (Scheme.NONLINEAR_EYRE, Scheme.LINEAR_A),
    AlgorithmVariant.NPA2: (Scheme.NONLINEAR_EYRE, Scheme.NONLINEAR_EYRE),
}


@dataclass(frozen=True)
class TimePartition:
    """Two-level time mesh: N coarse slices of T, each split into J fine steps."""

    total_time: float
    num_slices: int
    fine_steps: int

    def __post_init__(self) -> None:
        if self.total_time <= 0:
            raise ValueError("total_time must be positive")
        if self.num_slices < 1 or self.fine_steps < 1:
            raise ValueError("num_slices and fine_steps must be at least 1")

    @property
    def coarse_dt(self) -> float:
        return self.total_time / self.num_slices

    @property
    def fine_dt(self) -> float:
        return self.coarse_dt / self.fine_steps


def propagator_pair(
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    *,
    newton_tol: float = 1e-10,
    newton_max_iter: int = 50,
    nn=None,
) -> tuple[PropagatorSpec, PropagatorSpec]:
    """Fine (step fine_dt) and coarse (step coarse_dt) propagator specs.

    Passing ``nn`` replaces the fine propagator by the Neumann-Neumann
    sub-structured solve of the stabilized linear step.
    """
    fine_scheme = Scheme.NN_LINEAR_A if nn is not None else variant.fine_scheme
    fine = PropagatorSpec(
        scheme=fine_scheme,
        dt=partition.fine_dt,
        eps=eps,
        newton_tol=newton_tol,
        newton_max_iter=newton_max_iter,
        nn=nn,
    )
    coarse = PropagatorSpec(
        scheme=variant.coarse_scheme,
        dt=partition.coarse_dt,
        eps=eps,
        newton_tol=newton_tol,
        newton_max_iter=newton_max_iter,
    )
    return fine, coarse


@dataclass
class PararealState:
    """Interface values at the coarse nodes for one parareal iteration.

    ``coarse_values[n]`` caches G(U_n^k) of the current iterate so the next
    correction sweep reuses it.  ``iterates[0]`` is pinned to the initial
    condition at every iteration.
    """

    iterates: list[Field]
    coarse_values: list[Field]
    fine_reference: list[Field]
    k: int
    previous: list[Field] | None = field(default=None)


def serial_fine_reference(
    u0: Field,
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    *,
    newton_tol: float = 1e-10,
    newton_max_iter: int = 50,
    nn=None,
    stats: NewtonStats | None = None,
) -> list[Field]:
    """Sequential fine propagation, stored at every coarse node."""
    fine, _ = propagator_pair(
        variant, partition, eps,
        newton_tol=newton_tol, newton_max_iter=newton_max_iter, nn=nn,
    )
    out = [u0]
    for _ in range(partition.num_slices):
        out.append(propagate(out[-1], fine, partition.fine_steps, stats))
    return out


def coarse_init(
    u0: Field,
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    *,
    newton_tol: float = 1e-10,
    newton_max_iter: int = 50,
    stats: NewtonStats | None = None,
) -> list[Field]:
    """Initial guess U_n^0: n sequential coarse steps from u0."""
    _, coarse = propagator_pair(
        variant, partition, eps,
        newton_tol=newton_tol, newton_max_iter=newton_max_iter,
    )
    out = [u0]
    for _ in range(partition.num_slices):
        out.append(propagate(out[-1], coarse, 1, stats))
    return out


def initial_state(
    u0: Field,
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    *,
    newton_tol: float = 1e-10,
    newton_max_iter: int = 50,
    nn=None,
    stats: NewtonStats | None = None,
) -> PararealState:
    reference = serial_fine_reference(
        u0, variant, partition, eps,
        newton_tol=newton_tol, newton_max_iter=newton_max_iter, nn=nn, stats=stats,
    )
    init = coarse_init(
        u0, variant, partition, eps,
        newton_tol=newton_tol, newton_max_iter=newton_max_iter, stats=stats,
    )
    # The coarse sweep itself provides G(U_n^0) = U_{n+1}^0.
    return PararealState(
        iterates=init,
        coarse_values=init[1:],
        fine_reference=reference,
        k=0,
    )


def parareal_iteration(
    state: PararealState,
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    *,
    workers: int = 1,
    newton_tol: float = 1e-10,
    newton_max_iter: int = 50,
    nn=None,
    stats: NewtonStats | None = None,
) -> PararealState:
    """One prediction-correction sweep over all slices."""
    fine, coarse = propagator_pair(
        variant, partition, eps,
        newton_tol=newton_tol, newton_max_iter=newton_max_iter, nn=nn,
    )
    n_slices = partition.num_slices
    frozen = state.iterates

    def fine_slice(n: int) -> Field:
        return propagate(frozen[n], fine, partition.fine_steps, stats)

    if workers > 1 and n_slices > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fine_values = list(pool.map(fine_slice, range(n_slices)))
    else:
        fine_values = [fine_slice(n) for n in range(n_slices)]

    new_iterates = [frozen[0]]
    new_coarse: list[Field] = []
    for n in range(n_slices):
        g_new = propagate(new_iterates[n], coarse, 1, stats)
        corrected = g_new.values + fine_values[n].values - state.coarse_values[n].values
        new_iterates.append(Field(frozen[0].grid, corrected))
        new_coarse.append(g_new)

    return PararealState(
        iterates=new_iterates,
        coarse_values=new_coarse,
        fine_reference=state.fine_reference,
        k=state.k + 1,
        previous=frozen,
    )


def error_against_reference(state: PararealState) -> float:
    """Discrete L-infinity(0,T; L2) error at the coarse nodes."""
    return max(
        l2_norm(Field(u.grid, u.values - ref.values))
        for u, ref in zip(state.iterates, state.fine_reference)
    )


@dataclass
class IterationRecord:
    """One row of the experiment trace."""

    k: int
    error: float
    energy_end: float
    mass_end: float
    wall_seconds: float
    iterate_norms: tuple[float, ...]
    bound: float | None = None


@dataclass
class RunTrace:
    """Per-iteration record of a parareal run plus run-level diagnostics."""

    records: list[IterationRecord]
    converged_at: int | None
    tolerance: float
    reference_seconds: float
    reference_norm: float
    newton: NewtonStats

    @property
    def errors(self) -> tuple[float, ...]:
        return tuple(r.error for r in self.records)


def run(
    u0: Field,
    variant: AlgorithmVariant,
    partition: TimePartition,
    eps: float,
    *,
    tol: float = 1e-6,
    max_iter: int | None = None,
    workers: int = 1,
    newton_tol: float = 1e-10,
    newton_max_iter: int = 50,
    nn=None,
) -> RunTrace:
    """Iterate until the error against the fine reference drops below tol.

    The reference is computed once up front.  ``max_iter`` defaults to
    N + 2: finite-step convergence guarantees termination by N, with a two
    iteration floating-point headroom.  A trace with ``converged_at=None``
    signals that the budget ran out first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = partition.num_slices + 2

    t0 = time.perf_counter()
    stats = NewtonStats()
    reference = serial_fine_reference(
        u0, variant, partition, eps,
        newton_tol=newton_tol, newton_max_iter=newton_max_iter, nn=nn, stats=stats,
    )
    reference_seconds = time.perf_counter() - t0
    reference_norm = max(l2_norm(f) for f in reference)

    t0 = time.perf_counter()
    init = coarse_init(
        u0, variant, partition, eps,
        newton_tol=newton_tol, newton_max_iter=newton_max_iter, stats=stats,
    )
    state = PararealState(
        iterates=init, coarse_values=init[1:], fine_reference=reference, k=0,
    )

    def make_record(st: PararealState, wall: float) -> IterationRecord:
        tail = st.iterates[-1]
        return IterationRecord(
            k=st.k,
            error=error_against_reference(st),
            energy_end=energy(tail, eps),
            mass_end=mass(tail),
            wall_seconds=wall,
            iterate_norms=tuple(l2_norm(f) for f in st.iterates),
        )

    records = [make_record(state, time.perf_counter() - t0)]
    converged_at: int | None = 0 if records[0].error <= tol else None

    while converged_at is None and state.k < max_iter:
        t0 = time.perf_counter()
        state = parareal_iteration(
            state, variant, partition, eps,
            workers=workers, newton_tol=newton_tol,
            newton_max_iter=newton_max_iter, nn=nn, stats=stats,
        )
        records.append(make_record(state, time.perf_counter() - t0))
        if records[-1].error <= tol:
            converged_at = state.k

    return RunTrace(
        records=records,
        converged_at=converged_at,
        tolerance=tol,
        reference_seconds=reference_seconds,
        reference_norm=reference_norm,
        newton=stats,
    )
