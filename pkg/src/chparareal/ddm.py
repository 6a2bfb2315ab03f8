"""Neumann-Neumann non-overlapping domain decomposition for the stabilized
linear time step in 1D.

The step is solved in mixed form: with the auxiliary variable v the update
(u, v) satisfies the coupled block system

    [ I            -dt*Lap ] [u]   [ u^n]
    [ eps^2*Lap - c^2    I ] [v] = [-u^n],    c^2 = (u^n)^2 frozen,

whose Schur complement in u is exactly the monodomain stabilized step.  The
interval is split into equal subdomains sharing interface grid points.  Each
sweep solves Dirichlet sub-problems with the current interface traces (g for
u, h for v), forms the jump in discrete Neumann traces at every interface,
solves Neumann sub-problems loaded by those jumps, and relaxes the traces by
theta times the mismatch of the Neumann solutions.

Discrete Neumann traces are the one-sided half-stencil residuals of the
interface rows (each subdomain owns the couplings on its side of the
interface plus half of the zero-order terms).  The two halves sum to the
full equation residual at the interface node, so the iteration's fixed
point is the monodomain discrete solution itself.

Within a sweep every Dirichlet and Neumann sub-solve depends only on the
frozen traces, so subdomains are independent; each time level factorizes
the local matrices once and expresses the sweep through their interface
responses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from math import sqrt

import numpy as np
import scipy.linalg as sla

from .grid import Field, SpatialGrid

__all__ = [
    "NNParams",
    "Decomposition",
    "InterfaceTraces",
    "NNConvergenceError",
    "nn_time_step",
    "nn_propagate",
    "nn_propagator",
]


@dataclass(frozen=True)
class NNParams:
    """Relaxation, tolerance and budget of the interface iteration."""

    n_subdomains: int = 8
    theta: float = 0.25
    tol: float = 1e-10
    max_iter: int = 100
    warm_start: bool = False

    def __post_init__(self) -> None:
        if self.n_subdomains < 2:
            raise ValueError("need at least 2 subdomains")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")


@dataclass(frozen=True)
class Decomposition:
    """Equal split of the 1D interior into subdomains sharing grid points."""

    grid: SpatialGrid
    n_subdomains: int

    def __post_init__(self) -> None:
        if self.grid.dim != 1:
            raise ValueError("domain decomposition is implemented in 1D only")
        if self.n_subdomains < 2:
            raise ValueError("need at least 2 subdomains")
        cells = self.grid.nodes_per_axis - 1
        if cells % self.n_subdomains != 0:
            raise ValueError(
                f"{cells} mesh cells do not split evenly into "
                f"{self.n_subdomains} subdomains"
            )
        if cells // self.n_subdomains < 2:
            raise ValueError("subdomains must span at least 2 mesh cells")

    @property
    def nodes_per_subdomain(self) -> int:
        return (self.grid.nodes_per_axis - 1) // self.n_subdomains

    @property
    def interface_nodes(self) -> np.ndarray:
        """Global node indices of the N0-1 shared interface points."""
        step = self.nodes_per_subdomain
        return np.arange(1, self.n_subdomains) * step

    def span(self, i: int) -> tuple[int, int]:
        """Global node range [a, b] of subdomain i, end points included."""
        step = self.nodes_per_subdomain
        return i * step, (i + 1) * step


@dataclass
class InterfaceTraces:
    """Current u-traces (g) and v-traces (h) at the interfaces."""

    g: np.ndarray
    h: np.ndarray
    iterations: int = 0

    @classmethod
    def zeros(cls, decomp: Decomposition) -> "InterfaceTraces":
        n = decomp.n_subdomains - 1
        return cls(g=np.zeros(n), h=np.zeros(n))


class NNConvergenceError(RuntimeError):
    """The interface iteration ran out of budget."""

    def __init__(self, iterations: int, g_increment: float, h_increment: float,
                 tol: float):
        super().__init__(
            f"Neumann-Neumann iteration did not converge in {iterations} sweeps: "
            f"last increments {g_increment:.3e} (u-trace), {h_increment:.3e} "
            f"(v-trace) > tol {tol:.3e}"
        )
        self.iterations = iterations
        self.g_increment = g_increment
        self.h_increment = h_increment


def _tridiag(m: int, h2: float) -> np.ndarray:
    lap = np.zeros((m, m))
    idx = np.arange(m)
    lap[idx, idx] = -2.0 / h2
    lap[idx[:-1], idx[:-1] + 1] = 1.0 / h2
    lap[idx[1:], idx[1:] - 1] = 1.0 / h2
    return lap


@dataclass
class _SubdomainSystem:
    """Factorized local solves and interface responses of one subdomain."""

    a: int
    b: int
    dir_sol0: np.ndarray       # Dirichlet solution with zero traces, length 2m
    dir_response: np.ndarray   # d(solution)/d[gL, hL, gR, hR], shape (2m, 4)
    edge0: np.ndarray          # (u_first, u_last, v_first, v_last) at zero traces
    edge_response: np.ndarray  # shape (4, 4)
    neu_edge_response: np.ndarray  # interface values of the Neumann solve per
    # unit load on [left_u, left_v, right_u, right_v]; rows (phiL, phiR, psiL, psiR)


def _build_subdomain_system(
    decomp: Decomposition,
    i: int,
    un_full: np.ndarray,
    dt: float,
    eps: float,
) -> _SubdomainSystem:
    """Assemble and factorize the Dirichlet and Neumann solves of subdomain i.

    Pure per-subdomain function: results do not depend on the order in which
    subdomains are processed.
    """
    grid = decomp.grid
    h2 = grid.h**2
    eps2 = eps**2
    c2_full = un_full * un_full
    a, b = decomp.span(i)
    nx = grid.nodes_per_axis

    # Dirichlet sub-problem on the strict interior a+1 .. b-1.
    m = b - a - 1
    lap = _tridiag(m, h2)
    c2 = c2_full[a + 1 : b]
    a_dir = np.zeros((2 * m, 2 * m))
    a_dir[:m, :m] = np.eye(m)
    a_dir[:m, m:] = -dt * lap
    a_dir[m:, :m] = eps2 * lap - np.diag(c2)
    a_dir[m:, m:] = np.eye(m)
    lu_dir = sla.lu_factor(a_dir, check_finite=False)

    un = un_full[a + 1 : b]
    rhs = np.zeros((2 * m, 5))
    rhs[:m, 0] = un
    rhs[m:, 0] = -un
    rhs[m, 1] = -eps2 / h2        # d/d g_left   (v-row at first node)
    rhs[0, 2] = dt / h2           # d/d h_left   (u-row at first node)
    rhs[2 * m - 1, 3] = -eps2 / h2  # d/d g_right
    rhs[m - 1, 4] = dt / h2       # d/d h_right
    solved = sla.lu_solve(lu_dir, rhs, check_finite=False)
    dir_sol0 = solved[:, 0]
    dir_response = solved[:, 1:]
    edge_rows = np.array([0, m - 1, m, 2 * m - 1])
    edge0 = dir_sol0[edge_rows]
    edge_response = dir_response[edge_rows, :]

    # Neumann sub-problem: interface nodes are unknowns with half-stencil rows.
    left_iface = a > 0
    right_iface = b < nx - 1
    a_n = a if left_iface else a + 1
    b_n = b if right_iface else b - 1
    mn = b_n - a_n + 1
    lap_n = _tridiag(mn, h2)
    c2_n = c2_full[a_n : b_n + 1]
    a_neu = np.zeros((2 * mn, 2 * mn))
    a_neu[:mn, :mn] = np.eye(mn)
    a_neu[:mn, mn:] = -dt * lap_n
    a_neu[mn:, :mn] = eps2 * lap_n - np.diag(c2_n)
    a_neu[mn:, mn:] = np.eye(mn)
    if left_iface:
        # The subdomain owns the couplings to the right of its left interface
        # plus half of the zero-order terms there.
        a_neu[0, :] = 0.0
        a_neu[0, 0] = 0.5
        a_neu[0, mn] = dt / h2
        a_neu[0, mn + 1] = -dt / h2
        a_neu[mn, :] = 0.0
        a_neu[mn, 0] = -eps2 / h2 - 0.5 * c2_n[0]
        a_neu[mn, 1] = eps2 / h2
        a_neu[mn, mn] = 0.5
    if right_iface:
        p = mn - 1
        a_neu[p, :] = 0.0
        a_neu[p, p] = 0.5
        a_neu[p, mn + p] = dt / h2
        a_neu[p, mn + p - 1] = -dt / h2
        a_neu[mn + p, :] = 0.0
        a_neu[mn + p, p] = -eps2 / h2 - 0.5 * c2_n[p]
        a_neu[mn + p, p - 1] = eps2 / h2
        a_neu[mn + p, mn + p] = 0.5
    lu_neu = sla.lu_factor(a_neu, check_finite=False)

    loads = np.zeros((2 * mn, 4))
    if left_iface:
        loads[0, 0] = 1.0
        loads[mn, 1] = 1.0
    if right_iface:
        loads[mn - 1, 2] = 1.0
        loads[2 * mn - 1, 3] = 1.0
    responses = sla.lu_solve(lu_neu, loads, check_finite=False)
    # Interface values of the Neumann solve: phi/psi at the left and right ends.
    neu_edge_rows = np.array([0, mn - 1, mn, 2 * mn - 1])
    neu_edge_response = responses[neu_edge_rows, :]

    return _SubdomainSystem(
        a=a,
        b=b,
        dir_sol0=dir_sol0,
        dir_response=dir_response,
        edge0=edge0,
        edge_response=edge_response,
        neu_edge_response=neu_edge_response,
    )


def _local_traces(traces: InterfaceTraces, i: int, n_sub: int) -> np.ndarray:
    """[g_left, h_left, g_right, h_right] of subdomain i (0 at physical ends)."""
    g_left = traces.g[i - 1] if i > 0 else 0.0
    h_left = traces.h[i - 1] if i > 0 else 0.0
    g_right = traces.g[i] if i < n_sub - 1 else 0.0
    h_right = traces.h[i] if i < n_sub - 1 else 0.0
    return np.array([g_left, h_left, g_right, h_right])


def _nn_solve(
    u_n: Field,
    decomp: Decomposition,
    params: NNParams,
    dt: float,
    eps: float,
    traces: InterfaceTraces | None = None,
) -> tuple[Field, InterfaceTraces]:
    grid = decomp.grid
    if u_n.grid != grid:
        raise ValueError("field grid does not match the decomposition")
    h2 = grid.h**2
    eps2 = eps**2
    n_sub = decomp.n_subdomains
    ifaces = decomp.interface_nodes

    un_full = np.zeros(grid.nodes_per_axis)
    un_full[1:-1] = u_n.values
    c2_full = un_full * un_full

    systems = [
        _build_subdomain_system(decomp, i, un_full, dt, eps) for i in range(n_sub)
    ]
    if traces is None:
        traces = InterfaceTraces.zeros(decomp)
    g = traces.g.copy()
    h = traces.h.copy()

    g_inc = h_inc = np.inf
    for sweep in range(1, params.max_iter + 1):
        # Dirichlet sweep: interface-adjacent values of every local solution.
        edges = [
            sys.edge0 + sys.edge_response @ _local_traces(
                InterfaceTraces(g, h), i, n_sub)
            for i, sys in enumerate(systems)
        ]

        # Jump in discrete Neumann traces = full equation residual at the node.
        node = ifaces
        u_last = np.array([edges[j][1] for j in range(n_sub - 1)])
        v_last = np.array([edges[j][3] for j in range(n_sub - 1)])
        u_first = np.array([edges[j + 1][0] for j in range(n_sub - 1)])
        v_first = np.array([edges[j + 1][2] for j in range(n_sub - 1)])
        jump_u = g - dt * (v_last + v_first - 2.0 * h) / h2 - un_full[node]
        jump_v = (
            eps2 * (u_last + u_first - 2.0 * g) / h2
            - c2_full[node] * g + h + un_full[node]
        )

        # Neumann sweep: each subdomain is loaded by +jump at its right
        # interface rows and -jump at its left interface rows.
        phi_left = np.zeros(n_sub)
        phi_right = np.zeros(n_sub)
        psi_left = np.zeros(n_sub)
        psi_right = np.zeros(n_sub)
        for i, sys in enumerate(systems):
            loads = np.array([
                -jump_u[i - 1] if i > 0 else 0.0,
                -jump_v[i - 1] if i > 0 else 0.0,
                jump_u[i] if i < n_sub - 1 else 0.0,
                jump_v[i] if i < n_sub - 1 else 0.0,
            ])
            phi_left[i], phi_right[i], psi_left[i], psi_right[i] = (
                sys.neu_edge_response @ loads
            )

        # Relaxed trace update from the mismatch of the Neumann solutions.
        dg = params.theta * (phi_right[:-1] - phi_left[1:])
        dh = params.theta * (psi_right[:-1] - psi_left[1:])
        g -= dg
        h -= dh
        g_inc = sqrt(grid.h * float(np.dot(dg, dg)))
        h_inc = sqrt(grid.h * float(np.dot(dh, dh)))
        if g_inc <= params.tol and h_inc <= params.tol:
            out_traces = InterfaceTraces(g=g, h=h, iterations=sweep)
            break
    else:
        raise NNConvergenceError(params.max_iter, g_inc, h_inc, params.tol)

    # Assemble u^{n+1} from the converged Dirichlet solutions and traces.
    values = np.empty(grid.interior_count)
    for i, sys in enumerate(systems):
        sol = sys.dir_sol0 + sys.dir_response @ _local_traces(out_traces, i, n_sub)
        m = sys.b - sys.a - 1
        values[sys.a : sys.b - 1] = sol[:m]
    values[ifaces - 1] = g
    return Field(grid, values), out_traces


@lru_cache(maxsize=None)
def _decomposition_for(grid: SpatialGrid, n_subdomains: int) -> Decomposition:
    return Decomposition(grid, n_subdomains)


def nn_time_step(
    u_n: Field,
    decomp: Decomposition,
    params: NNParams,
    dt: float,
    eps: float,
) -> Field:
    """Advance one fine step with the Neumann-Neumann interface iteration.

    Traces start from zero; the sweep loop stops once both trace increments
    drop below ``params.tol`` in the cell-weighted interface L2 norm.
    """
    out, _ = _nn_solve(u_n, decomp, params, dt, eps)
    return out


def nn_propagate(u: Field, spec, steps: int) -> Field:
    """Compose fine NN steps; warm starting reuses the previous traces."""
    params: NNParams = spec.nn
    decomp = _decomposition_for(u.grid, params.n_subdomains)
    traces = None
    cur = u
    for _ in range(steps):
        cur, final_traces = _nn_solve(cur, decomp, params, spec.dt, spec.eps,
                                      traces=traces)
        if params.warm_start:
            traces = replace(final_traces, g=final_traces.g.copy(),
                             h=final_traces.h.copy())
    return cur


def nn_propagator(decomp: Decomposition, params: NNParams, dt: float, eps: float):
    """Wrap the NN step as a propagator spec usable by the parareal engine."""
    from .schemes import PropagatorSpec, Scheme

    if params.n_subdomains != decomp.n_subdomains:
        params = replace(params, n_subdomains=decomp.n_subdomains)
    return PropagatorSpec(scheme=Scheme.NN_LINEAR_A, dt=dt, eps=eps, nn=params)
