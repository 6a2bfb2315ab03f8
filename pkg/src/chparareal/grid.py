"""Uniform Dirichlet grids on (0,1)^d and the discrete Laplacian machinery.

Fields store values at interior nodes only (lexicographic order in 2D);
homogeneous Dirichlet values at the physical boundary are implicit.  The
discrete Laplacian is the classical second-order stencil, assembled as a
sparse matrix; in 2D it is the Kronecker sum of two 1D operators and the
bilaplacian is its exact square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SpatialGrid",
    "Field",
    "DiscreteOperator",
    "build_laplacian",
    "laplacian_eigenvalues",
    "operator_eigenvalues",
    "l2_norm",
    "norm_of_values",
    "energy",
    "mass",
]


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform mesh of (0,1)^dim; ``nodes_per_axis`` counts the boundary points."""

    dim: int
    nodes_per_axis: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.nodes_per_axis < 4:
            raise ValueError(
                f"nodes_per_axis must be at least 4, got {self.nodes_per_axis}"
            )

    @property
    def h(self) -> float:
        """Mesh width 1/(nodes_per_axis - 1)."""
        return 1.0 / (self.nodes_per_axis - 1)

    @property
    def interior_per_axis(self) -> int:
        return self.nodes_per_axis - 2

    @property
    def interior_count(self) -> int:
        return self.interior_per_axis**self.dim

    def interior_coordinates(self) -> np.ndarray:
        """Coordinates of interior nodes: shape (m,) in 1D, (m*m, 2) in 2D."""
        x = np.arange(1, self.nodes_per_axis - 1) * self.h
        if self.dim == 1:
            return x
        gx, gy = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True, eq=False)
class Field:
    """Solution values at the interior nodes of a grid."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.interior_count,):
            raise ValueError(
                f"expected {self.grid.interior_count} interior values, "
                f"got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", values)


class DiscreteOperator:
    """Discrete Dirichlet Laplacian on a grid, together with its square.

    ``matrix`` is symmetric negative definite (diagonal -2*dim/h^2,
    off-diagonal 1/h^2 at grid neighbours).  For 1D grids the diagonals of
    the operator and of its square are kept around for fast banded assembly
    of the implicit step systems.
    """

    def __init__(self, grid: SpatialGrid):
        self.grid = grid
        m = grid.interior_per_axis
        h2 = grid.h**2
        one_d = sp.diags_array(
            [np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)],
            offsets=[-1, 0, 1],
        ) / h2
        if grid.dim == 1:
            lap = one_d
        else:
            eye = sp.eye_array(m)
            lap = sp.kron(eye, one_d) + sp.kron(one_d, eye)
        self.matrix = sp.csr_array(lap)
        self.squared = sp.csr_array(self.matrix @ self.matrix)
        if grid.dim == 1:
            self.lap_main = self.matrix.diagonal(0)
            self.lap_off = self.matrix.diagonal(1)
            self.sq_main = self.squared.diagonal(0)
            self.sq_off1 = self.squared.diagonal(1)
            self.sq_off2 = self.squared.diagonal(2)


@lru_cache(maxsize=None)
def build_laplacian(grid: SpatialGrid) -> DiscreteOperator:
    """Assemble (once per grid) the discrete Dirichlet Laplacian."""
    return DiscreteOperator(grid)


def laplacian_eigenvalues(grid: SpatialGrid) -> np.ndarray:
    """Analytic eigenvalues (2/h^2)(cos(p*pi/(N_x-1)) - 1), p = 1..N_x-2.

    Defined for 1D grids; the 2D spectrum consists of pairwise sums of the
    per-axis values (see :func:`operator_eigenvalues`).
    """
    if grid.dim != 1:
        raise ValueError("laplacian_eigenvalues is the per-axis (1D) spectrum")
    p = np.arange(1, grid.nodes_per_axis - 1)
    return (2.0 / grid.h**2) * (np.cos(p * np.pi / (grid.nodes_per_axis - 1)) - 1.0)


def operator_eigenvalues(grid: SpatialGrid) -> np.ndarray:
    """Full spectrum of the assembled operator (pairwise axis sums in 2D)."""
    axis = laplacian_eigenvalues(SpatialGrid(1, grid.nodes_per_axis))
    if grid.dim == 1:
        return axis
    return (axis[:, None] + axis[None, :]).ravel()


def norm_of_values(grid: SpatialGrid, values: np.ndarray) -> float:
    """Cell-weighted discrete L2 norm sqrt(h^dim * sum v^2) of a raw vector."""
    return math.sqrt(grid.h**grid.dim * float(np.dot(values, values)))


def l2_norm(f: Field) -> float:
    """Cell-weighted discrete L2 norm of a field."""
    return norm_of_values(f.grid, f.values)


def energy(f: Field, eps: float) -> float:
    """Discrete Ginzburg-Landau energy.

    Quadrature: h^dim * sum of the bulk density 0.25*(u^2-1)^2 over interior
    nodes plus (eps^2/2) * h^dim * sum of squared forward differences, the
    one-sided differences at the boundary taken against the Dirichlet zeros.
    """
    g = f.grid
    v = f.values
    bulk = 0.25 * float(np.sum((v * v - 1.0) ** 2))
    if g.dim == 1:
        d = np.diff(v, prepend=0.0, append=0.0)
        grad2 = float(np.sum(d * d))
    else:
        m = g.interior_per_axis
        arr = v.reshape(m, m)
        dx = np.diff(arr, axis=0, prepend=0.0, append=0.0)
        dy = np.diff(arr, axis=1, prepend=0.0, append=0.0)
        grad2 = float(np.sum(dx * dx) + np.sum(dy * dy))
    return g.h**g.dim * (bulk + 0.5 * eps**2 * grad2 / g.h**2)


def mass(f: Field) -> float:
    """Total discrete mass h^dim * sum(u)."""
    return f.grid.h**f.grid.dim * float(np.sum(f.values))
