"""Discrete drift operators and their energies.

Both drifts are written as sums over edges ``e = (i, j), i < j`` of a weighted
flux of the scaled difference ``lam * (u_j - u_i)``:

    A(u)_i += w_e * flux(lam * d_e),   A(u)_j -= w_e * flux(lam * d_e)

The nonlocal drift uses the stencil pairs with ``lam = 1``; the local Neumann
p-Laplacian uses nearest-neighbour faces with ``w = lam = 1/h`` (boundary faces
carry zero flux because they are simply absent).  The matching energy is
``h * sum_e (w_e / lam) * psi(lam * d_e)`` and ``A = -(1/h) grad E``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .field import Field, Grid, ParameterError, ShapeError
from .kernel import DiscreteStencil
from .proximal import PowerPotential

__all__ = [
    "DriftOperator",
    "nonlocal_operator",
    "local_operator",
    "apply_nonlocal",
    "apply_local",
    "energy_nonlocal",
    "energy_local",
]


@dataclass(frozen=True, eq=False)
class DriftOperator:
    grid: Grid
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    scale: float
    pot: PowerPotential
    viscosity: float = 0.0
    kind: str = "nonlocal"
    stencil: Optional[DiscreteStencil] = None

    def __post_init__(self):
        if self.viscosity < 0:
            raise ParameterError("viscosity must be >= 0")

    @property
    def n(self) -> int:
        return self.grid.n_nodes

    def _diffs(self, u: np.ndarray) -> np.ndarray:
        return self.scale * (u[self.cols] - u[self.rows])

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.apply_with_flux(u, self.pot.flux(self._diffs(u)))

    def apply_with_flux(self, u: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Drift with the per-edge flux values ``q`` supplied by the caller."""
        out = self.edge_divergence(q)
        if self.viscosity:
            out += self.viscosity * neumann_laplacian(u, self.grid.spacing)
        return out

    def edge_divergence(self, q: np.ndarray) -> np.ndarray:
        f = self.weights * q
        return np.bincount(self.rows, f, self.n) - np.bincount(self.cols, f, self.n)

    def energy(self, u: np.ndarray) -> float:
        h = self.grid.spacing
        e = h * np.dot(self.weights / self.scale, self.pot.energy_density(self._diffs(u)))
        if self.viscosity:
            e += 0.5 * self.viscosity * h * np.sum((np.diff(u) / h) ** 2)
        return float(e)

    def edge_slopes(self, u: np.ndarray, floor: float = 0.0) -> np.ndarray:
        """Linearization coefficients ``w * lam * flux'(lam d)`` per edge."""
        return self.weights * self.scale * self.pot.flux_slope(self._diffs(u), floor)

    @property
    def bandwidth(self) -> int:
        bw = int(np.max(self.cols - self.rows)) if self.rows.size else 0
        return max(bw, 1 if self.viscosity else 0)

    def max_degree(self) -> float:
        """``max_i sum_j w_ij lam`` (the flux slope factored out)."""
        deg = np.bincount(self.rows, self.weights * self.scale, self.n)
        deg += np.bincount(self.cols, self.weights * self.scale, self.n)
        return float(deg.max()) if deg.size else 0.0

    def banded_system(self, u: np.ndarray, dt: float, floor: float = 0.0) -> np.ndarray:
        """Upper banded storage of ``I - dt A'(u)`` for ``scipy.linalg.solveh_banded``."""
        return self.banded_from_coefficients(dt * self.edge_slopes(u, floor), dt)

    def banded_from_coefficients(self, c: np.ndarray, dt: float) -> np.ndarray:
        """``I + sum_e c_e (e_i - e_j)(e_i - e_j)^T`` plus viscosity, upper banded."""
        bw = self.bandwidth
        ab = np.zeros((bw + 1, self.n))
        diag = np.ones(self.n) + np.bincount(self.rows, c, self.n) + np.bincount(self.cols, c, self.n)
        off = self.cols - self.rows
        # (offset, column) pairs are unique within one edge set
        ab[bw - off, self.cols] = -c
        if self.viscosity:
            cv = dt * self.viscosity / self.grid.spacing**2
            idx = np.arange(1, self.n)
            ab[bw - 1, idx] -= cv
            diag[:-1] += cv
            diag[1:] += cv
        ab[bw] = diag
        return ab

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        """Dense derivative of :meth:`apply` (negative semidefinite)."""
        c = self.edge_slopes(u)
        Jm = np.zeros((self.n, self.n))
        np.add.at(Jm, (self.rows, self.cols), c)
        np.add.at(Jm, (self.cols, self.rows), c)
        Jm -= np.diag(Jm.sum(axis=1))
        if self.viscosity:
            Jm += self.viscosity * neumann_laplacian_matrix(self.n, self.grid.spacing)
        return Jm


def neumann_laplacian(u: np.ndarray, h: float) -> np.ndarray:
    """Three-point Laplacian with zero-flux boundary faces."""
    flux = np.diff(u)
    out = np.zeros_like(u)
    out[:-1] += flux
    out[1:] -= flux
    return out / h**2


def neumann_laplacian_matrix(n: int, h: float) -> np.ndarray:
    L = np.diag(np.full(n - 1, 1.0), 1) + np.diag(np.full(n - 1, 1.0), -1)
    L -= np.diag(L.sum(axis=1))
    return L / h**2


def nonlocal_operator(stencil: DiscreteStencil, pot: PowerPotential) -> DriftOperator:
    pot.require_single_valued()
    if abs(stencil.p - pot.p) > 1e-15:
        raise ParameterError(f"stencil built for p={stencil.p} but potential has p={pot.p}")
    return DriftOperator(
        stencil.grid, stencil.rows, stencil.cols, stencil.weights, 1.0, pot,
        kind="nonlocal", stencil=stencil,
    )


def local_operator(grid: Grid, pot: PowerPotential, viscosity: float = 0.0) -> DriftOperator:
    pot.require_single_valued()
    return _local(grid, pot, viscosity)


def _local(grid: Grid, pot: PowerPotential, viscosity: float) -> DriftOperator:
    h = grid.spacing
    rows = np.arange(grid.n_nodes - 1, dtype=np.intp)
    return DriftOperator(
        grid, rows, rows + 1, np.full(rows.size, 1.0 / h), 1.0 / h, pot,
        viscosity=viscosity, kind="local",
    )


def _check_grid(u: Field, grid: Grid) -> None:
    if u.grid != grid:
        raise ShapeError("field and operator live on different grids")


def apply_nonlocal(u: Field, stencil: DiscreteStencil, pot: PowerPotential) -> Field:
    _check_grid(u, stencil.grid)
    return Field(u.grid, nonlocal_operator(stencil, pot).apply(u.values))


def apply_local(u: Field, pot: PowerPotential, viscosity: float = 0.0) -> Field:
    return Field(u.grid, local_operator(u.grid, pot, viscosity).apply(u.values))


def energy_nonlocal(u: Field, stencil: DiscreteStencil, pot: PowerPotential) -> float:
    """``(1/2p) h sum_ij w_ij |u_i - u_j|^p`` (envelope in place of psi if regularized)."""
    _check_grid(u, stencil.grid)
    op = DriftOperator(stencil.grid, stencil.rows, stencil.cols, stencil.weights, 1.0, pot)
    return op.energy(u.values)


def energy_local(u: Field, pot: PowerPotential, viscosity: float = 0.0) -> float:
    """Discrete ``(1/p) int |u'|^p``; total variation ``sum |u_{i+1} - u_i|`` at p=1."""
    return _local(u.grid, pot, viscosity).energy(u.values)
