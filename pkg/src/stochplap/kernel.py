"""Compactly supported radial kernels and their rescaled discrete stencils.

A stencil stores the upper-triangular pair list ``(i, j), i < j`` inside the
kernel support together with the weights ``w_ij = h * J_eps(x_i - x_j)``,
where ``J_eps(z) = C_{J,p} eps^-(p+1) J(z / eps)``.  Pairs are restricted to
the domain, which is the nonlocal Neumann condition.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .field import Field, Grid, ParameterError, ShapeError
from .proximal import NumericError

__all__ = [
    "KernelProfile",
    "DiscreteStencil",
    "ResolutionError",
    "normalization_constant",
    "build_stencil",
    "nonlocal_norm",
]

SHAPES = ("box", "tent", "bump")


class ResolutionError(ParameterError):
    """The grid is too coarse to resolve the rescaled kernel."""


def _bump_raw(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1
    out[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _bump_mass() -> float:
    val, _ = integrate.quad(lambda z: float(_bump_raw(z)), -1.0, 1.0, epsabs=0, epsrel=1e-13)
    return val


@dataclass(frozen=True)
class KernelProfile:
    """Unit-mass even kernel supported on ``[-support_radius, support_radius]``.

    ``amplitude`` multiplies the normalized shape; it exists so that tests can
    check that normalization constants only depend on the normalized shape.
    """

    shape: str = "tent"
    support_radius: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ParameterError(f"unknown kernel shape {self.shape!r}; choose from {SHAPES}")
        if not self.support_radius > 0:
            raise ParameterError("support_radius must be positive")
        if not self.amplitude > 0:
            raise ParameterError("amplitude must be positive")

    def __call__(self, z):
        scalar = np.ndim(z) == 0
        u = np.abs(np.asarray(z, dtype=float)) / self.support_radius
        if self.shape == "box":
            val = np.where(u <= 1.0, 0.5, 0.0)
        elif self.shape == "tent":
            val = np.maximum(1.0 - u, 0.0)
        else:
            val = _bump_raw(u) / _bump_mass()
        val = self.amplitude * val / self.support_radius
        return float(val) if scalar else val

    def normalized(self) -> "KernelProfile":
        return KernelProfile(self.shape, self.support_radius, 1.0)

    def moment(self, power: float) -> float:
        """``int J(z) |z|^power dz`` by adaptive quadrature."""
        R = self.support_radius
        # integrand is even; integrate on [0, R] with the kink at R as endpoint
        val, err = integrate.quad(
            lambda z: float(self(z)) * z**power, 0.0, R, epsabs=0.0, epsrel=1e-12, limit=200
        )
        if not np.isfinite(val) or err > 1e-10 * max(abs(val), 1e-300):
            raise NumericError(f"kernel moment quadrature failed (value={val}, err={err})")
        return 2.0 * val


def normalization_constant(profile: KernelProfile, p: float) -> float:
    """``C_{J,p} = 1 / (1/2 int J(z) |z|^p dz)`` for the unit-mass profile."""
    if not 1.0 <= p <= 2.0:
        raise ParameterError(f"p must lie in [1, 2], got {p}")
    return _normalization(profile, p)


def _normalization(profile: KernelProfile, m: float) -> float:
    """Same constant for any order ``m >= 1`` (norms of order 3 and 4 need it)."""
    base = profile.normalized()
    mass = base.moment(0.0)
    if abs(mass - 1.0) > 1e-10:
        raise NumericError(f"kernel profile has mass {mass}, expected 1")
    half_moment = 0.5 * base.moment(m)
    if not (np.isfinite(half_moment) and half_moment > 0):
        raise NumericError("kernel p-moment is not positive and finite")
    return 1.0 / half_moment


@dataclass(frozen=True, eq=False)
class DiscreteStencil:
    profile: KernelProfile
    epsilon: float
    p: float
    grid: Grid
    normalization: float
    bandwidth: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        n = self.grid.n_nodes
        return np.bincount(self.rows, self.weights, n) + np.bincount(self.cols, self.weights, n)

    def dense(self) -> np.ndarray:
        n = self.grid.n_nodes
        W = np.zeros((n, n))
        W[self.rows, self.cols] = self.weights
        W[self.cols, self.rows] = self.weights
        return W

    def weights_for_power(self, m: float) -> np.ndarray:
        """Weights of the same support rescaled with ``C_{J,m} eps^-(m+1)``."""
        if m == self.p:
            return self.weights
        factor = _normalization(self.profile, m) / self.normalization
        return self.weights * factor * self.epsilon ** (self.p - m)

    def summary(self) -> dict:
        rs = self.row_sums
        return {
            "kernel": self.profile.shape,
            "epsilon": self.epsilon,
            "p": self.p,
            "n_nodes": self.grid.n_nodes,
            "bandwidth": self.bandwidth,
            "normalization": self.normalization,
            "n_pairs": int(self.weights.size),
            "row_sum_min": float(rs.min()),
            "row_sum_max": float(rs.max()),
            "row_sum_mean": float(rs.mean()),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def build_stencil(profile: KernelProfile, epsilon: float, p: float, grid: Grid) -> DiscreteStencil:
    h = grid.spacing
    if epsilon < 2 * h:
        raise ResolutionError(
            f"epsilon={epsilon} does not resolve the kernel on {grid.n_nodes} nodes; "
            f"need epsilon >= {2 * h} (two grid spacings)"
        )
    if not 1.0 <= p <= 2.0:
        raise ParameterError(f"p must lie in [1, 2], got {p}")
    profile = profile.normalized()
    C = normalization_constant(profile, p)
    reach = epsilon * profile.support_radius
    bandwidth = min(math.ceil(reach / h - 1e-12), grid.n_nodes - 1)
    offsets = np.arange(1, bandwidth + 1)
    dist = offsets * h
    w_off = h * C * epsilon ** (-(p + 1.0)) * profile(dist / epsilon)
    keep = w_off > 0
    offsets, w_off = offsets[keep], w_off[keep]
    rows = np.concatenate([np.arange(grid.n_nodes - k) for k in offsets]).astype(np.intp)
    cols = np.concatenate([np.arange(k, grid.n_nodes) for k in offsets]).astype(np.intp)
    weights = np.concatenate([np.full(grid.n_nodes - k, w) for k, w in zip(offsets, w_off)])
    for arr in (rows, cols, weights):
        arr.setflags(write=False)
    return DiscreteStencil(profile, float(epsilon), float(p), grid, C, bandwidth, rows, cols, weights)


def nonlocal_norm(f: Field, stencil: DiscreteStencil, m: float) -> float:
    """``||f||_{J^eps}`` of order m: ``(1/(2m)) h sum_ij w^(m)_ij |f_i - f_j|^m`` to the 1/m."""
    if f.grid != stencil.grid:
        raise ShapeError("field and stencil live on different grids")
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    w = stencil.weights_for_power(m)
    d = np.abs(f.values[stencil.cols] - f.values[stencil.rows])
    top = float(d.max()) if d.size else 0.0
    if top == 0.0:
        return 0.0
    # the pair list holds i<j only, so the symmetric double sum is twice this;
    # dividing by the largest difference keeps tiny and huge fields in range
    total = 2.0 * stencil.grid.spacing * np.dot(w, (d / top) ** m) / (2.0 * m)
    return float(top * total ** (1.0 / m))
