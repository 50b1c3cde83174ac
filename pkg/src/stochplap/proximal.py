"""Moreau-Yosida calculus for the power potential ``psi(r) = |r|^p / p``.

For ``p in (1, 2)`` the proximal point ``s`` of ``r`` solves
``s + delta * |s|^(p-2) s = r``.  Writing ``t = |s|^(p-1)`` turns this into
``t^q + delta * t = |r|`` with ``q = 1/(p-1) > 1``, a convex increasing
equation in ``t``.  Newton started from an upper bound then decreases
monotonically to the root, and ``t`` itself is the regularized flux
``phi_delta(r) = (r - s) / delta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import ParameterError

__all__ = [
    "NumericError",
    "PowerPotential",
    "prox",
    "envelope",
    "regularized_flux",
    "flux_derivative",
]

_MAX_NEWTON = 100


class NumericError(ArithmeticError):
    """An iterative solve failed to reach its tolerance."""


@dataclass(frozen=True)
class PowerPotential:
    p: float
    delta_my: float = 0.0

    def __post_init__(self):
        if not 1.0 <= self.p <= 2.0:
            raise ParameterError(f"p must lie in [1, 2], got {self.p}")
        if self.delta_my < 0:
            raise ParameterError(f"delta_my must be >= 0, got {self.delta_my}")

    @property
    def regularized(self) -> bool:
        return self.delta_my > 0

    def require_single_valued(self) -> None:
        if self.p == 1.0 and self.delta_my == 0.0:
            raise ParameterError(
                "p=1 with delta_my=0 is the multivalued total-variation case; "
                "set delta_my > 0 to use the Moreau-Yosida (Huber) flux"
            )

    def psi(self, r):
        return np.abs(r) ** self.p / self.p

    def energy_density(self, r):
        """``psi`` if unregularized, else the envelope ``psi_delta``."""
        if self.delta_my == 0:
            return self.psi(r)
        return envelope(r, self.delta_my, self.p)

    def flux(self, r):
        """``phi(r) = |r|^(p-2) r`` or ``phi_delta`` when regularized."""
        if self.delta_my == 0:
            self.require_single_valued()
            return _power_flux(np.asarray(r, dtype=float), self.p)
        return regularized_flux(r, self.delta_my, self.p)

    def flux_slope(self, r, floor: float = 0.0):
        """Derivative of :meth:`flux`. For the exact singular flux the slope at
        ``|r| < floor`` is evaluated at ``floor`` (used for Newton matrices)."""
        r = np.asarray(r, dtype=float)
        if self.delta_my == 0:
            self.require_single_valued()
            if self.p == 2.0:
                return np.ones_like(r)
            a = np.maximum(np.abs(r), floor)
            with np.errstate(divide="ignore"):
                return (self.p - 1.0) * a ** (self.p - 2.0)
        return flux_derivative(r, self.delta_my, self.p)

    def inverse_flux(self, q):
        """``r`` with ``flux(r) = q`` for ``1 < p < 2``: ``|q|^(r-1) q + delta q``.

        Unlike the flux this map is smooth with slope >= delta, which is what
        makes Newton iterations in flux variables robust near zero gradients.
        """
        self._require_interior()
        q = np.asarray(q, dtype=float)
        return np.sign(q) * np.abs(q) ** (1.0 / (self.p - 1.0)) + self.delta_my * q

    def inverse_flux_slope(self, q):
        self._require_interior()
        e = 1.0 / (self.p - 1.0)
        return e * np.abs(np.asarray(q, dtype=float)) ** (e - 1.0) + self.delta_my

    def _require_interior(self):
        if not 1.0 < self.p < 2.0:
            raise ParameterError("inverse flux is only used for 1 < p < 2")

    def lipschitz_bound(self) -> float:
        """Global Lipschitz constant of the flux (``inf`` if singular)."""
        if self.delta_my == 0:
            return 1.0 if self.p == 2.0 else np.inf
        if self.p == 2.0:
            return 1.0 / (1.0 + self.delta_my)
        return 1.0 / self.delta_my


def _power_flux(r: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return r.copy()
    out = np.zeros_like(r)
    nz = r != 0
    out[nz] = np.sign(r[nz]) * np.abs(r[nz]) ** (p - 1.0)
    return out


def _check(delta: float, p: float) -> None:
    if not delta > 0:
        raise ParameterError(f"delta_my must be > 0, got {delta}")
    if not 1.0 <= p <= 2.0:
        raise ParameterError(f"p must lie in [1, 2], got {p}")


def _flux_magnitude(a: np.ndarray, delta: float, p: float) -> np.ndarray:
    """``t >= 0`` solving ``t^q + delta t = a`` for ``a >= 0`` (``q = 1/(p-1)``)."""
    if p == 1.0:
        return np.minimum(a / delta, 1.0)
    if p == 2.0:
        return a / (1.0 + delta)
    q = 1.0 / (p - 1.0)
    with np.errstate(over="ignore"):
        t = np.minimum(a / delta, a ** (p - 1.0))
    active = t > 0
    for _ in range(_MAX_NEWTON):
        if not active.any():
            return t
        ta = t[active]
        h = ta**q + delta * ta - a[active]
        dh = q * ta ** (q - 1.0) + delta
        step = h / dh
        t_new = np.maximum(ta - step, 0.0)
        t[active] = t_new
        done = np.abs(step) <= 4 * np.finfo(float).eps * np.maximum(t_new, np.finfo(float).tiny)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    raise NumericError(
        f"prox Newton did not converge in {_MAX_NEWTON} iterations (p={p}, delta={delta})"
    )


def _as_out(x, scalar: bool):
    return float(x) if scalar else x


def regularized_flux(r, delta_my: float, p: float):
    """``phi_delta(r) = (r - prox(r)) / delta``, the derivative of the envelope."""
    _check(delta_my, p)
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=float)
    t = _flux_magnitude(np.abs(r).reshape(-1), delta_my, p).reshape(r.shape)
    return _as_out(np.sign(r) * t, scalar)


def prox(r, delta_my: float, p: float):
    """Minimizer of ``(r - s)^2 / (2 delta) + |s|^p / p``."""
    _check(delta_my, p)
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=float)
    if p == 1.0:
        s = np.sign(r) * np.maximum(np.abs(r) - delta_my, 0.0)
    elif p == 2.0:
        s = r / (1.0 + delta_my)
    else:
        t = _flux_magnitude(np.abs(r).reshape(-1), delta_my, p).reshape(r.shape)
        # |s| = r - delta t exactly solves the optimality condition; t^q loses
        # accuracy when |s| << |r|.
        s = np.sign(r) * np.maximum(np.abs(r) - delta_my * t, 0.0)
    return _as_out(s, scalar)


def envelope(r, delta_my: float, p: float):
    """Moreau-Yosida envelope ``psi_delta(r) = delta t^2 / 2 + |s|^p / p``."""
    _check(delta_my, p)
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=float)
    s = np.asarray(prox(r, delta_my, p))
    t = (np.abs(r) - np.abs(s)) / delta_my
    val = 0.5 * delta_my * t**2 + np.abs(s) ** p / p
    return _as_out(val, scalar)


def flux_derivative(r, delta_my: float, p: float):
    """``phi_delta'(r) = 1 / (q t^(q-1) + delta)``; equals ``1/delta`` at 0 for p<2."""
    _check(delta_my, p)
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=float)
    if p == 1.0:
        d = np.where(np.abs(r) < delta_my, 1.0 / delta_my, 0.0)
    elif p == 2.0:
        d = np.full_like(r, 1.0 / (1.0 + delta_my))
    else:
        q = 1.0 / (p - 1.0)
        t = _flux_magnitude(np.abs(r).reshape(-1), delta_my, p).reshape(r.shape)
        d = 1.0 / (q * t ** (q - 1.0) + delta_my)
    return _as_out(d, scalar)
