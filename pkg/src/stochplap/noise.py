"""Trace-class Wiener noise diagonal in the Neumann cosine basis.

``W^B_t = sum_k b_k beta_k(t) e_k`` with ``e_k(x) = sqrt(2) cos(k pi x)`` and
``b_k = sigma k^-s``.  Increments are drawn from a Philox stream keyed by
``(seed, step_index)``; mode ``k`` takes the k-th normal of that stream, so an
increment is a pure function of ``(seed, step_index, k)`` and does not depend
on how many modes are requested.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .field import Field, Grid, ParameterError

__all__ = [
    "NoiseModel",
    "cosine_mode",
    "mode_matrix",
    "wiener_increment",
    "wiener_path",
    "trace_norm",
]

_U64 = (1 << 64) - 1
# s > 7/2 is what makes sum_k b_k^2 k^6 (the H^3 surrogate) converge
MIN_DECAY = 3.5


@dataclass(frozen=True)
class NoiseModel:
    n_modes: int
    amplitude: float
    decay: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ParameterError("n_modes must be a positive integer")
        if self.amplitude < 0:
            raise ParameterError("noise amplitude must be >= 0")
        if self.decay <= MIN_DECAY:
            raise ParameterError(
                f"decay s={self.decay} too slow: need s > {MIN_DECAY} for H^3 summability"
            )
        object.__setattr__(self, "seed", int(self.seed) & _U64)

    @classmethod
    def default_for(cls, grid: Grid, amplitude: float, seed: int = 0, decay: float = 4.0,
                    n_modes: Optional[int] = None) -> "NoiseModel":
        return cls(n_modes or max(1, grid.n_nodes // 4), amplitude, decay, seed)

    @property
    def mode_amplitudes(self) -> np.ndarray:
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return self.amplitude * k ** (-self.decay)

    @property
    def tail_ratio(self) -> float:
        """``b_K^2 K / sum b_k^2``; small when the truncation is harmless."""
        b = self.mode_amplitudes
        total = float(np.sum(b**2))
        return 0.0 if total == 0 else float(b[-1] ** 2 * self.n_modes / total)

    @property
    def truncation_ok(self) -> bool:
        return self.tail_ratio < 1e-6

    def sup_norm_sum(self) -> float:
        """``sum_k ||b_k e_k||_inf^2 = 2 sum b_k^2``."""
        return float(2.0 * np.sum(self.mode_amplitudes**2))

    def h3_sum(self) -> float:
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return float(np.sum(self.mode_amplitudes**2 * k**6))

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(self.n_modes, self.amplitude, self.decay, seed)

    def with_amplitude(self, amplitude: float) -> "NoiseModel":
        return NoiseModel(self.n_modes, amplitude, self.decay, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trace_norm"] = trace_norm(self)
        return d


def cosine_mode(grid: Grid, k: int) -> Field:
    return Field(grid, np.sqrt(2.0) * np.cos(k * np.pi * grid.nodes))


@lru_cache(maxsize=64)
def _mode_matrix(n_nodes: int, n_modes: int) -> np.ndarray:
    x = (np.arange(n_nodes) + 0.5) / n_nodes
    k = np.arange(1, n_modes + 1)
    E = np.sqrt(2.0) * np.cos(np.pi * np.outer(k, x))
    E.setflags(write=False)
    return E


def mode_matrix(grid: Grid, n_modes: int) -> np.ndarray:
    """Rows are the basis functions ``e_1..e_K`` sampled on the grid."""
    if n_modes >= grid.n_nodes:
        raise ParameterError(
            f"{n_modes} cosine modes alias on {grid.n_nodes} nodes; need n_modes < n_nodes"
        )
    return _mode_matrix(grid.n_nodes, n_modes)


def _normals(model: NoiseModel, step_index: int) -> np.ndarray:
    key = model.seed | ((int(step_index) & _U64) << 64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(model.n_modes)


def increment_array(model: NoiseModel, dt: float, step_index: int, grid: Grid) -> np.ndarray:
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if model.amplitude == 0:
        return np.zeros(grid.n_nodes)
    coeffs = model.mode_amplitudes * np.sqrt(dt) * _normals(model, step_index)
    out = coeffs @ mode_matrix(grid, model.n_modes)
    # cosine modes are mean zero on the cell-centred grid up to rounding
    return out - out.mean()


def wiener_increment(model: NoiseModel, dt: float, step_index: int, grid: Grid) -> Field:
    return Field(grid, increment_array(model, dt, step_index, grid))


def path_array(model: NoiseModel, dt: float, n_steps: int, grid: Grid, start: int = 0) -> np.ndarray:
    """``W^B`` at steps ``0..n_steps`` (row 0 is zero), shape ``(n_steps+1, N)``."""
    W = np.zeros((n_steps + 1, grid.n_nodes))
    for n in range(n_steps):
        W[n + 1] = W[n] + increment_array(model, dt, start + n, grid)
    return W


def wiener_path(model: NoiseModel, dt: float, n_steps: int, grid: Grid) -> list[Field]:
    """``W^B`` after each of ``n_steps`` increments; ``W^B_0 = 0`` is implied."""
    if n_steps < 0:
        raise ParameterError("n_steps must be >= 0")
    W = path_array(model, dt, n_steps, grid)
    return [Field(grid, w) for w in W[1:]]


def trace_norm(model: NoiseModel) -> float:
    """``||B||^2_{L_2(H)} = sum_k b_k^2``."""
    return float(np.sum(model.mode_amplitudes**2))
