"""Time averages, contraction checks and empirical invariant measures.

Invariant measures are represented by thinned snapshots of one long run
(Cesaro averaging), and compared through a finite dictionary of bounded
Lipschitz functionals, which gives a lower bound on the bounded-Lipschitz
distance.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import null_space, solve_discrete_lyapunov

from .field import Field, Grid, ParameterError, ShapeError, lm_norm_array, read_fields, write_fields
from .integrator import SolverConfig, Trajectory, iterate_states
from .noise import mode_matrix
from .operators import DriftOperator

__all__ = [
    "EmpiricalMeasure",
    "Functional",
    "FunctionalDictionary",
    "ContractionReport",
    "time_average_hit",
    "hit_frequency",
    "contraction_check",
    "estimate_invariant_measure",
    "dictionary_averages",
    "compare_measures",
    "beta_distance",
    "beta_report",
    "energy_mass_estimate",
    "deterministic_comparison",
    "linear_stationary_covariance",
    "gaussian_measure",
    "path_seeds",
]

logger = logging.getLogger(__name__)

DEFAULT_BATCHES = 20


# ------------------------------------------------------------------ measures

@dataclass(eq=False)
class EmpiricalMeasure:
    """Uniformly weighted sample of mean-zero fields."""

    grid: Grid
    samples: np.ndarray
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if s.size == 0 or s.shape[0] == 0:
            raise ParameterError("an empirical measure needs at least one sample")
        if s.shape[1] != self.grid.n_nodes:
            raise ShapeError(f"samples have {s.shape[1]} nodes, grid has {self.grid.n_nodes}")
        # rows that are already mean zero up to rounding are kept bit-exact
        means = s.mean(axis=1, keepdims=True)
        off = np.abs(means) > 1e-14 * np.maximum(np.abs(s).max(axis=1, keepdims=True), 1e-300)
        self.samples = np.where(off, s - means, s)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self), 1.0 / len(self))

    @property
    def fields(self) -> list[Field]:
        return [Field(self.grid, s) for s in self.samples]

    @classmethod
    def point_mass(cls, f: Field, copies: int = 1) -> "EmpiricalMeasure":
        return cls(f.grid, np.tile(f.values, (copies, 1)), {"kind": "point_mass"})

    @classmethod
    def from_trajectory(cls, traj: Trajectory, burn_in_steps: int = 0) -> "EmpiricalMeasure":
        keep = traj.steps > burn_in_steps if burn_in_steps > 0 else np.ones(len(traj), bool)
        meta = {"config": traj.config.to_dict(), "burn_in": int(burn_in_steps)}
        return cls(traj.grid, traj.solution_states()[keep], meta)

    def merge(self, other: "EmpiricalMeasure") -> "EmpiricalMeasure":
        if other.grid != self.grid:
            raise ShapeError("cannot merge measures on different grids")
        meta = {"merged": [self.metadata, other.metadata]}
        return EmpiricalMeasure(self.grid, np.vstack([self.samples, other.samples]), meta)

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_fields(d / "samples.bin", self.fields)
        meta = {"n_samples": len(self), "n_nodes": self.grid.n_nodes, "metadata": self.metadata}
        (d / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable))

    @classmethod
    def load(cls, directory: str | Path) -> "EmpiricalMeasure":
        d = Path(directory)
        fields = read_fields(d / "samples.bin")
        meta = json.loads((d / "metadata.json").read_text())
        if not fields:
            raise ParameterError(f"{d} holds no samples")
        return cls(fields[0].grid, np.array([f.values for f in fields]), meta.get("metadata", {}))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def estimate_invariant_measure(x0: Field, config: SolverConfig, burn_in: int, n_samples: int,
                               stride: int, step_offset: int = 0) -> EmpiricalMeasure:
    """Snapshots at steps ``burn_in + k * stride`` for ``k = 1..n_samples``."""
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    if burn_in < 0 or stride < 1:
        raise ParameterError("burn_in must be >= 0 and stride >= 1")
    total = burn_in + n_samples * stride
    samples = np.empty((n_samples, config.n))
    k = 0
    for n, x in iterate_states(x0, config, step_offset, n_steps=total):
        if n > burn_in and (n - burn_in) % stride == 0:
            samples[k] = x
            k += 1
    meta = {
        "config": config.to_dict(),
        "burn_in": burn_in,
        "stride": stride,
        "step_offset": step_offset,
    }
    return EmpiricalMeasure(config.grid, samples, meta)


# --------------------------------------------------------------- functionals

@dataclass(frozen=True, eq=False)
class Functional:
    """Bounded Lipschitz functional on ``L^p_av``, already rescaled.

    ``kind`` is ``linear`` (``clip(pairing(x, v) / r, -1, 1)``), ``distance``
    (``min(1, ||x - a||_p / r)``) or ``constant``; the raw value is multiplied
    by ``scale = 1 / (sup + Lip)`` so that ``sup + Lip <= 1``.
    """

    kind: str
    radius: float = 1.0
    direction: Optional[np.ndarray] = None
    reference: Optional[np.ndarray] = None
    sup_norm: float = 1.0
    lipschitz: float = 0.0
    label: str = ""

    @property
    def scale(self) -> float:
        return 1.0 / (self.sup_norm + self.lipschitz)

    def raw(self, X: np.ndarray, h: float, p_metric: float) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.kind == "constant":
            return np.ones(X.shape[0])
        if self.kind == "linear":
            return np.clip(h * (X @ self.direction) / self.radius, -1.0, 1.0)
        dist = lm_norm_array(X - self.reference, h, p_metric, axis=1)
        return np.minimum(1.0, dist / self.radius)

    def __call__(self, X: np.ndarray, h: float, p_metric: float) -> np.ndarray:
        return self.scale * self.raw(X, h, p_metric)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "radius": self.radius,
            "sup_norm_scaled": self.sup_norm * self.scale,
            "lipschitz_scaled": self.lipschitz * self.scale,
        }


def _dual_exponent(p: float) -> float:
    return np.inf if p == 1.0 else p / (p - 1.0)


@dataclass(eq=False)
class FunctionalDictionary:
    grid: Grid
    p_metric: float
    functionals: list = dc_field(default_factory=list)

    def __post_init__(self):
        if self.p_metric < 1:
            raise ParameterError("p_metric must be >= 1")

    def __len__(self) -> int:
        return len(self.functionals)

    def linear(self, v: np.ndarray, radius: float, label: str = "") -> "FunctionalDictionary":
        v = np.asarray(v, dtype=float)
        pd = _dual_exponent(self.p_metric)
        vnorm = np.max(np.abs(v)) if np.isinf(pd) else lm_norm_array(v, self.grid.spacing, pd)
        # Hoelder: |(x - y, v)| <= ||v||_{p'} ||x - y||_p
        self.functionals.append(
            Functional("linear", radius, direction=v, sup_norm=1.0, lipschitz=vnorm / radius, label=label)
        )
        return self

    def distance(self, a: np.ndarray, radius: float, label: str = "") -> "FunctionalDictionary":
        a = np.asarray(a, dtype=float)
        self.functionals.append(
            Functional("distance", radius, reference=a, sup_norm=1.0, lipschitz=1.0 / radius, label=label)
        )
        return self

    def constant(self, label: str = "one") -> "FunctionalDictionary":
        self.functionals.append(Functional("constant", sup_norm=1.0, lipschitz=0.0, label=label))
        return self

    def evaluate(self, samples: np.ndarray) -> np.ndarray:
        """Matrix of shape ``(n_samples, n_functionals)``."""
        samples = np.atleast_2d(samples)
        if samples.shape[1] != self.grid.n_nodes:
            raise ShapeError("samples live on a different grid than the dictionary")
        h = self.grid.spacing
        return np.column_stack([F(samples, h, self.p_metric) for F in self.functionals])

    def describe(self) -> list[dict]:
        return [F.describe() for F in self.functionals]

    @classmethod
    def default(cls, reference: EmpiricalMeasure, p_metric: float, size: int = 32,
                seed: int = 0) -> "FunctionalDictionary":
        """Half linear functionals on low cosine modes, half distances to fields.

        Radii are set from the spread of ``reference`` so the functionals are
        sensitive on the scale the measures live on; reference points are the
        zero field plus snapshots drawn from ``reference``.
        """
        if size < 2:
            raise ParameterError("dictionary size must be >= 2")
        grid = reference.grid
        h = grid.spacing
        X = reference.samples
        d = cls(grid, p_metric)
        n_lin = size // 2
        E = mode_matrix(grid, min(n_lin, grid.n_nodes - 1))
        spreads = np.std(h * (X @ E.T), axis=0)
        # directions the reference measure does not charge only carry round-off
        live = np.flatnonzero(spreads > 1e-6 * spreads.max()) if spreads.max() > 0 else np.arange(1)
        for j in range(n_lin):
            k = int(live[j % live.size])
            radius = max(2.0 * float(spreads[k]), 1e-12) * (1 + j // live.size)
            d.linear(E[k], radius, label=f"mode{k + 1}")
        rng = np.random.default_rng(seed)
        refs = [np.zeros(grid.n_nodes)]
        picks = rng.choice(len(X), size=min(size - n_lin - 1, len(X)), replace=len(X) < size - n_lin - 1)
        refs += [X[i] for i in picks]
        typical = float(np.mean(lm_norm_array(X, h, p_metric, axis=1)))
        for j, a in enumerate(refs):
            d.distance(a.copy(), max(typical, 1e-12), label=f"ref{j}")
        return d

    def to_dict(self) -> dict:
        return {"p_metric": self.p_metric, "n_functionals": len(self), "functionals": self.describe()}


def _batch_means(values: np.ndarray, n_batches: int) -> tuple[np.ndarray, np.ndarray]:
    """Means and batch-means standard errors along axis 0."""
    n = values.shape[0]
    b = max(1, min(n_batches, n))
    size = n // b
    trimmed = values[: b * size].reshape(b, size, *values.shape[1:])
    means = values.mean(axis=0)
    if b < 2:
        return means, np.full(values.shape[1:], np.inf)
    bm = trimmed.mean(axis=1)
    se = bm.std(axis=0, ddof=1) / np.sqrt(b)
    return means, se


def dictionary_averages(mu: EmpiricalMeasure, dictionary: FunctionalDictionary,
                        n_batches: int = DEFAULT_BATCHES) -> tuple[np.ndarray, np.ndarray]:
    """Per-functional sample means with batch-means standard errors.

    Batches are contiguous in sample order, which absorbs the correlation of
    consecutive snapshots of one trajectory.
    """
    if mu.grid != dictionary.grid:
        raise ShapeError("measure and dictionary live on different grids")
    return _batch_means(dictionary.evaluate(mu.samples), n_batches)


def compare_measures(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure, dictionary: FunctionalDictionary,
                     n_sigma: float = 3.0, n_batches: int = DEFAULT_BATCHES, atol: float = 1e-12) -> dict:
    """Per-functional agreement test; ``atol`` absorbs rounding when both SEs vanish."""
    m1, s1 = dictionary_averages(mu1, dictionary, n_batches)
    m2, s2 = dictionary_averages(mu2, dictionary, n_batches)
    diff = np.abs(m1 - m2)
    se = np.sqrt(s1**2 + s2**2)
    z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 0, np.inf, 0.0))
    return {
        "max_abs_difference": float(diff.max()),
        "max_z": float(z.max()),
        "n_sigma": n_sigma,
        "differences": diff.tolist(),
        "standard_errors": se.tolist(),
        "passed": bool(np.all(diff <= n_sigma * se + atol)),
    }


def beta_distance(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure, dictionary: FunctionalDictionary,
                  p_metric: Optional[float] = None) -> float:
    """Dictionary lower bound on the bounded-Lipschitz distance."""
    if p_metric is not None and p_metric != dictionary.p_metric:
        raise ParameterError(
            f"dictionary was built for the L^{dictionary.p_metric:g} metric, not L^{p_metric:g}"
        )
    if mu1.grid != dictionary.grid or mu2.grid != dictionary.grid:
        raise ShapeError("measures and dictionary live on different grids")
    diff = dictionary.evaluate(mu1.samples).mean(axis=0) - dictionary.evaluate(mu2.samples).mean(axis=0)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def beta_report(mu1: EmpiricalMeasure, mu2: EmpiricalMeasure, dictionary: FunctionalDictionary,
                n_batches: int = DEFAULT_BATCHES) -> dict:
    """JSON-ready record with the per-functional contributions."""
    m1, s1 = dictionary_averages(mu1, dictionary, n_batches)
    m2, s2 = dictionary_averages(mu2, dictionary, n_batches)
    diff = np.abs(m1 - m2)
    se = np.sqrt(s1**2 + s2**2)
    best = int(np.argmax(diff)) if diff.size else -1
    return {
        "beta_lower_bound": float(diff[best]) if diff.size else 0.0,
        "argmax_functional": best,
        "standard_error_at_argmax": float(se[best]) if diff.size else 0.0,
        "max_standard_error": float(se.max()) if diff.size else 0.0,
        "p_metric": dictionary.p_metric,
        "n_samples": [len(mu1), len(mu2)],
        "contributions": [
            {**dictionary.functionals[i].describe(), "mean_1": float(m1[i]), "mean_2": float(m2[i]),
             "abs_difference": float(diff[i]), "standard_error": float(se[i])}
            for i in range(len(diff))
        ],
    }


# --------------------------------------------------------------- statistics

def hit_frequency(samples: np.ndarray, spacing: float, radius: float, norm_m: float) -> float:
    """Fraction of rows with ``||x||_m < radius``."""
    norms = lm_norm_array(np.atleast_2d(samples), spacing, norm_m, axis=1)
    return float(np.mean(norms < radius))


def time_average_hit(traj: Trajectory, radius: float, norm_m: float, burn_in: int = 0) -> float:
    """Fraction of saved states after ``burn_in`` steps with ``||X||_m < radius``."""
    keep = traj.steps >= burn_in
    if not keep.any():
        raise ParameterError("burn_in discards every saved state")
    return hit_frequency(traj.solution_states()[keep], traj.grid.spacing, radius, norm_m)


@dataclass
class ContractionReport:
    ratios: dict
    initial_distances: dict
    tolerance: float
    n_steps: int

    @property
    def passed(self) -> bool:
        return all(r <= 1.0 + self.tolerance for r in self.ratios.values())

    def to_dict(self) -> dict:
        return {
            "ratios": {f"{m:g}": r for m, r in self.ratios.items()},
            "initial_distances": {f"{m:g}": d for m, d in self.initial_distances.items()},
            "tolerance": self.tolerance,
            "n_steps": self.n_steps,
            "passed": self.passed,
        }


def contraction_check(x: Field, y: Field, config: SolverConfig, m_list: Sequence[float] = (2, 3, 4),
                      tolerance: float = 1e-8, step_offset: int = 0) -> ContractionReport:
    """Synchronous coupling: both runs see the same noise increments.

    Ratios are ``max_n ||X^x_n - X^y_n||_m / ||x - y||_m`` over every step; a
    zero initial distance gives ratio 0 when the runs stay identical.
    """
    h = config.grid.spacing
    m_list = [float(m) for m in m_list]
    run_x = iterate_states(x, config, step_offset)
    run_y = iterate_states(y, config, step_offset)
    _, x0 = next(run_x)
    _, y0 = next(run_y)
    d0 = {m: lm_norm_array(x0 - y0, h, m) for m in m_list}
    worst = {m: 0.0 for m in m_list}
    for (_, a), (_, b) in zip(run_x, run_y):
        for m in m_list:
            d = lm_norm_array(a - b, h, m)
            if d0[m] > 0:
                worst[m] = max(worst[m], d / d0[m])
            elif d > 0:
                worst[m] = np.inf
    return ContractionReport(worst, d0, tolerance, config.n_steps)


def energy_mass_estimate(mu: EmpiricalMeasure, energy_op: DriftOperator | Callable) -> float:
    """Sample average of the energy over ``mu``."""
    energy = energy_op.energy if isinstance(energy_op, DriftOperator) else energy_op
    return float(np.mean([energy(s) for s in mu.samples]))


def path_seeds(seed: int, n_paths: int) -> list[int]:
    """Distinct 64-bit noise seeds derived from one base seed."""
    state = np.random.SeedSequence(int(seed)).generate_state(n_paths, dtype=np.uint64)
    return [int(s) for s in state]


def deterministic_comparison(x0: Field, config: SolverConfig, eta: float, n_paths: int) -> float:
    """Fraction of noise paths with ``sup_n ||X_n - u_n||_2^2 <= eta``.

    ``u`` is the noise-free run from the same ``x0``; path ``i`` uses the
    ``i``-th seed derived from the configured noise seed.
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be >= 1")
    h = config.grid.spacing
    u = np.array([s for _, s in iterate_states(x0, config.with_noise(None))])
    if config.noise is None or config.noise.amplitude == 0:
        return 1.0
    hits = 0
    for seed in path_seeds(config.noise.seed, n_paths):
        cfg = config.with_noise(config.noise.with_seed(seed))
        worst = 0.0
        for n, x in iterate_states(x0, cfg):
            worst = max(worst, h * float(np.sum((x - u[n]) ** 2)))
            if worst > eta:
                break
        hits += worst <= eta
    return hits / n_paths


# -------------------------------------------------------- linear (p=2) oracle

def linear_stationary_covariance(config: SolverConfig) -> np.ndarray:
    """Stationary covariance of the implicit scheme for the linear drift (p=2).

    The scheme is ``X' = M (X + xi)`` with ``M = (I - dt L)^-1``, so the
    stationary covariance solves ``S = M (S + Q) M^T`` with ``Q = Cov(xi)``.
    The constant mode is removed because the dynamics never excite it.
    """
    if config.p != 2.0 or config.delta_my != 0.0:
        raise ParameterError("the Lyapunov oracle needs the linear case p=2, delta_my=0")
    if config.scheme != "semi_implicit":
        raise ParameterError("the Lyapunov oracle models the semi-implicit scheme")
    if config.noise is None:
        raise ParameterError("the Lyapunov oracle needs a noise model")
    n = config.n
    L = config.drift.jacobian(np.zeros(n))
    M = np.linalg.inv(np.eye(n) - config.dt * L)
    E = mode_matrix(config.grid, config.noise.n_modes)
    b = config.noise.mode_amplitudes
    Q = config.dt * (E.T * b**2) @ E
    P = null_space(np.ones((1, n)))
    Mr = P.T @ M @ P
    Qr = P.T @ (M @ Q @ M.T) @ P
    Sr = solve_discrete_lyapunov(Mr, Qr)
    S = P @ Sr @ P.T
    return 0.5 * (S + S.T)


def gaussian_measure(grid: Grid, covariance: np.ndarray, n_samples: int, seed: int = 0) -> EmpiricalMeasure:
    """Independent draws from the centred Gaussian with the given covariance."""
    w, V = np.linalg.eigh(covariance)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    z = np.random.default_rng(seed).standard_normal((n_samples, grid.n_nodes))
    return EmpiricalMeasure(grid, z @ root.T, {"kind": "gaussian", "seed": seed})
