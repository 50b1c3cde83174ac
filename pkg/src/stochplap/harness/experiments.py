"""Headline experiments: decay, ergodicity, local limit of paths and measures."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .. import __version__
from ..ergodic import (
    EmpiricalMeasure,
    FunctionalDictionary,
    beta_distance,
    beta_report,
    compare_measures,
    contraction_check,
    energy_mass_estimate,
    estimate_invariant_measure,
    hit_frequency,
    path_seeds,
)
from ..field import Field, lm_norm, lm_norm_array
from ..integrator import simulate
from ..noise import mode_matrix, trace_norm
from .config import ConfigError, ExperimentConfig

__all__ = [
    "parallel_map",
    "run_simulate",
    "run_decay",
    "run_ergodic",
    "run_local_limit",
    "run_measure_limit",
    "check",
    "finish_report",
]

logger = logging.getLogger(__name__)

EXTINCTION_LEVEL = 1e-10


def parallel_map(fn: Callable, items: Iterable, threads: int = 1) -> list:
    """Order-preserving map over a process pool (``threads=0`` uses all cores)."""
    items = list(items)
    workers = (os.cpu_count() or 1) if threads == 0 else threads
    workers = min(workers, len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def check(name: str, passed: bool, value=None, threshold=None, detail: str = "") -> dict:
    return {
        "name": name,
        "passed": bool(passed),
        "value": _num(value),
        "threshold": _num(threshold),
        "detail": detail,
    }


def _num(x):
    if x is None:
        return None
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    x = float(x)
    return x if math.isfinite(x) else str(x)


def finish_report(experiment: str, cfg: ExperimentConfig, results: dict, checks: list[dict],
                  seeds: Optional[dict] = None) -> dict:
    return {
        "experiment": experiment,
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": seeds or {"seed": cfg.seed},
        "results": results,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }


# ------------------------------------------------------------------ simulate

def run_simulate(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> dict:
    solver = cfg.solver()
    traj = simulate(cfg.initial_field(), solver)
    if out_dir:
        traj.write(out_dir)
    final = traj.states[-1]
    h = solver.grid.spacing
    results = {
        "n_saved": len(traj),
        "final_time": float(traj.times[-1]),
        "final_norms": {f"{m:g}": lm_norm_array(final, h, m) for m in solver.norms},
        "final_energy": float(traj.diagnostics["energy"][-1]),
        "trace_norm": trace_norm(solver.noise) if solver.noise else 0.0,
    }
    finite = bool(np.all(np.isfinite(traj.states)))
    max_mean = float(np.max(np.abs(traj.states.mean(axis=1)))) if len(traj) else 0.0
    checks = [
        check("states_finite", finite),
        check("mean_zero", max_mean <= 1e-12 * max(1.0, float(np.abs(traj.states).max())), max_mean, 1e-12),
    ]
    return finish_report("simulate", cfg, results, checks)


# --------------------------------------------------------------------- decay

def decay_statistic(cfg: ExperimentConfig) -> dict:
    """``s(t) = t ||u_t||_2^2 / ||x0||_{m0}^{m0}`` for the noise-free run."""
    x0 = cfg.initial_field()
    n_steps = int(math.ceil(cfg.decay_t_max / cfg.dt - 1e-9))
    solver = cfg.solver(noise=None, n_steps=n_steps, save_every=1, norms=(2.0,))
    traj = simulate(x0, solver)
    base = lm_norm(x0, cfg.m0) ** cfg.m0
    grid_t = np.geomspace(cfg.decay_t_min, cfg.decay_t_max, 60)
    idx = np.clip(np.rint(grid_t / cfg.dt).astype(int), 0, n_steps)
    t = traj.times[idx]
    norm2 = traj.diagnostics["norm_2"][idx].copy()
    # singular diffusion reaches zero in finite time; what is left afterwards
    # is rounding noise of the solver, not decay
    extinct = norm2 <= EXTINCTION_LEVEL * lm_norm(x0, 2)
    norm2[extinct] = 0.0
    s = t * norm2**2 / base if base > 0 else np.zeros_like(t)
    return {"times": t, "s": s, "base": base, "norm2": norm2}


def run_decay(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> dict:
    """Noise is ignored: the decay statement concerns the deterministic flow."""
    stat = decay_statistic(cfg)
    t, s = stat["times"], stat["s"]
    running = np.maximum.accumulate(s)
    decade = t >= cfg.decay_t_max / 10.0
    start = running[decade][0]
    end = running[-1]
    if start > 0:
        growth = end / start - 1.0
    else:
        growth = 0.0 if end == 0 else np.inf
    finite = bool(np.all(np.isfinite(s)))
    results = {
        "m0": cfg.m0,
        "times": t.tolist(),
        "s": s.tolist(),
        "norm2": stat["norm2"].tolist(),
        "fitted_C": float(np.max(s)),
        "last_decade_growth": float(growth),
        "extinct": bool(stat["norm2"][-1] == 0.0),
    }
    checks = [
        check("s_finite", finite, float(np.max(s)) if finite else None),
        check("running_max_stabilized", finite and growth < cfg.decay_growth_tol, growth, cfg.decay_growth_tol),
    ]
    return finish_report("decay", cfg, results, checks)


# ------------------------------------------------------------------ ergodic

def _measure_job(args) -> EmpiricalMeasure:
    cfg, solver_overrides, variant, burn_in, n_samples, stride = args
    solver = cfg.solver(n_steps=0, **solver_overrides)
    return estimate_invariant_measure(cfg.initial_field(variant), solver, burn_in, n_samples, stride)


def run_ergodic(cfg: ExperimentConfig, threads: int = 1, out_dir: Optional[str] = None) -> dict:
    if cfg.sigma is None:
        raise ConfigError("the ergodic experiment needs a noise configuration (set sigma)")
    seed_x, seed_y = path_seeds(cfg.seed, 2)
    jobs = [
        (cfg, {"noise": cfg.noise(seed=seed_x)}, 0, cfg.burn_in, cfg.n_samples, cfg.stride),
        (cfg, {"noise": cfg.noise(seed=seed_y)}, 1, cfg.burn_in, cfg.n_samples, cfg.stride),
    ]
    mu_x, mu_y = parallel_map(_measure_job, jobs, threads)
    if out_dir:
        mu_x.save(os.path.join(out_dir, "measure_x"))
        mu_y.save(os.path.join(out_dir, "measure_y"))
    dictionary = FunctionalDictionary.default(mu_x.merge(mu_y), cfg.p, cfg.dictionary_size, seed=cfg.seed)
    comparison = compare_measures(mu_x, mu_y, dictionary, cfg.n_sigma, cfg.n_batches)

    x0, y0 = cfg.initial_field(0), cfg.initial_field(1)
    radius = cfg.hit_radius_factor * lm_norm(x0, 2)
    hit = hit_frequency(mu_x.samples, cfg.grid.spacing, radius, 2.0)

    contraction = contraction_check(
        x0, y0, cfg.solver(n_steps=cfg.contraction_steps, noise=cfg.noise(seed=seed_x)),
        (2, 3, 4), cfg.contraction_tol,
    )

    drift = cfg.solver(n_steps=0).drift
    energy = energy_mass_estimate(mu_x, drift)
    tn = trace_norm(cfg.noise()) if cfg.sigma else 0.0
    ratio = energy / tn if tn > 0 else None

    results = {
        "n_samples": [len(mu_x), len(mu_y)],
        "dictionary": dictionary.to_dict(),
        "comparison": comparison,
        "hit_radius": radius,
        "hit_frequency": hit,
        "contraction": contraction.to_dict(),
        "energy_mass": energy,
        "trace_norm": tn,
        "energy_mass_ratio": ratio,
    }
    checks = [
        check("dictionary_agreement", comparison["passed"], comparison["max_z"], cfg.n_sigma),
        check("hit_frequency_positive", hit > 0, hit, 0.0),
        check("contraction", contraction.passed, max(contraction.ratios.values()), 1 + cfg.contraction_tol),
    ]
    if ratio is None:
        checks.append(check("energy_mass_vanishes", energy <= 1e-12, energy, 1e-12,
                            "no noise: the measure is the point mass at 0"))
    else:
        checks.append(check("energy_mass_ratio_finite", math.isfinite(ratio), ratio))
    return finish_report("ergodic", cfg, results, checks, {"seed": cfg.seed, "seed_x": seed_x, "seed_y": seed_y})


# --------------------------------------------------------------- local limit

def _path_job(args):
    cfg, overrides = args
    solver = cfg.solver(**overrides)
    return simulate(cfg.initial_field(), solver).states


def default_test_fields(cfg: ExperimentConfig) -> np.ndarray:
    return np.array(mode_matrix(cfg.grid, cfg.test_modes))


def _monotone_steps(values: Sequence[float]) -> int:
    return int(sum(b <= a for a, b in zip(values[:-1], values[1:])))


def _ladder(cfg: ExperimentConfig, eps_ladder: Optional[Sequence[float]]) -> list[float]:
    ladder = sorted((float(e) for e in (eps_ladder or cfg.eps_ladder)), reverse=True)
    if len(ladder) < 2:
        raise ConfigError("the epsilon ladder needs at least two values")
    return ladder


def run_local_limit(cfg: ExperimentConfig, eps_ladder: Optional[Sequence[float]] = None,
                    test_fields: Optional[Sequence[Field] | np.ndarray] = None, threads: int = 1) -> dict:
    """One noise path drives every run; the error is tested weakly against ``test_fields``."""
    ladder = _ladder(cfg, eps_ladder)
    if test_fields is None:
        V = default_test_fields(cfg)
    elif isinstance(test_fields, np.ndarray):
        V = np.atleast_2d(test_fields)
    else:
        V = np.array([f.values for f in test_fields])
    noise = cfg.noise()
    jobs = [(cfg, {"operator": "local", "noise": noise})]
    jobs += [(cfg, {"operator": "nonlocal", "epsilon": e, "noise": noise}) for e in ladder]
    states = parallel_map(_path_job, jobs, threads)
    local = states[0]
    h = cfg.grid.spacing
    errors = [float(np.max(np.abs(h * (S - local) @ V.T))) if V.size else 0.0 for S in states[1:]]
    l2 = [float(np.max(lm_norm_array(S - local, h, 2, axis=1))) for S in states[1:]]
    monotone = _monotone_steps(errors)
    need = min(cfg.min_monotone_steps, len(ladder) - 1)
    ratio_ok = errors[-1] <= cfg.local_limit_ratio * errors[0]
    results = {
        "eps_ladder": ladder,
        "weak_errors": errors,
        "strong_errors_l2": l2,
        "monotone_steps": monotone,
        "n_test_fields": int(V.shape[0]) if V.size else 0,
        "final_time": cfg.steps * cfg.dt,
    }
    checks = [
        check("weak_error_monotone", monotone >= need, monotone, need),
        check("weak_error_ratio", ratio_ok, errors[-1] / errors[0] if errors[0] > 0 else 0.0,
              cfg.local_limit_ratio),
    ]
    return finish_report("local-limit", cfg, results, checks)


# ------------------------------------------------------------- measure limit

def run_measure_limit(cfg: ExperimentConfig, eps_ladder: Optional[Sequence[float]] = None,
                      threads: int = 1) -> dict:
    """Nonlocal invariant measures against the local one.

    All runs share the noise seed (common random numbers), so ``d(eps)``
    measures the drift mismatch rather than independent sampling noise.  A
    replicate of the local run with an independent seed fixes the Monte Carlo
    floor.
    """
    if not cfg.sigma:
        raise ConfigError("the measure-limit experiment needs sigma > 0")
    ladder = _ladder(cfg, eps_ladder)
    rep_seed = path_seeds(cfg.seed, 2)[1]
    noise_nl = cfg.noise(sigma=cfg.sigma * cfg.sigma_nonlocal_factor)
    base = (cfg.burn_in, cfg.n_samples, cfg.stride)
    jobs = [
        (cfg, {"operator": "local", "noise": cfg.noise()}, 0, *base),
        (cfg, {"operator": "local", "noise": cfg.noise(seed=rep_seed)}, 0, *base),
    ]
    jobs += [(cfg, {"operator": "nonlocal", "epsilon": e, "noise": noise_nl}, 0, *base) for e in ladder]
    measures = parallel_map(_measure_job, jobs, threads)
    mu_local, mu_rep = measures[:2]
    dictionary = FunctionalDictionary.default(mu_local.merge(mu_rep), cfg.p, cfg.dictionary_size, seed=cfg.seed)
    floor_report = beta_report(mu_local, mu_rep, dictionary, cfg.n_batches)
    se_floor = floor_report["max_standard_error"]
    distances = [beta_distance(m, mu_local, dictionary) for m in measures[2:]]
    # each functional is held to its own self-distance standard error, so a
    # noisy functional cannot mask a clear difference in another one
    se_k = np.array([c["standard_error"] for c in floor_report["contributions"]])
    local_means = dictionary.evaluate(mu_local.samples).mean(axis=0)
    diff_last = np.abs(dictionary.evaluate(measures[-1].samples).mean(axis=0) - local_means)
    z_last = np.where(se_k > 0, diff_last / np.where(se_k > 0, se_k, 1.0), np.where(diff_last > 1e-12, np.inf, 0.0))
    max_z = float(z_last.max())

    tn = trace_norm(noise_nl)
    energy_ratios = [
        energy_mass_estimate(m, cfg.solver(operator="nonlocal", epsilon=e, n_steps=0).drift) / tn
        for m, e in zip(measures[2:], ladder)
    ]
    local_ratio = energy_mass_estimate(mu_local, cfg.solver(operator="local", n_steps=0).drift) / trace_norm(cfg.noise())

    monotone = _monotone_steps(distances)
    need = min(cfg.min_monotone_steps, len(ladder) - 1)
    results = {
        "eps_ladder": ladder,
        "distances": distances,
        "self_distance": floor_report["beta_lower_bound"],
        "se_floor": se_floor,
        "floor_z_at_min_eps": z_last.tolist(),
        "max_floor_z": max_z,
        "monotone_steps": monotone,
        "energy_mass_ratios": energy_ratios,
        "energy_mass_ratio_local": local_ratio,
        "dictionary": dictionary.to_dict(),
        "seeds": {"common": cfg.seed, "replicate": rep_seed},
    }
    checks = [
        check("distance_monotone", monotone >= need, monotone, need),
        check("distance_endpoints", distances[-1] <= distances[0], distances[-1], distances[0]),
        check("distance_within_floor", max_z <= cfg.n_sigma, max_z, cfg.n_sigma,
              "largest per-functional difference at the smallest epsilon in self-distance SE units"),
    ]
    return finish_report("measure-limit", cfg, results, checks, {"seed": cfg.seed, "replicate": rep_seed})
