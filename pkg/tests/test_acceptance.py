"""Acceptance criteria 1-10 at their stated tolerances.

Each test records one PASS/FAIL line; the lines are printed as they are
produced and again in the pytest terminal summary.  Running this file as a
script executes the criteria without pytest.
"""
import math

import numpy as np
import pytest

from stochplap.ergodic import (
    EmpiricalMeasure,
    FunctionalDictionary,
    compare_measures,
    contraction_check,
    energy_mass_estimate,
    estimate_invariant_measure,
    gaussian_measure,
    linear_stationary_covariance,
)
from stochplap.field import Field, Grid, lm_norm_array, signed_power
from stochplap.harness import ExperimentConfig
from stochplap.harness.experiments import run_decay, run_ergodic, run_local_limit, run_measure_limit
from stochplap.integrator import SolverConfig, simulate
from stochplap.kernel import KernelProfile, build_stencil
from stochplap.noise import NoiseModel, trace_norm
from stochplap.operators import local_operator, nonlocal_operator
from stochplap.proximal import PowerPotential, envelope, prox, regularized_flux

RESULTS: dict[int, str] = {}

LADDER = (0.4, 0.2, 0.1, 0.05)


def record(k: int, passed: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[k] = line
    print(line)
    assert passed, line


def _operators(n=64):
    grid = Grid(n)
    out = {}
    for p in (1.2, 1.5, 1.8):
        pot = PowerPotential(p)
        out[f"nonlocal p={p}"] = nonlocal_operator(build_stencil(KernelProfile("tent"), 0.1, p, grid), pot)
        out[f"local p={p}"] = local_operator(grid, pot)
    return out


# ------------------------------------------------------------------ 1
def test_criterion_01_operator_suite():
    rng = np.random.default_rng(1)
    worst = {"monotone": -np.inf, "identity": 0.0, "gradient": 0.0, "mean": 0.0}
    for name, op in _operators().items():
        n, h, p = op.n, op.grid.spacing, op.pot.p
        for _ in range(500):
            u, v = rng.standard_normal((2, n)) * rng.uniform(0.01, 10.0, 2)[:, None]
            u -= u.mean()
            v -= v.mean()
            Au, Av = op.apply(u), op.apply(v)
            scale = h * np.abs(Au - Av).sum() * np.abs(u - v).max()
            worst["monotone"] = max(worst["monotone"], h * np.dot(Au - Av, u - v) / scale)
            worst["identity"] = max(worst["identity"], abs(h * np.dot(Au, u) + p * op.energy(u)) / (p * op.energy(u)))
            worst["mean"] = max(worst["mean"], abs(Au.sum()) / (n * np.abs(Au).max()))
        u = rng.standard_normal(n)
        u -= u.mean()
        grad = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1e-6
            grad[i] = (op.energy(u + e) - op.energy(u - e)) / 2e-6
        A = op.apply(u)
        worst["gradient"] = max(worst["gradient"], np.max(np.abs(A + grad / h)) / np.max(np.abs(A)))
    passed = (worst["monotone"] <= 1e-12 and worst["identity"] <= 1e-12
              and worst["gradient"] <= 1e-6 and worst["mean"] <= 1e-15)
    record(1, passed, "monotone {monotone:.1e} (<=1e-12)  identity {identity:.1e} (<=1e-12)  "
                      "gradient {gradient:.1e} (<=1e-6)  mean {mean:.1e}".format(**worst))


# ------------------------------------------------------------------ 2
def test_criterion_02_proximal_suite():
    rng = np.random.default_rng(2)
    r = np.linspace(-5, 5, 101)
    closed = max(
        np.max(np.abs(prox(r, 0.3, 2.0) - r / 1.3)),
        np.max(np.abs(prox(r, 0.3, 1.0) - np.sign(r) * np.maximum(np.abs(r) - 0.3, 0))),
        np.max(np.abs(regularized_flux(r, 0.3, 1.0) - np.clip(r / 0.3, -1, 1))),
        np.max(np.abs(envelope(r, 0.3, 2.0) - r**2 / 2.6)),
    )
    s = np.linspace(-1, 1, 2_000_001)
    scan = s[np.argmin((1 - s) ** 2 / 0.2 + np.abs(s) ** 1.5 / 1.5)]
    scan_err = abs(prox(1.0, 0.1, 1.5) - scan)
    a = rng.uniform(-10, 10, 1000)
    d = 10 ** rng.uniform(-4, -1, 1000)
    pp = rng.uniform(1, 2, 1000)
    dominance = min(regularized_flux(ai, di, pi) * ai - envelope(ai, di, pi) for ai, di, pi in zip(a, d, pp))
    grid_a = np.linspace(-10, 10, 401)
    C = 0.0
    for p in (1.0, 1.25, 1.5, 1.75, 2.0):
        psi = np.abs(grid_a) ** p / p
        for dl in np.geomspace(1e-4, 0.1, 10):
            C = max(C, np.max(np.abs(envelope(grid_a, dl, p) - psi) / (dl * (1 + psi))))
    passed = closed <= 1e-14 and scan_err <= 1e-6 and dominance >= -1e-12 and math.isfinite(C) and C > 0
    record(2, passed, f"closed forms {closed:.1e} (<=1e-14)  grid scan {scan_err:.1e} (<=1e-6)  "
                      f"min(phi a - psi) {dominance:.1e} (>=0)  fitted C {C:.3f}")


# ------------------------------------------------------------------ 3
def _cascade_constant(traj, p, m):
    h = traj.grid.spacing
    X = traj.states
    lhs = (lm_norm_array(X[0], h, m) ** m - lm_norm_array(X, h, m, axis=1) ** m) / m
    q = p + m - 2
    g = lm_norm_array(X, h, q, axis=1) ** q
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(traj.times))])
    keep = integral > 0
    return float(np.min(lhs[keep] / integral[keep]))


def test_criterion_03_dissipation_and_cascade():
    details, ok = [], True
    grid = Grid(64)
    x = grid.nodes
    x0 = Field(grid, np.cos(np.pi * x) + 0.5 * np.cos(2 * np.pi * x) + 0.3 * np.sin(3 * np.pi * x))
    x0 = Field(grid, x0.values - x0.values.mean())
    for operator in ("nonlocal", "local"):
        for p in (1.2, 1.5, 1.8):
            cfg = SolverConfig(p=p, operator=operator, epsilon=0.1, n=64, dt=1e-3, n_steps=2000)
            traj = simulate(x0, cfg)
            worst_growth = 0.0
            for m in (2, 3, 4):
                vals = traj.diagnostics[f"norm_{m}"]
                worst_growth = max(worst_growth, np.max(np.diff(vals)) / vals[0])
            c = min(_cascade_constant(traj, p, m) for m in (2, 3, 4))
            ok &= worst_growth <= 1e-12 and c > 0
            details.append(f"{operator[0]}{p}: growth {worst_growth:.0e} c {c:.3g}")
    record(3, ok, "; ".join(details))


# ------------------------------------------------------------------ 4
def test_criterion_04_decay():
    details, ok = [], True
    for operator in ("nonlocal", "local"):
        for p in (1.2, 1.5, 1.8):
            cfg = ExperimentConfig(p=p, operator=operator, epsilon=0.1, n=64, dt=0.01, x0_amplitude=50.0)
            rep = run_decay(cfg)
            ok &= rep["passed"]
            res = rep["results"]
            details.append(f"{operator[0]}{p}: C {res['fitted_C']:.3g} growth {res['last_decade_growth']:.3f}")
    record(4, ok, "; ".join(details))


# ------------------------------------------------------------------ 5
def test_criterion_05_contraction():
    rng = np.random.default_rng(5)
    grid = Grid(64)
    worst = 0.0
    for k in range(20):
        p = (1.2, 1.5, 1.8)[k % 3]
        operator = ("nonlocal", "local")[k % 2]
        cfg = SolverConfig(p=p, operator=operator, epsilon=0.1, n=64, dt=0.01, n_steps=1000,
                           noise=NoiseModel.default_for(grid, 1.0, seed=1000 + k))
        x, y = rng.standard_normal((2, 64)) * rng.uniform(0.1, 5.0, 2)[:, None]
        rep = contraction_check(Field(grid, x), Field(grid, y), cfg, (2, 3, 4), tolerance=1e-8)
        worst = max(worst, max(rep.ratios.values()))
    record(5, worst <= 1 + 1e-8, f"max ratio over 20 pairs x 1000 steps, m=2,3,4: {worst:.12f} (<= 1+1e-8)")


# ------------------------------------------------------------------ 6
def test_criterion_06_ergodic():
    rep = run_ergodic(ExperimentConfig(sigma=1.0))
    res = rep["results"]
    record(6, rep["passed"],
           f"max z {res['comparison']['max_z']:.2f} (<=3)  hit frequency {res['hit_frequency']:.3f} (>0) "
           f"radius {res['hit_radius']:.3g}  contraction {max(res['contraction']['ratios'].values()):.6f}")


# ------------------------------------------------------------------ 7, 9
@pytest.fixture(scope="module")
def measure_limit_report():
    cfg = ExperimentConfig(p=1.5, n=256, dt=0.01, sigma=1.0, burn_in=200, n_samples=1000, stride=5)
    return run_measure_limit(cfg)


def _energy_ratio(sigma):
    cfg = ExperimentConfig(p=1.5, n=64, dt=0.01, sigma=sigma, seed=7)
    solver = cfg.solver(n_steps=0)
    mu = estimate_invariant_measure(cfg.initial_field(), solver, 500, 2000, 5)
    return energy_mass_estimate(mu, solver.drift) / trace_norm(solver.noise)


def test_criterion_07_energy_mass(measure_limit_report):
    r1, r2 = _energy_ratio(1.0), _energy_ratio(2.0)
    stable = abs(r2 / r1 - 1) <= 0.5
    ratios = measure_limit_report["results"]["energy_mass_ratios"]
    bounded = all(math.isfinite(r) for r in ratios) and max(ratios) <= 1.5 * ratios[0]
    record(7, stable and bounded and math.isfinite(r1),
           f"ratio sigma=1 {r1:.4f} sigma=2 {r2:.4f} change {r2 / r1 - 1:+.1%} (<=50%); "
           f"ladder ratios {', '.join(f'{r:.4f}' for r in ratios)} (max <= 1.5 x eps=0.4)")


# ------------------------------------------------------------------ 8
def test_criterion_08_local_limit_paths():
    cfg = ExperimentConfig(p=1.5, n=256, dt=1e-3, steps=200, sigma=0.5, eps_ladder=LADDER)
    rep = run_local_limit(cfg)
    e = rep["results"]["weak_errors"]
    record(8, rep["passed"],
           f"e(eps) {', '.join(f'{v:.3e}' for v in e)}  monotone steps {rep['results']['monotone_steps']}/3  "
           f"e(0.05)/e(0.4) {e[-1] / e[0]:.3f} (<=0.5)")


# ------------------------------------------------------------------ 9
def test_criterion_09_local_limit_measures(measure_limit_report):
    res = measure_limit_report["results"]
    record(9, measure_limit_report["passed"],
           f"d(eps) {', '.join(f'{v:.2e}' for v in res['distances'])}  monotone steps {res['monotone_steps']}/3  "
           f"max z at eps_min {res['max_floor_z']:.2f} (<=3)  self-distance {res['self_distance']:.2e}")


# ------------------------------------------------------------------ 10
def test_criterion_10_linear_oracle():
    grid = Grid(32)
    cfg = SolverConfig(p=2.0, operator="local", n=32, dt=0.01, noise=NoiseModel.default_for(grid, 1.0, seed=10))
    S = linear_stationary_covariance(cfg)
    exact = gaussian_measure(grid, S, 20_000, seed=11)
    mu = estimate_invariant_measure(Field(grid, np.zeros(32)), cfg, burn_in=500, n_samples=4000, stride=5)
    dictionary = FunctionalDictionary.default(exact, 2.0, 32, seed=12)
    cmp = compare_measures(mu, exact, dictionary, n_sigma=3.0)
    # second moments of the low modes against the covariance directly
    from stochplap.noise import mode_matrix
    E = mode_matrix(grid, 4)
    coeff = grid.spacing * mu.samples @ E.T
    var_exact = grid.spacing**2 * np.einsum("ki,ij,kj->k", E, S, E)
    var_rel = np.max(np.abs(coeff.var(axis=0) / var_exact - 1))
    record(10, cmp["passed"], f"max z over 32 functionals {cmp['max_z']:.2f} (<=3); "
                              f"low-mode variance rel. diff {var_rel:.3f}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
