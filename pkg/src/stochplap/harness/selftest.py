"""Fast smoke checks of the numerical core, used by ``stochplap selftest``."""
from __future__ import annotations

import numpy as np

from ..ergodic import contraction_check
from ..field import Field, Grid, pairing
from ..integrator import SolverConfig
from ..kernel import KernelProfile, build_stencil, normalization_constant
from ..noise import NoiseModel, wiener_increment
from ..operators import local_operator, nonlocal_operator
from ..proximal import PowerPotential, prox, regularized_flux
from .config import ExperimentConfig
from .experiments import check, finish_report

__all__ = ["run_selftest"]


def _operator_checks(rng: np.random.Generator, n: int, p: float) -> list[dict]:
    grid = Grid(n)
    pot = PowerPotential(p)
    ops = {
        "nonlocal": nonlocal_operator(build_stencil(KernelProfile("tent"), 0.2, p, grid), pot),
        "local": local_operator(grid, pot),
    }
    out = []
    for name, op in ops.items():
        u = rng.standard_normal(n)
        u -= u.mean()
        v = rng.standard_normal(n)
        v -= v.mean()
        Au, Av = op.apply(u), op.apply(v)
        identity = abs(grid.spacing * np.dot(Au, u) + p * op.energy(u)) / (p * op.energy(u))
        mono = grid.spacing * np.dot(Au - Av, u - v)
        mean = abs(Au.mean()) / max(1.0, np.abs(Au).max())
        out.append(check(f"{name}_energy_identity", identity <= 1e-12, identity, 1e-12))
        out.append(check(f"{name}_monotone", mono <= 1e-12 * (1 + np.abs(u - v).max()), mono, 0.0))
        out.append(check(f"{name}_mean_zero", mean <= 1e-13, mean, 1e-13))
    return out


def run_selftest(cfg: ExperimentConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    checks = _operator_checks(rng, 48, 1.5)
    checks.append(check("box_constant_p1", abs(normalization_constant(KernelProfile("box"), 1.0) - 4) < 1e-10,
                        normalization_constant(KernelProfile("box"), 1.0), 4.0))
    checks.append(check("prox_quadratic", abs(prox(1.0, 1.0, 2.0) - 0.5) <= 1e-14, prox(1.0, 1.0, 2.0), 0.5))
    checks.append(check("prox_soft_threshold", prox(0.3, 0.5, 1.0) == 0.0, prox(0.3, 0.5, 1.0), 0.0))
    huber = regularized_flux(0.2, 0.1, 1.0)
    checks.append(check("huber_clamp", huber == 1.0, huber, 1.0))

    grid = Grid(32)
    model = NoiseModel.default_for(grid, 1.0, seed=cfg.seed)
    a = wiener_increment(model, 0.01, 7, grid)
    b = wiener_increment(model, 0.01, 7, grid)
    checks.append(check("noise_reproducible", a == b))

    solver = SolverConfig(p=1.5, epsilon=0.2, n=32, dt=0.01, n_steps=100, noise=model)
    x = Field(grid, np.cos(np.pi * grid.nodes))
    y = Field(grid, -0.5 * np.cos(2 * np.pi * grid.nodes))
    report = contraction_check(x, y, solver, (2, 3, 4))
    checks.append(check("contraction", report.passed, max(report.ratios.values()), 1 + report.tolerance))
    checks.append(check("pairing_symmetric", pairing(x, y) == pairing(y, x)))
    return finish_report("selftest", cfg, {"n_checks": len(checks)}, checks)
