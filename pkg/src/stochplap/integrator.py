"""Euler-Maruyama time stepping for the nonlocal and local equations.

The default ``semi_implicit`` scheme treats the drift implicitly and the
additive noise explicitly:

    X_{n+1} = X_n + dt A(X_{n+1}) + dW_n.

Each step is the proximal map of ``dt * energy`` at ``X_n + dW_n``, i.e. the
minimizer of the strongly convex function
``1/2 ||v - b||^2 + dt E(v)``, found by Newton's method with a banded SPD
linear solve and a backtracking line search.  Because the discrete drifts are
graph operators with monotone fluxes, the resolvent is an L^m contraction for
every m, which is what the contraction and dissipation checks rely on.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field as dc_field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .field import Field, Grid, ParameterError, ShapeError, lm_norm_array, write_fields
from .kernel import KernelProfile, build_stencil
from .noise import NoiseModel, increment_array, path_array
from .operators import DriftOperator, local_operator, nonlocal_operator
from .proximal import NumericError, PowerPotential

__all__ = [
    "SolverConfig",
    "Trajectory",
    "stability_bound",
    "step",
    "simulate",
    "simulate_transformed",
    "iterate_states",
    "svi_residual",
    "solve_implicit",
]

logger = logging.getLogger(__name__)

SCHEMES = ("explicit", "semi_implicit")
# absolute floor (in units of the state norm) for the implicit-solve tolerance
_TOL_FLOOR = 1e-3
OPERATORS = ("nonlocal", "local")


@dataclass(frozen=True)
class SolverConfig:
    p: float
    operator: str = "nonlocal"
    epsilon: float = 0.1
    kernel: str = "tent"
    delta_my: float = 0.0
    viscosity: float = 0.0
    dt: float = 1e-3
    n_steps: int = 1000
    scheme: str = "semi_implicit"
    n: int = 64
    noise: Optional[NoiseModel] = None
    save_every: int = 1
    norms: tuple = (2.0, 3.0, 4.0)
    solver_tol: float = 1e-12
    max_iter: int = 500

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ParameterError(f"operator must be one of {OPERATORS}")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.n_steps < 0 or self.save_every < 1:
            raise ParameterError("n_steps must be >= 0 and save_every >= 1")
        if self.solver_tol > 1e-10:
            raise ParameterError("solver_tol above 1e-10 breaks the residual contract")
        # raises for p outside [1, 2] and for the multivalued p=1, delta=0 case
        self.potential.require_single_valued()
        object.__setattr__(self, "norms", tuple(float(m) for m in self.norms))
        if self.scheme == "explicit":
            bound = stability_bound(self)
            if self.dt > bound:
                raise ParameterError(
                    f"explicit scheme unstable: dt={self.dt} exceeds stability bound {bound:.3e}"
                )

    @cached_property
    def grid(self) -> Grid:
        return Grid(self.n)

    @cached_property
    def potential(self) -> PowerPotential:
        return PowerPotential(self.p, self.delta_my)

    @cached_property
    def drift(self) -> DriftOperator:
        if self.operator == "local":
            return local_operator(self.grid, self.potential, self.viscosity)
        stencil = build_stencil(KernelProfile(self.kernel), self.epsilon, self.p, self.grid)
        op = nonlocal_operator(stencil, self.potential)
        if self.viscosity:
            op = replace(op, viscosity=self.viscosity)
        return op

    def with_noise(self, noise: Optional[NoiseModel]) -> "SolverConfig":
        return replace(self, noise=noise)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "noise"}
        d["norms"] = list(self.norms)
        d["noise"] = self.noise.to_dict() if self.noise is not None else None
        return d


def stability_bound(config: SolverConfig) -> float:
    """Largest dt the explicit scheme accepts (already halved for safety)."""
    L = config.potential.lipschitz_bound()
    if not np.isfinite(L):
        return 0.0
    op = config.drift
    if op.kind == "local":
        h = config.grid.spacing
        return 0.5 * h**2 / (2 * L + 2 * config.viscosity)
    rate = 2.0 * op.max_degree() * L
    if config.viscosity:
        rate += 4.0 * config.viscosity / config.grid.spacing**2
    return 0.5 / rate if rate > 0 else np.inf


# ----------------------------------------------------------------- stepping

def solve_implicit(op: DriftOperator, b: np.ndarray, dt: float, tol: float,
                   max_iter: int = 500, flux_guess: Optional[np.ndarray] = None):
    """Solve ``v - dt A(v) = b``.

    Returns ``(v, q, iterations, residual)`` where ``q`` holds the edge fluxes
    (``None`` for the primal solver) and can warm-start the next call.

    For ``1 < p < 2`` the unknowns are ``(v, q)`` with ``q = flux(lam dv)``
    imposed as ``inverse_flux(q) = lam dv``.  The inverse flux is smooth, so
    Newton does not overshoot through the infinite flux slope at zero
    differences, and the residual is measured where it is well conditioned:
    ``||v - b - dt A_q(v)||_2`` plus the edge mismatch in difference units.
    Otherwise (p = 1 with Huber flux, p = 2) the flux is Lipschitz and plain
    Newton with an Armijo search on the step objective is used.
    """
    if 1.0 < op.pot.p < 2.0:
        return _solve_mixed(op, b, dt, tol, max_iter, flux_guess)
    v, it, res = _solve_primal(op, b, dt, tol, max_iter)
    return v, None, it, res


def _solve_primal(op, b, dt, tol, max_iter):
    h = op.grid.spacing
    v = b.copy()

    def objective(w):
        r = w - b
        return 0.5 * h * np.dot(r, r) + dt * op.energy(w)

    R = v - b - dt * op.apply(v)
    rn = np.sqrt(h) * np.linalg.norm(R)
    phi = objective(v)
    for it in range(max_iter):
        if rn <= tol:
            return v, it, rn
        s = _banded_solve(op.banded_system(v, dt), -R, it)
        slope = h * np.dot(R, s)
        alpha = 1.0
        for _ in range(60):
            w = v + alpha * s
            phw = objective(w)
            if phw <= phi + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        v, phi = w, phw
        R = v - b - dt * op.apply(v)
        rn = np.sqrt(h) * np.linalg.norm(R)
    raise NumericError(
        f"implicit step did not converge in {max_iter} iterations; residual {rn:.3e} > tol {tol:.3e}"
    )


def _solve_mixed(op, b, dt, tol, max_iter, flux_guess):
    h = op.grid.spacing
    pot = op.pot
    wdt = dt * op.weights * op.scale
    # Newton coefficients dt*w*lam/g are capped so the banded matrix stays
    # well conditioned where the inverse-flux slope g vanishes (q = 0)
    g_floor = 1e-12 * (wdt.max() if wdt.size else 1.0)
    v = b.copy()
    q = pot.flux(op._diffs(v)) if flux_guess is None else np.array(flux_guess, dtype=float)

    def residuals(v, q):
        return v - b - dt * op.apply_with_flux(v, q), pot.inverse_flux(q) - op._diffs(v)

    def merit(F1, F2):
        return np.sqrt(h * np.dot(F1, F1) + h * np.dot(wdt, F2 * F2))

    F1, F2 = residuals(v, q)
    m = merit(F1, F2)
    for it in range(max_iter):
        if m <= tol:
            return v, q, it, m
        g = np.maximum(pot.inverse_flux_slope(q), g_floor)
        rhs = -F1 - dt * op.edge_divergence(F2 / g)
        dv = _banded_solve(op.banded_from_coefficients(wdt / g, dt), rhs, it)
        dq = (op._diffs(dv) - F2) / g
        alpha = 1.0
        for _ in range(60):
            vn, qn = v + alpha * dv, q + alpha * dq
            G1, G2 = residuals(vn, qn)
            mn = merit(G1, G2)
            if mn < (1.0 - 1e-4 * alpha) * m:
                break
            alpha *= 0.5
        v, q, F1, F2, m = vn, qn, G1, G2, mn
    raise NumericError(
        f"implicit step did not converge in {max_iter} iterations; residual {m:.3e} > tol {tol:.3e}"
    )


def _banded_solve(ab, rhs, it):
    try:
        return solveh_banded(ab, rhs, check_finite=False)
    except LinAlgError as exc:
        raise NumericError(f"Newton matrix not positive definite at iteration {it}: {exc}") from exc


def _step_array(config: SolverConfig, x: np.ndarray, xi: Optional[np.ndarray],
                flux_guess: Optional[np.ndarray] = None):
    """One step on raw arrays; returns ``(x_next, edge_fluxes_or_None)``."""
    op = config.drift
    q = None
    if config.scheme == "explicit":
        v = x + config.dt * op.apply(x)
        if xi is not None:
            v = v + xi
    else:
        b = x if xi is None else x + xi
        # relative to the data so that states near extinction are still
        # resolved; never looser than solver_tol * (1 + ||x||)
        h = config.grid.spacing
        scale = min(max(lm_norm_array(b, h, 2), _TOL_FLOOR), 1.0 + lm_norm_array(x, h, 2))
        tol = config.solver_tol * scale
        v, q, _, _ = solve_implicit(op, b, config.dt, tol, config.max_iter, flux_guess)
    return v - v.mean(), q


def step(x: Field, config: SolverConfig, noise_increment: Optional[Field] = None) -> Field:
    if x.grid != config.grid:
        raise ShapeError("state and config use different grids")
    xi = None
    if noise_increment is not None:
        if noise_increment.grid != x.grid:
            raise ShapeError("noise increment lives on a different grid")
        xi = noise_increment.values
    return Field(x.grid, _step_array(config, x.values, xi)[0])


# --------------------------------------------------------------- trajectories

@dataclass(eq=False)
class Trajectory:
    config: SolverConfig
    times: np.ndarray
    steps: np.ndarray
    states: np.ndarray
    diagnostics: dict = dc_field(default_factory=dict)
    kind: str = "X"
    step_offset: int = 0

    @property
    def grid(self) -> Grid:
        return self.config.grid

    @property
    def noise(self) -> Optional[NoiseModel]:
        return self.config.noise

    def __len__(self) -> int:
        return len(self.times)

    @property
    def fields(self) -> list[Field]:
        return [Field(self.grid, s) for s in self.states]

    def noise_at_saves(self) -> np.ndarray:
        """Replay ``W^B`` at the saved steps (zeros without noise)."""
        N = self.grid.n_nodes
        if self.noise is None or self.noise.amplitude == 0:
            return np.zeros((len(self.steps), N))
        last = int(self.steps.max()) if len(self.steps) else 0
        W = path_array(self.noise, self.config.dt, last, self.grid, start=self.step_offset)
        return W[self.steps]

    def solution_states(self) -> np.ndarray:
        """``X`` at the saved times, reconstructing ``Y + W`` for transformed runs."""
        if self.kind == "X":
            return self.states
        return self.states + self.noise_at_saves()

    def diagnostics_csv(self) -> str:
        buf = io.StringIO()
        cols = [k for k in self.diagnostics]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "time"] + cols)
        for i in range(len(self.times)):
            writer.writerow(
                [int(self.steps[i]), repr(float(self.times[i]))]
                + [repr(float(self.diagnostics[c][i])) for c in cols]
            )
        return buf.getvalue()

    def write(self, out_dir: str | Path, snapshot_stride: int = 1) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "diagnostics.csv").write_text(self.diagnostics_csv())
        write_fields(out / "snapshots.bin", self.fields[::snapshot_stride])


def _norm_key(m: float) -> str:
    return f"norm_{m:g}"


def _diagnose(config: SolverConfig, x: np.ndarray, energy_arg: np.ndarray) -> dict:
    h = config.grid.spacing
    d = {_norm_key(m): lm_norm_array(x, h, m) for m in config.norms}
    d["energy"] = config.drift.energy(energy_arg)
    return d


def _check_x0(x0: Field, config: SolverConfig) -> np.ndarray:
    if x0.grid != config.grid:
        raise ShapeError(f"x0 has {x0.grid.n_nodes} nodes, config expects {config.n}")
    return x0.values - x0.values.mean()


def _assemble(config, saved_steps, saved_states, diag_rows, kind, step_offset) -> Trajectory:
    steps = np.array(saved_steps, dtype=np.int64)
    diagnostics = {k: np.array([row[k] for row in diag_rows]) for k in (diag_rows[0] if diag_rows else {})}
    return Trajectory(
        config=config,
        times=steps * config.dt,
        steps=steps,
        states=np.array(saved_states).reshape(len(saved_steps), config.n),
        diagnostics=diagnostics,
        kind=kind,
        step_offset=step_offset,
    )


def iterate_states(x0: Field, config: SolverConfig, step_offset: int = 0,
                   n_steps: Optional[int] = None) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(n, X_n)`` for ``n = 0..n_steps`` (default ``config.n_steps``).

    The yielded array is owned by the caller; ``step_offset`` shifts the
    noise keys so that a run can be continued with fresh increments.
    """
    x = _check_x0(x0, config)
    noise = config.noise
    use_noise = noise is not None and noise.amplitude > 0
    total = config.n_steps if n_steps is None else n_steps
    yield 0, x.copy()
    q = None
    for n in range(total):
        xi = increment_array(noise, config.dt, step_offset + n, config.grid) if use_noise else None
        x, q = _step_array(config, x, xi, q)
        yield n + 1, x.copy()


def simulate(x0: Field, config: SolverConfig, save_from: int = 0, step_offset: int = 0) -> Trajectory:
    """Iterate :func:`step` ``config.n_steps`` times.

    States are saved at steps ``>= save_from`` that are multiples of
    ``config.save_every``.
    """
    saved_steps, saved_states, diag = [], [], []
    for n, x in iterate_states(x0, config, step_offset):
        if n >= save_from and n % config.save_every == 0:
            saved_steps.append(n)
            saved_states.append(x)
            diag.append(_diagnose(config, x, x))
    return _assemble(config, saved_steps, saved_states, diag, "X", step_offset)


def simulate_transformed(x0: Field, config: SolverConfig, step_offset: int = 0) -> Trajectory:
    """Integrate ``dY/dt = A(Y + W^B)`` with the noise path frozen per step.

    The drift is implicit in ``Y`` and uses ``W^B`` at the left end of each
    step, so ``Y`` is Lipschitz in time; ``Y + W^B`` reproduces the direct
    simulation up to an O(dt) splitting error.
    """
    y = _check_x0(x0, config)
    N = config.n
    noise = config.noise
    use_noise = noise is not None and noise.amplitude > 0
    w = np.zeros(N)
    saved_steps, saved_states, diag = [], [], []

    def save(n):
        if n % config.save_every == 0:
            saved_steps.append(n)
            saved_states.append(y.copy())
            diag.append(_diagnose(config, y, y + w))

    save(0)
    q = None
    for n in range(config.n_steps):
        z, q = _step_array(config, y + w, None, q)
        y = z - w
        y -= y.mean()
        if use_noise:
            w = w + increment_array(noise, config.dt, step_offset + n, config.grid)
        save(n + 1)
    return _assemble(config, saved_steps, saved_states, diag, "Y", step_offset)


def _trapezoid_cumulative(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values, dtype=float)
    if len(values) > 1:
        out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return out


def svi_residual(traj: Trajectory, test_path: Sequence[Field] | np.ndarray,
                 test_derivative: Sequence[Field] | np.ndarray) -> float:
    """Largest violation of the variational inequality along the saved times.

    With ``Y = X - W^B`` and a test path ``Z`` with derivative ``G``::

        ||Y_t - Z_t||^2 + 2 int_0^t E(Y + W)
            <= ||Y_0 - Z_0||^2 + 2 int_0^t E(Z + W) - 2 int_0^t (G, Y - Z)

    Integrals use the trapezoid rule on the saved times. Returns
    ``max_t (lhs - rhs)`` over saved times after the first (at ``t = 0`` both
    sides agree identically); non-positive values mean the inequality holds.
    """
    Z = _as_state_array(test_path, traj)
    G = _as_state_array(test_derivative, traj)
    h = traj.grid.spacing
    W = traj.noise_at_saves()
    X = traj.solution_states()
    Y = X - W
    energy = traj.config.drift.energy
    e_sol = np.array([energy(x) for x in X])
    e_test = np.array([energy(z + w) for z, w in zip(Z, W)])
    pair = h * np.einsum("ij,ij->i", G, Y - Z)
    dist = h * np.sum((Y - Z) ** 2, axis=1)
    lhs = dist + 2 * _trapezoid_cumulative(e_sol, traj.times)
    rhs = dist[0] + 2 * _trapezoid_cumulative(e_test, traj.times) - 2 * _trapezoid_cumulative(pair, traj.times)
    gap = lhs - rhs
    return float(np.max(gap[1:] if gap.size > 1 else gap))


def _as_state_array(path, traj: Trajectory) -> np.ndarray:
    if isinstance(path, np.ndarray):
        arr = path
    else:
        fields = list(path)
        if any(f.grid != traj.grid for f in fields):
            raise ShapeError("test path lives on a different grid")
        arr = np.array([f.values for f in fields])
    if arr.shape != traj.states.shape:
        raise ShapeError(
            f"test path has shape {arr.shape}; trajectory saves {traj.states.shape}"
        )
    return arr
