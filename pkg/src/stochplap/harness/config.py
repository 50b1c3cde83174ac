"""Flat experiment configuration documents (YAML) and their validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from ..field import Field, Grid, ParameterError, field_from_csv, project_mean_zero
from ..integrator import SolverConfig
from ..noise import NoiseModel

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "DERIVED_KEYS"]

# m0 = 4 - p and m1 = m0 + 2 - p are functions of p and never user input
DERIVED_KEYS = ("m0", "m1")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration document."""


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    p: float = 1.5
    operator: str = "nonlocal"
    epsilon: float = 0.1
    kernel: str = "tent"
    delta_my: float = 0.0
    viscosity: float = 0.0
    # noise: None means not configured, 0 means switched off
    sigma: Optional[float] = None
    decay_s: float = 4.0
    n_modes: int = 0
    seed: int = 0
    # discretization
    n: int = 64
    dt: float = 0.01
    steps: int = 1000
    scheme: str = "semi_implicit"
    save_every: int = 1
    solver_tol: float = 1e-12
    # initial data: smooth default profile times x0_amplitude, or a CSV file
    x0_amplitude: float = 1.0
    x0_csv: Optional[str] = None
    # decay
    decay_t_min: float = 1.0
    decay_t_max: float = 50.0
    decay_growth_tol: float = 0.05
    # ergodic
    burn_in: int = 500
    n_samples: int = 4000
    stride: int = 5
    dictionary_size: int = 32
    n_sigma: float = 3.0
    n_batches: int = 20
    hit_radius_factor: float = 0.2
    contraction_steps: int = 1000
    contraction_tol: float = 1e-8
    # limits
    eps_ladder: tuple = (0.4, 0.2, 0.1, 0.05)
    test_modes: int = 4
    local_limit_ratio: float = 0.5
    min_monotone_steps: int = 3
    # negative control: multiplies sigma for the nonlocal runs of measure-limit
    sigma_nonlocal_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "eps_ladder", tuple(float(e) for e in self.eps_ladder))
        self.validate()

    # ------------------------------------------------------------------ derived
    @property
    def m0(self) -> float:
        return 4.0 - self.p

    @property
    def m1(self) -> float:
        return self.m0 + 2.0 - self.p

    @property
    def grid(self) -> Grid:
        return Grid(self.n)

    def validate(self) -> None:
        checks = [
            (1.0 <= self.p <= 2.0, "p must lie in [1, 2]"),
            (self.operator in ("nonlocal", "local"), "operator must be 'nonlocal' or 'local'"),
            (self.scheme in ("explicit", "semi_implicit"), "scheme must be 'explicit' or 'semi_implicit'"),
            (self.n >= 4, "n must be >= 4"),
            (self.dt > 0, "dt must be positive"),
            (self.steps >= 0, "steps must be >= 0"),
            (self.sigma is None or self.sigma >= 0, "sigma must be >= 0"),
            (self.delta_my >= 0 and self.viscosity >= 0, "delta_my and viscosity must be >= 0"),
            (not (self.p == 1.0 and self.delta_my == 0.0), "p=1 needs delta_my > 0"),
            (self.n_samples >= 1 and self.stride >= 1 and self.burn_in >= 0, "bad sampling knobs"),
            (0 < self.decay_t_min < self.decay_t_max, "need 0 < decay_t_min < decay_t_max"),
            (len(self.eps_ladder) >= 2, "eps_ladder needs at least two values"),
            (self.dictionary_size >= 2, "dictionary_size must be >= 2"),
            (self.seed >= 0, "seed must be a non-negative 64-bit integer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.n_modes and self.n_modes >= self.n:
            raise ConfigError("n_modes must be smaller than n")

    # --------------------------------------------------------------- factories
    def noise(self, seed: Optional[int] = None, sigma: Optional[float] = None) -> Optional[NoiseModel]:
        amp = self.sigma if sigma is None else sigma
        if not amp:
            return None
        try:
            return NoiseModel.default_for(
                self.grid, amp, seed=self.seed if seed is None else seed,
                decay=self.decay_s, n_modes=self.n_modes or None,
            )
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def solver(self, **overrides) -> SolverConfig:
        """``SolverConfig`` for this document; keyword overrides win."""
        kw = dict(
            p=self.p, operator=self.operator, epsilon=self.epsilon, kernel=self.kernel,
            delta_my=self.delta_my, viscosity=self.viscosity, dt=self.dt, n_steps=self.steps,
            scheme=self.scheme, n=self.n, noise=self.noise(), save_every=self.save_every,
            solver_tol=self.solver_tol,
        )
        kw.update(overrides)
        try:
            return SolverConfig(**kw)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def initial_field(self, variant: int = 0) -> Field:
        """Default smooth initial conditions; ``variant`` picks a different shape."""
        if self.x0_csv:
            f = field_from_csv(Path(self.x0_csv).read_text())
            if f.grid.n_nodes != self.n:
                raise ConfigError(f"x0_csv has {f.grid.n_nodes} nodes, config has n={self.n}")
            return project_mean_zero(f * (1.0 if variant == 0 else -1.0))
        x = self.grid.nodes
        if variant == 0:
            v = np.cos(np.pi * x) + 0.5 * np.cos(2 * np.pi * x) + 0.3 * np.sin(3 * np.pi * x)
        else:
            v = -np.sin(3 * np.pi * x) + 0.7 * np.cos(np.pi * x) * np.cos(4 * np.pi * x)
        return project_mean_zero(Field(self.grid, self.x0_amplitude * v))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eps_ladder"] = list(self.eps_ladder)
        d["m0"] = self.m0
        d["m1"] = self.m1
        return d

    def to_yaml(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in DERIVED_KEYS}
        return yaml.safe_dump(d, sort_keys=False)

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config document must be a mapping of flat keys")
        derived = [k for k in DERIVED_KEYS if k in data]
        if derived:
            raise ConfigError(f"{', '.join(derived)} are derived from p and cannot be set")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        clean = {}
        for key, value in data.items():
            if isinstance(value, (dict,)):
                raise ConfigError(f"config key {key!r} must be a scalar or list (flat document)")
            clean[key] = value
        try:
            return cls(**clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str | Path], **overrides) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping of flat keys")
    data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    return ExperimentConfig.from_mapping(data)
