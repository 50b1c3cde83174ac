"""Simulation of stochastic nonlocal and local singular p-Laplace equations."""
from .field import Field, Grid, ParameterError, ShapeError, lm_norm, pairing, power_map, project_mean_zero
from .kernel import DiscreteStencil, KernelProfile, ResolutionError, build_stencil, nonlocal_norm, normalization_constant
from .noise import NoiseModel, trace_norm, wiener_increment, wiener_path
from .operators import apply_local, apply_nonlocal, energy_local, energy_nonlocal
from .proximal import NumericError, PowerPotential, envelope, prox, regularized_flux
from .integrator import SolverConfig, Trajectory, simulate, simulate_transformed, stability_bound, step, svi_residual

__version__ = "0.1.0"
