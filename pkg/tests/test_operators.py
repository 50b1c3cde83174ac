import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from stochplap.field import Field, Grid, ParameterError, ShapeError, pairing
from stochplap.kernel import KernelProfile, build_stencil, nonlocal_norm
from stochplap.operators import (
    apply_local,
    apply_nonlocal,
    energy_local,
    energy_nonlocal,
    local_operator,
    nonlocal_operator,
)
from stochplap.proximal import PowerPotential

N = 32
GRID = Grid(N)


def stencil(p, eps=0.2, shape="tent", grid=GRID):
    return build_stencil(KernelProfile(shape), eps, p, grid)


def mean_zero(v):
    return Field(GRID, v - v.mean())


fields = arrays(float, N, elements=st.floats(-10, 10)).map(mean_zero)
potentials = st.one_of(
    st.builds(PowerPotential, st.floats(1.05, 2.0)),
    st.builds(PowerPotential, st.floats(1.0, 2.0), st.floats(1e-3, 0.5)),
)


def brute_nonlocal(u, s, pot):
    W = s.dense()
    out = np.zeros(N)
    for i in range(N):
        for j in range(N):
            if W[i, j]:
                out[i] += W[i, j] * pot.flux(np.array(u[j] - u[i]))
    return out


def brute_energy(u, s, pot):
    W = s.dense()
    total = sum(W[i, j] * abs(u[i] - u[j]) ** pot.p for i in range(N) for j in range(N))
    return GRID.spacing * total / (2 * pot.p)


class TestNonlocal:
    def test_brute_force_apply(self, rng):
        for pot in (PowerPotential(1.5), PowerPotential(1.0, 0.1), PowerPotential(2.0)):
            s = stencil(pot.p)
            u = mean_zero(rng.standard_normal(N))
            np.testing.assert_allclose(apply_nonlocal(u, s, pot).values, brute_nonlocal(u.values, s, pot),
                                       rtol=1e-12, atol=1e-12)

    def test_brute_force_energy(self, rng):
        s = stencil(1.3)
        u = mean_zero(rng.standard_normal(N))
        assert energy_nonlocal(u, s, PowerPotential(1.3)) == pytest.approx(
            brute_energy(u.values, s, PowerPotential(1.3)), rel=1e-12)

    def test_constant_maps_to_zero(self):
        u = Field(GRID, np.full(N, 2.5))
        assert np.all(apply_nonlocal(u, stencil(1.5), PowerPotential(1.5)).values == 0)
        assert energy_nonlocal(u, stencil(1.5), PowerPotential(1.5)) == 0

    def test_two_node_antisymmetry(self):
        v = np.zeros(N)
        v[10], v[11] = 1.0, -1.0
        out = apply_nonlocal(Field(GRID, v), stencil(1.5), PowerPotential(1.5)).values
        assert out[10] == pytest.approx(-out[11], rel=1e-14)
        np.testing.assert_allclose(out, brute_nonlocal(v, stencil(1.5), PowerPotential(1.5)), atol=1e-12)

    def test_multivalued_rejected(self):
        with pytest.raises(ParameterError):
            apply_nonlocal(GRID.zeros(), stencil(1.0), PowerPotential(1.0))

    def test_grid_mismatch(self):
        with pytest.raises(ShapeError):
            apply_nonlocal(Grid(16).zeros(), stencil(1.5), PowerPotential(1.5))

    @given(fields, st.floats(-5, 5), st.floats(1.05, 2.0))
    def test_homogeneous_energy(self, u, lam, p):
        s = stencil(p)
        pot = PowerPotential(p)
        assert energy_nonlocal(lam * u, s, pot) == pytest.approx(abs(lam) ** p * energy_nonlocal(u, s, pot),
                                                                  rel=1e-11, abs=1e-300)

    @given(fields, fields, st.floats(0, 1), st.floats(1.05, 2.0))
    def test_energy_convex(self, u, v, t, p):
        s = stencil(p)
        pot = PowerPotential(p)
        mix = energy_nonlocal(t * u + (1 - t) * v, s, pot)
        assert mix <= t * energy_nonlocal(u, s, pot) + (1 - t) * energy_nonlocal(v, s, pot) + 1e-9

    @given(fields, st.floats(1.05, 2.0))
    def test_growth_bound(self, u, p):
        # ||A(u)||_2 <= C (1 + ||u||_2) with C from the row sums
        s = stencil(p)
        A = apply_nonlocal(u, s, PowerPotential(p))
        C = 2 * s.row_sums.max() * 2 ** (p - 1)
        assert np.sqrt(pairing(A, A)) <= C * (1 + np.sqrt(pairing(u, u)))


class TestLocal:
    def test_eigenfunction(self):
        for n in (64, 128, 256):
            g = Grid(n)
            u = g.sample(lambda x: np.cos(np.pi * x))
            out = apply_local(u, PowerPotential(2.0)).values
            lam = -(4 / g.spacing**2) * np.sin(np.pi * g.spacing / 2) ** 2
            np.testing.assert_allclose(out, lam * u.values, atol=1e-9 * n**2)
            assert abs(lam + np.pi**2) <= np.pi**4 * g.spacing**2 / 12 * 1.01

    def test_constant_and_conservation(self, rng):
        g = Grid(40)
        assert np.all(apply_local(Field(g, np.full(40, 3.0)), PowerPotential(1.4)).values == 0)
        u = Field(g, rng.standard_normal(40))
        for pot, nu in ((PowerPotential(1.4), 0.0), (PowerPotential(1.0, 0.05), 0.3)):
            out = apply_local(u, pot, nu).values
            assert abs(out.sum()) <= 1e-12 * np.abs(out).max() * 40

    def test_face_flux_form(self, rng):
        g = Grid(20)
        h = g.spacing
        u = rng.standard_normal(20)
        F = np.concatenate([[0.0], PowerPotential(1.6).flux(np.diff(u) / h), [0.0]])
        np.testing.assert_allclose(apply_local(Field(g, u), PowerPotential(1.6)).values,
                                   (F[1:] - F[:-1]) / h, rtol=1e-13, atol=1e-10)

    def test_viscosity_adds_laplacian(self, rng):
        g = Grid(20)
        u = Field(g, rng.standard_normal(20))
        diff = apply_local(u, PowerPotential(1.6), 0.5).values - apply_local(u, PowerPotential(1.6)).values
        np.testing.assert_allclose(diff, 0.5 * apply_local(u, PowerPotential(2.0)).values, rtol=1e-12)

    def test_ramp_energy(self):
        for n in (64, 256):
            g = Grid(n)
            u = g.sample(lambda x: x - 0.5)
            assert energy_local(u, PowerPotential(1.5)) == pytest.approx((1 - g.spacing) / 1.5, rel=1e-12)

    def test_total_variation_of_step(self):
        g = Grid(50)
        u = Field(g, np.where(g.nodes < 0.5, 0.0, 1.0))
        pot = PowerPotential(1.0, 1e-8)
        assert energy_local(u, pot) == pytest.approx(1.0, abs=1e-8)

    def test_multivalued_rejected(self):
        with pytest.raises(ParameterError):
            apply_local(GRID.zeros(), PowerPotential(1.0))


def _operators():
    yield "nonlocal", nonlocal_operator(stencil(1.5), PowerPotential(1.5))
    yield "nonlocal-huber", nonlocal_operator(stencil(1.0, shape="box"), PowerPotential(1.0, 0.05))
    yield "local", local_operator(GRID, PowerPotential(1.3))
    yield "local-viscous", local_operator(GRID, PowerPotential(1.7, 0.01), viscosity=0.2)


OPS = dict(_operators())


@pytest.mark.parametrize("name", list(OPS))
class TestOperatorProperties:
    def test_monotone(self, name, rng):
        op = OPS[name]
        h = GRID.spacing
        for _ in range(500):
            u, v = rng.standard_normal((2, N)) * rng.uniform(0.01, 10)
            val = h * np.dot(op.apply(u) - op.apply(v), u - v)
            scale = h * np.abs(op.apply(u) - op.apply(v)).sum() * np.abs(u - v).max()
            assert val <= 1e-12 * scale

    def test_gradient_consistency(self, name, rng):
        op = OPS[name]
        h = GRID.spacing
        u = rng.standard_normal(N)
        step = 1e-6
        grad = np.empty(N)
        for i in range(N):
            e = np.zeros(N)
            e[i] = step
            grad[i] = (op.energy(u + e) - op.energy(u - e)) / (2 * step)
        np.testing.assert_allclose(op.apply(u), -grad / h, rtol=1e-6, atol=1e-6 * np.abs(grad / h).max())

    def test_zero_mean(self, name, rng):
        op = OPS[name]
        out = op.apply(rng.standard_normal(N) * 5)
        assert abs(out.mean()) <= 1e-13 * max(1.0, np.abs(out).max())

    def test_jacobian_matches_difference_quotient(self, name, rng):
        op = OPS[name]
        u = rng.standard_normal(N)
        d = rng.standard_normal(N)
        t = 1e-7
        fd = (op.apply(u + t * d) - op.apply(u - t * d)) / (2 * t)
        Jd = op.jacobian(u) @ d
        np.testing.assert_allclose(Jd, fd, rtol=1e-4, atol=1e-5 * np.abs(fd).max())


class TestEnergyIdentity:
    @pytest.mark.parametrize("p", [1.1, 1.5, 1.9, 2.0])
    def test_pairing_equals_minus_p_energy(self, rng, p):
        s = stencil(p)
        pot = PowerPotential(p)
        for _ in range(50):
            u = mean_zero(rng.standard_normal(N))
            lhs = pairing(apply_nonlocal(u, s, pot), u)
            assert lhs == pytest.approx(-p * energy_nonlocal(u, s, pot), rel=1e-12)

    @pytest.mark.parametrize("p", [1.2, 1.5, 1.8])
    def test_hoelder_bound(self, rng, p):
        # |(A(u), v)| <= p ||u||^(p-1) ||v|| in the nonlocal norm of order p
        s = stencil(p)
        pot = PowerPotential(p)
        for _ in range(200):
            u = mean_zero(rng.standard_normal(N))
            v = mean_zero(rng.standard_normal(N))
            lhs = abs(pairing(apply_nonlocal(u, s, pot), v))
            assert lhs <= p * nonlocal_norm(u, s, p) ** (p - 1) * nonlocal_norm(v, s, p) * (1 + 1e-12)
