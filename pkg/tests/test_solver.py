import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampwave.diagnostics import continuous_dependence
from dampwave.errors import BlowUpError, ConfigurationError, DomainError, ShapeError
from dampwave.solver import (
    SolverConfig,
    cocycle,
    integrate,
    integrate_ensemble,
    propagate_free,
    rhs,
    set_workers,
    solve_linear,
)
from dampwave.spectral import Domain, PhaseState, build_basis, project
from dampwave.spectral import time_integral
from dampwave.symbols import Symbol, SymbolFamily

FAMILY = SymbolFamily()


def closed_form(t):
    """u(t) for u'' + u' + u = 0, u(0) = 1, u'(0) = 0."""
    w = math.sqrt(3) / 2
    return math.exp(-t / 2) * (math.cos(w * t) + math.sin(w * t) / math.sqrt(3))


@pytest.fixture(scope="module")
def one_mode():
    return build_basis(Domain.interval(), 1)


@pytest.fixture(scope="module")
def basis8():
    return build_basis(Domain.interval(), 8)


def sample_state(basis, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    k = np.arange(1, basis.N + 1)
    return PhaseState.from_coeffs(basis, scale * rng.standard_normal(basis.N) / k**2, scale * rng.standard_normal(basis.N) / k)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(dt=0), dict(method="euler"), dict(record_every=0), dict(blowup_ceiling=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            SolverConfig(**kw)

    def test_tolerance_scales_with_order(self):
        assert SolverConfig(dt=0.1).tolerance == pytest.approx(1e-4)
        assert SolverConfig(dt=0.1, method="exp_mode").tolerance == pytest.approx(1e-2)


class TestRhs:
    def test_free_single_mode(self, one_mode):
        d = rhs(PhaseState.from_coeffs(one_mode, [1.0]), 0.0, Symbol.zero())
        assert d.u.coeffs[0] == 0.0 and d.ut.coeffs[0] == -1.0

    def test_origin_equilibrium(self, basis8):
        d = rhs(PhaseState.zero(basis8), 0.3, FAMILY(1.0))
        assert np.all(d.u.coeffs == 0) and np.all(d.ut.coeffs == 0)

    def test_constant_forcing(self, basis8):
        x = sample_state(basis8)
        d = rhs(x, 0.0, Symbol.constant(1.0))
        k = np.arange(1, 9)
        one = np.where(k % 2 == 1, math.sqrt(2 / math.pi) * 2 / k, 0.0)
        expected = -x.ut.coeffs - basis8.lambdas * x.u.coeffs + one
        assert np.max(np.abs(d.ut.coeffs - expected)) < 1e-12
        assert np.array_equal(d.u.coeffs, x.ut.coeffs)

    def test_matches_pointwise_projection(self, basis8):
        x, p = sample_state(basis8, 3), FAMILY(0.7)
        u = x.u.coeffs @ basis8.modes
        proj = project(p.eval(0.4, u), basis8).coeffs
        d = rhs(x, 0.4, p)
        assert np.max(np.abs(d.ut.coeffs - (-x.ut.coeffs - basis8.lambdas * x.u.coeffs + proj))) < 1e-12


class TestIntegrate:
    TIMES = (0.5, 1.0, 2.0, 5.0)

    @pytest.mark.parametrize("method,tol", [("rk4", 1e-6), ("exp_mode", 1e-10)])
    def test_closed_form(self, one_mode, method, tol):
        cfg = SolverConfig(dt=1e-3, method=method, record_every=100)
        tr = integrate(PhaseState.from_coeffs(one_mode, [1.0]), 0.0, 5.0, Symbol.zero(), cfg)
        for t in self.TIMES:
            i = int(round(t / tr.record_dt))
            assert tr.U[i, 0] == pytest.approx(closed_form(t), rel=tol)

    def test_value_at_two(self, one_mode):
        tr = integrate(PhaseState.from_coeffs(one_mode, [1.0]), 0.0, 2.0, Symbol.zero(), SolverConfig(dt=0.01))
        assert abs(tr.final_U[0] - closed_form(2.0)) < 1e-6

    def test_rk4_order(self, one_mode):
        x = PhaseState.from_coeffs(one_mode, [1.0])
        errs = [abs(integrate(x, 0, 2, Symbol.zero(), SolverConfig(dt=dt)).final_U[0] - closed_form(2.0))
                for dt in (0.1, 0.05)]
        assert 12 < errs[0] / errs[1] < 20

    def test_zero_stays_zero(self, basis8):
        tr = integrate(PhaseState.zero(basis8), 0, 3, FAMILY(0.0), SolverConfig())
        assert np.all(tr.U == 0) and np.all(tr.V == 0)

    def test_uniform_grid(self, basis8):
        tr = integrate(sample_state(basis8), 0, 1, FAMILY(0.3), SolverConfig(dt=0.01, record_every=5))
        assert np.allclose(np.diff(tr.times), 0.05, rtol=0, atol=1e-12)
        assert len(tr) == 21
        assert np.all(np.isfinite(tr.energy_norms()))

    def test_blowup(self, basis8):
        grow = SymbolFamily(kappa=3.9, g_coeffs=(0.0, 40.0))(0.0)
        with pytest.raises(BlowUpError) as info:
            integrate(sample_state(basis8), 0, 20, grow, SolverConfig(dt=0.002, blowup_ceiling=10.0))
        assert 0 < info.value.time < 20

    def test_bad_interval(self, basis8):
        with pytest.raises(DomainError):
            integrate(sample_state(basis8), 1.0, 1.0, FAMILY(0.0), SolverConfig())

    def test_energy_equation_order(self, basis8):
        p, x = FAMILY(0.5), sample_state(basis8, 1)
        res = []
        for dt in (0.02, 0.01):
            tr = integrate(x, 0, 2, p, SolverConfig(dt=dt))
            P = p.eval(tr.times[:, None], tr.u_values()) @ basis8.weighted_modes
            g = 2 * (np.sum(P * tr.V, axis=1) - np.sum(tr.V**2, axis=1))
            e = tr.energy_norms() ** 2
            res.append(abs(e[-1] - e[0] - time_integral(g, tr.record_dt)))
        assert 10 < res[0] / res[1] < 20

    def test_continuous_dependence(self, basis8):
        p, x = FAMILY(0.5), sample_state(basis8, 2)
        y = x + PhaseState.from_coeffs(basis8, np.full(8, 1e-6))
        cfg = SolverConfig(dt=0.005, record_every=4)
        fit = continuous_dependence(integrate(x, 0, 2, p, cfg), integrate(y, 0, 2, p, cfg))
        assert math.isfinite(fit.constant)
        assert fit.worst_ratio <= 1 + 1e-9
        assert fit.report().passed


class TestEnsemble:
    def test_rows_match_single_runs(self, basis8):
        xs = [sample_state(basis8, s) for s in range(3)]
        ps = [FAMILY(0.0), FAMILY(0.5), FAMILY(0.5).shift(1.0)]
        cfg = SolverConfig(dt=0.01, record_every=10)
        batch = integrate_ensemble(xs, 0, 2, ps, cfg)
        for x, p, tr in zip(xs, ps, batch):
            single = integrate(x, 0, 2, p, cfg)
            assert np.max(np.abs(single.U - tr.U)) < 1e-13

    def test_worker_count_does_not_change_bits(self, basis8):
        xs = [sample_state(basis8, s) for s in range(300)]
        cfg = SolverConfig(dt=0.02, record_every=25)
        try:
            set_workers(1)
            a = integrate_ensemble(xs, 0, 1, [FAMILY(0.5)], cfg)
            set_workers(3)
            b = integrate_ensemble(xs, 0, 1, [FAMILY(0.5)], cfg)
        finally:
            set_workers(1)
        assert all(np.array_equal(x.U, y.U) for x, y in zip(a, b))

    def test_symbol_count_mismatch(self, basis8):
        with pytest.raises(ShapeError):
            integrate_ensemble([sample_state(basis8)] * 3, 0, 1, [FAMILY(0.1)] * 2, SolverConfig())


class TestLinear:
    def test_free_exact(self, one_mode):
        tr = solve_linear(PhaseState.from_coeffs(one_mode, [1.0]), None, 0.0, 2.0, SolverConfig(dt=0.1))
        assert tr.final_U[0] == pytest.approx(closed_form(2.0), abs=1e-12)
        for t, u in zip(tr.times, tr.U[:, 0]):
            assert u == pytest.approx(closed_form(t), abs=1e-12)

    def test_zero(self, basis8):
        tr = solve_linear(PhaseState.zero(basis8), None, 0, 1, SolverConfig())
        assert np.all(tr.U == 0)

    def test_constant_forcing_steady_state(self, one_mode):
        tr = solve_linear(PhaseState.zero(one_mode), np.array([1.0]), 0, 40, SolverConfig(dt=0.01, method="exp_mode"))
        assert tr.final_U[0] == pytest.approx(1.0, abs=1e-8)
        assert tr.final_V[0] == pytest.approx(0.0, abs=1e-8)

    def test_callable_forcing(self, one_mode):
        # u'' + u' + u = cos t has the periodic solution sin t
        x = PhaseState.from_coeffs(one_mode, [0.0], [1.0])
        tr = solve_linear(x, lambda t: np.array([math.cos(t)]), 0, 3, SolverConfig(dt=0.01))
        assert tr.final_U[0] == pytest.approx(math.sin(3.0), abs=1e-9)

    def test_forcing_shape(self, basis8):
        with pytest.raises(ShapeError):
            solve_linear(PhaseState.zero(basis8), np.ones(3), 0, 1, SolverConfig())

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.01, 50), st.floats(0, 5), st.floats(0, 5))
    def test_propagator_semigroup(self, lam, s, t):
        U, V = np.array([[0.3]]), np.array([[-1.1]])
        a = propagate_free(np.array([lam]), U, V, s + t)
        b = propagate_free(np.array([lam]), *propagate_free(np.array([lam]), U, V, s), t)
        assert np.allclose(a[0], b[0], atol=1e-12) and np.allclose(a[1], b[1], atol=1e-12)


class TestCocycle:
    def test_identity(self, basis8):
        x = sample_state(basis8)
        assert cocycle(x, 0.0, FAMILY(0.5), SolverConfig()) == x

    def test_equilibrium(self, basis8):
        z = PhaseState.zero(basis8)
        assert cocycle(z, 3.0, FAMILY(0.0), SolverConfig()) == z

    def test_negative_time(self, basis8):
        with pytest.raises(DomainError):
            cocycle(sample_state(basis8), -1.0, FAMILY(0.1), SolverConfig())

    def test_law_random_data(self, basis8):
        p, cfg = FAMILY(0.5), SolverConfig(dt=0.005)
        for seed in range(3):
            x = sample_state(basis8, seed)
            direct = cocycle(x, 2.0, p, cfg)
            composed = cocycle(cocycle(x, 1.0, p, cfg), 1.0, p.shift(1.0), cfg)
            diff = direct - composed
            assert np.max(np.abs(np.concatenate([diff.u.coeffs, diff.ut.coeffs]))) < 1e-6

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 20))
    def test_law_within_tolerance(self, ks, kt):
        b = build_basis(Domain.interval(), 6)
        s, t = ks / 4, kt / 4
        p, cfg, x = FAMILY(0.8).shift(0.3), SolverConfig(dt=0.01), sample_state(b, 7)
        direct = cocycle(x, s + t, p, cfg)
        composed = cocycle(cocycle(x, s, p, cfg), t, p.shift(s), cfg)
        d = direct - composed
        err = math.sqrt(np.sum(b.lambdas * d.u.coeffs**2) + np.sum(d.ut.coeffs**2))
        assert err <= 10 * cfg.tolerance
