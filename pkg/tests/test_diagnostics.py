import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampwave.diagnostics import (
    GronwallSpec,
    absorbing_entry,
    coercivity_offset,
    dissipation_residual,
    energy_breakdown,
    entry_time,
    fit_dissipation,
    gronwall_bound,
    gronwall_comparison,
    interpolation_check,
    linear_decay_fit,
    required_strichartz_constant,
    strichartz_norm,
    strichartz_windows,
    tmax_bound,
)
from dampwave.errors import DomainError, FitError, NonAbsorptionError, ShapeError
from dampwave.solver import SolverConfig, Trajectory, integrate, integrate_ensemble, solve_linear
from dampwave.spectral import Domain, PhaseState, build_basis
from dampwave.symbols import Symbol, SymbolFamily

FAMILY = SymbolFamily()
ROOT_HALF_PI = math.sqrt(math.pi / 2)
WALLIS_10 = math.pi * 945 / 3840  # int_0^pi sin^10
WALLIS_12 = math.pi * 10395 / 46080  # int_0^pi sin^12


@pytest.fixture(scope="module")
def basis():
    return build_basis(Domain.interval(), 8)


def decaying_sine(basis, t_end=1.0, dt=1e-3):
    """Hand-built trajectory u(t, x) = e^{-t} sin x."""
    t = np.arange(0, t_end + dt / 2, dt)
    U = np.zeros((t.size, basis.N))
    U[:, 0] = ROOT_HALF_PI * np.exp(-t)
    V = -U
    cfg = SolverConfig(dt=dt)
    return Trajectory(t, U, V, basis, None, cfg, float(t[-1]), U[-1].copy(), V[-1].copy())


def single(basis, u, v, p=None, t_end=1.0):
    tr = solve_linear(PhaseState.from_coeffs(basis, u, v), None, 0, t_end, SolverConfig(dt=0.1))
    return energy_breakdown(tr, p)


def ensemble_states(basis, n, radius, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        U, V = rng.standard_normal(basis.N), rng.standard_normal(basis.N)
        scale = radius / math.sqrt(np.sum(basis.lambdas * U**2) + np.sum(V**2))
        out.append(PhaseState.from_coeffs(basis, scale * U, scale * V))
    return out


class TestEnergy:
    def test_zero(self, basis):
        eb = single(basis, np.zeros(8), np.zeros(8), FAMILY(0.0))
        assert np.all(eb.I == 0)

    def test_sin_u(self, basis):
        u = np.zeros(8)
        u[0] = ROOT_HALF_PI
        eb = single(basis, u, np.zeros(8), Symbol.zero())
        assert eb.I[0] == pytest.approx(3 * math.pi / 4, rel=1e-14)

    def test_sin_ut(self, basis):
        v = np.zeros(8)
        v[0] = ROOT_HALF_PI
        eb = single(basis, np.zeros(8), v, Symbol.zero())
        assert eb.I[0] == pytest.approx(math.pi / 2, rel=1e-14)

    def test_builtin_potential_term(self, basis):
        # I5 = 2/5 int |sqrt(pi/2) e_1|^5 = 2/5 int sin^5 = 2/5 * 16/15
        u = np.zeros(8)
        u[0] = ROOT_HALF_PI
        eb = single(basis, u, np.zeros(8), FAMILY(0.0))
        assert eb.I5[0] == pytest.approx(0.4 * 16 / 15, rel=1e-12)

    def test_additivity(self, basis):
        tr = integrate(ensemble_states(basis, 1, 2.0, 0)[0], 0, 2, FAMILY(0.5), SolverConfig(record_every=10))
        eb = energy_breakdown(tr)
        parts = eb.I1 + eb.I2 + eb.I3 + eb.I4 + eb.I5
        assert np.max(np.abs(eb.I - parts)) <= 1e-10
        assert set(eb.as_columns()) == {"I", "I1", "I2", "I3", "I4", "I5"}

    def test_coercivity(self, basis):
        tr = integrate(ensemble_states(basis, 1, 3.0, 1)[0], 0, 2, FAMILY(0.5), SolverConfig(record_every=10))
        C = coercivity_offset(tr, energy_breakdown(tr))
        e2 = tr.energy_norms() ** 2
        assert np.all(energy_breakdown(tr).I >= 0.5 * e2 - C - 1e-12)


class TestDissipation:
    def test_free_needs_no_source(self, basis):
        x = ensemble_states(basis, 1, 2.0, 2)[0]
        tr = solve_linear(x, None, 0, 10, SolverConfig(dt=0.01))
        fit = dissipation_residual(tr, Symbol.zero())
        assert fit.feasible and fit.C_src == 0.0

    def test_equilibrium(self, basis):
        tr = solve_linear(PhaseState.zero(basis), None, 0, 1, SolverConfig(dt=0.1))
        fit = dissipation_residual(tr, Symbol.zero())
        assert fit.feasible and fit.C_src == 0.0 and fit.worst_residual <= 0

    def test_builtin_ensemble_single_pair(self, basis):
        xs = ensemble_states(basis, 10, 4.0, 3)
        trs = integrate_ensemble(xs, 0, 10, [FAMILY(0.5)], SolverConfig(dt=0.005, record_every=4))
        fit = dissipation_residual(trs)
        assert fit.feasible
        assert fit.report().passed and fit.report().fitted["C_decay"] > 0

    def test_infeasible(self):
        fit = fit_dissipation(np.array([1e4]), np.array([0.0]), slack=0.0)
        assert not fit.feasible and fit.worst_residual > 0

    def test_too_few_samples(self, basis):
        tr = solve_linear(PhaseState.zero(basis), None, 0, 0.1, SolverConfig(dt=0.1))
        with pytest.raises(ShapeError):
            dissipation_residual(tr)


class TestGronwall:
    def test_scalar_example(self):
        res = gronwall_bound(GronwallSpec((1,), (1,), (1,), 5.0, 0.1))
        assert res.bound == pytest.approx(1.1)
        assert math.log(40) <= res.t0 < math.inf

    def test_scalar_oracle(self):
        spec = GronwallSpec((1,), (1,), (1,), 5.0, 0.1)
        t, I = gronwall_comparison(spec, 6.0, 601)
        assert np.max(np.abs(I - (1 + 4 * np.exp(-t)))) < 1e-7

    def test_already_inside(self):
        assert gronwall_bound(GronwallSpec((1,), (1,), (1,), 0.5, 0.1)).t0 == 0.0

    def test_two_terms(self):
        res = gronwall_bound(GronwallSpec((1, 1), (1, 1), (1, 1 / 3), 0.0, 1e-9))
        assert res.bound - 1e-9 == pytest.approx(2.0, abs=1e-14)

    def test_invalid(self):
        with pytest.raises(DomainError):
            GronwallSpec((1,), (0,), (1,), 1.0, 0.1)

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(0.2, 5), st.floats(0.2, 5), st.floats(0.3, 2)), min_size=1, max_size=3),
        st.floats(0, 50),
        st.floats(0.01, 1),
    )
    def test_certificate_dominates_oracle(self, terms, I0, eta):
        A, B, al = zip(*terms)
        spec = GronwallSpec(A, B, al, I0, eta)
        res = gronwall_bound(spec)
        t, I = gronwall_comparison(spec, res.t0 + 10.0, 800)
        after = I[t >= res.t0]
        assert np.all(after <= res.bound * (1 + 1e-9))


class TestAbsorption:
    def test_free_entry_matches_decay(self, basis):
        x = ensemble_states(basis, 1, 5.0, 4)[0]
        tr = solve_linear(x, None, 0, 30, SolverConfig(dt=0.01))
        entry = absorbing_entry([tr], 0.5)
        # adapted norm decays exactly like e^{-t/2}; E0 norm stays within a bounded factor of it
        predicted = 2 * math.log(10)
        assert 0.5 * predicted <= entry.max_entry <= 2 * predicted

    def test_inside_enters_at_zero(self, basis):
        x = ensemble_states(basis, 1, 0.1, 5)[0]
        tr = solve_linear(x, None, 0, 2, SolverConfig(dt=0.01))
        assert absorbing_entry([tr], 1.0).entry_times == [0.0]

    def test_never_enters(self, basis):
        x = ensemble_states(basis, 2, 5.0, 6)
        trs = [solve_linear(s, None, 0, 1, SolverConfig(dt=0.01)) for s in x]
        with pytest.raises(NonAbsorptionError) as info:
            absorbing_entry(trs, 0.01)
        assert info.value.member == 0

    def test_entry_time_helper(self):
        t = np.arange(5.0)
        assert entry_time(t, np.array([3, 2, 0.5, 2, 0.1]), 1.0) == 4.0
        assert entry_time(t, np.array([3, 2, 0.5, 2, 1.1]), 1.0) is None

    def test_phase_uniformity(self, basis):
        xs = ensemble_states(basis, 6, 5.0, 7)
        ps = [FAMILY(1.0), FAMILY(1.0).shift(math.pi)]
        rows = [p for p in ps for _ in xs]
        trs = integrate_ensemble(xs * 2, 0, 20, rows, SolverConfig(dt=0.005, record_every=10))
        entry = absorbing_entry(trs, 0.5, groups=[0] * 6 + [1] * 6)
        assert entry.spread <= 0.2
        assert entry.report().passed


class TestStrichartz:
    def test_decaying_sine(self, basis):
        tr = decaying_sine(basis)
        expected = (WALLIS_12 ** (1 / 3) * (1 - math.exp(-4)) / 4) ** 0.25
        assert strichartz_norm(tr, 0, 1) == pytest.approx(expected, rel=1e-6)

    def test_zero(self, basis):
        tr = solve_linear(PhaseState.zero(basis), None, 0, 2, SolverConfig(dt=0.01))
        assert strichartz_norm(tr, 0, 1) == 0.0

    def test_window_additivity(self, basis):
        tr = integrate(ensemble_states(basis, 1, 2.0, 8)[0], 0, 2, FAMILY(0.5), SolverConfig(dt=0.005))
        whole = strichartz_norm(tr, 0, 2) ** 4
        parts = strichartz_norm(tr, 0, 1) ** 4 + strichartz_norm(tr, 1, 1) ** 4
        assert whole == pytest.approx(parts, rel=1e-6)

    def test_out_of_range(self, basis):
        with pytest.raises(DomainError):
            strichartz_norm(decaying_sine(basis), 0.5, 1)

    def test_windows(self, basis):
        tr = decaying_sine(basis, t_end=2.0)
        starts, vals = strichartz_windows(tr, 0.5)
        assert np.allclose(starts, [0, 0.5, 1.0, 1.5])
        assert np.all(np.diff(vals) < 0)

    def test_required_constant_monotone(self, basis):
        xs = ensemble_states(basis, 4, 3.0, 9)
        trs = integrate_ensemble(xs, 0, 12, [FAMILY(0.5)], SolverConfig(dt=0.005, record_every=4))
        starts = np.arange(0, 8.01, 1.0)
        req = [required_strichartz_constant(trs, h, starts) for h in (0.5, 1, 2, 4)]
        assert all(b >= a for a, b in zip(req, req[1:]))


class TestInterpolation:
    def test_zero(self, basis):
        tr = solve_linear(PhaseState.zero(basis), None, 0, 1, SolverConfig(dt=0.01))
        assert interpolation_check(tr) == (0.0, 0.0)

    def test_decaying_sine(self, basis):
        lhs, rhs = interpolation_check(decaying_sine(basis))
        l5 = (WALLIS_10 ** (1 / 2) * (1 - math.exp(-5)) / 5) ** 0.2
        l4 = (WALLIS_12 ** (1 / 3) * (1 - math.exp(-4)) / 4) ** 0.25
        assert lhs == pytest.approx(l5, rel=1e-6)
        assert rhs == pytest.approx(l4**0.8 * ROOT_HALF_PI**0.2, rel=1e-6)
        assert lhs < rhs

    def test_subwindows(self, basis):
        tr = decaying_sine(basis, t_end=2.0)
        full = interpolation_check(tr, 2.0, 0.0)[0]
        a = interpolation_check(tr, 1.0, 0.0)[0]
        b = interpolation_check(tr, 2.0, 1.0)[0]
        assert max(a, b) <= full
        assert full**5 == pytest.approx(a**5 + b**5, rel=1e-6)


class TestDecay:
    def test_single_mode(self):
        b = build_basis(Domain.interval(), 1)
        tr = solve_linear(PhaseState.from_coeffs(b, [1.0]), None, 0, 20, SolverConfig(dt=0.05))
        assert linear_decay_fit(tr).rate == pytest.approx(0.5, abs=0.05)

    def test_zero(self, basis):
        tr = solve_linear(PhaseState.zero(basis), None, 0, 5, SolverConfig(dt=0.05))
        with pytest.raises(FitError):
            linear_decay_fit(tr)

    def test_mixed_modes(self):
        b = build_basis(Domain.interval(), 3)
        tr = solve_linear(PhaseState.from_coeffs(b, [1.0, -0.5, 0.3], [0.2, 0.1, 1.0]), None, 0, 20, SolverConfig(dt=0.05))
        fit = linear_decay_fit(tr)
        assert 0.4 <= fit.rate <= 0.5 + 1e-9
        assert fit.residual < 0.05
        assert fit.report().passed

    def test_envelope_holds(self):
        b = build_basis(Domain.interval(), 3)
        tr = solve_linear(PhaseState.from_coeffs(b, [1.0, 0.0, 0.3]), None, 0, 20, SolverConfig(dt=0.05))
        fit = linear_decay_fit(tr, s=1.0)
        raw = tr.energy_norms(1.0)
        assert np.all(raw <= fit.prefactor * raw[0] * np.exp(-fit.rate * tr.times) * (1 + 1e-12))


class TestTmax:
    def test_arithmetic(self):
        assert tmax_bound(1, 1, 1, 1) == pytest.approx((1 / 6) ** 5, rel=1e-14)

    def test_small_radius_saturates(self):
        assert tmax_bound(1e-30, 1, 1, 1) == 1.0

    def test_decreasing_in_radius(self):
        vals = [tmax_bound(R, 1, 1, 2) for R in (1, 10, 100, 1e4)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-10

    def test_invalid(self):
        with pytest.raises(DomainError):
            tmax_bound(1, 1, 1, 4)
