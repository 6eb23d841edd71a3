import numpy as np
import pytest
from hypothesis import given, strategies as st

from passfl import channel, solvers
from passfl.cost import ScheduleAllocation, objective_tilde
from passfl.scenario import generate_scenario
from passfl.solvers import InfeasibleEnergyError, InfeasibleRateError

from oracles import grid_root, lp_vertices_min


def _rate_instance(seed):
    sc = generate_scenario(seed, 1)
    r = np.random.default_rng(seed)
    gain = float(r.uniform(1e-3, 0.3))
    e = float(r.uniform(1e-3, 0.05))
    return sc, gain, e


class TestBisection:
    def test_meets_upload_exactly(self):
        for seed in range(20):
            sc, g, e = _rate_instance(seed)
            tau = solvers.bisect_slot(sc, sc.upload_bits, e, g)[0]
            bits = solvers.bits_in_slot(sc, tau, e, g)
            assert bits >= sc.upload_bits
            assert bits - sc.upload_bits <= 1e-9 * sc.upload_bits

    def test_matches_two_stage_scan(self):
        sc, g, e = _rate_instance(3)
        f = lambda t: solvers.bits_in_slot(sc, t, e, g) - sc.upload_bits
        coarse = np.geomspace(1e-9, 1e3, 2000)
        i = int(np.argmax(f(coarse) >= 0))
        root, step = grid_root(f, coarse[i - 1], coarse[i], 200_001)
        tau = solvers.bisect_slot(sc, sc.upload_bits, e, g)[0]
        assert abs(tau - root) <= step

    def test_bits_increase_with_slot(self):
        sc, g, e = _rate_instance(1)
        t = np.geomspace(1e-6, 1e3, 200)
        assert np.all(np.diff(solvers.bits_in_slot(sc, t, e, g)) > 0)
        assert np.all(solvers.bits_in_slot(sc, t, e, g) < solvers.max_deliverable_bits(sc, e, g))

    def test_unreachable_demand(self):
        sc, g, _ = _rate_instance(0)
        e = 1e-15
        assert solvers.max_deliverable_bits(sc, e, g) < sc.upload_bits
        with pytest.raises(InfeasibleRateError):
            solvers.bisect_slot(sc, sc.upload_bits, e, g)

    def test_vectorised_equals_scalar(self):
        sc = generate_scenario(0, 3)
        gains = np.array([0.01, 0.05, 0.2])
        es = np.array([0.01, 0.02, 0.005])
        vec = solvers.bisect_slot(sc, np.full(3, sc.upload_bits), es, gains)
        for k in range(3):
            assert vec[k] == solvers.bisect_slot(sc, sc.upload_bits, es[k], gains[k])[0]


class TestTimes:
    def test_compute_time_straggler(self, default_scenario):
        sc = default_scenario
        K = sc.num_devices
        e = np.full(K, 0.02)
        lower = solvers.min_compute_time(sc, np.ones(K), e)
        # sqrt(xi w^3 / (E_max - E)) dominates w / f_max at the defaults
        assert lower[0] == pytest.approx(np.sqrt(1e-28 * 5e9**3 / 0.08))
        assert lower[0] > 5e9 / 1.8e9

    def test_exhausted_budget(self, default_scenario):
        K = default_scenario.num_devices
        with pytest.raises(InfeasibleEnergyError):
            solvers.min_compute_time(default_scenario, np.ones(K), np.full(K, 0.1))

    def test_power_cap_keeps_upload_tight(self, default_scenario):
        sc = default_scenario
        K = sc.num_devices
        g = channel.gains(sc, [5.0, 10.0, 15.0, 20.0])
        e = np.full(K, 0.05)
        tau, _ = solvers.solve_times(sc, np.ones(K), e, g)
        assert np.any(e / tau > sc.p_max)
        tau_c, e_c = solvers.cap_power(sc, np.ones(K), e, g)
        assert np.all(e_c <= sc.p_max * tau_c * (1 + 1e-12))
        assert np.all(e_c <= e) and np.all(tau_c >= tau)
        bits = solvers.bits_in_slot(sc, tau_c, e_c, g)
        assert np.all(bits >= sc.upload_bits)
        assert np.all(bits - sc.upload_bits <= 1e-9 * sc.upload_bits)
        # full power for exactly D_b / R(P)
        np.testing.assert_allclose(tau_c, sc.upload_bits / channel.rate(sc, g, sc.p_max), rtol=1e-12)

    def test_idle_devices_get_nothing(self, default_scenario):
        sc = default_scenario
        mask = np.zeros(sc.num_devices)
        tau, tcp = solvers.solve_times(sc, mask, np.zeros(sc.num_devices), np.ones(sc.num_devices))
        assert tcp == 0 and not tau.any()


def _schedule_instance(seed, K):
    sc = generate_scenario(seed, K)
    r = np.random.default_rng(seed)
    tau = r.uniform(0.01, 0.3, K)
    e = r.uniform(0.001, 0.05, K)
    g = r.uniform(1e-3, 0.2, K)
    lam = float(r.uniform(0.99998, 0.999995))
    tcp = float(solvers.min_compute_time(sc, np.ones(K), e).max())
    return sc, tau, tcp, e, g, lam


class TestSchedule:
    @pytest.mark.parametrize("seed", range(10))
    def test_relaxed_optimum_matches_vertex_enumeration(self, seed):
        K = 1 + seed % 8
        sc, tau, tcp, e, g, lam = _schedule_instance(seed, K)
        sol = solvers.solve_schedule(sc, tau, tcp, e, lam, g)
        assert sol.relaxed_value() == pytest.approx(lp_vertices_min(sol.coeffs, sol.upper), abs=1e-9)

    def test_lambda_limits(self, default_scenario):
        sc = default_scenario
        K = sc.num_devices
        tau = np.full(K, 0.05)
        e = np.full(K, 0.01)
        g = np.full(K, 0.1)
        tcp = float(solvers.min_compute_time(sc, np.ones(K), e).max())
        assert not solvers.solve_schedule(sc, tau, tcp, e, 1 - 1e-12, g).rounded.any()
        assert solvers.solve_schedule(sc, tau, tcp, e, 1e-6, g).rounded.all()
        with pytest.raises(ValueError, match=r"lambda out of \(0,1\)"):
            solvers.solve_schedule(sc, tau, tcp, e, 1.0, g)

    @given(st.integers(0, 10_000))
    def test_rounding_error_bounded(self, seed):
        sc, tau, tcp, e, g, lam = _schedule_instance(seed, 6)
        sol = solvers.solve_schedule(sc, tau, tcp, e, lam, g)
        assert np.all((sol.relaxed >= 0) & (sol.relaxed <= sol.upper + 1e-15))
        assert set(np.unique(sol.rounded)) <= {0.0, 1.0}
        gap = abs(sol.rounded_value() - sol.relaxed_value())
        assert gap <= 0.5 * np.abs(sol.coeffs).sum() + 1e-9
        # relaxing can only help against rounding down
        floor_value = float(np.dot(sol.coeffs, np.floor(sol.relaxed)))
        assert sol.relaxed_value() <= floor_value + 1e-9

    def test_schedule_block_never_worsens_objective(self):
        sc, tau, tcp, e, g, lam = _schedule_instance(4, 8)
        s0 = np.ones(8) * solvers.schedule_upper_bounds(sc, tau, tcp, e, g)
        sol = solvers.solve_schedule(sc, tau, tcp, e, lam, g)
        before = objective_tilde(ScheduleAllocation(s0, tau, tcp, e), lam, sc)
        after = objective_tilde(ScheduleAllocation(sol.relaxed, tau, tcp, e), lam, sc)
        assert after <= before + 1e-9


class TestEnergies:
    def test_corner_is_per_device_grid_maximum(self):
        for seed in range(10):
            sc = generate_scenario(seed, 4)
            r = np.random.default_rng(seed)
            tau = r.uniform(0.01, 0.5, 4)
            g = r.uniform(1e-3, 0.2, 4)
            mask = np.ones(4)
            tcp = float(r.uniform(12, 20))
            theta = solvers.uniform_theta(mask)
            e, bad = solvers.solve_energies(sc, mask, tau, tcp, theta, g)
            assert not bad.any()
            upper = np.minimum(sc.p_max * tau, sc.e_max - 1e-28 * 5e9**3 / tcp**2)
            for k in range(4):
                grid = np.linspace(0, upper[k], 10_001)
                vals = theta[k] * tau[k] * channel.rate(sc, g[k], grid / tau[k])
                best = vals.max()
                got = theta[k] * tau[k] * channel.rate(sc, g[k], e[k] / tau[k])
                assert got == pytest.approx(best, rel=1e-8)

    def test_empty_box_flagged(self, default_scenario):
        sc = default_scenario
        K = sc.num_devices
        # computation alone exceeds the budget at this tau_cp
        e, bad = solvers.solve_energies(sc, np.ones(K), np.full(K, 0.1), 5.0)
        assert bad.all() and not e.any()

    def test_theta_validation(self):
        with pytest.raises(ValueError):
            solvers.TradeoffConfig(0.5, np.array([0.7, 0.7]))
        with pytest.raises(ValueError):
            solvers.TradeoffConfig(1.5)
        assert solvers.uniform_theta([1, 0, 1]).tolist() == [0.5, 0.0, 0.5]


class TestPolish:
    def test_closed_form_slot_matches_bisection(self):
        for seed in range(20):
            sc, g, e = _rate_instance(seed)
            closed = solvers.slot_closed_form(sc, sc.upload_bits, e, g)
            assert closed == pytest.approx(solvers.bisect_slot(sc, sc.upload_bits, e, g)[0], rel=1e-9)
        assert np.isinf(solvers.slot_closed_form(sc, sc.upload_bits, 1e-15, g))

    def _instance(self, seed, p_max=0.2):
        sc = generate_scenario(seed, 6).with_devices(p_max_w=p_max)
        g = channel.gains(sc, [4.0, 11.0, 19.0, 26.0])
        return sc, g

    def test_polish_feasible_and_no_slower_than_full_power(self):
        sc, g = self._instance(0)
        mask = np.ones(6)
        tau, e, tcp = solvers.polish_energies(sc, mask, g)
        assert np.all(e <= sc.p_max * tau * (1 + 1e-12))
        total = e + sc.kappa_eff * sc.workloads**3 / tcp**2
        assert np.all(total <= sc.e_max * (1 + 1e-12))
        assert np.all(solvers.bits_in_slot(sc, tau, e, g) >= sc.upload_bits)
        full = sc.upload_bits / channel.rate(sc, g, sc.p_max)
        tcp_full = solvers.min_compute_time(sc, mask, sc.p_max * full).max()
        assert tcp + tau.sum() <= tcp_full + full.sum()

    def test_polish_beats_a_scan_of_compute_times(self):
        sc, g = self._instance(3)
        mask = np.ones(6)
        tau, e, tcp = solvers.polish_energies(sc, mask, g)
        best = tcp + tau.sum()
        for t in np.linspace(tcp * 0.9, tcp * 1.2, 61):
            head = sc.e_max - sc.kappa_eff * sc.workloads**3 / t**2
            if np.any(head <= 0) or np.any(solvers.max_deliverable_bits(sc, head, g) <= sc.upload_bits):
                continue
            tau_t, _ = solvers.cap_power(sc, mask, head, g)
            assert best <= t + tau_t.sum() + 1e-9

    @pytest.mark.parametrize("seed", range(4))
    def test_more_power_never_slower(self, seed):
        lat = []
        for p in (0.05, 0.2, 0.5):
            sc, g = self._instance(seed, p)
            tau, _, tcp = solvers.polish_energies(sc, np.ones(6), g)
            lat.append(tcp + tau.sum())
        assert lat[1] <= lat[0] * (1 + 1e-9) and lat[2] <= lat[1] * (1 + 1e-9)

    def test_empty_or_unreachable(self):
        sc, g = self._instance(0)
        assert solvers.polish_energies(sc, np.zeros(6), g) is None
        assert solvers.polish_energies(sc, np.ones(6), np.full(6, 1e-15)) is None
