import numpy as np
import pytest

from passfl.cost import (ScheduleAllocation, comp_latency, energies, objective, objective_tilde,
                         round_latency, scheduled_data)


def _alloc():
    return ScheduleAllocation(mask=[1, 0, 1], tau_cm=[0.1, 0.0, 0.3], tau_cp=2.0,
                              e_cm=[0.01, 0.0, 0.03])


def test_round_latency_adds_slots_and_compute():
    tau_t, tau_cm, tau_cp = round_latency(_alloc())
    assert (tau_t, tau_cm, tau_cp) == pytest.approx((2.4, 0.4, 2.0))


def test_comp_latency():
    assert comp_latency(1e6, 5000, 1e9) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        comp_latency(1e6, 5000, 0.0)


def test_energy_accounting(scenario_factory):
    sc = scenario_factory([(1, 0), (2, 0), (3, 0)])
    a = _alloc()
    e_cp, e_cm, total = energies(a, sc, 0)
    f = 5e9 / 2.0
    assert e_cp == pytest.approx(1e-28 * 5e9 * f**2)
    assert e_cm == pytest.approx(0.01)
    assert total == pytest.approx(e_cp + e_cm)
    assert energies(a, sc, 1) == (0.0, 0.0, 0.0)


def test_powers_zero_for_idle_devices():
    np.testing.assert_allclose(_alloc().powers, [0.1, 0.0, 0.1])


def test_allocation_arrays_are_read_only():
    a = _alloc()
    with pytest.raises(ValueError):
        a.mask[0] = 0


def test_objective_constant_offset(scenario_factory):
    sc = scenario_factory([(1, 0), (2, 0), (3, 0)])
    a = _alloc()
    lam = 0.3
    # lam * tau_t + (1 - lam) * (|D| - D(s))
    expected = lam * 2.4 + (1 - lam) * (15000 - 10000)
    assert objective(a, lam, sc) == pytest.approx(expected)
    assert objective(a, lam, sc) - objective_tilde(a, lam, sc) == pytest.approx((1 - lam) * 15000)
    assert scheduled_data(a.mask, sc) == 10000
