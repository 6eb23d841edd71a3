import numpy as np
import pytest
from hypothesis import given, strategies as st

from passfl import channel
from passfl.channel import Placement, SpacingError
from passfl.scenario import generate_scenario

from oracles import direct_gain, direct_rate


def test_single_overhead_antenna(scenario_factory):
    sc = scenario_factory([(10.0, 0.0)], num_pas=1)
    assert channel.gain(sc, 0, [10.0]) == pytest.approx(1 / 9, abs=1e-12)


def test_three_four_five_geometry(scenario_factory):
    sc = scenario_factory([(14.0, 0.0)], num_pas=1)
    assert channel.gain(sc, 0, [10.0]) == pytest.approx(0.04, abs=1e-12)


def test_gain_matches_direct_channel():
    sc = generate_scenario(2, 6)
    xs = [1.0, 7.5, 12.25, 29.0]
    for k in range(6):
        assert channel.gain(sc, k, xs) == pytest.approx(direct_gain(sc, k, xs), rel=1e-10)
        assert channel.gain(sc, k, xs, guided=False) == pytest.approx(
            direct_gain(sc, k, xs, guided=False), rel=1e-10)


def test_rate_matches_direct_channel():
    sc = generate_scenario(3, 4)
    xs = [2.0, 9.0, 15.0, 21.0]
    for k in range(4):
        g = channel.gain(sc, k, xs)
        assert channel.rate(sc, g, 0.2) == pytest.approx(direct_rate(sc, k, xs, 0.2), rel=1e-12)


@given(st.integers(0, 10_000), st.lists(st.floats(0, 30), min_size=4, max_size=4, unique=True))
def test_gain_below_coherent_bound(seed, xs):
    sc = generate_scenario(seed, 3)
    g = channel.gains(sc, xs)
    assert np.all(g <= channel.gain_upper_bound(sc, xs) * (1 + 1e-12))
    assert np.all(g >= 0)


def test_guided_phase_matters():
    sc = generate_scenario(0, 4)
    xs = [3.0, 3.4, 8.1, 20.0]
    assert not np.allclose(channel.gains(sc, xs), channel.gains(sc, xs, guided=False))


def test_rate_monotone_in_power_and_rejects_negative(default_scenario):
    p = np.linspace(0, 1, 11)
    r = channel.rate(default_scenario, 0.01, p)
    assert r[0] == 0
    assert np.all(np.diff(r) > 0)
    with pytest.raises(ValueError):
        channel.rate(default_scenario, 0.01, -0.1)


class TestPlacement:
    def test_sorted_on_construction(self):
        assert Placement.from_array([3.0, 1.0, 2.0]).positions_m == (1.0, 2.0, 3.0)

    def test_spacing_violation(self, default_scenario):
        d = default_scenario.min_spacing_m
        with pytest.raises(SpacingError):
            Placement.from_array([1.0, 1.0 + 0.5 * d, 5, 6]).validate(default_scenario)

    def test_exact_half_wavelength_spacing_accepted(self, default_scenario):
        xs = channel.conventional_positions(default_scenario)
        Placement.from_array(xs).validate(default_scenario)
        np.testing.assert_allclose(np.diff(xs), default_scenario.radio.wavelength_m / 2)
        assert np.mean(xs) == pytest.approx(15.0)

    def test_out_of_bounds_and_count(self, default_scenario):
        with pytest.raises(SpacingError):
            Placement.from_array([-1, 2, 3, 4]).validate(default_scenario)
        with pytest.raises(SpacingError):
            Placement.from_array([1, 2]).validate(default_scenario)
