"""Line-of-sight channel through the pinching-antenna waveguide.

The gain returned here is ``|sum_n Pi_k(x_n)|^2`` with the path-loss
constant eta factored out; :func:`rate` multiplies it back in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import Scenario

_SPACING_RTOL = 1e-9


class SpacingError(ValueError):
    """Antenna positions violate ordering, bounds or minimum spacing."""


@dataclass(frozen=True)
class Placement:
    positions_m: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "positions_m", tuple(float(x) for x in self.positions_m))

    @classmethod
    def from_array(cls, xs: Sequence[float]) -> "Placement":
        return cls(tuple(sorted(float(x) for x in xs)))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.positions_m)

    def __len__(self) -> int:
        return len(self.positions_m)

    def validate(self, scenario: Scenario) -> "Placement":
        xs = self.array
        if len(xs) != scenario.num_pas:
            raise SpacingError(f"expected {scenario.num_pas} antennas, got {len(xs)}")
        dx = scenario.waveguide_length_m
        if np.any(xs < 0) or np.any(xs > dx):
            raise SpacingError(f"antenna outside [0, {dx}]")
        gaps = np.diff(xs)
        if np.any(gaps < scenario.min_spacing_m * (1 - _SPACING_RTOL)):
            raise SpacingError(
                f"minimum spacing {scenario.min_spacing_m:.6g} m violated (gap {gaps.min():.6g} m)")
        return self


def distances(scenario: Scenario, xs: np.ndarray, devices: Sequence[int] | None = None) -> np.ndarray:
    """Device-to-antenna distances, shape ``(K, len(xs))``."""
    idx = slice(None) if devices is None else np.asarray(devices)
    ux = scenario.xs[idx][:, None]
    uy = scenario.ys[idx][:, None]
    xs = np.asarray(xs, dtype=float)[None, :]
    return np.sqrt((ux - xs) ** 2 + uy**2 + scenario.pa_height_m**2)


def contributions(scenario: Scenario, xs: Sequence[float], devices: Sequence[int] | None = None,
                  guided: bool = True) -> np.ndarray:
    """Single-antenna contributions ``Pi_k(x)`` for every device and position.

    With ``guided=False`` the in-waveguide phase is dropped (fixed array fed
    without a waveguide).
    """
    xs = np.asarray(xs, dtype=float)
    dist = distances(scenario, xs, devices)
    phase = scenario.radio.kappa * dist
    if guided:
        # feed point at the origin: guided path length equals x
        phase = phase + scenario.radio.kappa_g * xs[None, :]
    return np.exp(-1j * phase) / dist


def contribution(scenario: Scenario, k: int, x: float, guided: bool = True) -> complex:
    return complex(contributions(scenario, [x], [k], guided)[0, 0])


def gains(scenario: Scenario, xs: Sequence[float] | Placement, devices: Sequence[int] | None = None,
          guided: bool = True) -> np.ndarray:
    """Channel gains ``G_k`` for a shared antenna placement."""
    if isinstance(xs, Placement):
        xs = xs.positions_m
    return np.abs(contributions(scenario, xs, devices, guided).sum(axis=1)) ** 2


def gain(scenario: Scenario, k: int, placement: Placement | Sequence[float], guided: bool = True) -> float:
    return float(gains(scenario, placement, [k], guided)[0])


def gain_upper_bound(scenario: Scenario, xs: Sequence[float] | Placement) -> np.ndarray:
    """``(sum_n 1/D_kn)^2``, attained only when all phases coincide."""
    if isinstance(xs, Placement):
        xs = xs.positions_m
    return (1.0 / distances(scenario, np.asarray(xs))).sum(axis=1) ** 2


def snr_scale(scenario: Scenario) -> float:
    """eta / (N sigma^2): multiply by ``P_k * G_k`` to get the receive SNR."""
    r = scenario.radio
    return r.eta_m2 / (scenario.num_pas * r.noise_power_w)


def rate(scenario: Scenario, gain_value, power_w):
    """Achievable uplink rate in bit/s (TDMA slot, power split over N antennas)."""
    power_w = np.asarray(power_w, dtype=float)
    if np.any(power_w < 0):
        raise ValueError("transmit power must be nonnegative")
    snr = power_w * snr_scale(scenario) * np.asarray(gain_value, dtype=float)
    out = scenario.radio.bandwidth_hz * np.log1p(snr) / np.log(2.0)
    return float(out) if out.ndim == 0 else out


def conventional_positions(scenario: Scenario) -> np.ndarray:
    """Fixed half-wavelength array centred above the middle of the area."""
    n = scenario.num_pas
    half = scenario.radio.wavelength_m / 2.0
    return scenario.area[0] / 2.0 + (np.arange(n) - (n - 1) / 2.0) * half
