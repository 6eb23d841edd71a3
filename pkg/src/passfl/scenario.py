"""Scenario configuration: radio constants, devices, learning constants.

All randomness in the package is drawn from :func:`make_rng`, a PCG64
generator (numpy's default bit generator) keyed by an integer seed and an
optional stream tag, so independent consumers of one seed never share draws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# stream tags for make_rng
STREAM_SCENARIO = 0
STREAM_DATA = 1
STREAM_PARTITION = 2
STREAM_TRAIN = 3
STREAM_MASKS = 4


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""


def make_rng(seed: int, stream: int = STREAM_SCENARIO, *tags: int) -> np.random.Generator:
    """Generator keyed by ``(seed, stream, *tags)``; extra tags index sub-streams."""
    if seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {seed}")
    key = [int(seed), int(stream), *(int(t) for t in tags)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class RadioConfig:
    carrier_freq_hz: float = 28e9
    bandwidth_hz: float = 1e6
    noise_psd_dbm_per_hz: float = -174.0
    n_eff: float = 1.44

    def __post_init__(self):
        if not self.carrier_freq_hz > 0:
            raise ConfigError(f"carrier_freq_hz must be > 0, got {self.carrier_freq_hz}")
        if not self.bandwidth_hz > 0:
            raise ConfigError(f"bandwidth_hz must be > 0, got {self.bandwidth_hz}")
        if not self.n_eff >= 1:
            raise ConfigError(f"n_eff must be >= 1, got {self.n_eff}")
        if not math.isfinite(self.noise_psd_dbm_per_hz):
            raise ConfigError("noise_psd_dbm_per_hz must be finite")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def guided_wavelength_m(self) -> float:
        return self.wavelength_m / self.n_eff

    @property
    def eta_m2(self) -> float:
        return SPEED_OF_LIGHT**2 / (16.0 * math.pi**2 * self.carrier_freq_hz**2)

    @property
    def kappa(self) -> float:
        return 2.0 * math.pi / self.wavelength_m

    @property
    def kappa_g(self) -> float:
        return 2.0 * math.pi / self.guided_wavelength_m

    @property
    def noise_power_w(self) -> float:
        return 10.0 ** ((self.noise_psd_dbm_per_hz - 30.0) / 10.0) * self.bandwidth_hz

    def raw(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def derive_radio(carrier_freq_hz: float = 28e9, bandwidth_hz: float = 1e6,
                 noise_psd_dbm_per_hz: float = -174.0, n_eff: float = 1.44) -> RadioConfig:
    """Build a :class:`RadioConfig`; derived constants are exposed as properties.

    >>> r = derive_radio(28e9)
    >>> round(r.wavelength_m, 6)
    0.010707
    """
    return RadioConfig(float(carrier_freq_hz), float(bandwidth_hz),
                       float(noise_psd_dbm_per_hz), float(n_eff))


@dataclass(frozen=True)
class DeviceProfile:
    position: tuple[float, float]
    data_size_samples: int = 5000
    cycles_per_sample: float = 1e6
    e_max_j: float = 0.1
    p_max_w: float = 0.2
    f_max_hz: float = 1.8e9

    def __post_init__(self):
        if self.data_size_samples < 1:
            raise ConfigError(f"data_size_samples must be >= 1, got {self.data_size_samples}")
        for name in ("cycles_per_sample", "e_max_j", "p_max_w", "f_max_hz"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")

    @property
    def workload(self) -> float:
        """CPU cycles for one pass over the local data."""
        return self.cycles_per_sample * self.data_size_samples


@dataclass(frozen=True)
class Scenario:
    area: tuple[float, float]
    pa_height_m: float
    num_pas: int
    devices: tuple[DeviceProfile, ...]
    radio: RadioConfig = field(default_factory=RadioConfig)
    upload_bits: float = 1e6
    kappa_eff: float = 1e-28
    min_spacing_m: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "area", tuple(float(a) for a in self.area))
        if self.min_spacing_m is None:
            object.__setattr__(self, "min_spacing_m", self.radio.wavelength_m / 2.0)
        dx, dy = self.area
        if not (dx > 0 and dy > 0):
            raise ConfigError(f"area must be positive, got {self.area}")
        if not self.pa_height_m > 0:
            raise ConfigError(f"pa_height_m must be > 0, got {self.pa_height_m}")
        if self.num_pas < 1:
            raise ConfigError(f"num_pas must be >= 1, got {self.num_pas}")
        if len(self.devices) < 1:
            raise ConfigError("scenario needs at least one device")
        if not self.min_spacing_m > 0:
            raise ConfigError(f"min_spacing_m must be > 0, got {self.min_spacing_m}")
        if not self.num_pas * self.min_spacing_m < dx:
            raise ConfigError("num_pas * min_spacing_m must be below the waveguide length")
        if not self.upload_bits > 0:
            raise ConfigError(f"upload_bits must be > 0, got {self.upload_bits}")
        if not self.kappa_eff > 0:
            raise ConfigError(f"kappa_eff must be > 0, got {self.kappa_eff}")
        for k, dev in enumerate(self.devices):
            x, y = dev.position
            if not (0.0 <= x <= dx and -dy / 2 <= y <= dy / 2):
                raise ConfigError(f"device {k} position {dev.position} outside the area")

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    @property
    def waveguide_length_m(self) -> float:
        # grid domain [0, L1] is taken as the full waveguide span [0, D_x]
        return self.area[0]

    @property
    def feed_position(self) -> tuple[float, float, float]:
        return (0.0, 0.0, self.pa_height_m)

    # vectorised views -------------------------------------------------
    @property
    def xs(self) -> np.ndarray:
        return np.array([d.position[0] for d in self.devices])

    @property
    def ys(self) -> np.ndarray:
        return np.array([d.position[1] for d in self.devices])

    @property
    def data_sizes(self) -> np.ndarray:
        return np.array([d.data_size_samples for d in self.devices], dtype=float)

    @property
    def workloads(self) -> np.ndarray:
        return np.array([d.workload for d in self.devices])

    @property
    def e_max(self) -> np.ndarray:
        return np.array([d.e_max_j for d in self.devices])

    @property
    def p_max(self) -> np.ndarray:
        return np.array([d.p_max_w for d in self.devices])

    @property
    def f_max(self) -> np.ndarray:
        return np.array([d.f_max_hz for d in self.devices])

    @property
    def total_data(self) -> float:
        return float(self.data_sizes.sum())

    def with_devices(self, **changes) -> "Scenario":
        """Copy with every device's profile fields replaced by ``changes``."""
        return replace(self, devices=tuple(replace(d, **changes) for d in self.devices))


@dataclass(frozen=True)
class ScenarioTemplate:
    """Everything needed to draw a random :class:`Scenario` except positions."""

    area: tuple[float, float] = (30.0, 20.0)
    pa_height_m: float = 3.0
    num_pas: int = 4
    radio: RadioConfig = field(default_factory=RadioConfig)
    upload_bits: float = 1e6
    kappa_eff: float = 1e-28
    min_spacing_m: float | None = None
    data_size_samples: int = 5000
    cycles_per_sample: float = 1e6
    e_max_j: float = 0.1
    p_max_w: float = 0.2
    f_max_hz: float = 1.8e9


def default_template(**overrides) -> ScenarioTemplate:
    """Template for a 30 m x 20 m hall at 28 GHz with a 3 m high waveguide."""
    return replace(ScenarioTemplate(), **overrides)


def generate_scenario(seed: int, num_devices: int,
                      template: ScenarioTemplate | None = None) -> Scenario:
    if num_devices <= 0:
        raise ConfigError(f"number of devices must be positive, got {num_devices}")
    t = template or default_template()
    rng = make_rng(seed, STREAM_SCENARIO)
    dx, dy = t.area
    xs = rng.uniform(0.0, dx, size=num_devices)
    ys = rng.uniform(-dy / 2, dy / 2, size=num_devices)
    devices = tuple(
        DeviceProfile((float(x), float(y)), t.data_size_samples, t.cycles_per_sample,
                      t.e_max_j, t.p_max_w, t.f_max_hz)
        for x, y in zip(xs, ys)
    )
    return Scenario(t.area, t.pa_height_m, t.num_pas, devices, t.radio, t.upload_bits,
                    t.kappa_eff, t.min_spacing_m)


@dataclass(frozen=True)
class LearnParams:
    lipschitz: float = 10.0
    pl_delta: float = 1.0
    local_steps: int = 5
    grad_bound: float = 1.0
    total_data: float = 60000.0

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise ConfigError(f"lipschitz must be > 0, got {self.lipschitz}")
        if not 0 < self.pl_delta <= self.lipschitz:
            raise ConfigError("pl_delta must satisfy 0 < pl_delta <= lipschitz")
        if self.local_steps < 1:
            raise ConfigError(f"local_steps must be >= 1, got {self.local_steps}")
        if not self.grad_bound > 0:
            raise ConfigError(f"grad_bound must be > 0, got {self.grad_bound}")
        if not self.total_data >= 1:
            raise ConfigError(f"total_data must be >= 1, got {self.total_data}")

    @property
    def learn_rate(self) -> float:
        return 1.0 / self.lipschitz

    @property
    def contraction(self) -> float:
        """1 - delta * steps / L; only meaningful when inside (0, 1)."""
        return 1.0 - self.pl_delta * self.local_steps / self.lipschitz


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------

_RADIO_KEYS = {f.name for f in fields(RadioConfig)}
_DEVICE_KEYS = {f.name for f in fields(DeviceProfile)}
_DEVICE_DEFAULT_KEYS = _DEVICE_KEYS - {"position"}
_LEARN_KEYS = {f.name for f in fields(LearnParams)}
_TOP_KEYS = {
    "area_m", "pa_height_m", "num_pas", "radio", "upload_bits", "kappa_eff",
    "min_spacing_m", "num_devices", "device_defaults", "devices", "learn", "grid_points",
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration file: a template plus optional explicit devices."""

    template: ScenarioTemplate
    num_devices: int = 12
    devices: tuple[DeviceProfile, ...] | None = None
    learn: LearnParams | None = None
    grid_points: int = 2001

    def scenario(self, seed: int = 0) -> Scenario:
        if self.devices is None:
            return generate_scenario(seed, self.num_devices, self.template)
        t = self.template
        return Scenario(t.area, t.pa_height_m, t.num_pas, self.devices, t.radio,
                        t.upload_bits, t.kappa_eff, t.min_spacing_m)


def _check_keys(obj: Mapping, allowed: set[str], where: str) -> None:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}{key}'" if where else f"unknown key '{key}'")


def parse_config(data: Mapping[str, Any]) -> RunConfig:
    _check_keys(data, _TOP_KEYS, "")
    radio_raw = data.get("radio", {})
    _check_keys(radio_raw, _RADIO_KEYS, "radio.")
    dd = data.get("device_defaults", {})
    _check_keys(dd, _DEVICE_DEFAULT_KEYS, "device_defaults.")
    try:
        radio = derive_radio(**radio_raw)
        tkw: dict[str, Any] = {"radio": radio}
        if "area_m" in data:
            area = data["area_m"]
            if len(area) != 2:
                raise ConfigError("area_m must have two entries")
            tkw["area"] = (float(area[0]), float(area[1]))
        for key in ("pa_height_m", "upload_bits", "kappa_eff", "min_spacing_m"):
            if key in data and data[key] is not None:
                tkw[key] = float(data[key])
        if "num_pas" in data:
            tkw["num_pas"] = int(data["num_pas"])
        for key, val in dd.items():
            tkw[key] = int(val) if key == "data_size_samples" else float(val)
        template = default_template(**tkw)

        devices = None
        if "devices" in data:
            devs = []
            for i, raw in enumerate(data["devices"]):
                _check_keys(raw, _DEVICE_KEYS, f"devices[{i}].")
                if "position" not in raw:
                    raise ConfigError(f"devices[{i}] is missing 'position'")
                kw = {k: getattr(template, k) for k in _DEVICE_DEFAULT_KEYS}
                kw.update({k: v for k, v in raw.items() if k != "position"})
                kw["data_size_samples"] = int(kw["data_size_samples"])
                pos = tuple(float(p) for p in raw["position"])
                devs.append(DeviceProfile(pos, **kw))
            devices = tuple(devs)

        learn = None
        if "learn" in data:
            _check_keys(data["learn"], _LEARN_KEYS, "learn.")
            learn = LearnParams(**data["learn"])

        num_devices = int(data.get("num_devices", len(devices) if devices else 12))
        if num_devices <= 0:
            raise ConfigError("num_devices must be positive")
        grid_points = int(data.get("grid_points", 2001))
        if grid_points < 2:
            raise ConfigError("grid_points must be >= 2")
        cfg = RunConfig(template, num_devices, devices, learn, grid_points)
        # validate eagerly so errors surface at load time
        cfg.scenario(0)
        return cfg
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)


def scenario_to_dict(scenario: Scenario, grid_points: int = 2001) -> dict:
    """Serialise a scenario in the configuration-file format (explicit devices)."""
    return {
        "area_m": list(scenario.area),
        "pa_height_m": scenario.pa_height_m,
        "num_pas": scenario.num_pas,
        "radio": scenario.radio.raw(),
        "upload_bits": scenario.upload_bits,
        "kappa_eff": scenario.kappa_eff,
        "min_spacing_m": scenario.min_spacing_m,
        "num_devices": scenario.num_devices,
        "grid_points": grid_points,
        "devices": [
            {
                "position": list(d.position),
                "data_size_samples": d.data_size_samples,
                "cycles_per_sample": d.cycles_per_sample,
                "e_max_j": d.e_max_j,
                "p_max_w": d.p_max_w,
                "f_max_hz": d.f_max_hz,
            }
            for d in scenario.devices
        ],
    }


def scenario_from_dict(data: Mapping[str, Any]) -> Scenario:
    return parse_config(data).scenario()


def devices_with_sizes(scenario: Scenario, sizes: Sequence[int]) -> Scenario:
    """Copy of ``scenario`` with per-device data sizes replaced."""
    if len(sizes) != scenario.num_devices:
        raise ConfigError("one data size per device is required")
    devs = tuple(replace(d, data_size_samples=int(n)) for d, n in zip(scenario.devices, sizes))
    return replace(scenario, devices=devs)
