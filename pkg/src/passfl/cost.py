"""Per-round latency and energy accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


@dataclass(frozen=True)
class ScheduleAllocation:
    """Decision bundle of one round.

    ``mask`` may be relaxed (values in [0, 1]) while the optimiser runs.
    Unscheduled devices carry zero communication time, energy and frequency.
    """

    mask: np.ndarray
    tau_cm: np.ndarray
    tau_cp: float
    e_cm: np.ndarray

    def __post_init__(self):
        for name in ("mask", "tau_cm", "e_cm"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tau_cp", float(self.tau_cp))

    def frequencies(self, scenario: Scenario) -> np.ndarray:
        if self.tau_cp <= 0:
            return np.zeros_like(self.mask)
        return self.mask * scenario.workloads / self.tau_cp

    @property
    def powers(self) -> np.ndarray:
        out = np.zeros_like(self.e_cm)
        pos = self.tau_cm > 0
        out[pos] = self.e_cm[pos] / self.tau_cm[pos]
        return out


def comp_latency(cycles_per_sample: float, data_size: float, freq_hz: float) -> float:
    if freq_hz <= 0:
        raise ValueError(f"CPU frequency must be positive, got {freq_hz}")
    return cycles_per_sample * data_size / freq_hz


def round_latency(alloc: ScheduleAllocation) -> tuple[float, float, float]:
    """Return ``(tau_t, total communication time, computation time)``."""
    tau_cm_total = float(np.dot(alloc.mask, alloc.tau_cm))
    return tau_cm_total + alloc.tau_cp, tau_cm_total, alloc.tau_cp


def energies(alloc: ScheduleAllocation, scenario: Scenario, k: int) -> tuple[float, float, float]:
    """Computation, communication and total energy of device ``k``."""
    f_k = alloc.frequencies(scenario)[k]
    e_cp = scenario.kappa_eff * scenario.devices[k].workload * f_k**2
    e_cm = float(alloc.powers[k] * alloc.tau_cm[k])
    return float(e_cp), e_cm, float(e_cp) + e_cm


def scheduled_data(mask, scenario: Scenario) -> float:
    return float(np.dot(mask, scenario.data_sizes))


def objective_tilde(alloc: ScheduleAllocation, lam: float, scenario: Scenario) -> float:
    """Scalarised objective with the constant (1 - lam)|D| dropped."""
    sizes = scenario.data_sizes
    return float(lam * (alloc.tau_cp + np.dot(alloc.mask, alloc.tau_cm + sizes))
                 - np.dot(alloc.mask, sizes))


def objective(alloc: ScheduleAllocation, lam: float, scenario: Scenario) -> float:
    """``lam * tau_t + (1 - lam) * F_learn``."""
    return objective_tilde(alloc, lam, scenario) + (1.0 - lam) * scenario.total_data
