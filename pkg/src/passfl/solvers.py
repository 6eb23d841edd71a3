"""Closed-form and bisection solvers for the three outer-loop blocks.

Each block is separable across devices once the other blocks are fixed:

* times: smallest communication time meeting the upload constraint
  (the rate-times-time product is increasing in time), plus the smallest
  computation time meeting energy and frequency limits;
* schedule: a box-constrained LP, solved coordinate-wise by sign of the cost;
* energies: every rate is increasing in its own energy, so the weighted
  sum is maximised at the upper corner of each device's box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import snr_scale
from .scenario import Scenario

TAU_LO = 1e-9
TAU_HI = 1e3
BISECT_XTOL = 1e-12
BISECT_MAXITER = 200
_LN2 = np.log(2.0)


class InfeasibleError(ValueError):
    """A scheduled device cannot meet its energy or rate constraint."""


class InfeasibleEnergyError(InfeasibleError):
    pass


class InfeasibleRateError(InfeasibleError):
    pass


@dataclass(frozen=True)
class TradeoffConfig:
    lambda_tradeoff: float
    theta: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.lambda_tradeoff < 1.0:
            raise ValueError(f"lambda out of (0,1): {self.lambda_tradeoff}")
        if self.theta is not None:
            th = np.asarray(self.theta, dtype=float)
            if np.any(th < 0) or not np.isclose(th.sum(), 1.0):
                raise ValueError("theta must be nonnegative and sum to one")


def bits_in_slot(scenario: Scenario, tau, e_cm, gains):
    """``tau * R(E/tau)``: bits deliverable in a slot of length ``tau`` with energy ``E``."""
    tau = np.asarray(tau, dtype=float)
    c = np.asarray(e_cm, dtype=float) * snr_scale(scenario) * np.asarray(gains, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(tau > 0, tau * scenario.radio.bandwidth_hz * np.log1p(c / np.where(tau > 0, tau, 1.0)) / _LN2, 0.0)
    return out


def max_deliverable_bits(scenario: Scenario, e_cm, gains):
    """Supremum of :func:`bits_in_slot` as the slot grows without bound."""
    c = np.asarray(e_cm, dtype=float) * snr_scale(scenario) * np.asarray(gains, dtype=float)
    return c * scenario.radio.bandwidth_hz / _LN2


def bisect_slot(scenario: Scenario, demand_bits, e_cm, gains,
                lo: float = TAU_LO, hi: float = TAU_HI,
                xtol: float = BISECT_XTOL, maxiter: int = BISECT_MAXITER) -> np.ndarray:
    """Vectorised bisection for ``tau * R(E/tau) = demand`` on ``[lo, hi]``.

    Returns the upper end of the final bracket, so the upload constraint
    holds at the returned time. Raises if the bracket holds no root.
    """
    demand = np.atleast_1d(np.asarray(demand_bits, dtype=float))
    e_cm = np.broadcast_to(np.asarray(e_cm, dtype=float), demand.shape)
    gains = np.broadcast_to(np.asarray(gains, dtype=float), demand.shape)
    lo_arr = np.full(demand.shape, lo)
    hi_arr = np.full(demand.shape, hi)
    if np.any(bits_in_slot(scenario, hi_arr, e_cm, gains) < demand):
        raise InfeasibleRateError("upload demand not reachable within the bisection bracket")
    done = bits_in_slot(scenario, lo_arr, e_cm, gains) >= demand
    hi_arr[done] = lo
    for _ in range(maxiter):
        width = hi_arr - lo_arr
        if np.all(width <= xtol):
            break
        mid = 0.5 * (lo_arr + hi_arr)
        ok = bits_in_slot(scenario, mid, e_cm, gains) >= demand
        hi_arr = np.where(ok, mid, hi_arr)
        lo_arr = np.where(ok, lo_arr, mid)
    return hi_arr


def min_compute_time(scenario: Scenario, mask, e_cm) -> np.ndarray:
    """Per-device lower bounds on the shared computation time (0 if unscheduled)."""
    mask = np.asarray(mask, dtype=float)
    w = scenario.workloads
    head = scenario.e_max - np.asarray(e_cm, dtype=float)
    on = mask > 0
    out = np.zeros_like(mask)
    if np.any(on & (head <= 0)):
        bad = np.flatnonzero(on & (head <= 0)).tolist()
        raise InfeasibleEnergyError(f"communication energy exhausts the budget of devices {bad}")
    out[on] = np.maximum(np.sqrt(scenario.kappa_eff * mask[on] * w[on] ** 3 / head[on]),
                         mask[on] * w[on] / scenario.f_max[on])
    return out


def solve_times(scenario: Scenario, mask, e_cm, gains) -> tuple[np.ndarray, float]:
    """Minimise ``tau_cp + sum_k s_k tau_k`` over the slot and compute times."""
    mask = np.asarray(mask, dtype=float)
    e_cm = np.asarray(e_cm, dtype=float)
    gains = np.asarray(gains, dtype=float)
    on = mask > 0
    tau_cm = np.zeros(scenario.num_devices)
    if np.any(on):
        if np.any(on & (gains <= 0)) or np.any(on & (e_cm <= 0)):
            bad = np.flatnonzero(on & ((gains <= 0) | (e_cm <= 0))).tolist()
            raise InfeasibleRateError(f"devices {bad} have zero gain or zero energy")
        tau_cm[on] = bisect_slot(scenario, scenario.upload_bits * mask[on], e_cm[on], gains[on])
    tau_cp = float(min_compute_time(scenario, mask, e_cm).max(initial=0.0))
    return tau_cm, tau_cp


def cap_power(scenario: Scenario, mask, e_cm, gains) -> tuple[np.ndarray, np.ndarray]:
    """Slots and energies that meet the upload exactly without exceeding the power cap.

    Where the slot for energy ``E`` would need more than ``P`` watts, the
    device transmits at ``P`` for ``D_b s / R(P)`` instead; that slot is
    longer but needs no more energy than ``E``.
    """
    mask = np.asarray(mask, dtype=float)
    e_cm = np.asarray(e_cm, dtype=float)
    tau, _ = solve_times(scenario, mask, e_cm, gains)
    on = mask > 0
    full = np.zeros_like(tau)
    if np.any(on):
        full[on] = _full_power_slot(scenario, scenario.upload_bits * mask[on],
                                      scenario.p_max[on], np.asarray(gains, dtype=float)[on])
    over = on & (e_cm > scenario.p_max * tau * (1 + 1e-15))
    tau = np.where(over, full, tau)
    e = np.where(over, np.minimum(e_cm, scenario.p_max * full), np.where(on, e_cm, 0.0))
    return tau, e


def _full_power_slot(scenario: Scenario, demand, power, gains) -> np.ndarray:
    rate = snr_scale(scenario) * power * gains
    per_sec = scenario.radio.bandwidth_hz * np.log1p(rate) / _LN2
    tau = demand / per_sec
    # closed form; nudge up by ulps where rounding leaves the upload short
    for _ in range(8):
        short = bits_in_slot(scenario, tau, power * tau, gains) < demand
        if not short.any():
            break
        tau = np.where(short, np.nextafter(tau, np.inf), tau)
    return tau


@dataclass(frozen=True)
class ScheduleSolution:
    relaxed: np.ndarray
    rounded: np.ndarray
    coeffs: np.ndarray
    upper: np.ndarray

    def relaxed_value(self) -> float:
        return float(np.dot(self.coeffs, self.relaxed))

    def rounded_value(self) -> float:
        return float(np.dot(self.coeffs, self.rounded))


def schedule_coefficients(scenario: Scenario, tau_cm, lam: float) -> np.ndarray:
    """LP cost per device: ``lam * (tau_k + |D_k|) - |D_k|``."""
    sizes = scenario.data_sizes
    return lam * (np.asarray(tau_cm, dtype=float) + sizes) - sizes


def schedule_upper_bounds(scenario: Scenario, tau_cm, tau_cp: float, e_cm, gains) -> np.ndarray:
    """Largest mask value each device's constraints allow."""
    tau_cm = np.asarray(tau_cm, dtype=float)
    e_cm = np.asarray(e_cm, dtype=float)
    w = scenario.workloads
    by_rate = bits_in_slot(scenario, tau_cm, e_cm, gains) / scenario.upload_bits
    head = np.maximum(scenario.e_max - e_cm, 0.0)
    by_energy = head * tau_cp**2 / (scenario.kappa_eff * w**3)
    by_freq = scenario.f_max * tau_cp / w
    return np.clip(np.minimum.reduce([np.ones_like(by_rate), by_rate, by_energy, by_freq]), 0.0, 1.0)


def solve_schedule(scenario: Scenario, tau_cm, tau_cp: float, e_cm, lam: float, gains,
                   threshold: float = 0.5) -> ScheduleSolution:
    """Relaxed scheduling LP over the box, then threshold rounding."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda out of (0,1): {lam}")
    coeffs = schedule_coefficients(scenario, tau_cm, lam)
    upper = schedule_upper_bounds(scenario, tau_cm, tau_cp, e_cm, gains)
    # zero cost ties go to the empty side
    relaxed = np.where(coeffs < 0, upper, 0.0)
    rounded = (relaxed >= threshold).astype(float)
    return ScheduleSolution(relaxed, rounded, coeffs, upper)


def uniform_theta(mask) -> np.ndarray:
    on = np.asarray(mask, dtype=float) > 0
    theta = np.zeros(len(on))
    if on.any():
        theta[on] = 1.0 / on.sum()
    return theta


def energy_upper_corner(scenario: Scenario, mask, tau_cm, tau_cp: float) -> np.ndarray:
    """Upper corner of each device's energy box (may be negative if infeasible)."""
    mask = np.asarray(mask, dtype=float)
    w = scenario.workloads
    by_power = scenario.p_max * np.asarray(tau_cm, dtype=float)
    if tau_cp > 0:
        comp = scenario.kappa_eff * mask * w**3 / tau_cp**2
    else:
        comp = np.where(mask > 0, np.inf, 0.0)
    return np.minimum(by_power, scenario.e_max - comp)


def solve_energies(scenario: Scenario, mask, tau_cm, tau_cp: float, theta=None,
                   gains=None) -> tuple[np.ndarray, np.ndarray]:
    """Communication energies maximising the weighted sum rate.

    Returns ``(e_cm, infeasible)``; ``infeasible`` flags scheduled devices
    whose box is empty. ``theta`` and ``gains`` do not move the optimum for
    positive weights and are only validated.
    """
    mask = np.asarray(mask, dtype=float)
    if theta is not None:
        th = np.asarray(theta, dtype=float)
        if np.any(th < 0):
            raise ValueError("theta must be nonnegative")
    corner = energy_upper_corner(scenario, mask, tau_cm, tau_cp)
    infeasible = (mask > 0) & (corner < 0)
    e_cm = np.clip(corner, 0.0, None)
    e_cm[infeasible] = 0.0
    ok = ~infeasible
    w = scenario.workloads
    if tau_cp > 0:
        total = e_cm + scenario.kappa_eff * mask * w**3 / tau_cp**2
        assert np.all(total[ok] <= scenario.e_max[ok] * (1 + 1e-12)), "energy budget violated"
    assert np.all(e_cm <= scenario.p_max * np.asarray(tau_cm) * (1 + 1e-12) + 1e-300), "power cap violated"
    return e_cm, infeasible


def slot_closed_form(scenario: Scenario, demand_bits, e_cm, gains) -> np.ndarray:
    """Closed-form root of ``tau * R(E/tau) = demand`` via the Lambert W function.

    With ``x = c E / tau`` the condition reads ``ln(1 + x) / x = a`` where
    ``a = demand ln2 / (B c E) < 1``; then ``1 + x = -W_{-1}(-a e^-a) / a``.
    Returns inf where the demand is out of reach.
    """
    from scipy.special import lambertw

    c = np.asarray(e_cm, dtype=float) * snr_scale(scenario) * np.asarray(gains, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.asarray(demand_bits, dtype=float) * _LN2 / (scenario.radio.bandwidth_hz * c)
        ok = (a > 0) & (a < 1)
        a_safe = np.where(ok, a, 0.5)
        u = -lambertw(-a_safe * np.exp(-a_safe), -1).real / a_safe
        tau = np.where(ok, c / (u - 1.0), np.inf)
    return np.where(np.asarray(demand_bits) <= 0, 0.0, tau)


def _latency_at(scenario: Scenario, mask, gains, t_cp: float, full) -> float:
    """Round latency when computation takes ``t_cp`` and devices spend their leftover budget."""
    on = mask > 0
    head = scenario.e_max - scenario.kappa_eff * mask * scenario.workloads**3 / t_cp**2
    if np.any(on & (head <= 0)):
        return np.inf
    tau = slot_closed_form(scenario, scenario.upload_bits * mask, np.where(on, head, 1.0), gains)
    tau = np.where(head > scenario.p_max * tau, full, tau)
    return t_cp + float(np.dot(mask, np.where(on, tau, 0.0)))


def polish_energies(scenario: Scenario, mask, gains, samples: int = 48):
    """Latency-minimising slots and energies for a fixed binary schedule.

    For a computation time ``T`` each device's best choice is to spend its
    whole remaining budget ``E_max - xi w^3 / T^2`` (capped by power), so
    the round latency is a function of ``T`` alone. It is minimised by a
    log-spaced scan followed by a bounded scalar search around the best
    sample. Returns ``(tau_cm, e_cm, tau_cp)`` or None if no ``T`` works.
    """
    from scipy.optimize import minimize_scalar

    mask = np.asarray(mask, dtype=float)
    gains = np.asarray(gains, dtype=float)
    on = mask > 0
    if not on.any():
        return None
    w = scenario.workloads[on]
    e_need = scenario.upload_bits * _LN2 / (scenario.radio.bandwidth_hz * snr_scale(scenario)
                                            * gains[on] * 1.0)
    room = scenario.e_max[on] - e_need
    if np.any(room <= 0):
        return None
    t_lo = float(max(np.max(w / scenario.f_max[on]),
                     np.max(np.sqrt(scenario.kappa_eff * w**3 / room)) * (1 + 1e-9)))
    # beyond the point where every device can afford full power, latency only grows
    full = _full_power_slot(scenario, scenario.upload_bits * mask[on], scenario.p_max[on], gains[on])
    slack = scenario.e_max[on] - scenario.p_max[on] * full
    t_sat = np.where(slack > 0, np.sqrt(scenario.kappa_eff * w**3 / np.maximum(slack, 1e-300)), np.inf)
    t_hi = float(max(t_lo * 4, np.max(np.where(np.isfinite(t_sat), t_sat, t_lo * 4)) * 1.01))
    full_all = np.zeros(scenario.num_devices)
    full_all[on] = full
    f = lambda t: _latency_at(scenario, mask, gains, t, full_all)
    ts = np.geomspace(t_lo, t_hi, samples)
    vals = np.array([f(t) for t in ts])
    i = int(np.argmin(vals))
    if not np.isfinite(vals[i]):
        return None
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, samples - 1)]
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * hi})
    t_best = float(res.x) if res.fun < vals[i] else float(ts[i])
    # exact slots by bisection at the chosen computation time
    head = scenario.e_max - scenario.kappa_eff * mask * scenario.workloads**3 / t_best**2
    e = np.where(on, head, 0.0)
    reach = bits_in_slot(scenario, np.full(len(e), TAU_HI), e, gains)
    if np.any(on & ((e <= 0) | (reach < scenario.upload_bits * mask))):
        return None
    tau, e = cap_power(scenario, mask, e, gains)
    tau_cp = float(min_compute_time(scenario, mask, e).max())
    return tau, e, tau_cp
