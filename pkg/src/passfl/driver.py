"""Two-tier optimisation of one round, baselines and the lambda sweep.

The outer tier cycles through the time, schedule and energy blocks; the
inner tier re-places the pinching antennas. Intermediate iterates keep the
relaxed mask and may violate the power cap (the time block does not see
it), so every iteration is completed into a binary, fully feasible
allocation and the best completed allocation is returned.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import channel, solvers
from .channel import Placement
from .cost import ScheduleAllocation, objective, objective_tilde, round_latency
from .placement import (DEFAULT_GRID_POINTS, gauss_seidel, place_for_user, surrogate_weights,
                        uniform_placement)
from .scenario import Scenario

PIPELINES = ("fedpass", "pass_uniform", "conventional", "perfect")
MODES = ("per_user", "shared")
T_OUTER = 30
EPS_OUTER = 1e-4
_MONO_TOL = 1e-9


class InternalAssertionError(AssertionError):
    """An optimiser invariant failed (a bug, not bad input)."""


@dataclass
class RoundOutcome:
    lam: float
    pipeline: str
    mode: str
    mask: np.ndarray
    allocation: ScheduleAllocation
    placements: dict[str, Placement]
    gains: np.ndarray
    rates: np.ndarray
    tau_t: float
    tau_cm_total: float
    tau_cp: float
    f_learn: float
    objective: float          # scalarised objective without its constant term
    scalarized: float         # lam * tau_t + (1 - lam) * F_learn
    frequencies: np.ndarray | None = None
    iterations: int = 0
    converged: bool = True
    trace: list[dict] = field(default_factory=list)

    @property
    def guided(self) -> bool:
        return self.pipeline != "conventional"

    @property
    def scheduled_count(self) -> int:
        return int(self.mask.sum())

    def to_dict(self) -> dict:
        a = self.allocation
        return {
            "lambda": self.lam,
            "pipeline": self.pipeline,
            "mode": self.mode,
            "mask": [int(v) for v in self.mask],
            "tau_t_s": self.tau_t,
            "tau_cm_total_s": self.tau_cm_total,
            "tau_cp_s": self.tau_cp,
            "f_learn_samples": self.f_learn,
            "objective": self.objective,
            "scalarized_objective": self.scalarized,
            "tau_cm_s": a.tau_cm.tolist(),
            "e_cm_j": a.e_cm.tolist(),
            "powers_w": a.powers.tolist(),
            "frequencies_hz": None if self.frequencies is None else self.frequencies.tolist(),
            "gains": self.gains.tolist(),
            "rates_bps": self.rates.tolist(),
            "placements": {k: list(p.positions_m) for k, p in self.placements.items()},
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": self.trace,
        }


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PASSFL_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# antenna state
# ---------------------------------------------------------------------------

class _Antennas:
    """Current placements and the gains they induce."""

    def __init__(self, scenario: Scenario, pipeline: str, mode: str, grid_points: int,
                 cache: dict | None, start: Placement | None = None):
        self.scenario = scenario
        self.pipeline = pipeline
        self.mode = mode
        self.grid_points = grid_points
        self.cache = {} if cache is None else cache
        self.guided = pipeline != "conventional"
        if pipeline == "conventional":
            self.shared = Placement.from_array(channel.conventional_positions(scenario))
        elif start is not None:
            self.shared = Placement.from_array(start.positions_m).validate(scenario)
        else:
            self.shared = uniform_placement(scenario, grid_points)
        self.start = self.shared
        self.per_user: dict[int, Placement] = {}
        self.per_user_mode = pipeline == "fedpass" and mode == "per_user"

    def gains(self) -> np.ndarray:
        g = channel.gains(self.scenario, self.shared, guided=self.guided)
        for k, p in self.per_user.items():
            g[k] = channel.gain(self.scenario, k, p)
        return g

    def update(self, mask, theta, powers) -> None:
        if self.pipeline != "fedpass":
            return
        if self.per_user_mode:
            for k in np.flatnonzero(np.asarray(mask) > 0):
                key = ("user", int(k), self.grid_points, self.start.positions_m)
                if key not in self.cache:
                    self.cache[key] = place_for_user(self.scenario, int(k), self.grid_points,
                                                     self.start).placement
                self.per_user[int(k)] = self.cache[key]
            return
        w = surrogate_weights(self.scenario, theta, powers)
        if np.any(w > 0):
            self.shared = gauss_seidel(self.scenario, self.shared, w, self.grid_points).placement

    def placements(self, mask) -> dict[str, Placement]:
        if self.per_user_mode:
            return {str(k): self.per_user.get(int(k), self.shared)
                    for k in np.flatnonzero(np.asarray(mask) > 0)}
        return {"shared": self.shared}


# ---------------------------------------------------------------------------
# completion and audit
# ---------------------------------------------------------------------------

def _servable(scenario: Scenario, mask, e_cm, gains) -> np.ndarray:
    """Devices whose energy leaves room for computation and reaches the upload size."""
    e_cm = np.asarray(e_cm, dtype=float)
    reach = solvers.max_deliverable_bits(scenario, e_cm, gains)
    probe = solvers.bits_in_slot(scenario, np.full_like(e_cm, solvers.TAU_HI), e_cm, gains)
    return ((np.asarray(mask) > 0) & (e_cm > 0) & (e_cm < scenario.e_max)
            & (np.asarray(gains) > 0) & (reach > scenario.upload_bits * np.asarray(mask))
            & (probe >= scenario.upload_bits * np.asarray(mask)))


def _complete(scenario: Scenario, relaxed, e_cm, gains, lam: float,
              polish: bool = True) -> tuple[np.ndarray, ScheduleAllocation]:
    mask = (np.asarray(relaxed) >= 0.5).astype(float)
    mask = mask * _servable(scenario, mask, e_cm, gains)
    tau_cm, e = solvers.cap_power(scenario, mask, np.where(mask > 0, e_cm, 0.0), gains)
    tau_cp = float(solvers.min_compute_time(scenario, mask, e).max(initial=0.0))
    alloc = ScheduleAllocation(mask, tau_cm * mask, tau_cp, e * mask)
    if polish and np.any(mask > 0):
        better = solvers.polish_energies(scenario, mask, gains)
        if better is not None:
            cand = ScheduleAllocation(mask, better[0] * mask, better[2], better[1] * mask)
            if round_latency(cand)[0] < round_latency(alloc)[0]:
                alloc = cand
    return mask, alloc


def _build_outcome(scenario, lam, pipeline, mode, mask, alloc, ants_placements, gains_vec) -> RoundOutcome:
    tau_t, tau_cm_total, tau_cp = round_latency(alloc)
    powers = alloc.powers
    rates = np.where(mask > 0, channel.rate(scenario, gains_vec, powers), 0.0)
    f_learn = float(scenario.total_data - np.dot(mask, scenario.data_sizes))
    return RoundOutcome(lam, pipeline, mode, mask, alloc, ants_placements, np.asarray(gains_vec),
                        np.asarray(rates), tau_t, tau_cm_total, tau_cp, f_learn,
                        objective_tilde(alloc, lam, scenario), objective(alloc, lam, scenario),
                        alloc.frequencies(scenario))


def _audit_gain(scenario: Scenario, k: int, xs: Sequence[float], guided: bool) -> float:
    dev = scenario.devices[k]
    r = scenario.radio
    total = 0j
    for x in xs:
        dist = math.sqrt((dev.position[0] - x) ** 2 + dev.position[1] ** 2 + scenario.pa_height_m**2)
        ph = 2 * math.pi / r.wavelength_m * dist
        if guided:
            ph += 2 * math.pi * r.n_eff / r.wavelength_m * x
        total += complex(math.cos(ph), -math.sin(ph)) / dist
    return abs(total) ** 2


def audit(outcome: RoundOutcome, scenario: Scenario, rtol: float = 1e-9) -> list[str]:
    """Re-check every round constraint from raw scenario data; return violations."""
    bad = []
    a = outcome.allocation
    r = scenario.radio
    snr_unit = r.eta_m2 / (scenario.num_pas * r.noise_power_w)
    if not np.all(np.isin(a.mask, (0.0, 1.0))):
        bad.append("mask not binary")
    if a.tau_cp < 0 or np.any(a.tau_cm < 0):
        bad.append("negative time")
    for label, p in outcome.placements.items():
        xs = sorted(p.positions_m)
        if len(xs) != scenario.num_pas:
            bad.append(f"placement {label}: wrong antenna count")
        if xs and (xs[0] < 0 or xs[-1] > scenario.area[0]):
            bad.append(f"placement {label}: outside waveguide")
        for a_, b_ in zip(xs, xs[1:]):
            if b_ - a_ < scenario.min_spacing_m * (1 - rtol):
                bad.append(f"placement {label}: spacing {b_ - a_:.3g} m")
    for k, dev in enumerate(scenario.devices):
        s = a.mask[k]
        if s == 0:
            if a.tau_cm[k] != 0 or a.e_cm[k] != 0:
                bad.append(f"device {k}: unscheduled but holds time or energy")
            continue
        p = outcome.placements.get(str(k), outcome.placements.get("shared"))
        if p is None:
            bad.append(f"device {k}: no placement")
            continue
        g = _audit_gain(scenario, k, p.positions_m, outcome.guided)
        tau, e = a.tau_cm[k], a.e_cm[k]
        if tau <= 0:
            bad.append(f"device {k}: zero slot")
            continue
        bits = tau * r.bandwidth_hz * math.log2(1 + e / tau * snr_unit * g)
        if bits < scenario.upload_bits * (1 - rtol):
            bad.append(f"device {k}: upload {bits:.6g} < {scenario.upload_bits:.6g} bits")
        if e < 0 or e > dev.p_max_w * tau * (1 + rtol):
            bad.append(f"device {k}: power {e / tau:.6g} W above cap")
        if a.tau_cp <= 0:
            bad.append(f"device {k}: zero computation time")
            continue
        freq = dev.workload / a.tau_cp
        if freq > dev.f_max_hz * (1 + rtol):
            bad.append(f"device {k}: frequency {freq:.6g} Hz above cap")
        e_tot = e + scenario.kappa_eff * dev.workload * freq**2
        if e_tot > dev.e_max_j * (1 + rtol):
            bad.append(f"device {k}: energy {e_tot:.6g} J above budget")
    return bad


def _check(outcome: RoundOutcome, scenario: Scenario) -> RoundOutcome:
    if not math.isfinite(outcome.objective):
        raise InternalAssertionError("non-finite objective")
    problems = audit(outcome, scenario)
    if problems:
        raise InternalAssertionError("infeasible outcome: " + "; ".join(problems))
    return outcome


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def _empty(scenario: Scenario, lam: float, pipeline: str, mode: str, ants: _Antennas) -> RoundOutcome:
    K = scenario.num_devices
    mask = np.zeros(K)
    alloc = ScheduleAllocation(mask, np.zeros(K), 0.0, np.zeros(K))
    return _build_outcome(scenario, lam, pipeline, mode, mask, alloc, ants.placements(mask), ants.gains())


def _two_tier(scenario: Scenario, lam: float, pipeline: str, mode: str, grid_points: int,
              max_outer: int, eps_outer: float, cache: dict | None,
              start: Placement | None = None) -> RoundOutcome:
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda out of (0,1): {lam}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    K = scenario.num_devices
    ants = _Antennas(scenario, pipeline, mode, grid_points, cache, start)
    G = ants.gains()

    # start at the power-capped corner of the energy box, all devices on
    full_rate = channel.rate(scenario, G, scenario.p_max)
    with np.errstate(divide="ignore"):
        tau0 = np.where(full_rate > 0, scenario.upload_bits / np.where(full_rate > 0, full_rate, 1), np.inf)
    E = np.where(np.isfinite(tau0), scenario.p_max * tau0, 0.0)
    s = np.ones(K)
    s = s * _servable(scenario, s, E, G)
    E = np.where(s > 0, E, 0.0)

    best: RoundOutcome | None = None
    prev_value = None
    trace: list[dict] = []
    if np.any(s > 0):
        # the starting point itself is a candidate, so placement can only help
        mask, alloc = _complete(scenario, s, E, G, lam)
        best = _build_outcome(scenario, lam, pipeline, mode, mask, alloc, ants.placements(mask), G)
        trace.append({"iteration": 0, "scheduled": int(mask.sum()), "tau_t_s": best.tau_t,
                      "f_learn_samples": best.f_learn, "objective": best.objective,
                      "relaxed_objective": best.objective})
    prev_tau = None
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        s = s * _servable(scenario, s, E, G)
        E = np.where(s > 0, E, 0.0)
        if not np.any(s > 0):
            break
        # Outer-1: times
        tau, tcp = solvers.solve_times(scenario, s, E, G)
        if prev_tau is not None:
            prev_ok = solvers.bits_in_slot(scenario, prev_tau[0], E, G) >= scenario.upload_bits * s * (1 - 1e-12)
            if np.all(prev_ok[s > 0]) and prev_tau[1] >= tcp:
                before = objective_tilde(ScheduleAllocation(s, prev_tau[0], prev_tau[1], E), lam, scenario)
                after = objective_tilde(ScheduleAllocation(s, tau, tcp, E), lam, scenario)
                if after > before + _MONO_TOL * max(1.0, abs(before)):
                    raise InternalAssertionError("time block increased the objective")
        # Outer-2: schedule
        before = objective_tilde(ScheduleAllocation(s, tau, tcp, E), lam, scenario)
        sol = solvers.solve_schedule(scenario, tau, tcp, E, lam, G)
        after = objective_tilde(ScheduleAllocation(sol.relaxed, tau, tcp, E), lam, scenario)
        if after > before + _MONO_TOL * max(1.0, abs(before)):
            raise InternalAssertionError("schedule block increased the objective")
        s = sol.relaxed
        # Outer-3 / Outer-4: weights and energies
        theta = solvers.uniform_theta(s)
        E, infeasible = solvers.solve_energies(scenario, s, tau, tcp, theta, G)
        s = np.where(infeasible, 0.0, s)
        E = np.where(s > 0, E, 0.0)
        tau = np.where(s > 0, tau, 0.0)
        prev_tau = (tau, tcp)
        # inner tier: antennas
        powers = np.divide(E, tau, out=np.zeros(K), where=tau > 0)
        ants.update(s, theta, powers)
        G = ants.gains()

        mask, alloc = _complete(scenario, s, E, G, lam)
        cand = _build_outcome(scenario, lam, pipeline, mode, mask, alloc, ants.placements(mask), G)
        trace.append({"iteration": it, "scheduled": int(mask.sum()), "tau_t_s": cand.tau_t,
                      "f_learn_samples": cand.f_learn, "objective": cand.objective,
                      "relaxed_objective": after})
        if best is None or cand.scalarized < best.scalarized:
            best = cand
        if prev_value is not None and abs(cand.scalarized - prev_value) <= eps_outer * abs(prev_value):
            converged = True
            break
        prev_value = cand.scalarized

    if best is None:
        best = _empty(scenario, lam, pipeline, mode, ants)
        converged = True
    best.iterations = it
    best.converged = converged
    best.trace = trace
    return _check(best, scenario)


def optimize_round(scenario: Scenario, lam: float, mode: str = "per_user",
                   grid_points: int = DEFAULT_GRID_POINTS, max_outer: int = T_OUTER,
                   eps_outer: float = EPS_OUTER, cache: dict | None = None,
                   start: Placement | None = None) -> RoundOutcome:
    """Optimise schedule, times, energies and antenna positions for one round.

    ``start`` replaces the uniform initial placement (used for restarts).
    """
    return _two_tier(scenario, lam, "fedpass", mode, grid_points, max_outer, eps_outer, cache, start)


def _perfect(scenario: Scenario, lam: float, grid_points: int, mask=None) -> RoundOutcome:
    K = scenario.num_devices
    mask = np.ones(K) if mask is None else np.asarray(mask, dtype=float)
    tau_cp = float(solvers.min_compute_time(scenario, mask, np.zeros(K)).max())
    alloc = ScheduleAllocation(mask, np.zeros(K), tau_cp, np.zeros(K))
    out = _build_outcome(scenario, lam, "perfect", "shared", mask, alloc,
                         {"shared": uniform_placement(scenario, grid_points)},
                         channel.gains(scenario, uniform_placement(scenario, grid_points)))
    out.rates = np.full(K, np.inf)
    return out


def baseline_round(scenario: Scenario, lam: float, kind: str,
                   grid_points: int = DEFAULT_GRID_POINTS, max_outer: int = T_OUTER,
                   eps_outer: float = EPS_OUTER) -> RoundOutcome:
    """Reference pipelines: ``conventional``, ``pass_uniform`` or ``perfect``."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda out of (0,1): {lam}")
    if kind == "perfect":
        return _perfect(scenario, lam, grid_points)
    if kind not in ("conventional", "pass_uniform"):
        raise ValueError(f"unknown baseline {kind!r}")
    return _two_tier(scenario, lam, kind, "shared", grid_points, max_outer, eps_outer, None)


def run_pipeline(scenario: Scenario, lam: float, pipeline: str, mode: str = "per_user",
                 grid_points: int = DEFAULT_GRID_POINTS, cache: dict | None = None) -> RoundOutcome:
    if pipeline == "fedpass":
        return optimize_round(scenario, lam, mode, grid_points, cache=cache)
    if pipeline in PIPELINES:
        return baseline_round(scenario, lam, pipeline, grid_points)
    raise ValueError(f"unknown pipeline {pipeline!r}")


# ---------------------------------------------------------------------------
# Pareto sweep
# ---------------------------------------------------------------------------

@dataclass
class ParetoPoint:
    lam: float
    tau_t: float
    f_learn: float
    dominated: bool = False


def default_lambda_grid(n: int = 21, lo: float = 1e-6, hi: float = 1e-4) -> np.ndarray:
    """Weights whose exchange rate (1 - lam)/lam spans [lo, hi] seconds per sample.

    Latency is measured in seconds and the learning penalty in samples, so
    the trade-off only bites when lam is within ~1e-4 of one.
    """
    r = np.logspace(np.log10(lo), np.log10(hi), n)
    return 1.0 / (1.0 + r)


def scenario_lambda_grid(scenario: Scenario, n: int = 21,
                         grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Weights bracketing the exchange rates at which devices change schedule.

    A device is worth scheduling when its slot costs less than
    ``(1 - lam)/lam`` seconds per sample; the grid spans half the smallest
    to twice the largest full-power slot per sample under uniform placement.
    """
    G = channel.gains(scenario, uniform_placement(scenario, grid_points))
    rate = channel.rate(scenario, G, scenario.p_max)
    ok = rate > 0
    if not np.any(ok):
        return default_lambda_grid(n)
    per_sample = scenario.upload_bits / rate[ok] / scenario.data_sizes[ok]
    return default_lambda_grid(n, 0.5 * per_sample.min(), 2.0 * per_sample.max())


def mark_dominated(points: list[ParetoPoint]) -> list[ParetoPoint]:
    """Flag dominated points; exact duplicates keep only their first occurrence."""
    seen = set()
    for i, p in enumerate(points):
        p.dominated = False
        for j, q in enumerate(points):
            if i == j:
                continue
            weakly = q.tau_t <= p.tau_t and q.f_learn <= p.f_learn
            strictly = q.tau_t < p.tau_t or q.f_learn < p.f_learn
            if weakly and strictly:
                p.dominated = True
                break
        key = (p.tau_t, p.f_learn)
        if not p.dominated and key in seen:
            p.dominated = True
        seen.add(key)
    return points


def retained(points: list[ParetoPoint]) -> list[ParetoPoint]:
    return sorted((p for p in points if not p.dominated), key=lambda p: (p.tau_t, -p.f_learn))


def pareto_sweep(scenario: Scenario, lambdas: Sequence[float], mode: str = "per_user",
                 pipeline: str = "fedpass", grid_points: int = DEFAULT_GRID_POINTS) -> list[ParetoPoint]:
    lambdas = [float(l) for l in lambdas]
    if not lambdas:
        raise ValueError("empty lambda grid")
    for l in lambdas:
        if not 0.0 < l < 1.0:
            raise ValueError(f"lambda out of (0,1): {l}")
    cache: dict = {}
    if pipeline == "fedpass" and mode == "per_user":
        # fill the per-user placement cache once; the placement does not depend on lambda
        ants = _Antennas(scenario, pipeline, mode, grid_points, cache)
        ants.update(np.ones(scenario.num_devices), None, None)

    def one(lam):
        o = run_pipeline(scenario, lam, pipeline, mode, grid_points, cache)
        return ParetoPoint(lam, o.tau_t, o.f_learn)

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(one, lambdas))
    else:
        points = [one(l) for l in lambdas]
    return mark_dominated(points)


def allocate_mask(scenario: Scenario, mask, lam: float, pipeline: str = "fedpass",
                  grid_points: int = DEFAULT_GRID_POINTS, cache: dict | None = None) -> RoundOutcome:
    """Feasible full-power allocation for a schedule fixed by the caller.

    Devices that cannot upload within their energy budget are dropped.
    """
    mask = (np.asarray(mask, dtype=float) > 0).astype(float)
    if pipeline == "perfect":
        return _perfect(scenario, lam, grid_points, mask)
    mode = "per_user" if pipeline == "fedpass" else "shared"
    ants = _Antennas(scenario, pipeline, mode, grid_points, cache)
    ants.update(mask, solvers.uniform_theta(mask), scenario.p_max)
    G = ants.gains()
    rate = channel.rate(scenario, G, scenario.p_max)
    tau0 = np.divide(scenario.upload_bits, rate, out=np.full(len(rate), np.inf), where=rate > 0)
    E = np.where(np.isfinite(tau0), scenario.p_max * tau0, 0.0)
    m = mask * _servable(scenario, mask, E, G)
    if not np.any(m > 0):
        return _check(_empty(scenario, lam, pipeline, mode, ants), scenario)
    m, alloc = _complete(scenario, m, E, G, lam)
    out = _build_outcome(scenario, lam, pipeline, mode, m, alloc, ants.placements(m), G)
    return _check(out, scenario)
