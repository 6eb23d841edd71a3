"""Optimality-gap bound: learning penalty, per-round error term, envelope."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import LearnParams


class ContractionError(ValueError):
    """delta * steps / L lies outside (0, 1); the envelope does not contract."""


class EmptyScheduleError(ValueError):
    """No data scheduled, so the aggregated gradient is undefined."""


def _check_contraction(params: LearnParams) -> float:
    rho = params.contraction
    if not 0.0 < rho < 1.0:
        raise ContractionError(
            f"delta*steps/L = {1 - rho:.6g} must lie in (0, 1) for the gap envelope")
    return rho


def f_learn(mask, data_sizes) -> float:
    """Data volume left out of the aggregation."""
    sizes = np.asarray(data_sizes, dtype=float)
    return float(sizes.sum() - np.dot(mask, sizes))


def drift_floor(params: LearnParams) -> float:
    v, eps, L, total = params.local_steps, params.grad_bound, params.lipschitz, params.total_data
    return v**3 * eps**2 / (2.0 * L * total**2)


def a_t(mask, params: LearnParams, data_sizes) -> float:
    """Per-round additive term of the gap recursion."""
    _check_contraction(params)
    missing = f_learn(mask, data_sizes)
    v, eps, L, total = params.local_steps, params.grad_bound, params.lipschitz, params.total_data
    return 2.0 * v * eps**2 / (L * total**2) * missing**2 + drift_floor(params)


@dataclass(frozen=True)
class BoundTrace:
    a_t: np.ndarray          # per round, index 0 is round 1
    contraction: float
    envelope: np.ndarray     # index t is the bound after t rounds, envelope[0] = O_0
    scheduled_data: np.ndarray


def gap_envelope(o_0: float, masks: Sequence, params: LearnParams, data_sizes) -> BoundTrace:
    """Run ``O_t = rho * O_{t-1} + A_t`` over the given per-round masks."""
    rho = _check_contraction(params)
    sizes = np.asarray(data_sizes, dtype=float)
    a = np.array([a_t(m, params, sizes) for m in masks])
    env = np.empty(len(a) + 1)
    env[0] = o_0
    for t, a_val in enumerate(a, start=1):
        env[t] = rho * env[t - 1] + a_val
    sched = np.array([float(np.dot(m, sizes)) for m in masks])
    return BoundTrace(a, rho, env, sched)


def envelope_closed_form(o_0: float, a_values: Sequence[float], rho: float) -> float:
    """``rho^T O_0 + sum_t A_t rho^(T-t)`` evaluated directly."""
    a = np.asarray(a_values, dtype=float)
    T = len(a)
    powers = rho ** (T - np.arange(1, T + 1))
    return float(rho**T * o_0 + np.dot(a, powers))


def aggregation_error(global_grad, local_grads, mask, data_sizes) -> float:
    """Norm of the full gradient minus the scheduled, size-weighted average."""
    sizes = np.asarray(data_sizes, dtype=float)
    mask = np.asarray(mask, dtype=float)
    d_s = float(np.dot(mask, sizes))
    if d_s <= 0:
        raise EmptyScheduleError("aggregation error is undefined for an empty schedule")
    weights = mask * sizes / d_s
    est = weights @ np.asarray(local_grads, dtype=float)
    return float(np.linalg.norm(np.asarray(global_grad, dtype=float) - est))


def drift_bound(params: LearnParams, scheduled: float) -> float:
    """Squared-norm ceiling on the local-drift term for a round with ``scheduled`` samples."""
    v, eps = params.local_steps, params.grad_bound
    return v**2 * eps**2 / (params.total_data * scheduled)


def lemma_rhs(loss_prev: float, grad_norm_sq: float, err_norm_sq: float,
              params: LearnParams, scheduled: float) -> float:
    """Right-hand side of the one-round descent inequality."""
    v, L, eps = params.local_steps, params.lipschitz, params.grad_bound
    return (loss_prev - v / (2 * L) * grad_norm_sq + v / (2 * L) * err_norm_sq
            + v**3 * eps**2 / (2 * L * params.total_data * scheduled))
