"""Gauss-Seidel antenna placement on a uniform grid along the waveguide.

Placement maximises the weighted gain surrogate ``sum_k w_k G_k(x)``. Each
coordinate update holds the other antennas fixed and picks the best point of
the spacing-feasible grid; the incumbent is always a candidate, so the
surrogate never decreases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Placement, SpacingError, contributions, snr_scale
from .scenario import Scenario

DEFAULT_GRID_POINTS = 2001
DEFAULT_MAX_SWEEPS = 20


def grid(scenario: Scenario, grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    return np.linspace(0.0, scenario.waveguide_length_m, grid_points)


def snap(xs, grid_xs: np.ndarray) -> np.ndarray:
    """Indices of the nearest grid points (lower index on exact ties)."""
    xs = np.asarray(xs, dtype=float)
    step = grid_xs[1] - grid_xs[0]
    return np.clip(np.rint(xs / step), 0, len(grid_xs) - 1).astype(int)


def uniform_placement(scenario: Scenario, grid_points: int = DEFAULT_GRID_POINTS) -> Placement:
    """Equally spaced antennas (cell centres), snapped to the placement grid."""
    n = scenario.num_pas
    raw = scenario.waveguide_length_m * (2 * np.arange(n) + 1) / (2 * n)
    g = grid(scenario, grid_points)
    return Placement.from_array(g[snap(raw, g)]).validate(scenario)


@dataclass
class PlacementProblem:
    weights: np.ndarray
    grid_points: int = DEFAULT_GRID_POINTS
    mode: str = "shared"
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    tol: float | None = None
    devices: tuple[int, ...] | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValueError("placement weights must be nonnegative")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if self.mode not in ("shared", "per_user"):
            raise ValueError(f"unknown placement mode {self.mode!r}")

    def solve(self, scenario: Scenario, start: Placement) -> "PlacementResult":
        return gauss_seidel(scenario, start, self.weights, self.grid_points, self.max_sweeps,
                            self.tol, self.devices)


def surrogate_weights(scenario: Scenario, theta, powers) -> np.ndarray:
    """``w_k = theta_k * P_k * eta / (N sigma^2)``."""
    return np.asarray(theta, dtype=float) * np.asarray(powers, dtype=float) * snr_scale(scenario)


def phi(pi_x, others, weights) -> np.ndarray:
    """Coordinate profit at candidate points (constant part dropped).

    ``pi_x`` has shape ``(K, M)`` (contributions at M candidates); ``others``
    is the length-K sum of contributions of the remaining antennas.
    """
    w = np.asarray(weights, dtype=float)
    zeta = w * np.conj(others)
    return 2.0 * np.real(zeta @ pi_x) + w @ (np.abs(pi_x) ** 2)


def feasible_mask(grid_xs: np.ndarray, other_xs, min_spacing: float) -> np.ndarray:
    ok = np.ones(len(grid_xs), dtype=bool)
    slack = min_spacing * 1e-9
    for xm in np.atleast_1d(other_xs):
        ok &= np.abs(grid_xs - xm) >= min_spacing - slack
    return ok


def surrogate(pi_grid: np.ndarray, idx, weights) -> float:
    total = pi_grid[:, np.asarray(idx)].sum(axis=1)
    return float(np.dot(weights, np.abs(total) ** 2))


def coordinate_update(n: int, idx: np.ndarray, pi_grid: np.ndarray, grid_xs: np.ndarray,
                      weights, min_spacing: float) -> int:
    """Grid index of the best feasible position for antenna ``n``."""
    others_idx = np.delete(np.asarray(idx), n)
    others = pi_grid[:, others_idx].sum(axis=1)
    ok = feasible_mask(grid_xs, grid_xs[others_idx], min_spacing)
    if not ok.any():
        raise SpacingError(f"no feasible grid point for antenna {n}")
    vals = phi(pi_grid, others, weights)
    vals = np.where(ok, vals, -np.inf)
    # first maximiser on the ascending grid, i.e. smallest coordinate
    return int(np.argmax(vals))


@dataclass(frozen=True)
class PlacementResult:
    placement: Placement
    trace: np.ndarray      # surrogate after the start and after every coordinate update
    sweeps: int
    converged: bool


def gauss_seidel(scenario: Scenario, start: Placement, weights,
                 grid_points: int = DEFAULT_GRID_POINTS, max_sweeps: int = DEFAULT_MAX_SWEEPS,
                 tol: float | None = None, devices=None, guided: bool = True) -> PlacementResult:
    """Sweep the antennas in index order until no position moves by ``tol``.

    ``devices`` restricts the surrogate to a subset of devices (their
    weights are taken in the same order).
    """
    g = grid(scenario, grid_points)
    step = g[1] - g[0]
    tol = 0.5 * step if tol is None else tol
    weights = np.asarray(weights, dtype=float)
    pi_grid = contributions(scenario, g, devices, guided)
    if pi_grid.shape[0] != len(weights):
        raise ValueError("one weight per device is required")

    idx = snap(start.array, g)
    Placement.from_array(g[idx]).validate(scenario)
    trace = [surrogate(pi_grid, idx, weights)]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        moved = 0.0
        for n in range(len(idx)):
            new = coordinate_update(n, idx, pi_grid, g, weights, scenario.min_spacing_m)
            moved = max(moved, abs(g[new] - g[idx[n]]))
            idx[n] = new
            trace.append(surrogate(pi_grid, idx, weights))
        if moved < tol:
            converged = True
            break
    final = Placement.from_array(g[idx]).validate(scenario)
    return PlacementResult(final, np.array(trace), sweeps, converged)


def place_for_user(scenario: Scenario, k: int, grid_points: int = DEFAULT_GRID_POINTS,
                   start: Placement | None = None, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> PlacementResult:
    """Placement maximising device ``k``'s own gain (its TDMA slot)."""
    start = start or uniform_placement(scenario, grid_points)
    return gauss_seidel(scenario, start, np.ones(1), grid_points, max_sweeps, devices=[k])
