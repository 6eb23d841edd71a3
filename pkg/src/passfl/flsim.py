"""Desk-scale synchronous federated learning driven by the round optimiser.

Two synthetic tasks are provided. Least squares is used to check the gap
bound because its smoothness and PL constants are exact Hessian
eigenvalues. Softmax regression on a Gaussian mixture gives accuracy
curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize

from . import driver
from .bound import BoundTrace, gap_envelope
from .scenario import (STREAM_DATA, STREAM_PARTITION, STREAM_TRAIN, ConfigError, LearnParams,
                       Scenario, devices_with_sizes, make_rng)

KINDS = ("quadratic", "softmax")


# ---------------------------------------------------------------------------
# partition
# ---------------------------------------------------------------------------

def partition_dirichlet(labels, num_devices: int, alpha: float, seed: int) -> list[np.ndarray]:
    """Split sample indices over devices with Dirichlet(alpha) class proportions.

    Empty shards receive one sample taken from the currently largest shard.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    if num_devices < 1 or num_devices > n:
        raise ConfigError(f"cannot split {n} samples over {num_devices} devices")
    rng = make_rng(seed, STREAM_PARTITION)
    shards: list[list[int]] = [[] for _ in range(num_devices)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        p = rng.dirichlet(np.full(num_devices, alpha))
        cuts = (np.cumsum(p)[:-1] * len(idx)).astype(int)
        for k, part in enumerate(np.split(idx, cuts)):
            shards[k].extend(part.tolist())
    for k in range(num_devices):
        if not shards[k]:
            donor = max(range(num_devices), key=lambda j: (len(shards[j]), -j))
            shards[k].append(shards[donor].pop(int(rng.integers(len(shards[donor])))))
    return [np.array(sorted(s), dtype=int) for s in shards]


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

@dataclass
class SyntheticTask:
    """Training data, partition and exact (or estimated) problem constants.

    Parameters are flat vectors. For the softmax task the vector holds a
    ``(dim + 1, classes)`` weight matrix, bias row last.
    """

    kind: str
    X: np.ndarray
    y: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    labels: np.ndarray
    shards: list[np.ndarray]
    num_classes: int = 1
    reg: float = 0.0
    lipschitz: float = 1.0
    pl_delta: float = 0.0
    w_star: np.ndarray | None = None
    f_star: float = 0.0
    w0: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.w0 is None:
            self.w0 = np.zeros(self.num_params)

    # sizes ----------------------------------------------------------------
    @property
    def num_devices(self) -> int:
        return len(self.shards)

    @property
    def num_samples(self) -> int:
        return len(self.y)

    @property
    def shard_sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.shards], dtype=float)

    @property
    def num_params(self) -> int:
        d = self.X.shape[1]
        return d if self.kind == "quadratic" else (d + 1) * self.num_classes

    # losses ---------------------------------------------------------------
    def _rows(self, idx):
        if idx is None:
            return self.X, self.y
        return self.X[idx], self.y[idx]

    def _softmax_parts(self, w, X):
        W = w.reshape(X.shape[1] + 1, self.num_classes)
        Xb = np.hstack([X, np.ones((len(X), 1))])
        z = Xb @ W
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return W, Xb, p

    def loss(self, w, idx=None) -> float:
        X, y = self._rows(idx)
        if self.kind == "quadratic":
            r = X @ w - y
            return float(0.5 * np.mean(r * r))
        W, Xb, p = self._softmax_parts(w, X)
        ll = -np.log(np.maximum(p[np.arange(len(y)), y.astype(int)], 1e-300))
        return float(ll.mean() + 0.5 * self.reg * np.dot(w, w))

    def grad(self, w, idx=None) -> np.ndarray:
        X, y = self._rows(idx)
        if self.kind == "quadratic":
            return X.T @ (X @ w - y) / len(y)
        W, Xb, p = self._softmax_parts(w, X)
        p[np.arange(len(y)), y.astype(int)] -= 1.0
        return (Xb.T @ p / len(y)).ravel() + self.reg * w

    def sample_grad_norms(self, w, idx=None) -> np.ndarray:
        X, y = self._rows(idx)
        if self.kind == "quadratic":
            return np.abs(X @ w - y) * np.linalg.norm(X, axis=1)
        W, Xb, p = self._softmax_parts(w, X)
        p[np.arange(len(y)), y.astype(int)] -= 1.0
        # || x (p - e)^T + reg W ||_F per sample
        sq = (np.sum(Xb * Xb, axis=1) * np.sum(p * p, axis=1)
              + 2 * self.reg * np.einsum("ij,jc,ic->i", Xb, W, p)
              + self.reg**2 * np.dot(w, w))
        return np.sqrt(np.maximum(sq, 0.0))

    def gap(self, w) -> float:
        return self.loss(w) - self.f_star

    def metric(self, w) -> float:
        """Test mean squared error (quadratic) or test accuracy (softmax)."""
        if self.kind == "quadratic":
            r = self.X_test @ w - self.y_test
            return float(np.mean(r * r))
        _, _, p = self._softmax_parts(w, self.X_test)
        return float(np.mean(np.argmax(p, axis=1) == self.y_test))

    @property
    def o_0(self) -> float:
        return self.gap(self.w0)

    def learn_params(self, local_steps: int, grad_bound: float) -> LearnParams:
        return LearnParams(self.lipschitz, self.pl_delta, local_steps, grad_bound,
                           float(self.num_samples))


def _cluster_features(rng, n, dim, num_clusters, spread):
    labels = rng.integers(num_clusters, size=n)
    means = rng.normal(0.0, spread, size=(num_clusters, dim))
    scales = np.logspace(0.0, 0.5, dim)
    X = means[labels] + rng.normal(size=(n, dim)) * scales
    return X, labels, means


def make_quadratic_task(num_devices: int, seed: int, samples: int = 1200, dim: int = 8,
                        num_clusters: int = 4, alpha: float = 0.35, noise: float = 0.1,
                        test_samples: int = 400) -> SyntheticTask:
    """Least squares with cluster-specific targets (non-IID shards)."""
    rng = make_rng(seed, STREAM_DATA)
    X, labels, _ = _cluster_features(rng, samples + test_samples, dim, num_clusters, 1.0)
    w_true = rng.normal(size=dim)
    shift = rng.normal(0.0, 0.5, size=(num_clusters, dim))
    y = np.einsum("ij,ij->i", X, w_true + shift[labels]) + noise * rng.normal(size=len(X))
    Xtr, ytr, ltr = X[:samples], y[:samples], labels[:samples]
    H = Xtr.T @ Xtr / samples
    eig = np.linalg.eigvalsh(H)
    if eig[0] <= 0:
        raise ConfigError("design matrix is rank deficient")
    w_star = np.linalg.lstsq(Xtr, ytr, rcond=None)[0]
    shards = partition_dirichlet(ltr, num_devices, alpha, seed)
    task = SyntheticTask("quadratic", Xtr, ytr, X[samples:], y[samples:], ltr, shards,
                         lipschitz=float(eig[-1]), pl_delta=float(eig[0]), w_star=w_star)
    task.f_star = task.loss(w_star)
    return task


def _power_iteration(A: np.ndarray, iters: int = 200, seed: int = 0) -> float:
    v = make_rng(seed, STREAM_DATA, 99).normal(size=A.shape[1])
    lam = 0.0
    for _ in range(iters):
        v = A @ v
        lam = float(np.linalg.norm(v))
        v /= lam
    return lam


def _finish_softmax(task: SyntheticTask, seed: int) -> SyntheticTask:
    Xb = np.hstack([task.X, np.ones((task.num_samples, 1))])
    # cross-entropy Hessian is at most half the feature second moment
    task.lipschitz = 0.5 * _power_iteration(Xb.T @ Xb / task.num_samples, seed=seed) + task.reg
    task.pl_delta = task.reg
    res = optimize.minimize(task.loss, task.w0, jac=task.grad, method="L-BFGS-B",
                            options={"maxiter": 2000, "gtol": 1e-10, "ftol": 1e-15})
    task.w_star = res.x
    task.f_star = float(res.fun)
    return task


def make_softmax_task(num_devices: int, seed: int, samples: int = 2400, dim: int = 10,
                      num_classes: int = 10, alpha: float = 0.35, spread: float = 1.2,
                      reg: float = 1e-3, test_samples: int = 1000) -> SyntheticTask:
    """Gaussian-mixture classification with a small ridge term."""
    rng = make_rng(seed, STREAM_DATA)
    X, labels, _ = _cluster_features(rng, samples + test_samples, dim, num_classes, spread)
    Xtr, ltr = X[:samples], labels[:samples]
    shards = partition_dirichlet(ltr, num_devices, alpha, seed)
    task = SyntheticTask("softmax", Xtr, ltr.astype(float), X[samples:], labels[samples:],
                         ltr, shards, num_classes=num_classes, reg=reg)
    return _finish_softmax(task, seed)


def task_from_arrays(X, y, kind: str, num_devices: int, seed: int, alpha: float = 0.35,
                     test_fraction: float = 0.25, reg: float = 1e-3) -> SyntheticTask:
    """Task from a user-supplied matrix (``y`` are class ids for softmax)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ConfigError("dataset must be a matrix with one label per row")
    rng = make_rng(seed, STREAM_DATA)
    order = rng.permutation(len(y))
    n_test = int(round(test_fraction * len(y)))
    te, tr = order[:n_test], order[n_test:]
    if kind == "quadratic":
        labels = np.zeros(len(tr), dtype=int)
        H = X[tr].T @ X[tr] / len(tr)
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= 0:
            raise ConfigError("design matrix is rank deficient")
        shards = partition_dirichlet(labels, num_devices, alpha, seed)
        w_star = np.linalg.lstsq(X[tr], y[tr], rcond=None)[0]
        task = SyntheticTask("quadratic", X[tr], y[tr], X[te], y[te], labels, shards,
                             lipschitz=float(eig[-1]), pl_delta=float(eig[0]), w_star=w_star)
        task.f_star = task.loss(w_star)
        return task
    if kind != "softmax":
        raise ConfigError(f"unknown task kind {kind!r}")
    classes, yi = np.unique(y, return_inverse=True)
    shards = partition_dirichlet(yi[tr], num_devices, alpha, seed)
    task = SyntheticTask("softmax", X[tr], yi[tr].astype(float), X[te], yi[te], yi[tr], shards,
                         num_classes=len(classes), reg=reg)
    return _finish_softmax(task, seed)


def load_csv_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Numeric CSV, one sample per row, label in the last column."""
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data.shape[1] < 2:
        raise ConfigError(f"{path}: need at least one feature column and a label column")
    return data[:, :-1], data[:, -1]


# ---------------------------------------------------------------------------
# local training and aggregation
# ---------------------------------------------------------------------------

@dataclass
class LocalResult:
    model: np.ndarray
    mean_grad: np.ndarray      # average of the gradients used in the local steps
    max_sample_grad: float     # largest per-sample gradient norm seen along the way


def local_update(task: SyntheticTask, w, shard, steps: int, lr: float,
                 batch_size: int | None = None, rng: np.random.Generator | None = None) -> LocalResult:
    """``steps`` (mini-batch) gradient steps on one shard.

    Full-batch when ``batch_size`` is None or at least the shard size.
    """
    w = np.array(w, dtype=float)
    shard = np.asarray(shard)
    acc = np.zeros_like(w)
    eps = 0.0
    for _ in range(steps):
        if batch_size is None or batch_size >= len(shard):
            idx = shard
        else:
            idx = shard[(rng or make_rng(0, STREAM_TRAIN)).choice(len(shard), batch_size, replace=False)]
        g = task.grad(w, idx)
        eps = max(eps, float(task.sample_grad_norms(w, idx).max()))
        acc += g
        w = w - lr * g
    mean = acc / steps if steps else acc
    return LocalResult(w, mean, eps)


def aggregate(models: Sequence[np.ndarray], mask, sizes) -> np.ndarray:
    """Data-size weighted average of the scheduled models (index order)."""
    mask = np.asarray(mask, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    weights = mask * sizes
    total = weights.sum()
    if total <= 0:
        raise ValueError("empty schedule: nothing to aggregate")
    out = np.zeros_like(np.asarray(models[0], dtype=float))
    for k in np.flatnonzero(weights > 0):
        out += weights[k] / total * np.asarray(models[k], dtype=float)
    return out


# ---------------------------------------------------------------------------
# federated run
# ---------------------------------------------------------------------------

@dataclass
class TrainingLog:
    """Per-round records; index 0 of ``loss``, ``gap`` and ``metric`` is the initial model."""

    pipeline: str
    local_steps: int
    loss: list[float] = field(default_factory=list)
    gap: list[float] = field(default_factory=list)
    metric: list[float] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)
    tau_t: list[float] = field(default_factory=list)
    cum_latency: list[float] = field(default_factory=list)
    err_norm: list[float] = field(default_factory=list)
    drift_norm: list[float] = field(default_factory=list)
    grad_bound: float = 0.0
    bound: BoundTrace | None = None
    outcome: driver.RoundOutcome | None = None

    @property
    def rounds(self) -> int:
        return len(self.tau_t)

    def rows(self) -> list[dict]:
        return [
            {"round": t + 1, "loss": self.loss[t + 1], "gap": self.gap[t + 1],
             "metric": self.metric[t + 1], "tau_t_s": self.tau_t[t],
             "cum_latency_s": self.cum_latency[t], "scheduled_count": int(self.masks[t].sum())}
            for t in range(self.rounds)
        ]


def run_federated(scenario: Scenario, task: SyntheticTask, rounds: int, lam: float = 0.5,
                  pipeline: str = "fedpass", seed: int = 0, local_steps: int = 5,
                  batch_size: int | None = None, mode: str = "per_user", masks=None,
                  lr: float | None = None, sync_sizes: bool = True,
                  grid_points: int = driver.DEFAULT_GRID_POINTS) -> TrainingLog:
    """Synchronous rounds: schedule, local steps, weighted aggregation.

    The channel is static, so the optimiser runs once and its schedule and
    latency apply to every round. ``masks`` (one per round) overrides the
    schedule; latency is then the full-power allocation of that mask.
    With ``sync_sizes`` the scenario's data sizes are replaced by the shard
    sizes so both sides agree on ``|D_k|``.
    """
    if pipeline not in driver.PIPELINES:
        raise ConfigError(f"unknown pipeline {pipeline!r}")
    if rounds < 0:
        raise ConfigError("rounds must be nonnegative")
    if scenario.num_devices != task.num_devices:
        raise ConfigError(f"scenario has {scenario.num_devices} devices, task {task.num_devices}")
    if sync_sizes:
        scenario = devices_with_sizes(scenario, task.shard_sizes.astype(int))
    sizes = task.shard_sizes
    lr = 1.0 / task.lipschitz if lr is None else lr
    log = TrainingLog(pipeline, local_steps)

    outcome = None
    fixed = None
    if masks is None:
        outcome = driver.run_pipeline(scenario, lam, pipeline, mode, grid_points)
        fixed = outcome
    cache: dict = {}

    w = np.array(task.w0, dtype=float)
    log.loss.append(task.loss(w))
    log.gap.append(task.gap(w))
    log.metric.append(task.metric(w))
    eps_hat = float(task.sample_grad_norms(w).max())
    elapsed = 0.0
    for t in range(rounds):
        if masks is not None:
            fixed = driver.allocate_mask(scenario, masks[t], lam, pipeline, grid_points, cache)
        mask = np.asarray(fixed.mask, dtype=float)
        if mask.sum() > 0:
            full_grad = task.grad(w)
            models = []
            mean_grads = np.zeros((task.num_devices, len(w)))
            start_grads = np.zeros((task.num_devices, len(w)))
            for k in range(task.num_devices):
                start_grads[k] = task.grad(w, task.shards[k])
                if mask[k] > 0:
                    res = local_update(task, w, task.shards[k], local_steps, lr, batch_size,
                                       make_rng(seed, STREAM_TRAIN, t, k))
                    models.append(res.model)
                    mean_grads[k] = res.mean_grad
                    eps_hat = max(eps_hat, res.max_sample_grad)
                else:
                    models.append(w)
            weights = mask * sizes / np.dot(mask, sizes)
            err = full_grad - weights @ start_grads
            drift = weights @ (mean_grads - start_grads)
            w = aggregate(models, mask, sizes)
            log.err_norm.append(float(np.linalg.norm(err)))
            log.drift_norm.append(float(np.linalg.norm(drift)) if local_steps else 0.0)
        else:
            log.err_norm.append(math.nan)
            log.drift_norm.append(math.nan)
        eps_hat = max(eps_hat, float(task.sample_grad_norms(w).max()))
        elapsed += fixed.tau_t
        log.masks.append(mask)
        log.tau_t.append(fixed.tau_t)
        log.cum_latency.append(elapsed)
        log.loss.append(task.loss(w))
        log.gap.append(task.gap(w))
        log.metric.append(task.metric(w))

    log.grad_bound = eps_hat
    log.outcome = outcome
    if local_steps >= 1:
        # exact constants for least squares, estimates for softmax
        params = task.learn_params(local_steps, eps_hat)
        if 0.0 < params.contraction < 1.0:
            log.bound = gap_envelope(log.gap[0], log.masks, params, sizes)
    return log
