"""Exact GP regression with fixed hyperparameters.

Inputs are rows ``(x_1, ..., x_c[, task])``: the first ``n_ctrl`` columns
are controller parameters, an optional trailing column carries the task
value (a task-parameter value or, in temporal mode, an iteration index).

Three kernels are supported, all of the form
``signal_variance * exp(-0.5 * sum_d ((a_d - b_d) / l_d)**2) * task_factor``:

``se-ard``
    no task column, ``task_factor = 1``;
``multitask-product``
    task factor is a squared exponential over the task column;
``multitask-temporal``
    task factor is ``(1 - eps_t) ** (|t - t'| / 2)`` over iteration indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

__all__ = [
    "KernelConfig",
    "GPModel",
    "GPError",
    "DegenerateModelError",
    "ModelInconsistencyError",
    "kernel_eval",
    "kernel_matrix",
    "MODES",
]

MODES = ("se-ard", "multitask-product", "multitask-temporal")
JITTER = 1e-10


class GPError(ValueError):
    """Contract violation when using a GP model."""


class DegenerateModelError(GPError):
    """The regularised Gram matrix could not be factorised."""

    def __init__(self, msg, pair):
        super().__init__(msg)
        self.pair = pair


class ModelInconsistencyError(GPError):
    """Fresh confidence interval is disjoint from the cached one."""


@dataclass(frozen=True)
class KernelConfig:
    """Fixed kernel hyperparameters.

    ``lengthscales`` covers the controller dimensions and, in
    ``multitask-product`` mode, the task dimension as its last entry.
    """

    lengthscales: tuple[float, ...]
    signal_variance: float = 1.0
    mode: str = "se-ard"
    temporal_epsilon: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in self.lengthscales)
        object.__setattr__(self, "lengthscales", ls)
        if self.mode not in MODES:
            raise GPError(f"unknown kernel mode {self.mode!r}")
        if not ls or min(ls) <= 0:
            raise GPError("lengthscales must be strictly positive")
        if not self.signal_variance > 0:
            raise GPError("signal_variance must be positive")
        if not 0.0 <= self.temporal_epsilon < 1.0:
            raise GPError("temporal_epsilon must lie in [0, 1)")
        if self.mode == "multitask-product" and len(ls) < 2:
            raise GPError("multitask-product needs a task lengthscale")

    @property
    def has_task(self) -> bool:
        return self.mode != "se-ard"

    @property
    def n_ctrl(self) -> int:
        return len(self.lengthscales) - (self.mode == "multitask-product")

    @property
    def input_dim(self) -> int:
        return self.n_ctrl + self.has_task

    @property
    def ctrl_lengthscales(self) -> np.ndarray:
        return np.asarray(self.lengthscales[: self.n_ctrl])

    def with_signal_variance(self, value: float) -> "KernelConfig":
        return KernelConfig(self.lengthscales, value, self.mode, self.temporal_epsilon)


def _as_rows(x, dim) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise GPError(f"expected inputs with {dim} columns, got shape {x.shape}")
    return x


def kernel_matrix(a, b, cfg: KernelConfig) -> np.ndarray:
    """Cross-covariance matrix ``k(a_i, b_j)``."""
    a = _as_rows(a, cfg.input_dim)
    b = _as_rows(b, cfg.input_dim)
    nc = cfg.n_ctrl
    ls = np.asarray(cfg.lengthscales)
    if cfg.mode == "multitask-product":
        sq = ((a[:, None, :] - b[None, :, :]) / ls) ** 2
        return cfg.signal_variance * np.exp(-0.5 * sq.sum(-1))
    sq = ((a[:, None, :nc] - b[None, :, :nc]) / ls[:nc]) ** 2
    k = cfg.signal_variance * np.exp(-0.5 * sq.sum(-1))
    if cfg.mode == "multitask-temporal":
        lag = np.abs(a[:, None, nc] - b[None, :, nc])
        k = k * (1.0 - cfg.temporal_epsilon) ** (lag / 2.0)
    return k


def kernel_eval(a, b, cfg: KernelConfig) -> float:
    """Covariance between two single inputs."""
    return float(kernel_matrix(a, b, cfg)[0, 0])


@dataclass
class _BoundBlock:
    lower: np.ndarray
    upper: np.ndarray


class GPModel:
    """Zero-mean GP with Gaussian likelihood and a monotone bound cache.

    Parameters
    ----------
    kernel : KernelConfig
    noise_variance : float
        Observation noise variance, strictly positive.
    beta : float
        Confidence multiplier for ``mean -/+ beta * std``.
    intersect_bounds : bool, optional
        Whether :meth:`update_bounds` intersects successive intervals.
        Defaults to ``True`` except in temporal mode.
    """

    def __init__(self, kernel: KernelConfig, noise_variance: float, beta: float = 3.0,
                 intersect_bounds: bool | None = None):
        if not noise_variance > 0:
            raise GPError("noise_variance must be positive")
        if not beta > 0:
            raise GPError("beta must be positive")
        self.kernel = kernel
        self.noise_variance = float(noise_variance)
        self.beta = float(beta)
        if intersect_bounds is None:
            intersect_bounds = kernel.mode != "multitask-temporal"
        self.intersect_bounds = intersect_bounds
        self._x = np.empty((0, kernel.input_dim))
        self._y = np.empty(0)
        self._chol = None
        self._alpha = np.empty(0)
        self._cache: dict[Hashable, _BoundBlock] = {}

    # -- data -------------------------------------------------------------
    @property
    def X(self) -> np.ndarray:
        return self._x

    @property
    def y(self) -> np.ndarray:
        return self._y

    def __len__(self) -> int:
        return len(self._y)

    def add_observation(self, x, y: float) -> "GPModel":
        """Append one observation and refactorise.  Returns ``self``."""
        y = float(y)
        x = _as_rows(x, self.kernel.input_dim)
        if x.shape[0] != 1:
            raise GPError("add_observation takes a single input")
        if not (math.isfinite(y) and np.all(np.isfinite(x))):
            raise GPError("observation must be finite")
        self._x = np.vstack([self._x, x])
        self._y = np.append(self._y, y)
        self._refactor()
        return self

    def add_observations(self, X, Y) -> "GPModel":
        X = _as_rows(X, self.kernel.input_dim)
        Y = np.asarray(Y, dtype=float).ravel()
        if len(X) != len(Y):
            raise GPError("X and Y lengths differ")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
            raise GPError("observations must be finite")
        self._x = np.vstack([self._x, X])
        self._y = np.concatenate([self._y, Y])
        self._refactor()
        return self

    def _refactor(self):
        K = kernel_matrix(self._x, self._x, self.kernel)
        K[np.diag_indices_from(K)] += (
            self.noise_variance + JITTER * self.kernel.signal_variance
        )
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise DegenerateModelError(
                "Gram matrix is not positive definite after jitter; "
                f"closest inputs are rows {self._closest_pair()}",
                self._closest_pair(),
            ) from None
        self._chol = L
        self._alpha = cho_solve((L, True), self._y, check_finite=False)

    def _closest_pair(self):
        x = self._x / np.r_[self.kernel.ctrl_lengthscales,
                            np.ones(self.kernel.input_dim - self.kernel.n_ctrl)]
        d = np.sum((x[:, None] - x[None]) ** 2, -1)
        d[np.diag_indices_from(d)] = np.inf
        i, j = np.unravel_index(np.argmin(d), d.shape)
        return (int(min(i, j)), int(max(i, j)))

    # -- queries ----------------------------------------------------------
    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at each row of ``Xq``."""
        Xq = _as_rows(Xq, self.kernel.input_dim)
        prior = np.full(len(Xq), self.kernel.signal_variance)
        if len(self._y) == 0:
            return np.zeros(len(Xq)), prior
        Ks = kernel_matrix(self._x, Xq, self.kernel)
        mean = Ks.T @ self._alpha
        v = solve_triangular(self._chol, Ks, lower=True, check_finite=False)
        var = prior - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def posterior(self, query) -> tuple[float, float]:
        """Posterior ``(mean, variance)`` at a single input."""
        m, v = self.predict(query)
        return float(m[0]), float(v[0])

    def confidence(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Raw interval ``mean -/+ beta * std`` (no caching)."""
        m, v = self.predict(Xq)
        s = self.beta * np.sqrt(v)
        return m - s, m + s

    def gradient_mean(self, Xq) -> np.ndarray:
        """Gradient of the posterior mean w.r.t. the controller columns.

        Returns an array of shape ``(len(Xq), n_ctrl)``; task columns are
        held fixed.
        """
        Xq = _as_rows(Xq, self.kernel.input_dim)
        nc = self.kernel.n_ctrl
        if len(self._y) == 0:
            return np.zeros((len(Xq), nc))
        Ks = kernel_matrix(Xq, self._x, self.kernel)  # (q, n)
        ls2 = self.kernel.ctrl_lengthscales ** 2
        diff = (self._x[None, :, :nc] - Xq[:, None, :nc]) / ls2  # d k / d xq
        return np.einsum("qn,qnd,n->qd", Ks, diff, self._alpha)

    # -- monotone bounds --------------------------------------------------
    def update_bounds(self, Xq, key: Hashable | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Intersect the cached interval for ``key`` with the current one.

        ``key`` names a fixed set of query points (e.g. one grid in one task
        bin).  A fresh key initialises the cache from the raw interval.
        Scalar inputs return scalars.
        """
        scalar = np.ndim(Xq) == 1
        Xq = _as_rows(Xq, self.kernel.input_dim)
        if key is None:
            key = ("point",) + tuple(Xq.ravel().tolist())
        lo, hi = self.confidence(Xq)
        block = self._cache.get(key)
        if block is None or not self.intersect_bounds:
            block = _BoundBlock(lo, hi)
        else:
            if block.lower.shape != lo.shape:
                raise GPError(f"cache entry {key!r} has a different number of points")
            new_lo = np.maximum(block.lower, lo)
            new_hi = np.minimum(block.upper, hi)
            bad = new_lo > new_hi
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise ModelInconsistencyError(
                    f"confidence interval at point {i} of {key!r} became empty: "
                    f"cached [{block.lower[i]:.6g}, {block.upper[i]:.6g}] vs "
                    f"fresh [{lo[i]:.6g}, {hi[i]:.6g}]; noise variance or beta "
                    "is likely too small"
                )
            block = _BoundBlock(new_lo, new_hi)
        self._cache[key] = block
        if scalar:
            return float(block.lower[0]), float(block.upper[0])
        return block.lower.copy(), block.upper.copy()

    def cached_bounds(self, key: Hashable):
        block = self._cache.get(key)
        return None if block is None else (block.lower.copy(), block.upper.copy())

    def clear_bounds(self, key: Hashable | None = None):
        """Drop one cached block, or all of them when ``key`` is None."""
        if key is None:
            self._cache.clear()
        else:
            self._cache.pop(key, None)
