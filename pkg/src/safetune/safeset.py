"""Discretised safe set, its boundary and the optimistic expansion test.

All set operations work on boolean masks over :attr:`SafeGrid.points`, the
lattice cells (C order, so index order is lexicographic) followed by any
seed points that are not on the lattice.  Confidence bounds come in as
arrays of shape ``(n_constraints, n_points)``, so the functions here stay
pure and never touch a GP directly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SafeGrid",
    "ExpansionParams",
    "SafeSetError",
    "STEP_FACTOR",
    "build_grid",
    "normalized_distance",
    "pessimistic_safe_set",
    "boundary",
    "uncertain_boundary",
    "expansion_indicator",
    "nearest_expander",
]

CORRELATION = 0.95
#: Δx_d / l_d such that the SE correlation between neighbours is 0.95.
STEP_FACTOR = math.sqrt(-2.0 * math.log(CORRELATION))


class SafeSetError(ValueError):
    """Invalid grid or safe-set arguments."""


@dataclass(frozen=True)
class ExpansionParams:
    """Per-constraint thresholds ``kappa`` and noise margins ``epsilon``."""

    kappa: tuple[float, ...]
    epsilon: tuple[float, ...]

    def __post_init__(self):
        k = tuple(float(v) for v in np.atleast_1d(self.kappa))
        e = np.broadcast_to(np.atleast_1d(np.asarray(self.epsilon, float)), (len(k),))
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "epsilon", tuple(float(v) for v in e))
        if not all(math.isfinite(v) for v in k):
            raise SafeSetError("kappa must be finite")
        if min(self.epsilon) < 0:
            raise SafeSetError("epsilon must be nonnegative")

    @property
    def kappa_arr(self) -> np.ndarray:
        return np.asarray(self.kappa)[:, None]

    @property
    def epsilon_arr(self) -> np.ndarray:
        return np.asarray(self.epsilon)[:, None]


@dataclass(frozen=True)
class SafeGrid:
    """Lattice over the controller domain plus optional off-lattice seeds."""

    ranges: tuple[tuple[float, float], ...]
    lengthscales: tuple[float, ...]
    axes: tuple[np.ndarray, ...]
    seeds: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_points(self) -> int:
        return self.n_cells + len(self.seeds)

    @property
    def resolution(self) -> np.ndarray:
        """Δx_d from the correlation rule."""
        return np.asarray(self.lengthscales) * STEP_FACTOR

    @property
    def spacing(self) -> np.ndarray:
        """Actual lattice step per dimension (≤ resolution)."""
        return np.array([a[1] - a[0] if len(a) > 1 else 0.0 for a in self.axes])

    @property
    def cells(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.cells, self.seeds]) if len(self.seeds) else self.cells

    @property
    def seed_indices(self) -> np.ndarray:
        return np.arange(self.n_cells, self.n_points)

    @property
    def lower(self) -> np.ndarray:
        return np.array([r[0] for r in self.ranges])

    @property
    def upper(self) -> np.ndarray:
        return np.array([r[1] for r in self.ranges])

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def nearest_cell(self, x) -> np.ndarray:
        """Flat lattice index of the cell nearest to each row of ``x``."""
        x = np.atleast_2d(x)
        idx = []
        for d, ax in enumerate(self.axes):
            h = ax[1] - ax[0] if len(ax) > 1 else 1.0
            idx.append(np.clip(np.rint((x[:, d] - ax[0]) / h), 0, len(ax) - 1).astype(int))
        return np.ravel_multi_index(idx, self.shape)

    def with_seeds(self, seeds) -> "SafeGrid":
        seeds = np.atleast_2d(np.asarray(seeds, float)).reshape(-1, self.ndim)
        return SafeGrid(self.ranges, self.lengthscales, self.axes, seeds)


def build_grid(ranges, lengthscales, seeds=None) -> SafeGrid:
    """Lattice with per-dimension step ``l_d * sqrt(-2 ln 0.95)``.

    ``lengthscales`` may be a sequence or a ``KernelConfig`` (its controller
    lengthscales are used).  Each dimension gets ``ceil(width / Δx_d) + 1``
    equally spaced nodes including both endpoints.  A range narrower than
    ``Δx_d`` collapses to its midpoint with a warning.
    """
    if hasattr(lengthscales, "ctrl_lengthscales"):
        lengthscales = lengthscales.ctrl_lengthscales
    ls = tuple(float(v) for v in lengthscales)
    ranges = tuple((float(lo), float(hi)) for lo, hi in ranges)
    if len(ranges) == 0 or len(ranges) != len(ls):
        raise SafeSetError("need one range per lengthscale")
    if min(ls) <= 0:
        raise SafeSetError("lengthscales must be positive")
    axes = []
    for d, ((lo, hi), l) in enumerate(zip(ranges, ls)):
        if not hi >= lo:
            raise SafeSetError(f"range {d} is empty: {(lo, hi)}")
        step = l * STEP_FACTOR
        width = hi - lo
        if width < step:
            warnings.warn(f"range {d} is narrower than its grid step; using one cell",
                          stacklevel=2)
            axes.append(np.array([0.5 * (lo + hi)]))
        else:
            axes.append(np.linspace(lo, hi, math.ceil(width / step) + 1))
    grid = SafeGrid(ranges, ls, tuple(axes), np.empty((0, len(ls))))
    return grid if seeds is None else grid.with_seeds(seeds)


def normalized_distance(a, b, lengthscales) -> np.ndarray:
    """Euclidean distance after dividing each dimension by its lengthscale."""
    ls = np.asarray(lengthscales, float)
    a = np.atleast_2d(a) / ls
    b = np.atleast_2d(b) / ls
    sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return np.sqrt(sq)


def pessimistic_safe_set(upper, kappa, force=None) -> np.ndarray:
    """``u_j(x) <= kappa_j`` for every constraint ``j``.

    Parameters
    ----------
    upper : array, shape (k, n)
        Upper confidence bounds per constraint.
    kappa : sequence of k thresholds.
    force : index array or mask, optional
        Points always included (the safe seed).
    """
    upper = np.atleast_2d(upper)
    kappa = np.asarray(kappa, float).reshape(-1, 1)
    safe = np.all(upper <= kappa, axis=0)
    if force is not None:
        safe[force] = True
    return safe


def boundary(grid: SafeGrid, safe) -> np.ndarray:
    """Safe points with an axis neighbour outside the safe set.

    Neighbours that would fall outside the domain do not count.  An
    off-lattice seed's neighbours are the corners of the lattice box that
    contains it.
    """
    safe = np.asarray(safe, bool)
    if safe.shape != (grid.n_points,):
        raise SafeSetError("mask length does not match the grid")
    cell_safe = safe[: grid.n_cells].reshape(grid.shape)
    unsafe_nb = np.zeros(grid.shape, bool)
    for d in range(grid.ndim):
        if grid.shape[d] < 2:
            continue
        lo = [slice(None)] * grid.ndim
        hi = [slice(None)] * grid.ndim
        lo[d] = slice(0, -1)
        hi[d] = slice(1, None)
        unsafe_nb[tuple(lo)] |= ~cell_safe[tuple(hi)]
        unsafe_nb[tuple(hi)] |= ~cell_safe[tuple(lo)]
    out = np.zeros(grid.n_points, bool)
    out[: grid.n_cells] = (cell_safe & unsafe_nb).ravel()
    for i, s in zip(grid.seed_indices, grid.seeds):
        if safe[i]:
            out[i] = not cell_safe[_box_corners(grid, s)].all()
    return out


def _box_corners(grid: SafeGrid, x):
    idx = []
    for ax, v in zip(grid.axes, x):
        j = int(np.clip(np.searchsorted(ax, v, side="right") - 1, 0, len(ax) - 1))
        idx.append(sorted({j, min(j + 1, len(ax) - 1)}))
    return np.ix_(*idx)


def uncertain_boundary(boundary_mask, lower, upper, epsilon) -> np.ndarray:
    """Boundary points where some constraint's interval width is ``>= epsilon``."""
    width = np.atleast_2d(upper) - np.atleast_2d(lower)
    eps = np.asarray(epsilon, float).reshape(-1, 1)
    return np.asarray(boundary_mask, bool) & np.any(width >= eps, axis=0)


def expansion_indicator(lower, grad_norm, dist, params: ExpansionParams) -> np.ndarray:
    """Optimistic noisy expansion test ``g(x, z)`` for all constraints.

    Parameters
    ----------
    lower, grad_norm : array, shape (k, nx)
        Lower bound and infinity norm of the (lengthscale-normalised)
        posterior-mean gradient at each candidate expander ``x``.
    dist : array, shape (nx, nz)
        Normalised distances ``d(x, z)``.

    Returns
    -------
    bool array, shape (nx, nz)
    """
    lower = np.atleast_2d(lower)[:, :, None]
    grad_norm = np.atleast_2d(grad_norm)[:, :, None]
    dist = np.atleast_2d(dist)[None]
    bound = lower + grad_norm * dist + params.epsilon_arr[:, :, None]
    return np.all(bound <= params.kappa_arr[:, :, None], axis=0)


def nearest_expander(indicator, dist) -> int | None:
    """Row index of the closest qualifying expander for one target.

    ``indicator`` and ``dist`` are 1-D over candidate expanders ordered by
    point index; ties resolve to the lowest index.
    """
    indicator = np.asarray(indicator, bool)
    if not indicator.any():
        return None
    d = np.where(indicator, np.asarray(dist, float), np.inf)
    return int(np.argmin(d))
