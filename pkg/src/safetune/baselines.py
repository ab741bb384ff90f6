"""Comparison methods: exhaustive grid evaluation and constrained BO.

The grid oracle evaluates every cell of a coarse lattice several times and
returns the feasible cell with the lowest mean cost; it is the reference
optimum for the stationary comparison.  The CBO baseline maximises expected
improvement times the probability of feasibility and, unlike GoOSE, is free
to pick points whose constraints are unknown.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .goose import LOG_COLUMNS
from .metrics import DEFAULT_Q1_WINDOW, episode_metrics
from .plant import PlantConfig, ScenarioSpec, apply_scenario, simulate

__all__ = [
    "GRID_SHAPE",
    "DOMAIN",
    "EmptyFeasibleError",
    "GridOracleResult",
    "grid_axes",
    "grid_search",
    "expected_improvement",
    "feasibility_probability",
    "cbo_acquisition",
    "cbo_step",
    "CBO",
    "run_cbo_loop",
]

GRID_SHAPE = (5, 11, 10)
DOMAIN = ((5.0, 50.0), (0.01, 0.11), (1.0, 10.0))
CBO_KIND = "cbo"


class EmptyFeasibleError(RuntimeError):
    """No grid cell satisfies both constraints; kappa is likely miscalibrated."""


def grid_axes(domain=DOMAIN, shape=GRID_SHAPE) -> tuple[np.ndarray, ...]:
    return tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(domain, shape))


@dataclass
class GridOracleResult:
    """Mean metrics per cell and the feasible argmin.

    ``cells`` and ``metrics`` have one row per cell in lexicographic order
    of ``(Kp, Kv, Ti)``; ``metrics`` columns are mean ``f, q1, q2``.
    """

    cells: np.ndarray
    metrics: np.ndarray
    kappa: tuple[float, float]
    n_repeats: int

    @property
    def feasible(self) -> np.ndarray:
        k1, k2 = self.kappa
        return (self.metrics[:, 1] <= k1) & (self.metrics[:, 2] <= k2)

    @property
    def best_index(self) -> int:
        feas = self.feasible
        if not feas.any():
            raise EmptyFeasibleError(
                f"no feasible cell among {len(self.cells)} with kappa={self.kappa}")
        f = np.where(feas, self.metrics[:, 0], np.inf)
        return int(np.argmin(f))  # first minimum: lexicographic tie-break

    @property
    def x_best(self) -> np.ndarray:
        return self.cells[self.best_index].copy()

    @property
    def f_best(self) -> float:
        return float(self.metrics[self.best_index, 0])

    @property
    def feasible_fraction(self) -> float:
        return float(self.feasible.mean())

    def with_kappa(self, kappa) -> "GridOracleResult":
        return GridOracleResult(self.cells, self.metrics, tuple(map(float, kappa)),
                                self.n_repeats)

    def to_csv(self, path: str | Path) -> None:
        feas = self.feasible
        with open(path, "w", newline="") as fh:
            fh.write(f"# grid-oracle v1 repeats={self.n_repeats} "
                     f"kappa1={self.kappa[0]!r} kappa2={self.kappa[1]!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Kp", "Kv", "Ti", "f", "q1", "q2", "feasible"])
            for c, m, ok in zip(self.cells, self.metrics, feas):
                w.writerow([repr(float(v)) for v in c] + [repr(float(v)) for v in m]
                           + [int(ok)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "GridOracleResult":
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("# grid-oracle v1"):
                raise ValueError(f"{path}: not a grid-oracle v1 file")
            meta = dict(tok.split("=") for tok in header.split()[3:])
            rows = list(csv.DictReader(fh))
        cells = np.array([[float(r[k]) for k in ("Kp", "Kv", "Ti")] for r in rows])
        metrics = np.array([[float(r[k]) for k in ("f", "q1", "q2")] for r in rows])
        kappa = (float(meta["kappa1"]), float(meta["kappa2"]))
        return cls(cells, metrics, kappa, int(meta["repeats"]))


def grid_search(plant: PlantConfig, ref, kappa, seeds=(0, 1, 2, 3, 4),
                domain=DOMAIN, shape=GRID_SHAPE, q1_window=DEFAULT_Q1_WINDOW,
                require_feasible: bool = True,
                progress: Callable[[int, int], None] | None = None) -> GridOracleResult:
    """Evaluate every lattice cell once per seed and average the metrics.

    The noise stream of cell ``i`` under seed ``s`` is seeded with
    ``SeedSequence([s, i])``, so results depend only on the seed list.
    Aborted episodes count as infinite metrics.

    Raises
    ------
    EmptyFeasibleError
        If ``require_feasible`` and no cell meets both thresholds.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("grid_search needs at least one seed")
    axes = grid_axes(domain, shape)
    cells = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T
    metrics = np.zeros((len(cells), 3))
    for i, x in enumerate(cells):
        acc = np.zeros(3)
        for s in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([s, i]))
            m = episode_metrics(simulate(x, plant, ref, rng), q1_window)
            acc += (m.f, m.q1, m.q2)
        metrics[i] = acc / len(seeds)
        if progress is not None:
            progress(i + 1, len(cells))
    res = GridOracleResult(cells, metrics, tuple(map(float, kappa)), len(seeds))
    if require_feasible:
        res.best_index  # raises on an empty feasible set
    return res


# -- constrained BO ------------------------------------------------------------

def expected_improvement(mean, var, best) -> np.ndarray:
    """EI for minimisation; zero where the variance vanishes."""
    mean = np.asarray(mean, float)
    sd = np.sqrt(np.maximum(np.asarray(var, float), 0.0))
    imp = best - mean
    out = np.maximum(imp, 0.0)
    pos = sd > 0
    z = imp[pos] / sd[pos]
    out[pos] = imp[pos] * norm.cdf(z) + sd[pos] * norm.pdf(z)
    return out


def feasibility_probability(means, variances, thresholds) -> np.ndarray:
    """``prod_j P[q_j <= kappa_j]`` under independent Gaussian posteriors."""
    p = 1.0
    for m, v, k in zip(means, variances, thresholds):
        m = np.asarray(m, float)
        sd = np.sqrt(np.maximum(np.asarray(v, float), 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(sd > 0, (k - m) / np.where(sd > 0, sd, 1.0),
                         np.where(m <= k, np.inf, -np.inf))
        p = p * norm.cdf(z)
    return np.asarray(p, float)


def cbo_acquisition(X, gp_f, gp_constraints, thresholds, best) -> np.ndarray:
    """``EI(x) * prod_j P[q_j(x) <= kappa_j]`` at each row of ``X``."""
    mf, vf = gp_f.predict(X)
    preds = [gp.predict(X) for gp in gp_constraints]
    pf = feasibility_probability([p[0] for p in preds], [p[1] for p in preds], thresholds)
    return expected_improvement(mf, vf, best) * pf


def _incumbent_value(gp_f, feasible_y) -> float:
    if len(feasible_y):
        return float(np.min(feasible_y))
    if len(gp_f) == 0:
        return 0.0
    return float(np.min(gp_f.predict(gp_f.X)[0]))


def cbo_step(gp_f, gp_constraints, domain, thresholds, feasible_y,
             rng: np.random.Generator, n_starts: int = 64) -> np.ndarray:
    """Next CBO query.

    Multi-start L-BFGS-B on the negative acquisition in unit-box coordinates.
    ``feasible_y`` holds the GP-space costs of feasible observations; the EI
    incumbent is their minimum, or the lowest posterior mean at an observed
    input when none is feasible.
    """
    lo = np.array([d[0] for d in domain], float)
    hi = np.array([d[1] for d in domain], float)
    span = np.where(hi > lo, hi - lo, 1.0)
    best = _incumbent_value(gp_f, np.asarray(feasible_y, float))

    d = len(lo)
    h = 1e-6

    def neg_and_grad(u):
        # value and central differences from one batched model query
        u = np.clip(u, 0.0, 1.0)
        U = np.vstack([u, u + h * np.eye(d), u - h * np.eye(d)])
        a = -cbo_acquisition(lo + U * span, gp_f, gp_constraints, thresholds, best)
        return float(a[0]), (a[1:d + 1] - a[d + 1:]) / (2 * h)

    starts = rng.random((n_starts, d))
    vals = -cbo_acquisition(lo + starts * span, gp_f, gp_constraints, thresholds, best)
    best_u, best_v = starts[int(np.argmin(vals))], float(np.min(vals))
    for u0 in starts:
        res = minimize(neg_and_grad, u0, jac=True, method="L-BFGS-B",
                       bounds=[(0.0, 1.0)] * d)
        if res.fun < best_v:
            best_u, best_v = np.clip(res.x, 0.0, 1.0), float(res.fun)
    return lo + best_u * span


@dataclass
class CBO:
    """Constrained BO state for the stationary comparison.

    ``to_model`` maps output ``j`` (0 = f, 1 = q1, 2 = q2) into GP space,
    matching the transform used by GoOSE so both methods see the same
    models.
    """

    gp_f: object
    gp_q1: object
    gp_q2: object
    kappa: tuple[float, float]
    seed_x: np.ndarray
    rng: np.random.Generator
    domain: tuple = DOMAIN
    n_starts: int = 64
    to_model: Callable[[int, float], float] | None = None

    def __post_init__(self):
        self.seed_x = np.asarray(self.seed_x, float)
        self.history: list[tuple[np.ndarray, float, float, float]] = []
        self.violations = 0

    def _map(self, j, y):
        return float(y) if self.to_model is None else float(self.to_model(j, y))

    @property
    def thresholds(self):
        return tuple(self._map(j + 1, k) for j, k in enumerate(self.kappa))

    def step(self) -> np.ndarray:
        if not self.history:
            return self.seed_x.copy()
        feas = [self._map(0, f) for _, f, q1, q2 in self.history
                if q1 <= self.kappa[0] and q2 <= self.kappa[1] and math.isfinite(f)]
        return cbo_step(self.gp_f, (self.gp_q1, self.gp_q2), self.domain,
                        self.thresholds, feas, self.rng, self.n_starts)

    def record(self, x, f, q1, q2) -> tuple[bool, bool]:
        x = np.asarray(x, float)
        violated = (not q1 <= self.kappa[0], not q2 <= self.kappa[1])
        if any(violated):
            self.violations += 1
        if all(math.isfinite(v) for v in (f, q1, q2)):
            for j, (gp, y) in enumerate(zip((self.gp_f, self.gp_q1, self.gp_q2),
                                             (f, q1, q2))):
                gp.add_observation(x, self._map(j, y))
        self.history.append((x, float(f), float(q1), float(q2)))
        return violated

    def incumbent_f(self) -> float:
        feas = [f for _, f, q1, q2 in self.history
                if q1 <= self.kappa[0] and q2 <= self.kappa[1]]
        return min(feas) if feas else math.nan


def run_cbo_loop(cbo: CBO, scenario: str, budget: int, plant: PlantConfig, ref,
                 noise_rng: np.random.Generator, spec: ScenarioSpec | None = None,
                 q1_window=DEFAULT_Q1_WINDOW,
                 on_row: Callable[[dict], None] | None = None) -> list[dict]:
    """Run ``budget`` CBO episodes; rows use the GoOSE log schema."""
    rows = []
    duration = len(ref[0]) * plant.dt
    for it in range(len(cbo.history), len(cbo.history) + budget):
        cfg = apply_scenario(plant, scenario, it, spec)
        x = cbo.step()
        m = episode_metrics(simulate(x, cfg, ref, noise_rng), q1_window)
        violated = cbo.record(x, m.f, m.q1, m.q2)
        row = dict(zip(LOG_COLUMNS, (
            it, it * duration, x[0], x[1], x[2], m.tau_m, 0, m.f, m.q1, m.q2,
            int(violated[0]), int(violated[1]), CBO_KIND, cbo.incumbent_f())))
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows
