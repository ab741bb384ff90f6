"""Goal-oriented safe exploration loop.

:class:`Goose` holds three GP models (cost ``f`` and constraints ``q1``,
``q2``), a :class:`~safetune.safeset.SafeGrid` and per-task-bin bookkeeping.
Each call to :meth:`Goose.step` issues one action:

``evaluate``
    run a pessimistically safe suggestion (or the safe seed);
``evaluate_expander``
    run an uncertain boundary point that may certify the suggestion;
``apply_incumbent``
    run the best known feasible controller without learning from it.

:meth:`Goose.record` then feeds the episode's measurements back.  Task
handling has three modes: ``none`` (plain controller inputs), ``bins``
(a measured task value quantised into bins, appended to the GP input) and
``time`` (the iteration index appended to the GP input, temporal kernel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gp import ModelInconsistencyError
from .metrics import EpisodeMetrics, episode_metrics, DEFAULT_Q1_WINDOW
from .plant import PlantConfig, apply_scenario, simulate, ScenarioSpec
from .pso import OptimisticSet, init_swarm, pso_optimize
from .safeset import (STEP_FACTOR, ExpansionParams, SafeGrid, boundary,
                      expansion_indicator, nearest_expander, normalized_distance,
                      pessimistic_safe_set, uncertain_boundary)

__all__ = [
    "EVALUATE",
    "EXPANDER",
    "APPLY",
    "TASK_MODES",
    "GooseConfig",
    "GooseAction",
    "Observation",
    "Goose",
    "GooseError",
    "LOG_COLUMNS",
    "run_episode_loop",
]

EVALUATE = "evaluate"
EXPANDER = "evaluate_expander"
APPLY = "apply_incumbent"
TASK_MODES = ("none", "bins", "time")

LOG_COLUMNS = ("iter", "scenario_time", "Kp", "Kv", "Ti", "tau", "bin_id", "f",
               "q1", "q2", "violated_q1", "violated_q2", "action_kind",
               "incumbent_f")


class GooseError(RuntimeError):
    """Loop misuse or an internal invariant that failed."""


@dataclass(frozen=True)
class GooseConfig:
    """Loop settings.

    ``kappa`` is in measurement units.  With ``log_outputs`` the GPs model
    ``log(y / reference)`` per output, which leaves every threshold test
    unchanged (the map is monotone) but makes multiplicative landscapes and
    noise better suited to a stationary kernel; ``epsilon`` and the GP noise
    are then in log units.

    ``bin_halfwidth`` is the task-bin tolerance in ``bins`` mode (``0`` means
    exact match).  ``window`` restricts the incumbent to the last ``window``
    iterations, which is how time-varying runs forget stale optima.
    ``reject_radius`` is in lengthscale-normalised units.

    ``task_kernel=False`` keeps the task bins (incumbents, bound caches,
    rejection lists) but drops the task value from the GP inputs, which is
    the ablation of the multi-task model.  ``reset_inconsistent`` turns a
    :class:`~safetune.gp.ModelInconsistencyError` into a reset of the bin's
    bound cache (counted in ``Goose.resets``) instead of an error.  The stopping
    test compares ``|f(x_inc) - l_f(x*)| / cost_scale`` with ``eps_tol``;
    setting ``cost_scale`` to the safe seed's mean cost makes the tolerance
    a fraction of that cost and independent of the cost's units.
    """

    kappa: tuple[float, float]
    epsilon: tuple[float, float]
    eps_tol: float = 1e-3
    task_mode: str = "none"
    bin_halfwidth: float = 0.15
    window: int | None = None
    n_particles: int = 30
    n_iterations: int = 50
    inertia: tuple[float, float] = (0.9, 0.4)
    max_requeries: int = 10
    reject_radius: float = 0.5 * STEP_FACTOR
    log_outputs: bool | tuple[bool, bool, bool] = False
    reference: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cost_scale: float = 1.0
    task_kernel: bool = True
    reset_inconsistent: bool = False

    def __post_init__(self):
        if self.task_mode not in TASK_MODES:
            raise GooseError(f"task_mode must be one of {TASK_MODES}")
        if self.eps_tol < 0 or self.bin_halfwidth < 0:
            raise GooseError("eps_tol and bin_halfwidth must be nonnegative")
        if not self.cost_scale > 0:
            raise GooseError("cost_scale must be positive")
        if self.window is not None and self.window < 1:
            raise GooseError("window must be positive")
        if self.n_particles < 1 or self.n_iterations < 1 or self.max_requeries < 0:
            raise GooseError("invalid swarm or re-query settings")
        logs = self.log_outputs
        if isinstance(logs, bool):
            logs = (logs,) * 3
        object.__setattr__(self, "log_outputs", tuple(bool(v) for v in logs))
        if len(self.log_outputs) != 3:
            raise GooseError("log_outputs needs one flag per output")
        if any(flag and r <= 0 for flag, r in zip(self.log_outputs, self.reference)):
            raise GooseError("log outputs need positive reference values")

    def to_model(self, j: int, y):
        """Map output ``j`` (0 = f, 1 = q1, 2 = q2) into GP space."""
        if not self.log_outputs[j]:
            return np.asarray(y, float)
        return np.log(np.maximum(np.asarray(y, float), 1e-300) / self.reference[j])

    def from_model(self, j: int, y):
        if not self.log_outputs[j]:
            return np.asarray(y, float)
        return self.reference[j] * np.exp(np.asarray(y, float))

    @property
    def kappa_model(self) -> tuple[float, float]:
        return tuple(float(self.to_model(j + 1, k)) for j, k in enumerate(self.kappa))

    @property
    def expansion(self) -> ExpansionParams:
        """Thresholds and margins in GP space (``epsilon`` is given there)."""
        return ExpansionParams(self.kappa_model, self.epsilon)


@dataclass
class GooseAction:
    kind: str
    x: np.ndarray
    info: dict = field(default_factory=dict)


@dataclass
class Observation:
    """One logged episode; ``learned`` marks rows that entered the GPs."""

    iteration: int
    x: np.ndarray
    kind: str
    tau: float
    bin_id: int
    task_input: float | None
    f: float
    q1: float
    q2: float
    violated: tuple[bool, bool]
    learned: bool

    @property
    def feasible(self) -> bool:
        return not any(self.violated) and math.isfinite(self.f)


@dataclass
class _Bin:
    rep: float
    seeded: bool
    rejected: list = field(default_factory=list)
    safe_history: list = field(default_factory=list)


class Goose:
    """Safe multi-task optimiser state and policy.

    Parameters
    ----------
    gp_f, gp_q1, gp_q2 : GPModel-like
        Objects exposing ``predict``, ``confidence``, ``update_bounds``,
        ``gradient_mean``, ``add_observation`` and ``kernel.ctrl_lengthscales``.
    grid : SafeGrid
        Controller lattice; the safe seed is appended as an extra point.
    seed_x : controller known to be safe in every task.
    config : GooseConfig
    rng : numpy Generator for the swarm.
    """

    def __init__(self, gp_f, gp_q1, gp_q2, grid: SafeGrid, seed_x,
                 config: GooseConfig, rng: np.random.Generator):
        self.gp_f, self.gp_q1, self.gp_q2 = gp_f, gp_q1, gp_q2
        self.seed_x = np.asarray(seed_x, float)
        self.grid = grid.with_seeds(self.seed_x[None]) if len(grid.seeds) == 0 else grid
        self.config = config
        self.rng = rng
        self.lengthscales = np.asarray(gp_q1.kernel.ctrl_lengthscales, float)
        self.bins: list[_Bin] = []
        self.current_bin: int | None = None
        self.history: list[Observation] = []
        self.pending: np.ndarray | None = None
        self.violations = 0
        self.stops = 0
        self.resets = 0
        self.last_sets: dict | None = None

    # -- task handling ----------------------------------------------------
    @property
    def iteration(self) -> int:
        return len(self.history)

    def _task_input(self, bin_id: int | None) -> float | None:
        mode = self.config.task_mode
        if mode == "none" or not self.config.task_kernel:
            return None
        if mode == "time":
            return float(self.iteration)
        return self.bins[bin_id].rep

    def _with_task(self, X, task: float | None) -> np.ndarray:
        X = np.atleast_2d(X)
        if task is None:
            return X
        return np.hstack([X, np.full((len(X), 1), task)])

    def assign_bin(self, tau: float) -> int:
        """Bin index for a measured task value, opening a bin if needed."""
        if self.config.task_mode != "bins":
            if not self.bins:
                self.bins.append(_Bin(rep=0.0, seeded=False))
            return 0
        if self.bins and math.isfinite(tau):
            dist = np.abs(np.array([b.rep for b in self.bins]) - tau)
            k = int(np.argmin(dist))
            if dist[k] <= self.config.bin_halfwidth + 1e-12:
                return k
        self.bins.append(_Bin(rep=float(tau), seeded=False))
        return len(self.bins) - 1

    # -- incumbent --------------------------------------------------------
    def incumbent(self, bin_id: int | None = None) -> Observation | None:
        """Best feasible observation of a bin (windowed if configured)."""
        bin_id = self.current_bin if bin_id is None else bin_id
        if bin_id is None:
            return None
        w = self.config.window
        if w is None:
            rows = (o for o in self.history if o.learned and o.bin_id == bin_id)
        else:
            start = self.iteration - w
            rows = (o for o in self.history[max(start, 0):] if o.bin_id == bin_id)
        best = None
        for o in rows:
            if o.feasible and (best is None or o.f < best.f):
                best = o
        return best

    # -- confidence bounds ------------------------------------------------
    def _constraint_bounds(self, X, task, key=None):
        lo, hi = [], []
        for gp in (self.gp_q1, self.gp_q2):
            XT = self._with_task(X, task)
            l, u = gp.update_bounds(XT, key) if key is not None else gp.confidence(XT)
            lo.append(np.atleast_1d(l))
            hi.append(np.atleast_1d(u))
        return np.vstack(lo), np.vstack(hi)

    def _grad_norm(self, X, task) -> np.ndarray:
        out = []
        for gp in (self.gp_q1, self.gp_q2):
            g = gp.gradient_mean(self._with_task(X, task)) * self.lengthscales
            out.append(np.abs(g).max(axis=1) if g.size else np.zeros(len(X)))
        return np.vstack(out)

    def lcb_f(self, X, task) -> np.ndarray:
        return self.gp_f.confidence(self._with_task(X, task))[0]

    def compute_sets(self, bin_id: int | None = None) -> dict:
        """Pessimistic safe, boundary and uncertain-boundary masks for a bin."""
        bin_id = self.current_bin if bin_id is None else bin_id
        task = self._task_input(bin_id)
        pts = self.grid.points
        key = ("bin", bin_id)
        try:
            lower, upper = self._constraint_bounds(pts, task, key)
        except ModelInconsistencyError:
            if not self.config.reset_inconsistent:
                raise
            self.resets += 1
            for gp in (self.gp_q1, self.gp_q2):
                gp.clear_bounds(key)
            lower, upper = self._constraint_bounds(pts, task, key)
        kappa = np.asarray(self.config.kappa_model)
        S = pessimistic_safe_set(upper, kappa, force=self.grid.seed_indices)
        L = boundary(self.grid, S)
        W = uncertain_boundary(L, lower, upper, self.config.epsilon)
        if not S.any():
            raise GooseError("pessimistic safe set is empty despite the seed")
        sets = dict(bin=bin_id, task=task, safe=S, boundary=L, uncertain=W,
                    lower=lower, upper=upper)
        self.last_sets = sets
        return sets

    # -- policy -----------------------------------------------------------
    def step(self) -> GooseAction:
        """Choose the next action for the current task."""
        if self.current_bin is None or not self.bins[self.current_bin].seeded:
            return GooseAction(EVALUATE, self.seed_x.copy(), {"seed": True})
        cfg = self.config
        b = self.bins[self.current_bin]
        sets = self.compute_sets()
        task = sets["task"]
        pts = self.grid.points
        W = np.flatnonzero(sets["uncertain"])
        xw = pts[W]
        params = cfg.expansion
        region = OptimisticSet(
            upper=lambda P: self._constraint_bounds(P, task)[1],
            expanders=xw,
            expander_lower=sets["lower"][:, W],
            expander_grad=self._grad_norm(xw, task) if len(W) else np.zeros((2, 0)),
            params=params,
            lengthscales=self.lengthscales,
            rejected=np.array(b.rejected) if b.rejected else np.empty((0, 0)),
            reject_radius=cfg.reject_radius,
        )
        inc = self.incumbent()
        info = {"requeries": 0, "n_safe": int(sets["safe"].sum()), "n_expanders": len(W)}
        for attempt in range(cfg.max_requeries + 1):
            info["requeries"] = attempt
            if self.pending is not None and attempt == 0:
                x_star = self.pending
                info["pending"] = True
            else:
                x_star = self._suggest(sets, region)
                info["pending"] = False
            info["x_star"] = x_star
            lcb = float(self.config.from_model(0, self.lcb_f(x_star, task)[0]))
            info["lcb_star"] = lcb
            if inc is not None:
                gap = abs(inc.f - lcb) / cfg.cost_scale
                info["gap"] = gap
                if gap < cfg.eps_tol:
                    self.pending = None
                    self.stops += 1
                    return GooseAction(APPLY, inc.x.copy(), info | {"reason": "converged"})
            if region.pessimistic(x_star)[0]:
                self.pending = None
                return GooseAction(EVALUATE, np.array(x_star, float), info)
            if len(W):
                dist = normalized_distance(xw, x_star, self.lengthscales)[:, 0]
                g = expansion_indicator(region.expander_lower, region.expander_grad,
                                        dist[:, None], params)[:, 0]
                k = nearest_expander(g, dist)
                if k is not None:
                    self.pending = np.array(x_star, float)
                    return GooseAction(EXPANDER, xw[k].copy(),
                                       info | {"target": self.pending.copy()})
            # unreachable suggestion: exclude it and ask again
            self.pending = None
            b.rejected.append(np.array(x_star, float))
            region.rejected = np.array(b.rejected)
        x = inc.x.copy() if inc is not None else self.seed_x.copy()
        return GooseAction(APPLY, x, info | {"reason": "exhausted"})

    def _suggest(self, sets, region: OptimisticSet) -> np.ndarray:
        cfg = self.config
        task = sets["task"]
        pts = self.grid.points
        safe_pts = pts[sets["safe"]]
        swarm = init_swarm(safe_pts, cfg.n_particles, self.grid.resolution,
                           self.grid.spacing, self.grid.lower, self.grid.upper, self.rng)

        def fallback():
            cand = safe_pts[~region.excluded(safe_pts)]
            if len(cand) == 0:
                return self.seed_x.copy()
            return cand[int(np.argmin(self.lcb_f(cand, task)))]

        res = pso_optimize(lambda P: self.lcb_f(P, task), region.contains, swarm,
                           self.grid.resolution, self.grid.lower, self.grid.upper,
                           cfg.n_iterations, self.rng, cfg.inertia, fallback)
        return res.x

    # -- feedback ---------------------------------------------------------
    def record(self, action: GooseAction, metrics: EpisodeMetrics | tuple,
               tau: float) -> Observation:
        """Log an executed action and update models, bins and counters."""
        if isinstance(metrics, EpisodeMetrics):
            f, q1, q2 = metrics.f, metrics.q1, metrics.q2
        else:
            f, q1, q2 = (float(v) for v in metrics)
        k1, k2 = self.config.kappa
        violated = (not q1 <= k1, not q2 <= k2)
        bin_id = self.assign_bin(tau)
        b = self.bins[bin_id]
        if action.info.get("seed"):
            b.seeded = True
        task_input = self._task_input(bin_id)
        learn = action.kind != APPLY and all(math.isfinite(v) for v in (f, q1, q2))
        obs = Observation(self.iteration, np.asarray(action.x, float), action.kind,
                          float(tau), bin_id, task_input, f, q1, q2, violated, learn)
        if learn:
            xin = self._with_task(obs.x, task_input)[0]
            for j, (gp, y) in enumerate(zip((self.gp_f, self.gp_q1, self.gp_q2), (f, q1, q2))):
                gp.add_observation(xin, float(self.config.to_model(j, y)))
            for other in self.bins:
                other.rejected.clear()
        if any(violated):
            self.violations += 1
        if bin_id != self.current_bin:
            self.pending = None
        self.current_bin = bin_id
        self.history.append(obs)
        return obs


# -- episode loop -----------------------------------------------------------

def _task_value(source: str, metrics: EpisodeMetrics, cfg: PlantConfig, it: int) -> float:
    if source == "tau_m":
        return metrics.tau_m
    if source == "tau_b":
        return metrics.tau_b
    if source == "kff":
        return cfg.kff
    if source == "time":
        return float(it)
    return metrics.tau_m


def run_episode_loop(goose: Goose, scenario: str, budget: int, plant: PlantConfig,
                     ref, noise_rng: np.random.Generator, task_source: str = "tau_m",
                     spec: ScenarioSpec | None = None, q1_window=DEFAULT_Q1_WINDOW,
                     on_row: Callable[[dict], None] | None = None) -> list[dict]:
    """Run ``budget`` plant episodes driven by ``goose``.

    ``task_source`` picks the logged task value: ``tau_m``, ``tau_b``,
    ``kff`` or ``time``.  Returns one dict per episode keyed by
    :data:`LOG_COLUMNS`.
    """
    rows = []
    duration = len(ref[0]) * plant.dt
    for it in range(goose.iteration, goose.iteration + budget):
        cfg = apply_scenario(plant, scenario, it, spec)
        action = goose.step()
        try:
            traj = simulate(action.x, cfg, ref, noise_rng)
        except Exception as exc:  # pragma: no cover - numba errors are exotic
            raise GooseError(f"plant simulation failed at iteration {it}: {exc}") from exc
        m = episode_metrics(traj, q1_window)
        tau = _task_value(task_source, m, cfg, it)
        obs = goose.record(action, m, tau)
        inc = goose.incumbent()
        row = {
            "iter": it,
            "scenario_time": it * duration,
            "Kp": obs.x[0], "Kv": obs.x[1], "Ti": obs.x[2],
            "tau": tau,
            "bin_id": obs.bin_id,
            "f": m.f, "q1": m.q1, "q2": m.q2,
            "violated_q1": int(obs.violated[0]),
            "violated_q2": int(obs.violated[1]),
            "action_kind": action.kind,
            "incumbent_f": inc.f if inc is not None else math.nan,
        }
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows
