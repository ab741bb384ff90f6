"""Particle swarm search over the implicit optimistic safe set.

The swarm minimises a fitness (the objective's lower confidence bound) but
only records personal and global bests at positions that pass a membership
test.  Membership is supplied by :class:`OptimisticSet`, which never
materialises the optimistic set: a point belongs to it if it is
pessimistically safe or some uncertain boundary point can optimistically
expand to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .safeset import ExpansionParams, expansion_indicator, normalized_distance

__all__ = [
    "Swarm",
    "OptimisticSet",
    "PSOResult",
    "PSOError",
    "init_swarm",
    "inertia_schedule",
    "pso_optimize",
]


class PSOError(ValueError):
    """Invalid swarm arguments."""


@dataclass
class Swarm:
    position: np.ndarray        # (m, D)
    velocity: np.ndarray        # (m, D)
    best_position: np.ndarray   # (m, D)
    best_fitness: np.ndarray    # (m,), +inf until a member improves it
    global_position: np.ndarray | None = None
    global_fitness: float = np.inf

    @property
    def m(self) -> int:
        return len(self.position)


@dataclass
class OptimisticSet:
    """Membership oracle for the one-step optimistic safe set.

    Parameters
    ----------
    upper : callable
        ``upper(P) -> (k, n)`` raw upper confidence bounds of the constraints.
    expanders : array, shape (nw, D)
        Uncertain boundary points (may be empty).
    expander_lower, expander_grad : array, shape (k, nw)
        Lower bounds and gradient norms at the expanders.
    params : ExpansionParams
    lengthscales : controller lengthscales for the distance metric.
    rejected : array, shape (nr, D)
        Suggestions excluded from the set within ``reject_radius``
        (normalised distance).
    """

    upper: Callable[[np.ndarray], np.ndarray]
    expanders: np.ndarray
    expander_lower: np.ndarray
    expander_grad: np.ndarray
    params: ExpansionParams
    lengthscales: np.ndarray
    rejected: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    reject_radius: float = 0.0

    def pessimistic(self, P) -> np.ndarray:
        u = np.atleast_2d(self.upper(np.atleast_2d(P)))
        return np.all(u <= self.params.kappa_arr, axis=0)

    def reachable(self, P) -> np.ndarray:
        """Some expander ``x`` has ``g(x, p) = 1``."""
        P = np.atleast_2d(P)
        if len(self.expanders) == 0:
            return np.zeros(len(P), bool)
        dist = normalized_distance(self.expanders, P, self.lengthscales)
        g = expansion_indicator(self.expander_lower, self.expander_grad, dist, self.params)
        return g.any(axis=0)

    def excluded(self, P) -> np.ndarray:
        P = np.atleast_2d(P)
        if self.rejected.size == 0:
            return np.zeros(len(P), bool)
        dist = normalized_distance(self.rejected, P, self.lengthscales)
        return (dist <= self.reject_radius).any(axis=0)

    def contains(self, P) -> np.ndarray:
        P = np.atleast_2d(P)
        return (self.pessimistic(P) | self.reachable(P)) & ~self.excluded(P)


@dataclass
class PSOResult:
    x: np.ndarray
    fitness: float
    history: np.ndarray     # global-best fitness after each iteration
    fallback: bool


def inertia_schedule(J: int, start: float = 0.9, end: float = 0.4) -> np.ndarray:
    return np.linspace(start, end, J) if J > 1 else np.array([start])


def init_swarm(safe_points, m: int, dx, jitter, lower, upper,
               rng: np.random.Generator) -> Swarm:
    """Particles drawn uniformly over ``safe_points``, jittered within a cell.

    ``jitter`` is the cell size per dimension; each coordinate moves by a
    uniform offset in ``[-jitter/2, jitter/2)`` and is clamped to the domain.
    Velocities are ``±dx`` per dimension with independent random signs.
    """
    safe_points = np.atleast_2d(np.asarray(safe_points, float))
    if len(safe_points) == 0 or safe_points.size == 0:
        raise PSOError("cannot initialise a swarm from an empty safe set")
    if m < 1:
        raise PSOError("need at least one particle")
    D = safe_points.shape[1]
    dx = np.asarray(dx, float)
    jitter = np.asarray(jitter, float)
    pick = rng.integers(len(safe_points), size=m)
    offset = (rng.random((m, D)) - 0.5) * jitter
    pos = np.clip(safe_points[pick] + offset, lower, upper)
    vel = dx * rng.choice([-1.0, 1.0], size=(m, D))
    return Swarm(pos, vel, pos.copy(), np.full(m, np.inf))


def pso_optimize(fitness: Callable[[np.ndarray], np.ndarray],
                 member: Callable[[np.ndarray], np.ndarray],
                 swarm: Swarm, dx, lower, upper, J: int,
                 rng: np.random.Generator,
                 inertia: tuple[float, float] = (0.9, 0.4),
                 fallback: Callable[[], np.ndarray] | None = None) -> PSOResult:
    """Run ``J`` swarm iterations and return the global best member.

    Each iteration evaluates all particles, updates bests where the
    particle is a member and its fitness improves, then moves the swarm with
    ``v <- a_j v + r1 (z_i - p) + r2 (z - p)`` where ``r1, r2 ~ U[0, 2]`` are
    drawn once per iteration.  Velocities are clamped to ``2 dx`` and
    positions to the domain.  If no particle ever qualifies, ``fallback()``
    supplies the answer.
    """
    if J < 1:
        raise PSOError("J must be >= 1")
    dx = np.asarray(dx, float)
    vmax = 2.0 * dx
    alpha = inertia_schedule(J, *inertia)
    history = np.empty(J)
    s = swarm
    for j in range(J):
        fit = np.asarray(fitness(s.position), float)
        ok = np.asarray(member(s.position), bool)
        better = ok & (fit < s.best_fitness)
        s.best_fitness = np.where(better, fit, s.best_fitness)
        s.best_position[better] = s.position[better]
        k = int(np.argmin(s.best_fitness))
        if s.best_fitness[k] < s.global_fitness:
            s.global_fitness = float(s.best_fitness[k])
            s.global_position = s.best_position[k].copy()
        history[j] = s.global_fitness
        if j == J - 1:
            break
        r1, r2 = rng.uniform(0.0, 2.0, size=2)
        social = 0.0 if s.global_position is None else s.global_position - s.position
        v = alpha[j] * s.velocity + r1 * (s.best_position - s.position) + r2 * social
        s.velocity = np.clip(v, -vmax, vmax)
        s.position = np.clip(s.position + s.velocity, lower, upper)
    if s.global_position is None:
        if fallback is None:
            raise PSOError("no particle entered the feasible region and no fallback given")
        x = np.asarray(fallback(), float)
        return PSOResult(x, float(np.asarray(fitness(x[None]))[0]), history, True)
    return PSOResult(s.global_position.copy(), s.global_fitness, history, False)
