import numpy as np
import pytest
from scipy import stats

from safetune.pso import (OptimisticSet, PSOError, init_swarm, inertia_schedule,
                          pso_optimize)
from safetune.safeset import ExpansionParams, expansion_indicator, normalized_distance

LO = np.array([0.0, 0.0])
HI = np.array([10.0, 10.0])
DX = np.array([1.0, 1.0])


def test_single_particle_single_cell(rng):
    s = init_swarm([[3.0, 4.0]], 1, DX, [0.0, 0.0], LO, HI, rng)
    np.testing.assert_array_equal(s.position, [[3.0, 4.0]])
    np.testing.assert_array_equal(np.abs(s.velocity), [[1.0, 1.0]])
    assert s.best_fitness[0] == np.inf


def test_init_positions_within_cells(rng):
    cells = np.array([[1.0, 1.0], [5.0, 5.0], [9.0, 2.0]])
    jit = np.array([0.5, 0.5])
    for _ in range(10):
        s = init_swarm(cells, 100, DX, jit, LO, HI, rng)
        d = np.abs(s.position[:, None, :] - cells[None]).max(axis=2)
        assert np.all(d.min(axis=1) <= 0.25)


def test_init_uniform_chi2(rng):
    cells = np.arange(5.0)[:, None] * np.ones((1, 2))
    s = init_swarm(cells, 10_000, DX, [0.0, 0.0], LO, HI, rng)
    counts = np.array([(s.position[:, 0] == c).sum() for c in range(5)])
    assert counts.sum() == 10_000
    assert stats.chisquare(counts).pvalue > 0.01


def test_init_errors(rng):
    with pytest.raises(PSOError):
        init_swarm(np.empty((0, 2)), 5, DX, DX, LO, HI, rng)
    with pytest.raises(PSOError):
        init_swarm([[1.0, 1.0]], 0, DX, DX, LO, HI, rng)


def test_inertia_schedule():
    a = inertia_schedule(50)
    assert a[0] == 0.9 and a[-1] == pytest.approx(0.4) and np.all(np.diff(a) < 0)
    assert inertia_schedule(1).tolist() == [0.9]


def quad(c):
    return lambda P: ((np.atleast_2d(P) - c) ** 2).sum(axis=1)


def always(P):
    return np.ones(len(np.atleast_2d(P)), bool)


def test_convex_quadratic_argmin(rng):
    c = np.array([6.3, 2.7])
    cells = np.stack(np.meshgrid(np.arange(11.0), np.arange(11.0)), -1).reshape(-1, 2)
    s = init_swarm(cells, 30, DX, DX, LO, HI, rng)
    r = pso_optimize(quad(c), always, s, DX, LO, HI, 60, rng)
    assert not r.fallback
    assert np.all(np.abs(r.x - c) <= DX)


def test_one_particle_one_iteration(rng):
    s = init_swarm([[3.0, 4.0]], 1, DX, [0.0, 0.0], LO, HI, rng)
    r = pso_optimize(quad(np.zeros(2)), always, s, DX, LO, HI, 1, rng)
    np.testing.assert_array_equal(r.x, [3.0, 4.0])
    assert r.fitness == 25.0


def test_history_nonincreasing_and_clamped(rng):
    for _ in range(5):
        s = init_swarm(rng.uniform(0, 10, (8, 2)), 12, DX * 3, DX, LO, HI, rng)
        seen = []

        def fit(P):
            seen.append(P.copy())
            return np.sin(P).sum(axis=1) + 0.1 * P[:, 0]

        member = lambda P: P[:, 1] < 7.0  # noqa: E731
        r = pso_optimize(fit, member, s, DX * 3, LO, HI, 40, rng)
        assert np.all(np.diff(r.history) <= 0)
        P = np.concatenate(seen)
        assert np.all((P >= LO) & (P <= HI))
        assert r.x[1] < 7.0
        assert np.all(np.abs(s.velocity) <= 6.0 + 1e-12)


def test_fallback_when_never_member(rng):
    s = init_swarm([[1.0, 1.0]], 4, DX, DX, LO, HI, rng)
    never = lambda P: np.zeros(len(P), bool)  # noqa: E731
    r = pso_optimize(quad(np.zeros(2)), never, s, DX, LO, HI, 5, rng,
                     fallback=lambda: np.array([1.0, 1.0]))
    assert r.fallback and r.fitness == 2.0
    with pytest.raises(PSOError):
        pso_optimize(quad(np.zeros(2)), never, init_swarm([[1.0, 1.0]], 2, DX, DX, LO, HI, rng),
                     DX, LO, HI, 3, rng)
    with pytest.raises(PSOError):
        pso_optimize(quad(np.zeros(2)), always, s, DX, LO, HI, 0, rng)


def test_determinism():
    def go(seed):
        rng = np.random.default_rng(seed)
        s = init_swarm(rng.uniform(0, 10, (6, 2)), 10, DX, DX, LO, HI, rng)
        return pso_optimize(quad(np.array([2.0, 8.0])), always, s, DX, LO, HI, 20, rng).x
    np.testing.assert_array_equal(go(4), go(4))


# -- optimistic set membership ------------------------------------------------

def make_set(rng, nw=6):
    params = ExpansionParams((0.0, 0.0), (0.2, 0.2))
    ls = np.array([1.0, 1.0])
    W = rng.uniform(0, 10, (nw, 2))
    lower = rng.normal(-1.0, 0.5, (2, nw))
    grad = rng.uniform(0.0, 2.0, (2, nw))

    def upper(P):
        u = 0.3 * (np.atleast_2d(P)[:, 0] - 3.0)
        return np.vstack([u, u - 0.5])

    return OptimisticSet(upper, W, lower, grad, params, ls), params, W, lower, grad, upper


def test_membership_brute_force(rng):
    oset, params, W, lower, grad, upper = make_set(rng)
    P = rng.uniform(-2, 12, (300, 2))
    got = oset.contains(P)
    for i, p in enumerate(P):
        safe = bool(np.all(upper(p) <= 0.0))
        reach = False
        for w in range(len(W)):
            d = normalized_distance(W[w:w + 1], p[None], [1.0, 1.0])
            if expansion_indicator(lower[:, w:w + 1], grad[:, w:w + 1], d, params)[0, 0]:
                reach = True
        assert got[i] == (safe or reach)


def test_membership_trivial_cases(rng):
    oset, *_ = make_set(rng)
    assert oset.contains([[0.0, 0.0]])[0]          # pessimistically safe
    far = OptimisticSet(oset.upper, oset.expanders, oset.expander_lower, oset.expander_grad,
                        oset.params, oset.lengthscales)
    assert not far.contains([[1e4, 1e4]])[0]
    empty = OptimisticSet(oset.upper, np.empty((0, 2)), np.empty((2, 0)), np.empty((2, 0)),
                          oset.params, oset.lengthscales)
    assert not empty.contains([[9.0, 9.0]])[0]


def test_rejection_radius(rng):
    oset, *_ = make_set(rng)
    oset.rejected = np.array([[0.0, 0.0]])
    oset.reject_radius = 0.5
    assert not oset.contains([[0.1, 0.1]])[0]
    assert oset.contains([[1.0, 1.0]])[0]
