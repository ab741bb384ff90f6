"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The experiment fixtures are module scoped so every run is simulated once.
Full suite runtime is dominated by the 300-iteration scenario runs
(roughly a quarter of an hour on one core).
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from safetune.__main__ import main
from safetune.config import ExperimentConfig
from safetune.goose import Goose, run_episode_loop
from safetune.gp import JITTER, GPModel, KernelConfig
from safetune.harness import build_models, calibrate, rng_streams, run_seed, save_calibration
from safetune.plant import (PlantConfig, ReferenceProfile, _run_kernel, make_reference,
                            simulate, zoh_matrices)
from safetune.pso import init_swarm, pso_optimize
from safetune.safeset import build_grid

from conftest import oracle_kernel, oracle_posterior, report_criterion

SEEDS = range(10)
MODES = ("se-ard", "multitask-product", "multitask-temporal")
LS = (30.0, 0.03, 3.0)
LO = np.array([5.0, 0.01, 1.0])
HI = np.array([50.0, 0.11, 10.0])
SWITCH = 200   # first iteration after the return to nominal inertia


def violated(r):
    return bool(r["violated_q1"] or r["violated_q2"])


# -- shared experiments ---------------------------------------------------------

@pytest.fixture(scope="module")
def calibrated():
    """Calibration with the grid oracle evaluated under the final kappa."""
    cal, grid = calibrate(ExperimentConfig())
    return cal, grid


def scenario_runs(cal, scenario, budget, **loop):
    cfg = ExperimentConfig.for_scenario(scenario, budget=budget)
    if loop:
        cfg = replace(cfg, loop=replace(cfg.loop, **loop))
    ref = make_reference(cfg.reference, cfg.plant.dt)
    return [run_seed(cfg, cal, s, ref) for s in SEEDS]


@pytest.fixture(scope="module")
def stationary(calibrated):
    t = time.perf_counter()
    runs = scenario_runs(calibrated[0], "stationary", 100)
    return runs, time.perf_counter() - t


@pytest.fixture(scope="module")
def inertia(calibrated):
    return scenario_runs(calibrated[0], "inertia-switch", 300)


# -- 1. GP oracle ---------------------------------------------------------------

def random_inputs(rng, n, mode):
    X = LO + rng.random((n, 3)) * (HI - LO)
    if mode == "multitask-product":
        X = np.hstack([X, rng.normal(0, 0.5, (n, 1))])
    elif mode == "multitask-temporal":
        X = np.hstack([X, rng.integers(0, 300, (n, 1)).astype(float)])
    return X


def kernel_config(mode, sv):
    if mode == "multitask-product":
        return KernelConfig(LS + (0.5,), sv, mode)
    return KernelConfig(LS, sv, mode, 1e-4 if mode == "multitask-temporal" else 0.0)


def test_criterion_01_gp_oracle_equivalence():
    rng = np.random.default_rng(101)
    t = time.perf_counter()
    worst = 0.0
    for k in range(50):
        mode = MODES[k % 3]
        cfg = kernel_config(mode, rng.uniform(0.2, 2.0))
        n = int(rng.integers(1, 31))
        noise = 10 ** rng.uniform(-4, -1)
        X, Q = random_inputs(rng, n, mode), random_inputs(rng, 10, mode)
        y = rng.normal(size=n)
        m, v = GPModel(cfg, noise).add_observations(X, y).predict(Q)

        def kf(a, b):
            return oracle_kernel(a, b, cfg.lengthscales, cfg.signal_variance, mode,
                                 cfg.temporal_epsilon)

        mo, vo = oracle_posterior(X, y, Q, kf, noise, JITTER * cfg.signal_variance)
        worst = max(worst, np.abs(m - mo).max(), np.abs(v - vo).max())
    elapsed = time.perf_counter() - t
    ok = worst <= 1e-8 and elapsed < 10.0
    assert report_criterion(1, "GP oracle equivalence", ok,
                            f"max abs error {worst:.2e} over 50 datasets in {elapsed:.2f} s")


# -- 2. gradient ----------------------------------------------------------------

def test_criterion_02_gradient_check():
    rng = np.random.default_rng(202)
    worst = 0.0
    for k in range(50):
        mode = MODES[k % 3]
        gp = GPModel(kernel_config(mode, 1.0), 0.05)
        gp.add_observations(random_inputs(rng, 15, mode), rng.normal(size=15))
        x = random_inputs(rng, 1, mode)[0]
        fd = np.zeros(3)
        for d, l in enumerate(LS):
            e = np.zeros(len(x))
            e[d] = 1e-4 * l
            fd[d] = (gp.posterior(x + e)[0] - gp.posterior(x - e)[0]) / (2 * e[d])
        g = gp.gradient_mean(x)[0]
        # components far below the gradient scale are compared absolutely
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-5 * np.abs(fd).max())
        worst = max(worst, rel.max())
    assert report_criterion(2, "gradient check", worst <= 1e-4,
                            f"max relative error {worst:.2e} over 50 cases")


# -- 3. bound monotonicity ------------------------------------------------------

def test_criterion_03_bound_monotonicity(calibrated):
    cal = calibrated[0]
    cfg = ExperimentConfig.for_scenario("stationary", budget=100)
    gps, gc = build_models(cfg, cal)
    streams = rng_streams(0)
    goose = Goose(*gps, build_grid(cfg.domain, cfg.model.lengthscales),
                  np.asarray(cfg.seed_x), gc, streams["pso"])
    snapshots = []

    def capture(row):
        snapshots.append([gp.cached_bounds(("bin", 0)) for gp in gps[1:]])

    run_episode_loop(goose, cfg.scenario, cfg.budget, cfg.plant,
                     make_reference(cfg.reference, cfg.plant.dt), streams["plant"],
                     on_row=capture)
    exceptions = checked = 0
    for prev, cur in zip(snapshots, snapshots[1:]):
        for a, b in zip(prev, cur):
            if a is None:
                continue
            exceptions += int(np.sum((b[0] < a[0]) | (b[1] > a[1])))
            checked += a[0].size
    ok = exceptions == 0 and checked > 0 and len(snapshots) == 100
    assert report_criterion(3, "bound monotonicity", ok,
                            f"{exceptions} exceptions in {checked} interval checks")


# -- 4. safety headline ---------------------------------------------------------

def test_criterion_04_stationary_safety(stationary):
    runs, elapsed = stationary
    total = sum(violated(r) for rows, _ in runs for r in rows)
    ok = total == 0 and elapsed < 300.0
    assert report_criterion(4, "stationary safety", ok,
                            f"{total} violations in 10 runs of 100, {elapsed:.0f} s")


# -- 5. baseline contrast -------------------------------------------------------

def test_criterion_05_cbo_violates(calibrated):
    cfg = ExperimentConfig(method="cbo", budget=30)
    ref = make_reference(cfg.reference, cfg.plant.dt)
    counts = [sum(violated(r) for r in run_seed(cfg, calibrated[0], s, ref)[0]) for s in SEEDS]
    hits = sum(c > 0 for c in counts)
    assert report_criterion(5, "CBO baseline contrast", hits >= 5,
                            f"{hits}/10 runs violate, counts {counts}")


# -- 6. optimality --------------------------------------------------------------

def test_criterion_06_optimality(calibrated, stationary):
    f_grid = calibrated[1].f_best
    best = [min(r["f"] for r in rows if not violated(r)) for rows, _ in stationary[0]]
    close = sum(abs(b - f_grid) <= 0.05 * f_grid for b in best)
    assert report_criterion(6, "optimality vs grid oracle", close >= 9,
                            f"{close}/10 within 5% of {f_grid:.3f}, "
                            f"best {min(best):.3f}..{max(best):.3f}")


# -- 7 and 8. inertia switch ----------------------------------------------------

def phase3_hit(rows):
    inc1 = rows[99]["incumbent_f"]
    return next((k for k, r in enumerate(rows[SWITCH:SWITCH + 10])
                 if r["f"] <= 1.1 * inc1 and not violated(r)), None)


def test_criterion_07_adaptation_speed(inertia):
    hits = [phase3_hit(rows) for rows, _ in inertia]
    n = sum(h is not None for h in hits)
    assert report_criterion(7, "adaptation speed", n >= 8,
                            f"{n}/10 seeds within 10% in 10 episodes, hit at {hits}")


def test_criterion_08_ablation(calibrated, inertia):
    ablation = scenario_runs(calibrated[0], "inertia-switch", 300,
                             task_kernel=False, reset_inconsistent=True)
    unsafe = sum(any(violated(r) for r in rows[SWITCH:]) for rows, _ in ablation)
    aware = sum(violated(r) for rows, _ in inertia for r in rows)
    at_switch = sum(violated(r) for rows, _ in inertia for r in rows if r["iter"] == SWITCH)
    ok = unsafe >= 5 and aware == 0
    assert report_criterion(8, "task-kernel ablation", ok,
                            f"ablation unsafe after switch in {unsafe}/10 seeds; task-aware "
                            f"violations {aware} ({at_switch} on the switch episode)")


# -- 9. drift -------------------------------------------------------------------

def test_criterion_09_drift(calibrated):
    runs = scenario_runs(calibrated[0], "damping-drift", 300)
    viol = [sum(violated(r) for r in rows) for rows, _ in runs]
    stops = [opt.stops for _, opt in runs]
    ok = sum(viol) == 0 and min(stops) >= 30
    assert report_criterion(9, "damping drift", ok,
                            f"violations {viol}, stops {stops}")


# -- 10. PSO --------------------------------------------------------------------

def test_criterion_10_pso_quadratic():
    lo, hi, dx = np.zeros(3), np.array([10.0, 10.0, 10.0]), np.ones(3)
    cells = np.stack(np.meshgrid(*[np.arange(11.0)] * 3), -1).reshape(-1, 3)
    good = 0
    for s in range(20):
        rng = np.random.default_rng(s)
        c = rng.uniform(lo, hi)
        scale = rng.uniform(0.5, 3.0, 3)

        def fitness(P):
            return ((np.atleast_2d(P) - c) ** 2 * scale).sum(axis=1)

        swarm = init_swarm(cells, 30, dx, dx, lo, hi, rng)
        r = pso_optimize(fitness, lambda P: np.ones(len(np.atleast_2d(P)), bool), swarm,
                         dx, lo, hi, 50, rng)
        good += int(np.all(np.abs(r.x - c) <= dx))
    assert report_criterion(10, "PSO on a convex quadratic", good == 20,
                            f"{good}/20 within one grid step")


# -- 11. plant physics ----------------------------------------------------------

def rk4(x0, T, m, b, dt, steps=1000):
    h = dt / steps
    s = np.array(x0, float)
    f = lambda s: np.array([s[1], (T - b * s[1]) / m])  # noqa: E731
    for _ in range(steps):
        k1 = f(s)
        k2 = f(s + 0.5 * h * k1)
        k3 = f(s + 0.5 * h * k2)
        k4 = f(s + h * k3)
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s


def test_criterion_11_plant_physics():
    quiet = PlantConfig(cogging=(0.0, 0.0, 1.0, 0.0, 0.0), ripple_amplitude=0.0,
                        torque_noise_variance=0.0)
    n, T = 4000, 0.5
    z = np.zeros(n)
    _, v, _, _, _ = _run_kernel(z, z, np.full(n, T), np.array([0.0, 0.0, 1.0]), quiet)
    dc = abs(v[-1] / (T / quiet.b) - 1)

    rng = np.random.default_rng(11)
    zoh = 0.0
    for _ in range(10):
        m, b = rng.uniform(0.01, 0.05), rng.uniform(10, 60)
        dt, x0, Tq = 10 ** rng.uniform(-4, -2.5), rng.normal(size=2), rng.normal()
        ad, bd = zoh_matrices(m, b, dt)
        exact = rk4(x0, Tq, m, b, dt)
        zoh = max(zoh, np.max(np.abs(ad @ x0 + bd * Tq - exact) / np.abs(exact)))

    cfg = PlantConfig(torque_noise_variance=0.0, ripple_amplitude=0.0, delay_steps=0)
    tr = simulate((15.0, 0.05, 3.0), cfg, make_reference(ReferenceProfile(amplitude_deg=0.0),
                                                         cfg.dt), None)
    rest = float(max(np.abs(tr.p).max(), np.abs(tr.v).max()))
    ok = dc <= 1e-4 and zoh <= 1e-8 and rest == 0.0
    assert report_criterion(11, "plant physics", ok,
                            f"DC gain error {dc:.1e}, ZOH error {zoh:.1e}, rest drift {rest}")


# -- 12. determinism ------------------------------------------------------------

def test_criterion_12_determinism(tmp_path, calibrated):
    cal_file = tmp_path / "calibration.ini"
    save_calibration(calibrated[0], cal_file)
    jobs = [("goose", "stationary", "5"), ("goose", "inertia-switch", "5"),
            ("goose", "damping-drift", "5"), ("cbo", "stationary", "3")]
    outputs = []
    for rep in ("a", "b"):
        files = {}
        for method, scenario, budget in jobs:
            cfg = tmp_path / f"{method}.ini"
            cfg.write_text(f"[experiment]\nmethod = {method}\n[calibration]\nfile = {cal_file}\n")
            out = tmp_path / rep
            code = main(["run", "--config", str(cfg), "--scenario", scenario, "--seeds", "0,1",
                         "--budget", budget, "--out", str(out)])
            assert code == 0
        for p in sorted((tmp_path / rep).rglob("*.csv")):
            files[p.relative_to(tmp_path / rep)] = p.read_bytes()
        outputs.append(files)
    same = outputs[0].keys() == outputs[1].keys() and all(
        outputs[0][k] == outputs[1][k] for k in outputs[0])
    n = len(outputs[0])
    assert report_criterion(12, "determinism", same and n >= 14,
                            f"{n} CSV artifacts compared byte for byte")
