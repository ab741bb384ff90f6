import pytest

from safetune.config import (SCENARIO_PRESETS, ConfigError, ExperimentConfig, load_config,
                             parse_seeds)
from safetune.plant import SCENARIOS


def test_parse_seeds():
    assert parse_seeds("0-3,7") == (0, 1, 2, 3, 7)
    assert parse_seeds(" 5 ") == (5,)
    for bad in ("", "a", "1-b", ","):
        with pytest.raises(ConfigError):
            parse_seeds(bad)


def test_presets_cover_scenarios():
    assert set(SCENARIO_PRESETS) == set(SCENARIOS)
    drift = ExperimentConfig.for_scenario("damping-drift")
    assert drift.model.kernel == "multitask-temporal" and drift.loop.window == 30
    assert drift.model.temporal_epsilon == 1e-4
    assert drift.model.noise_floor == (0.003, 0.04, 0.06)
    inertia = ExperimentConfig.for_scenario("inertia-switch")
    assert inertia.loop.eps_tol == 2e-3 and inertia.loop.bin_halfwidth == 0.15


def test_override_reapplies_preset():
    cfg = ExperimentConfig().with_overrides(scenario="damping-drift", budget=7)
    assert cfg.loop.task_mode == "time" and cfg.budget == 7
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(budget=0)


def test_load_full_config():
    cfg = load_config(text="""
[experiment]
scenario = inertia-switch
seeds = 0-2
budget = 40
method = cbo
seed_x = 20, 0.04, 4
[plant]
m = 0.02
ripple_amplitude = 0.1
[reference]
amplitude_deg = 3
[model]
beta = 2.5
signal_sd = 1, 1, 1
[goose]
n_particles = 10
window = 15
[calibration]
mode = fixed
kappa1 = 100
kappa2 = 20
noise_f = 1e-4
noise_q1 = 1e-3
noise_q2 = 1e-3
reference_f = 10
[metrics]
q1_window = 50, 500
""")
    assert cfg.scenario == "inertia-switch" and cfg.seeds == (0, 1, 2)
    assert cfg.budget == 40 and cfg.method == "cbo" and cfg.seed_x == (20.0, 0.04, 4.0)
    assert cfg.plant.m == 0.02 and cfg.plant.ripple_amplitude == 0.1
    assert cfg.reference.amplitude_deg == 3.0
    assert cfg.model.beta == 2.5 and cfg.model.kernel == "multitask-product"
    assert cfg.loop.n_particles == 10 and cfg.loop.window == 15
    assert cfg.calibration.kappa == (100.0, 20.0) and cfg.calibration.reference_f == 10.0
    assert cfg.q1_window == (50.0, 500.0)


@pytest.mark.parametrize("text", [
    "[experiment]\nscenario = earthquake\n",
    "[experiment]\nflavour = mild\n",
    "[plant]\nmass = 1\n",
    "[plant]\nm = -1\n",
    "[goose]\nn_particles = many\n",
    "[model]\nkernel = matern\n",
    "[calibration]\nkappa1 = 5\n",
    "[calibration]\nmode = fixed\n",
    "[calibration]\nfile = /nonexistent/cal.ini\n",
    "[experiment]\nmethod = random\n",
    "not an ini file",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        load_config(text=text)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.ini")
