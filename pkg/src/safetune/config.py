"""Experiment configuration read from flat ``key = value`` files.

A config file has up to seven sections, all optional::

    [experiment]   scenario, method (goose | cbo), budget, seeds, out
    [plant]        PlantConfig overrides (m, b, torque_noise_variance, ...)
    [reference]    ReferenceProfile overrides
    [model]        lengthscales, task_lengthscale, temporal_epsilon, beta,
                   signal_sd, noise_floor, log_outputs
    [calibration]  mode (auto | fixed), factor, episodes, seed_base,
                   epsilon_factor, check_grid, file, kappa1, kappa2,
                   noise_f, noise_q1, noise_q2, reference_f
    [goose]        eps_tol, window, task_mode, task_source, bin_halfwidth,
                   n_particles, n_iterations, task_kernel, reset_inconsistent
    [metrics]      q1_window

Scenario presets (:data:`SCENARIO_PRESETS`) fill the task handling and
kernel settings of each scenario; explicit keys override them.  Lists are
comma separated; ``seeds`` also accepts ranges such as ``0-9``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .plant import SCENARIOS, PlantConfig, ReferenceProfile

__all__ = [
    "ConfigError",
    "ModelSettings",
    "CalibrationSettings",
    "LoopSettings",
    "ExperimentConfig",
    "SCENARIO_PRESETS",
    "METHODS",
    "parse_seeds",
    "load_config",
]

METHODS = ("goose", "cbo")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


# Per-scenario defaults for task handling and kernel choice.
SCENARIO_PRESETS: dict[str, dict] = {
    "stationary": dict(task_mode="none", task_source="tau_m", eps_tol=1e-3,
                       kernel="se-ard"),
    "inertia-switch": dict(task_mode="bins", task_source="tau_m", eps_tol=2e-3,
                           kernel="multitask-product", task_lengthscale=0.5,
                           bin_halfwidth=0.15),
    "damping-drift": dict(task_mode="time", task_source="time", eps_tol=1e-3,
                          kernel="multitask-temporal", window=30,
                          signal_sd=(0.6, 0.6, 0.6),
                          # stale observations of the drifting plant carry extra
                          # peak-error scatter; a wider q2 floor keeps the margin
                          noise_floor=(0.003, 0.04, 0.06)),
    "kff-switch": dict(task_mode="bins", task_source="kff", eps_tol=1e-3,
                       kernel="multitask-product", task_lengthscale=0.3,
                       bin_halfwidth=0.0),
    "friction-switch": dict(task_mode="bins", task_source="tau_b", eps_tol=1e-3,
                            kernel="multitask-product", task_lengthscale=5.0,
                            bin_halfwidth=0.1),
}


@dataclass(frozen=True)
class ModelSettings:
    """GP settings shared by the three output models.

    ``signal_sd`` and ``noise_floor`` are per output ``(f, q1, q2)`` and in
    the units the GPs see (log units when ``log_outputs``).
    """

    lengthscales: tuple[float, float, float] = (30.0, 0.03, 3.0)
    kernel: str = "se-ard"
    task_lengthscale: float = 0.5
    temporal_epsilon: float = 1e-4
    beta: float = 3.0
    signal_sd: tuple[float, float, float] = (1.0, 0.6, 1.0)
    noise_floor: tuple[float, float, float] = (0.003, 0.04, 0.04)
    log_outputs: bool = True


@dataclass(frozen=True)
class CalibrationSettings:
    """How kappa and the noise levels are obtained.

    ``mode = auto`` runs ``episodes`` seeded episodes at the safe seed;
    ``mode = fixed`` takes ``kappa`` and ``noise`` from the config (or from
    ``file``, a calibration file written by ``calibrate``).
    """

    mode: str = "auto"
    factor: float = 1.5
    episodes: int = 20
    seed_base: int = 1000
    epsilon_factor: float = 3.0
    check_grid: bool = True
    feasible_band: tuple[float, float] = (0.1, 0.9)
    file: str | None = None
    kappa: tuple[float, float] | None = None
    noise: tuple[float, float, float] | None = None
    reference_f: float | None = None


@dataclass(frozen=True)
class LoopSettings:
    eps_tol: float = 1e-3
    window: int | None = None
    task_mode: str = "none"
    task_source: str = "tau_m"
    bin_halfwidth: float = 0.15
    n_particles: int = 30
    n_iterations: int = 50
    task_kernel: bool = True
    reset_inconsistent: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "stationary"
    method: str = "goose"
    budget: int = 100
    seeds: tuple[int, ...] = (0,)
    out: str = "out"
    seed_x: tuple[float, float, float] = (15.0, 0.05, 3.0)
    domain: tuple = ((5.0, 50.0), (0.01, 0.11), (1.0, 10.0))
    q1_window: tuple[float, float] = (100.0, 2000.0)
    plant: PlantConfig = field(default_factory=PlantConfig)
    reference: ReferenceProfile = field(default_factory=ReferenceProfile)
    model: ModelSettings = field(default_factory=ModelSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    loop: LoopSettings = field(default_factory=LoopSettings)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.calibration.mode not in ("auto", "fixed"):
            raise ConfigError("calibration mode must be 'auto' or 'fixed'")
        if self.calibration.mode == "fixed" and self.calibration.file is None and (
                self.calibration.kappa is None or self.calibration.noise is None):
            raise ConfigError("fixed calibration needs kappa1, kappa2 and the noise "
                              "variances, or a calibration file")
        if self.calibration.file is not None and not Path(self.calibration.file).is_file():
            raise ConfigError(f"calibration file {self.calibration.file!r} not found")
        lo, hi = self.q1_window
        if not 0 <= lo < hi:
            raise ConfigError("q1_window must satisfy 0 <= low < high")

    @classmethod
    def for_scenario(cls, scenario: str, **overrides) -> "ExperimentConfig":
        """Defaults for ``scenario`` with its preset applied."""
        if scenario not in SCENARIO_PRESETS:
            raise ConfigError(f"unknown scenario {scenario!r}")
        model, loop = _preset(scenario)
        return cls(scenario=scenario, model=model, loop=loop, **overrides)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Replace top-level fields, reapplying the preset if the scenario changes."""
        if "scenario" in kw and kw["scenario"] != self.scenario:
            model, loop = _preset(kw["scenario"])
            kw.setdefault("model", model)
            kw.setdefault("loop", loop)
        try:
            return replace(self, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _preset(scenario: str) -> tuple[ModelSettings, LoopSettings]:
    if scenario not in SCENARIO_PRESETS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    p = dict(SCENARIO_PRESETS[scenario])
    mkeys = {f.name for f in fields(ModelSettings)}
    lkeys = {f.name for f in fields(LoopSettings)}
    return (ModelSettings(**{k: v for k, v in p.items() if k in mkeys}),
            LoopSettings(**{k: v for k, v in p.items() if k in lkeys}))


# -- parsing ------------------------------------------------------------------

def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0-3, 7"`` -> ``(0, 1, 2, 3, 7)``."""
    out: list[int] = []
    for tok in str(text).replace(" ", "").split(","):
        if not tok:
            continue
        try:
            if "-" in tok:
                a, b = tok.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(tok))
        except ValueError:
            raise ConfigError(f"bad seed entry {tok!r}") from None
    if not out:
        raise ConfigError("seed list is empty")
    return tuple(out)


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} values, got {text!r}")
    return vals


def _convert(value: str, like, key: str):
    """Parse ``value`` to the type of the default ``like``."""
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(like, int):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if isinstance(like, float):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if isinstance(like, tuple):
        if like and isinstance(like[0], tuple):
            nums = _floats(value)
            if len(nums) != 2 * len(like):
                raise ConfigError(f"{key}: expected {2 * len(like)} numbers")
            return tuple(zip(nums[::2], nums[1::2]))
        return _floats(value, len(like) if like else None)
    return value.strip()


_OPTIONAL = {"window": int, "file": str.strip, "reference_f": float,
             "compensation": lambda s: _floats(s, 5)}


def _section(parser, name, cls, base, rename=None):
    if not parser.has_section(name):
        return base
    rename = rename or {}
    known = {f.name: getattr(base, f.name) for f in fields(cls)}
    kw = {}
    for key, raw in parser.items(name):
        attr = rename.get(key, key)
        if attr not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        if attr in _OPTIONAL and raw.strip().lower() in ("", "none"):
            kw[attr] = None
        elif attr in _OPTIONAL and known[attr] is None:
            try:
                kw[attr] = _OPTIONAL[attr](raw)
            except ValueError:
                raise ConfigError(f"[{name}] {key}: cannot parse {raw!r}") from None
        else:
            kw[attr] = _convert(raw, known[attr], f"[{name}] {key}")
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def load_config(path: str | Path | None = None, text: str | None = None) -> ExperimentConfig:
    """Read a config file (or string).  Missing sections keep defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file {str(p)!r} not found")
            parser.read(p)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    exp = dict(parser.items("experiment")) if parser.has_section("experiment") else {}
    scenario = exp.pop("scenario", "stationary").strip()
    if scenario not in SCENARIO_PRESETS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    model, loop = _preset(scenario)
    kw: dict = {"scenario": scenario}
    base = ExperimentConfig()
    for key, raw in exp.items():
        if key == "seeds":
            kw["seeds"] = parse_seeds(raw)
        elif key in ("method", "out"):
            kw[key] = raw.strip()
        elif key in ("budget",):
            kw[key] = _convert(raw, 1, f"[experiment] {key}")
        elif key in ("seed_x", "domain"):
            kw[key] = _convert(raw, getattr(base, key), f"[experiment] {key}")
        else:
            raise ConfigError(f"[experiment] unknown key {key!r}")
    if parser.has_section("metrics"):
        for key, raw in parser.items("metrics"):
            if key != "q1_window":
                raise ConfigError(f"[metrics] unknown key {key!r}")
            kw["q1_window"] = _floats(raw, 2)

    try:
        kw["plant"] = _section(parser, "plant", PlantConfig, PlantConfig())
        kw["reference"] = _section(parser, "reference", ReferenceProfile, ReferenceProfile())
    except ValueError as exc:  # PlantError from validation
        raise ConfigError(str(exc)) from exc
    kw["model"] = _section(parser, "model", ModelSettings, model)
    kw["loop"] = _section(parser, "goose", LoopSettings, loop)
    cal = CalibrationSettings()
    if parser.has_section("calibration"):
        items = dict(parser.items("calibration"))
        k1, k2 = items.pop("kappa1", None), items.pop("kappa2", None)
        noise = [items.pop(k, None) for k in ("noise_f", "noise_q1", "noise_q2")]
        sub = configparser.ConfigParser()
        sub.read_dict({"calibration": items})
        cal = _section(sub, "calibration", CalibrationSettings, cal)
        if (k1 is None) != (k2 is None):
            raise ConfigError("[calibration] give both kappa1 and kappa2")
        if k1 is not None:
            cal = replace(cal, kappa=(_convert(k1, 1.0, "kappa1"), _convert(k2, 1.0, "kappa2")))
        if any(v is not None for v in noise):
            if any(v is None for v in noise):
                raise ConfigError("[calibration] give noise_f, noise_q1 and noise_q2")
            cal = replace(cal, noise=tuple(_convert(v, 1.0, "noise") for v in noise))
    kw["calibration"] = cal
    _check_model(kw["model"], kw["loop"])
    return ExperimentConfig(**kw)


def _check_model(model: ModelSettings, loop: LoopSettings):
    from .goose import TASK_MODES
    from .gp import MODES

    if model.kernel not in MODES:
        raise ConfigError(f"[model] kernel must be one of {MODES}")
    if loop.task_mode not in TASK_MODES:
        raise ConfigError(f"[goose] task_mode must be one of {TASK_MODES}")
    if loop.task_source not in ("tau_m", "tau_b", "kff", "time"):
        raise ConfigError("[goose] task_source must be tau_m, tau_b, kff or time")
    if min(model.signal_sd) <= 0 or min(model.noise_floor) < 0:
        raise ConfigError("[model] signal_sd must be positive and noise_floor nonnegative")
