"""Calibration, scenario execution, artifacts and figures.

Every run is a pure function of its :class:`~safetune.config.ExperimentConfig`
and seed.  The master seed of a run is split with
``numpy.random.SeedSequence(seed).spawn(3)`` into three streams, one per
concern:

0. plant noise,
1. the particle swarm (GoOSE),
2. CBO multi-starts.

Changing swarm settings therefore never perturbs the plant noise.
Calibration episode ``i`` uses the integer seed ``seed_base + i``.

Artifacts of ``run`` live in ``<out>/<method>/<scenario>/``: one
``seed-<k>/log.csv`` and ``seed-<k>/grid.csv`` per seed and one
``summary.json``.  Log files start with a versioned comment line.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .baselines import CBO, GridOracleResult, grid_search, run_cbo_loop
from .config import ConfigError, ExperimentConfig
from .goose import APPLY, LOG_COLUMNS, Goose, GooseConfig, run_episode_loop
from .gp import GPModel, KernelConfig, ModelInconsistencyError
from .metrics import episode_metrics
from .plant import make_reference, simulate
from .safeset import build_grid

__all__ = [
    "LOG_VERSION",
    "Calibration",
    "CalibrationError",
    "SchemaError",
    "calibrate",
    "load_calibration",
    "save_calibration",
    "resolve_calibration",
    "build_models",
    "rng_streams",
    "run_seed",
    "run",
    "write_log",
    "read_log",
    "summarize",
    "plot_log",
    "plot",
    "compare",
]

LOG_VERSION = "safetune-log v1"
STREAMS = ("plant", "pso", "cbo")


class CalibrationError(RuntimeError):
    """Calibration episodes failed (abort or non-finite metrics)."""


class SchemaError(ValueError):
    """A log file lacks a required column or has the wrong version."""


@dataclass(frozen=True)
class Calibration:
    """Calibrated thresholds and noise levels.

    ``noise`` holds the sample variances of ``(f, q1, q2)`` at the safe
    seed in GP space (log units when the config uses log outputs), before
    any floor is applied.  ``reference_f`` is the mean seed cost.
    """

    kappa: tuple[float, float]
    noise: tuple[float, float, float]
    reference_f: float
    factor: float = 1.5
    episodes: int = 0
    feasible_fraction: float | None = None
    log_outputs: bool = True


# -- calibration -------------------------------------------------------------

def seed_metrics(cfg: ExperimentConfig, ref=None) -> np.ndarray:
    """``(episodes, 3)`` array of f, q1, q2 at the safe seed."""
    ref = ref if ref is not None else make_reference(cfg.reference, cfg.plant.dt)
    cal = cfg.calibration
    out = np.zeros((cal.episodes, 3))
    for i in range(cal.episodes):
        traj = simulate(cfg.seed_x, cfg.plant, ref, cal.seed_base + i)
        if traj.aborted:
            raise CalibrationError(f"calibration episode {i} aborted at the safe seed")
        m = episode_metrics(traj, cfg.q1_window)
        if not m.finite or min(m.f, m.q1, m.q2) <= 0:
            raise CalibrationError(f"calibration episode {i} gave invalid metrics {m}")
        out[i] = (m.f, m.q1, m.q2)
    return out


def calibrate(cfg: ExperimentConfig, grid: GridOracleResult | None = None
              ) -> tuple[Calibration, GridOracleResult | None]:
    """Set kappa from seed episodes and check the feasible fraction.

    ``kappa_j = factor * max q_j`` over the seed episodes.  When
    ``check_grid`` is on, the grid oracle is evaluated (or ``grid`` reused)
    and, if the feasible fraction falls outside ``feasible_band``, the
    factor is moved to the nearest value on a 0.05 ladder that lands inside.
    """
    cs = cfg.calibration
    if cs.episodes < 2:
        raise ConfigError("calibration needs at least two episodes")
    ref = make_reference(cfg.reference, cfg.plant.dt)
    Y = seed_metrics(cfg, ref)
    qmax = Y[:, 1:].max(axis=0)
    Z = np.log(Y) if cfg.model.log_outputs else Y
    noise = tuple(float(v) for v in Z.var(axis=0, ddof=1))
    factor = cs.factor
    frac = None
    if cs.check_grid:
        if grid is None:
            grid = grid_search(cfg.plant, ref, factor * qmax, domain=cfg.domain,
                               q1_window=cfg.q1_window, require_feasible=False)
        factor, frac = _adjust_factor(grid, qmax, factor, cs.feasible_band)
        grid = grid.with_kappa(factor * qmax)
    kappa = tuple(float(v) for v in factor * qmax)
    cal = Calibration(kappa, noise, float(Y[:, 0].mean()), float(factor), cs.episodes,
                      frac, cfg.model.log_outputs)
    return cal, grid


def _adjust_factor(grid: GridOracleResult, qmax, factor, band):
    lo, hi = band

    def frac(c):
        return grid.with_kappa(c * qmax).feasible_fraction

    f0 = frac(factor)
    if lo <= f0 <= hi:
        return factor, f0
    ladder = sorted((1.0 + 0.05 * k for k in range(0, 181)), key=lambda c: abs(c - factor))
    for c in ladder:
        fc = frac(c)
        if lo <= fc <= hi:
            return float(c), fc
    raise CalibrationError(f"no kappa factor puts the feasible fraction in {band}")


def save_calibration(cal: Calibration, path: str | Path) -> None:
    cp = configparser.ConfigParser()
    d = asdict(cal)
    cp["calibration"] = {
        "kappa1": repr(cal.kappa[0]), "kappa2": repr(cal.kappa[1]),
        "noise_f": repr(cal.noise[0]), "noise_q1": repr(cal.noise[1]),
        "noise_q2": repr(cal.noise[2]), "reference_f": repr(cal.reference_f),
        "factor": repr(cal.factor), "episodes": str(cal.episodes),
        "feasible_fraction": repr(d["feasible_fraction"]),
        "log_outputs": str(cal.log_outputs).lower(),
    }
    with open(path, "w") as fh:
        fh.write("# safetune-calibration v1\n")
        cp.write(fh)


def load_calibration(path: str | Path) -> Calibration:
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path):
            raise ConfigError(f"calibration file {str(path)!r} not found")
        s = cp["calibration"]
        ff = s.get("feasible_fraction", "None")
        return Calibration(
            kappa=(float(s["kappa1"]), float(s["kappa2"])),
            noise=(float(s["noise_f"]), float(s["noise_q1"]), float(s["noise_q2"])),
            reference_f=float(s["reference_f"]),
            factor=float(s.get("factor", "1.5")),
            episodes=int(s.get("episodes", "0")),
            feasible_fraction=None if ff == "None" else float(ff),
            log_outputs=s.getboolean("log_outputs", True),
        )
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ConfigError(f"bad calibration file {str(path)!r}: {exc}") from exc


def resolve_calibration(cfg: ExperimentConfig, out: Path | None = None) -> Calibration:
    """Calibration for a run: explicit file, fixed values, cached or fresh."""
    cs = cfg.calibration
    if cs.file is not None:
        return load_calibration(cs.file)
    if cs.mode == "fixed":
        if cs.reference_f is None:
            raise ConfigError("fixed calibration needs reference_f")
        return Calibration(cs.kappa, cs.noise, cs.reference_f, cs.factor, 0, None,
                           cfg.model.log_outputs)
    cached = None if out is None else out / "calibration.ini"
    if cached is not None and cached.is_file():
        return load_calibration(cached)
    cal, grid = calibrate(cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_calibration(cal, out / "calibration.ini")
        if grid is not None:
            grid.to_csv(out / "grid_oracle.csv")
    return cal


# -- model construction -----------------------------------------------------

def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def noise_variances(cfg: ExperimentConfig, cal: Calibration) -> np.ndarray:
    floor = np.asarray(cfg.model.noise_floor, float) ** 2
    return np.maximum(np.asarray(cal.noise, float), floor)


def build_models(cfg: ExperimentConfig, cal: Calibration
                 ) -> tuple[tuple[GPModel, GPModel, GPModel], GooseConfig]:
    """Three GP models and the loop settings for one run."""
    ms, ls = cfg.model, cfg.loop
    mode = ms.kernel if ls.task_kernel else "se-ard"
    if cfg.method == "cbo":
        mode = "se-ard"
    lengths = tuple(ms.lengthscales)
    if mode == "multitask-product":
        lengths = lengths + (ms.task_lengthscale,)
    nv = noise_variances(cfg, cal)
    gps = tuple(
        GPModel(KernelConfig(lengths, sd ** 2, mode, ms.temporal_epsilon
                             if mode == "multitask-temporal" else 0.0), v, ms.beta)
        for sd, v in zip(ms.signal_sd, nv))
    eps = tuple(float(cfg.calibration.epsilon_factor * math.sqrt(v)) for v in nv[1:])
    gc = GooseConfig(
        kappa=cal.kappa, epsilon=eps, eps_tol=ls.eps_tol, task_mode=ls.task_mode,
        bin_halfwidth=ls.bin_halfwidth, window=ls.window, n_particles=ls.n_particles,
        n_iterations=ls.n_iterations, log_outputs=ms.log_outputs,
        reference=(cal.reference_f,) + tuple(cal.kappa), cost_scale=cal.reference_f,
        task_kernel=ls.task_kernel, reset_inconsistent=ls.reset_inconsistent)
    return gps, gc


# -- logs --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_log(path: str | Path, rows: list[dict], meta: dict | None = None) -> None:
    """Per-iteration CSV with a version comment and :data:`LOG_COLUMNS`."""
    meta = meta or {}
    tags = " ".join(f"{k}={v}" for k, v in meta.items())
    with open(path, "w", newline="") as fh:
        fh.write(f"# {LOG_VERSION} {tags}".rstrip() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in LOG_COLUMNS])


def read_log(path: str | Path, required=LOG_COLUMNS) -> tuple[dict, dict[str, np.ndarray]]:
    """Metadata and columns of a log file.

    Raises
    ------
    SchemaError
        On a missing version line or a missing required column.
    """
    with open(path, newline="") as fh:
        head = fh.readline().strip()
        if not head.startswith(f"# {LOG_VERSION}"):
            raise SchemaError(f"{path}: expected header '# {LOG_VERSION}'")
        meta = dict(t.split("=", 1) for t in head[len(LOG_VERSION) + 2:].split() if "=" in t)
        reader = csv.reader(fh)
        header = next(reader, None) or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = list(reader)
    cols: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in rows]
        if name == "action_kind":
            cols[name] = np.array(vals, dtype=object)
        else:
            cols[name] = np.array([float(v) for v in vals]) if vals else np.empty(0)
    return meta, cols


def _grid_dump(path: Path, goose: Goose) -> None:
    cfg = goose.config
    with open(path, "w", newline="") as fh:
        fh.write("# safetune-grid v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_id", "Kp", "Kv", "Ti", "lower_q1", "upper_q1", "lower_q2",
                    "upper_q2", "safe"])
        for b in range(len(goose.bins)):
            try:
                s = goose.compute_sets(b)
            except ModelInconsistencyError:
                continue
            lo = [cfg.from_model(j + 1, s["lower"][j]) for j in range(2)]
            hi = [cfg.from_model(j + 1, s["upper"][j]) for j in range(2)]
            for i, x in enumerate(goose.grid.points):
                w.writerow([b] + [_fmt(v) for v in x]
                           + [_fmt(lo[0][i]), _fmt(hi[0][i]), _fmt(lo[1][i]), _fmt(hi[1][i]),
                              int(s["safe"][i])])


# -- summaries ---------------------------------------------------------------

def summarize(rows: list[dict], kappa, stops: int | None = None) -> dict:
    """Per-run summary: violations, best cost per bin, convergence."""
    k1, k2 = kappa
    viol = [r for r in rows if r["violated_q1"] or r["violated_q2"]]
    best: dict[str, float] = {}
    converged: dict[str, int] = {}
    for r in rows:
        key = str(int(r["bin_id"]))
        if not (r["violated_q1"] or r["violated_q2"]) and math.isfinite(r["f"]):
            best[key] = min(best.get(key, math.inf), float(r["f"]))
        if r["action_kind"] == APPLY and key not in converged:
            converged[key] = int(r["iter"])
    return {
        "iterations": len(rows),
        "violations": len(viol),
        "violation_rate": len(viol) / len(rows) if rows else 0.0,
        "max_violation_q1": max([r["q1"] / k1 - 1.0 for r in viol if r["violated_q1"]],
                                default=0.0),
        "max_violation_q2": max([r["q2"] / k2 - 1.0 for r in viol if r["violated_q2"]],
                                default=0.0),
        "best_cost_per_bin": best,
        "iterations_to_convergence": converged,
        "stops": stops if stops is not None else sum(r["action_kind"] == APPLY for r in rows),
    }


# -- execution ---------------------------------------------------------------

def run_seed(cfg: ExperimentConfig, cal: Calibration, seed: int, ref=None):
    """Execute one seed; returns ``(rows, optimiser)``."""
    ref = ref if ref is not None else make_reference(cfg.reference, cfg.plant.dt)
    streams = rng_streams(seed)
    gps, gc = build_models(cfg, cal)
    if cfg.method == "cbo":
        opt = CBO(*gps, kappa=cal.kappa, seed_x=np.asarray(cfg.seed_x), rng=streams["cbo"],
                  domain=tuple(cfg.domain), to_model=gc.to_model)
        rows = run_cbo_loop(opt, cfg.scenario, cfg.budget, cfg.plant, ref, streams["plant"],
                            q1_window=cfg.q1_window)
        return rows, opt
    grid = build_grid(cfg.domain, cfg.model.lengthscales)
    opt = Goose(*gps, grid, np.asarray(cfg.seed_x), gc, streams["pso"])
    rows = run_episode_loop(opt, cfg.scenario, cfg.budget, cfg.plant, ref, streams["plant"],
                            task_source=cfg.loop.task_source, q1_window=cfg.q1_window)
    return rows, opt


def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / cfg.method / cfg.scenario


def run(cfg: ExperimentConfig, cal: Calibration | None = None) -> dict:
    """Run every seed of ``cfg`` and write logs, grid dumps and the summary."""
    out = Path(cfg.out)
    cal = cal or resolve_calibration(cfg, out)
    base = run_dir(cfg)
    ref = make_reference(cfg.reference, cfg.plant.dt)
    runs = []
    for seed in cfg.seeds:
        rows, opt = run_seed(cfg, cal, seed, ref)
        d = base / f"seed-{seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_log(d / "log.csv", rows, {"scenario": cfg.scenario, "method": cfg.method,
                                        "seed": seed})
        if isinstance(opt, Goose):
            _grid_dump(d / "grid.csv", opt)
        stops = getattr(opt, "stops", None)
        runs.append({"seed": seed} | summarize(rows, cal.kappa, stops))
    summary = {
        "scenario": cfg.scenario,
        "method": cfg.method,
        "budget": cfg.budget,
        "kappa": list(cal.kappa),
        "total_violations": sum(r["violations"] for r in runs),
        "runs_with_violations": sum(r["violations"] > 0 for r in runs),
        "runs": runs,
    }
    with open(base / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# -- figures -----------------------------------------------------------------

def _mpl():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "safetune"
    return plt


def running_min_per_bin(f, bins) -> np.ndarray:
    """Running minimum of ``f`` restarted whenever the bin changes."""
    out = np.empty(len(f))
    cur = math.inf
    prev = None
    for i, (v, b) in enumerate(zip(f, bins)):
        if b != prev:
            cur = math.inf
            prev = b
        if math.isfinite(v):
            cur = min(cur, v)
        out[i] = cur
    return out


def plot_log(path: str | Path, kappa, out_svg: str | Path) -> Path:
    """Three panels: cost with its running per-bin minimum, q1 and q2 with kappa."""
    _, cols = read_log(path)
    plt = _mpl()
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    it = cols["iter"]
    axes[0].plot(it, cols["f"], ".", ms=3, label="f")
    if len(it):
        ok = (cols["violated_q1"] == 0) & (cols["violated_q2"] == 0)
        f_ok = np.where(ok, cols["f"], np.inf)
        axes[0].plot(it, running_min_per_bin(f_ok, cols["bin_id"]), "-", label="best per bin")
    axes[0].set_ylabel("cost f [mdeg]")
    for ax, name, k in zip(axes[1:], ("q1", "q2"), kappa):
        ax.plot(it, cols[name], ".", ms=3)
        ax.axhline(k, color="r", ls="--", label=f"kappa={k:.4g}")
        ax.set_ylabel(name)
        ax.legend(loc="upper right", fontsize=7)
    for ax in axes:
        ax.set_xlabel("iteration")
    axes[0].legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(out_svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(out_svg)


def plot(paths, cal: Calibration) -> list[Path]:
    """Plot each log file next to itself as ``<stem>.svg``."""
    return [plot_log(p, cal.kappa, Path(p).with_suffix(".svg")) for p in paths]


def plot_overlay(logs: dict[str, Path], kappa, out_svg: str | Path) -> Path:
    """Overlay of several methods' logs, one colour per method."""
    plt = _mpl()
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for label, path in logs.items():
        _, c = read_log(path)
        axes[0].plot(c["iter"], c["f"], ".-", ms=3, lw=0.5, label=label)
        axes[1].plot(c["iter"], c["q1"], ".", ms=3, label=label)
        axes[2].plot(c["iter"], c["q2"], ".", ms=3, label=label)
    axes[0].set_yscale("log")
    for ax, k in zip(axes[1:], kappa):
        ax.axhline(k, color="r", ls="--")
    for ax, name in zip(axes, ("cost f [mdeg]", "q1", "q2")):
        ax.set_ylabel(name)
        ax.set_xlabel("iteration")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(out_svg)


def compare(cfg: ExperimentConfig, cal: Calibration | None = None) -> dict:
    """Run GoOSE and CBO on the same seeds and write a comparison."""
    out = Path(cfg.out)
    cal = cal or resolve_calibration(cfg, out)
    result = {}
    for method in ("goose", "cbo"):
        s = run(cfg.with_overrides(method=method), cal)
        n_rows = sum(r["iterations"] for r in s["runs"])
        result[method] = {
            "total_violations": s["total_violations"],
            "runs_with_violations": s["runs_with_violations"],
            "violating_iteration_fraction": s["total_violations"] / n_rows if n_rows else 0.0,
            "best_cost": [min(r["best_cost_per_bin"].values(), default=math.nan)
                          for r in s["runs"]],
        }
    grid_csv = out / "grid_oracle.csv"
    if grid_csv.is_file():
        g = GridOracleResult.from_csv(grid_csv).with_kappa(cal.kappa)
        result["grid_optimum"] = {"x": [float(v) for v in g.x_best], "f": g.f_best}
    with open(out / f"compare-{cfg.scenario}.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    seed = cfg.seeds[0]
    logs = {m: out / m / cfg.scenario / f"seed-{seed}" / "log.csv" for m in ("goose", "cbo")}
    plot_overlay(logs, cal.kappa, out / f"compare-{cfg.scenario}-seed-{seed}.svg")
    return result


def grid(cfg: ExperimentConfig, cal: Calibration | None = None) -> GridOracleResult:
    """Evaluate the grid oracle and write ``grid_oracle.csv``."""
    out = Path(cfg.out)
    cal = cal or resolve_calibration(cfg, out)
    ref = make_reference(cfg.reference, cfg.plant.dt)
    res = grid_search(cfg.plant, ref, cal.kappa, domain=cfg.domain, q1_window=cfg.q1_window,
                      require_feasible=False)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "grid_oracle.csv")
    return res

