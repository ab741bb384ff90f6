"""Command line entry point: ``python -m safetune <verb> [options]``.

Verbs
-----
calibrate  seed episodes -> kappa, noise levels; writes calibration.ini
run        run the configured method on every seed; logs and summary
grid       evaluate the grid oracle; writes grid_oracle.csv
plot       SVG panels for existing logs
compare    GoOSE and CBO on the same seeds, with an overlay figure

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, ExperimentConfig, load_config, parse_seeds

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("safetune")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="safetune", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in ("calibrate", "run", "grid", "plot", "compare"):
        s = sub.add_parser(verb)
        s.add_argument("--config", help="experiment config file (key = value sections)")
        g = s.add_mutually_exclusive_group()
        g.add_argument("--seed", type=int, help="single master seed")
        g.add_argument("--seeds", help="seed list, e.g. '0-9' or '1,4,7'")
        s.add_argument("--scenario", help="scenario id (overrides the config)")
        s.add_argument("--budget", type=int, help="episodes per run")
        s.add_argument("--out", help="output directory")
        if verb == "run":
            s.add_argument("--method", choices=("goose", "cbo"))
        if verb == "plot":
            s.add_argument("logs", nargs="*", help="log files (default: all under --out)")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    kw = {}
    if args.scenario:
        kw["scenario"] = args.scenario
    if args.seed is not None:
        kw["seeds"] = (args.seed,)
    elif args.seeds:
        kw["seeds"] = parse_seeds(args.seeds)
    if args.budget is not None:
        kw["budget"] = args.budget
    if args.out:
        kw["out"] = args.out
    if getattr(args, "method", None):
        kw["method"] = args.method
    return cfg.with_overrides(**kw) if kw else cfg


def _calibrate(cfg):
    out = Path(cfg.out)
    cal, grid = harness.calibrate(cfg)
    out.mkdir(parents=True, exist_ok=True)
    harness.save_calibration(cal, out / "calibration.ini")
    if grid is not None:
        grid.to_csv(out / "grid_oracle.csv")
    print(f"kappa1 = {cal.kappa[0]:.6g}  kappa2 = {cal.kappa[1]:.6g}  "
          f"factor = {cal.factor:g}  feasible fraction = {cal.feasible_fraction}")
    print(f"wrote {out / 'calibration.ini'}")


def _run(cfg):
    s = harness.run(cfg)
    print(f"{cfg.method} on {cfg.scenario}: {len(s['runs'])} runs, "
          f"violations: {s['total_violations']}")
    print(f"wrote {harness.run_dir(cfg) / 'summary.json'}")


def _grid(cfg):
    res = harness.grid(cfg)
    print(f"grid optimum x = {tuple(float(v) for v in res.x_best)}  f = {res.f_best:.6g}  "
          f"feasible fraction = {res.feasible_fraction:.3f}")
    print(f"wrote {Path(cfg.out) / 'grid_oracle.csv'}")


def _plot(cfg, logs):
    out = Path(cfg.out)
    paths = [Path(p) for p in logs] or sorted(out.rglob("log.csv"))
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"log file {str(p)!r} not found")
    cal = harness.resolve_calibration(cfg, out)
    for svg in harness.plot(paths, cal):
        print(f"wrote {svg}")


def _compare(cfg):
    res = harness.compare(cfg)
    print(json.dumps(res, indent=2, sort_keys=True))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.verb == "calibrate":
            _calibrate(cfg)
        elif args.verb == "run":
            _run(cfg)
        elif args.verb == "grid":
            _grid(cfg)
        elif args.verb == "plot":
            _plot(cfg, args.logs)
        else:
            _compare(cfg)
    except (ConfigError, harness.SchemaError) as exc:
        print(f"safetune: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any failure as a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"safetune: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
