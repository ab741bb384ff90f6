"""Library-level tour: calibrate, run one seed, inspect the log rows."""
from safetune.config import ExperimentConfig
from safetune.harness import calibrate, run_seed, summarize

cfg = ExperimentConfig.for_scenario("stationary", budget=40)
cal, grid = calibrate(cfg)
print(f"kappa = {cal.kappa}, grid optimum f = {grid.f_best:.3f} at {grid.x_best}")

rows, goose = run_seed(cfg, cal, seed=0)
for r in rows[::8]:
    print(f"{r['iter']:3d} {r['action_kind']:18s} Kp={r['Kp']:5.1f} Kv={r['Kv']:.4f} "
          f"Ti={r['Ti']:4.2f}  f={r['f']:7.3f}  incumbent={r['incumbent_f']:.3f}")
print(summarize(rows, cal.kappa, goose.stops))
