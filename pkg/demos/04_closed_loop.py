"""Closed-loop episodes: obstacle scenes, then the model-mismatch scene with and without the residual GP.

Run: python3 demos/04_closed_loop.py [outdir]
Takes about a minute. Each run leaves run.jsonl, metrics.json and timing.json in outdir/<scene>.
"""

import sys
from pathlib import Path

from vflpc.runner import fit_model, run_episode
from vflpc.scenario import load_scenario

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")

for name in ("fig6_static", "fig8_moving", "straight_free"):
    res = run_episode(load_scenario(name), out / name)
    r = res.report
    print(f"{name:14s} {r.status:9s} steps {r.steps:4d}  length {r.length:6.1f} m  "
          f"mean|e_y| {r.mean_abs_ey:.3f}  min clearance {r.min_obstacle_distance:.2f}  "
          f"solve {1e3 * r.aver_st:.1f} ms")

scn = load_scenario("racing_mismatch")
model = fit_model(scn.model)
print("\nracing_mismatch, mean |e_y| [m]")
for seed in (0, 1):
    scn.seed = seed
    on = run_episode(scn, model=model, gp_enabled=True).report
    off = run_episode(scn, model=model, gp_enabled=False).report
    print(f"  seed {seed}: nominal model {off.mean_abs_ey:.4f}  with residual GP {on.mean_abs_ey:.4f}")
