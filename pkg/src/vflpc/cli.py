"""Command-line entry point.

    vflpc fit-koopman data.csv dict.json -o model.json
    vflpc plan-field SCENE -o trajectory.csv
    vflpc run SCENE -o outdir
    vflpc metrics outdir/run.jsonl
    vflpc batch SCENE --seeds 0 1 2 -o outdir

SCENE is a TOML path or the name of a bundled scene. Exit codes: 0 ok,
2 configuration error, 3 runtime abort. VFLPC_LOG_LEVEL sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import koopman as km
from .metrics import EmptyRunError, compute_metrics, dumps_metrics, read_run
from .scenario import ConfigError, bundled_scenes, load_scenario

log = logging.getLogger("vflpc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _dictionary(path):
    with open(path) as fh:
        d = json.load(fh)
    preset = d.get("preset")
    if preset == "vehicle":
        return km.vehicle_dictionary(bool(d.get("centered", True)))
    if preset == "identity":
        return km.identity_dictionary(int(d["n_x"]))
    if preset is not None:
        raise ConfigError(f"unknown dictionary preset {preset!r}")
    return km.ObservableDictionary.from_dict(d)


def cmd_fit_koopman(a):
    for p in (a.data, a.dictionary):
        if not Path(p).exists():
            raise ConfigError(f"file not found: {p}")
    dictionary = _dictionary(a.dictionary)
    with open(a.data) as fh:
        n_cols = len(fh.readline().split(","))
    data = km.TrajectoryDataset.from_csv(a.data, dictionary.n_x, n_cols - 1 - dictionary.n_x)
    train, hold = (data.split_by_trajectory(1.0 - a.holdout, a.seed)
                   if a.holdout > 0 and len(np.unique(data.traj_id)) > 1 else (data, None))
    model = km.fit_edmd(train, dictionary, ridge=a.ridge)
    rep = dict(model.report)
    rep["train_rmse"] = km.one_step_rmse(model, train)
    if hold is not None and len(hold):
        rep["holdout_rmse"] = km.one_step_rmse(model, hold)
    model.report = rep
    model.save(a.output)
    for k in sorted(rep):
        print(f"{k}: {rep[k]}")
    return EXIT_OK


def cmd_plan_field(a):
    from .runner import Planner

    scn = load_scenario(a.scenario)
    traj = Planner(scn).plan(scn.start, 0.0)
    traj.to_csv(a.output)
    kap = traj.curvatures
    print(f"status: {traj.status}")
    print(f"points: {len(traj)}  length: {traj.arc_length()[-1]:.2f} m")
    print(f"max v^2 kappa: {float(np.max(traj.speeds ** 2 * kap)):.4f} (a_max {scn.field.a_max})")
    return EXIT_OK


def _run_one(scenario, out_dir, seed=None, gp=None, barrier=None, model=None):
    from .runner import run_episode

    scn = load_scenario(scenario)
    if seed is not None:
        scn.seed = seed
    if model:
        scn.model = replace(scn.model, path=model)
    res = run_episode(scn, out_dir, gp_enabled=gp, barrier_enabled=barrier)
    return res.report


def _flag(on, off):
    return True if on else (False if off else None)


def cmd_run(a):
    rep = _run_one(a.scenario, a.output, a.seed, _flag(a.gp, a.no_gp), _flag(None, a.no_barrier), a.model)
    print(dumps_metrics(rep.deterministic()), end="")
    print(f"aver_st: {rep.aver_st:.4f} s")
    return EXIT_OK if rep.status == "complete" else EXIT_RUNTIME


def cmd_metrics(a):
    if not Path(a.run).exists():
        raise ConfigError(f"file not found: {a.run}")
    R = None if a.R is None else np.diag(a.R)
    rep = compute_metrics(read_run(a.run), a.q1, a.q2, R)
    text = dumps_metrics(rep.deterministic())
    if a.output:
        Path(a.output).write_text(text)
    print(text, end="")
    print(f"aver_st: {rep.aver_st:.4f} s")
    return EXIT_OK


def cmd_batch(a):
    out = Path(a.output)
    jobs = [(a.scenario, str(out / f"seed{s}"), s, _flag(a.gp, a.no_gp), _flag(None, a.no_barrier), a.model)
            for s in a.seeds]
    if a.jobs > 1:
        with ProcessPoolExecutor(a.jobs) as ex:
            reps = list(ex.map(_run_one, *zip(*jobs)))
    else:
        reps = [_run_one(*j) for j in jobs]
    rows = [dict(seed=s, **r.deterministic()) for s, r in zip(a.seeds, reps)]
    keys = ("length", "j_mc", "ct", "min_obstacle_distance", "mean_abs_ey")
    summary = {"seeds": list(a.seeds), "runs": rows,
               "mean": {k: float(np.mean([r[k] for r in rows])) for k in keys},
               "aver_st": float(np.mean([r.aver_st for r in reps]))}
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    for r in rows:
        print(f"seed {r['seed']}: status={r['status']} mean|e_y|={r['mean_abs_ey']:.4f} "
              f"min_dist={r['min_obstacle_distance']:.3f} J_MC={r['j_mc']:.4f}")
    print("mean: " + " ".join(f"{k}={v:.4f}" for k, v in summary["mean"].items()))
    return EXIT_OK if all(r["status"] == "complete" for r in rows) else EXIT_RUNTIME


def cmd_excite(a):
    from .sim import MISMATCH, NOMINAL, excitation_dataset

    p = MISMATCH if a.plant == "mismatch" else NOMINAL
    trajs = excitation_dataset(a.n_traj, a.steps, p, seed=a.seed, psi_range=a.psi_range)
    km.TrajectoryDataset.write_csv(a.output, trajs, 0.1)
    print(f"wrote {a.n_traj} trajectories of {a.steps} steps to {a.output}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="vflpc", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("fit-koopman", help="fit a lifted linear model from trajectory CSV")
    p.add_argument("data")
    p.add_argument("dictionary", help="dictionary JSON (terms, or {\"preset\": \"vehicle\"})")
    p.add_argument("-o", "--output", default="model.json")
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--holdout", type=float, default=0.2, help="fraction of trajectories held out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit_koopman)

    p = sub.add_parser("plan-field", help="integrate the guiding trajectory of a scene")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", default="trajectory.csv")
    p.set_defaults(func=cmd_plan_field)

    def episode_args(p):
        p.add_argument("scenario")
        p.add_argument("--model", help="lifted model JSON instead of the scene's inline fit")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--gp", action="store_true", help="force residual learning on")
        g.add_argument("--no-gp", action="store_true", help="force residual learning off")
        p.add_argument("--no-barrier", action="store_true")

    p = sub.add_parser("run", help="run one closed-loop episode")
    episode_args(p)
    p.add_argument("-o", "--output", default="run_out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="recompute metrics from run.jsonl")
    p.add_argument("run")
    p.add_argument("-o", "--output")
    p.add_argument("--q1", type=float, default=1.0)
    p.add_argument("--q2", type=float, default=1.0)
    p.add_argument("--R", type=float, nargs="+", help="diagonal of the control weight")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("batch", help="independent seeded episodes, merged metrics")
    episode_args(p)
    p.add_argument("-o", "--output", default="batch_out")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("excite", help="write random-input bicycle trajectories as CSV")
    p.add_argument("-o", "--output", default="data.csv")
    p.add_argument("--n-traj", type=int, default=30)
    p.add_argument("--steps", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--psi-range", type=float, default=0.5)
    p.add_argument("--plant", choices=("nominal", "mismatch"), default="nominal")
    p.set_defaults(func=cmd_excite)

    sub.add_parser("scenes", help="list bundled scenes").set_defaults(
        func=lambda a: print("\n".join(bundled_scenes())) or EXIT_OK)
    return ap


def main(argv=None):
    logging.basicConfig(level=os.environ.get("VFLPC_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return a.func(a)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, EmptyRunError) as e:
        print(f"vflpc: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        from .runner import RuntimeAbort

        if isinstance(e, RuntimeAbort):
            print(f"vflpc: {e}", file=sys.stderr)
        else:
            print(f"vflpc: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
