"""Closed-loop episodes: plan the guiding trajectory, track it, learn the residual, record everything."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import astuple, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import koopman as km
from .controller import Reference, VehicleController, to_local
from .fields import Circle, GuidingTrajectory, integrate_trajectory, precompute_grid
from .gp import OnlineResidualGp
from .metrics import MetricsReport, compute_metrics, dumps_metrics
from .safety import nearest_boundary_point, obstacle_velocity, select_mu
from .scenario import ModelSource, Scenario
from .sim import NoiseConfig, Plant, advance_obstacles, excitation_dataset

log = logging.getLogger(__name__)

# lifted coordinates fed to the GP (v_x, v_y, omega) and their scales
GP_STATE_IDX = (3, 4, 5)
GP_Z_SCALE = (2.0, 0.2, 0.2, 1.0, 0.1)


class RuntimeAbort(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause


_MODEL_CACHE = {}


def fit_model(src: ModelSource) -> km.KoopmanModel:
    """Load the nominal lifted model, or fit it on nominal-plant excitation data."""
    if src.path is not None:
        return km.KoopmanModel.load(src.path)
    key = astuple(src)
    if key not in _MODEL_CACHE:
        trajs = excitation_dataset(src.n_traj, src.T, seed=src.seed, psi_range=src.psi_range,
                                   v_range=(src.v_min, src.v_max))
        data = km.TrajectoryDataset.from_trajectories(trajs, 0.1)
        _MODEL_CACHE[key] = km.fit_edmd(data, km.vehicle_dictionary(centered=src.centered), ridge=src.ridge)
    return _MODEL_CACHE[key]


def repulsive_clearance(o, p, t):
    """Signed distance from p to the repulsive boundary (negative inside)."""
    s = o.surface
    if isinstance(s, Circle):
        r_rep = np.sqrt(max(s.radius ** 2 + o.c / s.scale, 0.0))
        return float(np.linalg.norm(np.asarray(p) - s.center - o.offset(t)) - r_rep)
    q = nearest_boundary_point(o, p, o.c, t)
    d = float(np.linalg.norm(q - np.asarray(p)))
    return -d if o.value(p, t) < o.c else d


class Planner:
    """Plans guiding trajectories; reuses the grid while no obstacle has moved."""

    def __init__(self, scn: Scenario):
        self.scn = scn
        self._grid = None
        self._key = None

    def plan(self, xi0, t) -> GuidingTrajectory:
        scn = self.scn
        key = tuple(np.round(np.concatenate([o.offset(t) for o in scn.obstacles] or [np.zeros(0)]), 9))
        if self._grid is None or key != self._key:
            self._grid = precompute_grid(scn.path, scn.obstacles, scn.field, t)
            self._key = key
        return integrate_trajectory(self._grid, scn.field, xi0, scn.n_field_steps)


@dataclass
class EpisodeResult:
    records: List[dict]
    report: MetricsReport
    status: str
    trajectories: List[GuidingTrajectory] = field(default_factory=list)
    plan_time: float = 0.0


def _write(fh, rec):
    if fh is not None:
        fh.write(json.dumps(rec) + "\n")
        fh.flush()


def _f(a):
    return [float(v) for v in np.asarray(a).ravel()]


def run_episode(scn: Scenario, out_dir=None, model: Optional[km.KoopmanModel] = None,
                gp_enabled: Optional[bool] = None, barrier_enabled: Optional[bool] = None) -> EpisodeResult:
    """One closed-loop episode; writes run.jsonl, metrics.json and timing.json when ``out_dir`` is given."""
    gp_on = scn.gp_enabled if gp_enabled is None else gp_enabled
    bar_on = scn.barrier_enabled if barrier_enabled is None else barrier_enabled
    for o in scn.obstacles:
        if hasattr(o.motion, "reset"):
            o.motion.reset()
    model = fit_model(scn.model) if model is None else model
    dt = scn.dt
    ctl = VehicleController(model, scn.control, dt)
    planner = Planner(scn)
    plant = Plant(scn.plant, dt, scn.plant_dt, NoiseConfig(np.full(6, scn.noise_std), scn.seed))
    learner = OnlineResidualGp(model, scn.gp, GP_STATE_IDX, GP_Z_SCALE) if gp_on else None
    actual = [i for i, o in enumerate(scn.obstacles) if not o.is_virtual]

    fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "run.jsonl", "w")
    records, trajs = [], []

    def emit(rec):
        records.append(rec)
        _write(fh, rec)

    t_plan = time.perf_counter()
    traj = planner.plan(scn.start, 0.0)
    plan_time = time.perf_counter() - t_plan
    trajs.append(traj)
    ref = Reference(traj.points, traj.speeds)
    ctl.set_reference(ref)
    emit({"type": "trajectory", "id": 0, "t": 0.0, "status": traj.status, "points": traj.points.tolist(),
          "speeds": _f(traj.speeds), "curvatures": _f(traj.curvatures)})

    psi0 = float(ref.heading(0.0))
    p0 = ref.position(0.0) + scn.lateral_offset * np.array([-np.sin(psi0), np.cos(psi0)])
    v0 = float(ref.speed(0.0)) if scn.v0 is None else scn.v0
    x = np.array([p0[0], p0[1], psi0, v0, 0.0, 0.0])
    t = 0.0
    status = "timeout"
    best_s, best_k, s_total = 0.0, 0, 0.0
    traj_id = 0
    try:
        for k in range(scn.max_steps):
            try:
                advance_obstacles([scn.obstacles[i] for i in actual], t, x[:2])
                barrier, dec = None, None
                t0 = time.perf_counter()
                if bar_on:
                    heading = x[2] + np.arctan2(x[4], x[3])
                    dec = select_mu(x[:2], heading, float(np.hypot(x[3], x[4])), scn.obstacles, scn.barrier, t)
                    if dec.mu > 0:
                        barrier = (dec.mu, dec.x_p, obstacle_velocity(scn.obstacles[dec.obstacle], t))
                sgp = learner.sgp if learner is not None else None
                u, info = ctl.control(x, sgp, barrier, t)
                solve_time = time.perf_counter() - t0
                x_new = plant.step(x, u)
                if learner is not None:
                    # residuals are learned in the frame of the current pose, like the controller's error problem
                    org = (x[0], x[1], x[2])
                    learner.ingest(to_local(x, org), u, to_local(x_new, org))
            except Exception as e:  # noqa: BLE001 - every module error aborts the episode with context
                raise RuntimeAbort(k, f"{type(e).__name__}: {e}") from e
            t = round(t + dt, 10)
            clear = min((repulsive_clearance(scn.obstacles[i], x_new[:2], t) for i in actual), default=None)
            emit({"type": "step", "k": k, "t": t, "traj": traj_id, "state_prev": _f(x), "state": _f(x_new),
                  "control": _f(u), "u_ref": _f(info["u_ref"]), "u_tilde": _f(info["u_tilde"]),
                  "mu": float(dec.mu) if dec is not None else 0.0,
                  "obstacle_distance": clear, "s": info["s"], "iterations": info["iterations"],
                  "solver_status": info["status"], "solve_time": solve_time})
            x = x_new
            if clear is not None and clear <= 0:
                status = "collision"
                break
            if scn.goal is not None and np.linalg.norm(x[:2] - scn.goal) <= scn.goal_tol:
                status = "complete"
                break
            if scn.duration is not None and t >= scn.duration - 1e-9:
                status = "complete"
                break
            s_now = s_total + info["s"]
            if s_now > best_s + 0.5:
                best_s, best_k = s_now, k
            elif k - best_k >= scn.stuck_steps:
                status = "stuck"
                break
            if info["s"] >= ref.length - scn.replan_margin:
                # reached the end of the guiding trajectory: plan a new one from here
                s_total += info["s"]
                t_plan = time.perf_counter()
                traj = planner.plan(x[:2], t)
                plan_time += time.perf_counter() - t_plan
                trajs.append(traj)
                traj_id += 1
                ref = Reference(traj.points, traj.speeds)
                ctl.set_reference(ref)
                emit({"type": "trajectory", "id": traj_id, "t": t, "status": traj.status,
                      "points": traj.points.tolist(), "speeds": _f(traj.speeds),
                      "curvatures": _f(traj.curvatures)})
                if ref.length < 1.0:
                    status = "end_of_field"
                    break
    except RuntimeAbort as e:
        status = "aborted"
        emit({"type": "end", "status": status, "step": e.step, "cause": e.cause})
        if fh is not None:
            fh.close()
        raise
    emit({"type": "end", "status": status, "t": t})
    if fh is not None:
        fh.close()
    report = compute_metrics(records, scn.q1, scn.q2, scn.metric_R)
    if out_dir is not None:
        write_reports(report, out_dir, plan_time)
    return EpisodeResult(records, report, status, trajs, plan_time)


def write_reports(report: MetricsReport, out_dir, plan_time=None):
    out = Path(out_dir)
    (out / "metrics.json").write_text(dumps_metrics(report.deterministic()))
    timing = report.timing()
    if plan_time is not None:
        timing["plan_time"] = plan_time
    (out / "timing.json").write_text(dumps_metrics(timing))
