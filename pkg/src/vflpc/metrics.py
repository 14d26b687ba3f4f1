"""Episode metrics computed from a run record."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, List

import numpy as np

from .controller import frenet_errors


class EmptyRunError(ValueError):
    pass


@dataclass
class MetricsReport:
    length: float
    j_mc: float
    j_lat: float
    j_heading: float
    j_con: float
    ct: float
    aver_st: float
    min_obstacle_distance: float
    mean_abs_ey: float
    max_abs_ey: float
    mean_abs_epsi: float
    steps: int
    status: str

    # wall-clock quantities are kept out of the deterministic file
    TIMING_FIELDS = ("aver_st",)

    def deterministic(self) -> dict:
        d = asdict(self)
        for k in self.TIMING_FIELDS:
            d.pop(k)
        return d

    def timing(self) -> dict:
        return {k: getattr(self, k) for k in self.TIMING_FIELDS}


def read_run(path) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def path_length(xy) -> float:
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(xy, axis=0), axis=1)))


def compute_metrics(records: Iterable[dict], q1=1.0, q2=1.0, R=None) -> MetricsReport:
    """J_MC, Length, CT, Aver. S.T., obstacle clearance and Frenet errors of one episode.

    ``records`` is the parsed run.jsonl: ``trajectory`` lines carry the guiding
    trajectories, ``step`` lines the per-step data, an optional ``end`` line the
    outcome.
    """
    trajs, steps, status = {}, [], "incomplete"
    for r in records:
        kind = r.get("type")
        if kind == "trajectory":
            trajs[r["id"]] = np.asarray(r["points"], dtype=float)
        elif kind == "step":
            steps.append(r)
        elif kind == "end":
            status = r.get("status", status)
    if not steps:
        raise EmptyRunError("run has no steps")
    n_u = len(steps[0]["u_tilde"])
    R = np.eye(n_u) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape == (1, n_u):
        R = np.diag(R[0])
    ey = np.empty(len(steps))
    ep = np.empty(len(steps))
    jc = np.empty(len(steps))
    for i, r in enumerate(steps):
        x = r["state"]
        ey[i], ep[i] = frenet_errors(trajs[r["traj"]], np.array(x[:2]), x[2])
        ut = np.asarray(r["u_tilde"], dtype=float)
        jc[i] = ut @ R @ ut
    j_lat, j_head = ey ** 2, ep ** 2
    xy = [steps[0]["state_prev"][:2]] + [r["state"][:2] for r in steps]
    dists = [r["obstacle_distance"] for r in steps if r.get("obstacle_distance") is not None]
    return MetricsReport(
        length=path_length(xy),
        j_mc=float(np.mean(q1 * j_lat + q2 * j_head + jc)),
        j_lat=float(np.mean(j_lat)),
        j_heading=float(np.mean(j_head)),
        j_con=float(np.mean(jc)),
        ct=float(steps[-1]["t"]),
        aver_st=float(np.mean([r["solve_time"] for r in steps])),
        min_obstacle_distance=float(min(dists)) if dists else float("inf"),
        mean_abs_ey=float(np.mean(np.abs(ey))),
        max_abs_ey=float(np.max(np.abs(ey))),
        mean_abs_epsi=float(np.mean(np.abs(ep))),
        steps=len(steps),
        status=status,
    )


def dumps_metrics(d: dict) -> str:
    """Stable JSON text (sorted keys, repr floats, inf as a string)."""
    def fix(v):
        if isinstance(v, float) and not np.isfinite(v):
            return str(v)
        return v
    return json.dumps({k: fix(v) for k, v in d.items()}, sort_keys=True, indent=1) + "\n"
