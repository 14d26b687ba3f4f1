import json
import math

import numpy as np
import pytest

from vflpc.metrics import EmptyRunError, compute_metrics, dumps_metrics, path_length, read_run


def straight_run(ys=(0.0, 0.0, 0.0), psis=(0.0, 0.0, 0.0), ut=((0.0, 0.0),) * 3, dist=(None,) * 3):
    recs = [{"type": "trajectory", "id": 0, "points": [[x, 0.0] for x in range(0, 11)]}]
    prev = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
    for k, (y, p, u, d) in enumerate(zip(ys, psis, ut, dist)):
        st = [float(k + 1), y, p, 1.0, 0.0, 0.0]
        recs.append({"type": "step", "k": k, "t": 0.1 * (k + 1), "traj": 0, "state_prev": prev, "state": st,
                     "u_tilde": list(u), "obstacle_distance": d, "solve_time": 0.01})
        prev = st
    recs.append({"type": "end", "status": "complete"})
    return recs


def test_length_examples():
    assert path_length([(0, 0), (1, 0), (2, 0)]) == 2.0
    assert path_length([(0, 0)]) == 0.0
    assert compute_metrics(straight_run()).length == pytest.approx(3.0)


def test_perfect_tracking_zero_errors():
    m = compute_metrics(straight_run())
    assert m.j_lat == 0 and m.j_heading == 0 and m.j_con == 0 and m.j_mc == 0
    assert m.status == "complete" and m.steps == 3 and m.ct == pytest.approx(0.3)
    assert m.min_obstacle_distance == math.inf


def test_weighted_metric_hand_sum():
    ys, ps = (0.1, -0.2, 0.3), (0.05, 0.0, -0.1)
    us = ((1.0, 0.1), (0.0, -0.2), (0.5, 0.0))
    q1, q2, R = 2.0, 3.0, np.diag([0.5, 4.0])
    m = compute_metrics(straight_run(ys, ps, us, (1.5, 0.7, 2.0)), q1, q2, R)
    rows = [q1 * y * y + q2 * p * p + 0.5 * u[0] ** 2 + 4.0 * u[1] ** 2 for y, p, u in zip(ys, ps, us)]
    assert m.j_mc == pytest.approx(sum(rows) / 3, rel=1e-12)
    assert m.mean_abs_ey == pytest.approx(0.2)
    assert m.max_abs_ey == pytest.approx(0.3)
    assert m.min_obstacle_distance == 0.7
    assert m.aver_st == pytest.approx(0.01)


def test_diagonal_weights_accept_vector():
    us = ((1.0, 2.0),) * 3
    a = compute_metrics(straight_run(ut=us), R=[1.0, 2.0])
    b = compute_metrics(straight_run(ut=us), R=np.diag([1.0, 2.0]))
    assert a.j_con == b.j_con == pytest.approx(9.0)


def test_empty_run_raises():
    with pytest.raises(EmptyRunError):
        compute_metrics([{"type": "trajectory", "id": 0, "points": [[0, 0], [1, 0]]}])


def test_deterministic_split_and_dump(tmp_path):
    m = compute_metrics(straight_run())
    d = m.deterministic()
    assert "aver_st" not in d and m.timing() == {"aver_st": 0.01}
    text = dumps_metrics(d)
    assert json.loads(text)["min_obstacle_distance"] == "inf"
    assert text == dumps_metrics(compute_metrics(straight_run()).deterministic())
    p = tmp_path / "run.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in straight_run()))
    assert compute_metrics(read_run(p)) == m
