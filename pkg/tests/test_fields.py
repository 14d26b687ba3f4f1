import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vflpc import fields as F


def circle_obs(c=-1.0, **kw):
    # phi = x^2 + y^2 - 1
    return F.ObstacleSpec(F.Circle((0, 0), 1.0, 1.0, kind="obstacle"), c, **kw)


# ---------------------------------------------------------------------------
# surfaces


@pytest.mark.parametrize("surf", [
    F.Line((1.0, -2.0), (0.3, 0.8)),
    F.Circle((2.0, 1.0), 3.0, 0.25),
    F.Ellipse((0.5, -1.0), 4.0, 2.0, angle=0.4, scale=0.1),
    F.PolynomialPath([0.1, -0.2, 0.05, 0.3]),
])
def test_gradient_matches_central_differences(surf):
    rng = np.random.default_rng(1)
    h = 1e-6
    for p in rng.uniform(-5, 5, size=(50, 2)):
        g = surf.gradient(p)
        fd = np.array([(surf.value(p + h * e) - surf.value(p - h * e)) / (2 * h) for e in np.eye(2)])
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_surface_roundtrip_from_dict():
    for s in [F.Line((0, 1), (1, 1)), F.Circle((1, 2), 3, 0.5), F.Ellipse((0, 0), 3, 1, 0.2, 2.0)]:
        s2 = F.surface_from_dict(s.describe())
        p = np.array([0.7, -1.3])
        assert s2.value(p) == pytest.approx(s.value(p))


def test_polynomial_fit_recovers_curve():
    x = np.linspace(0, 10, 50)
    pts = np.c_[x, 0.02 * x ** 2 - 0.1 * x + 1]
    s = F.PolynomialPath.fit(pts, 2)
    assert np.max(np.abs(s.value(pts))) < 1e-9


# ---------------------------------------------------------------------------
# field pieces, hand-evaluated examples


def test_path_field_circle_example():
    cfg = F.FieldConfig(k_p=1.0, gamma0=1)
    v = F.path_field(F.Circle((0, 0), 1.0, 1.0), cfg, np.array([1.0, 0.0]))
    assert np.allclose(v, [0.0, 2.0])


def test_path_field_line_example():
    cfg = F.FieldConfig(k_p=2.0, gamma0=1)
    v = F.path_field(F.Line((0, 0), (1, 0)), cfg, np.array([0.0, 1.0]))
    assert np.allclose(v, [-1.0, -2.0])


def test_path_field_zero_at_singular_point():
    cfg = F.FieldConfig()
    assert np.allclose(F.path_field(F.Circle((0, 0), 1.0), cfg, np.zeros(2)), 0.0)


def test_path_field_nonfinite_raises():
    cfg = F.FieldConfig()
    with pytest.raises(F.FieldEvaluationError):
        F.path_field(F.Circle((0, 0), 1.0), cfg, np.array([np.nan, 0.0]))


def test_repulsive_field_examples():
    o = circle_obs(gamma=1, k_r=1.0)
    assert np.allclose(F.repulsive_field(o, np.array([0.0, 1.0])), [-2.0, 0.0])
    assert np.allclose(F.repulsive_field(o, np.zeros(2)), 0.0)
    p = np.array([0.3, 0.4])
    assert np.array_equal(F.repulsive_field(o, p, 0.0), F.repulsive_field(o, p, 17.0))


def test_repulsive_field_follows_motion():
    o = circle_obs(motion=lambda t: np.array([t, 0.0]))
    assert np.allclose(F.repulsive_field(o, np.array([2.0, 1.0]), 2.0), [-2.0, 0.0])


def test_bump_pair_examples():
    o = circle_obs(c=-1.0, l1=1.0, l2=1.0)
    # phi = c at r = 0, phi = 0 at r = 1
    assert F.bump_pair(o, np.array([0.0, 0.0])) == (0.0, 1.0)
    assert F.bump_pair(o, np.array([1.0, 0.0])) == (1.0, 0.0)
    # phi = -0.5: f1 = exp(1/(-1+0.5)) = exp(-2) = f2 = exp(1/-0.5)
    up, cap = F.bump_pair(o, np.array([np.sqrt(0.5), 0.0]))
    assert up == pytest.approx(0.5, abs=1e-12) and cap == pytest.approx(0.5, abs=1e-12)


def test_bump_matches_ratio_form():
    # independent evaluation of f1 / (f1 + f2) with the piecewise definitions
    c, l1, l2 = -0.8, 1.3, 0.7
    for phi in np.linspace(c + 0.05, -0.05, 15):
        f1 = np.exp(l1 / (c - phi))
        f2 = np.exp(l2 / phi)
        up, cap = F._bump_from_phi(phi, c, l1, l2)
        assert up == pytest.approx(f1 / (f1 + f2), rel=1e-12)
        assert cap == pytest.approx(f2 / (f1 + f2), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, -0.01), st.floats(0.1, 5), st.floats(0.1, 5))
def test_bump_partition_of_unity(x, y, c, l1, l2):
    o = circle_obs(c=c, l1=l1, l2=l2)
    up, cap = F.bump_pair(o, np.array([x, y]))
    assert up + cap == 1.0
    assert 0.0 <= up <= 1.0 and 0.0 <= cap <= 1.0


def test_s_factor_examples():
    o = circle_obs(c=-1.0, is_virtual=True, k_c=1.0, anchor_actual=0)
    p = np.array([np.sqrt(0.5), 0.0])  # phi = -0.5
    assert F.s_factor(o, p, False) == 1.0
    assert F.s_factor(o, p, True) == pytest.approx(np.exp(-2.0), rel=1e-12)
    assert F.s_factor(o, np.zeros(2), True) == 0.0  # saturation at phi <= c


def test_s_factor_monotone_in_kc():
    p = np.array([np.sqrt(0.5), 0.0])
    vals = [F.s_factor(circle_obs(is_virtual=True, k_c=k, anchor_actual=0), p, True)
            for k in np.linspace(0.1, 20, 40)]
    assert np.all(np.diff(vals) < 0)
    assert all(0 < v <= 1 for v in vals)


def test_s_factor_rejects_actual_obstacle():
    with pytest.raises(ValueError):
        F.s_factor(circle_obs(), np.zeros(2), True)


def test_obstacle_validation():
    with pytest.raises(ValueError):
        circle_obs(c=0.5)
    with pytest.raises(ValueError):
        circle_obs(k_r=-1)
    with pytest.raises(ValueError):
        circle_obs(gamma=0)


# ---------------------------------------------------------------------------
# composite and kinodynamic fields


def _unit(v):
    return v / np.linalg.norm(v)


def test_composite_far_from_obstacles_is_normalized_path_field():
    cfg = F.FieldConfig(k_p=0.5, gamma0=-1)
    path = F.Line((0, 0), (1, 0))
    obs = [F.circle_obstacle((10, 0), 1, 3)]
    p = np.array([-5.0, 1.0])
    assert np.allclose(F.composite_field(path, obs, cfg, p), _unit(F.path_field(path, cfg, p)))


def test_composite_inside_repulsive_is_normalized_repulsive_field():
    cfg = F.FieldConfig(k_p=0.5, gamma0=-1)
    path = F.Line((0, 0), (1, 0))
    o = F.circle_obstacle((10, 0), 1, 3, gamma=1)
    p = np.array([10.5, 0.2])
    assert np.allclose(F.composite_field(path, [o], cfg, p), _unit(F.repulsive_field(o, p)))


def test_composite_blend_bounds_random_points():
    cfg = F.FieldConfig(k_p=0.5, gamma0=-1)
    path = F.Line((0, 0), (1, 0))
    o = F.circle_obstacle((0, 2), 1, 3)
    rng = np.random.default_rng(0)
    r = rng.uniform(1.0, 3.0, 1000)
    th = rng.uniform(0, 2 * np.pi, 1000)
    P = np.c_[r * np.cos(th), 2 + r * np.sin(th)]
    up, cap = F.bump_pair(o, P)
    assert np.all(up + cap == 1.0)
    V = F.composite_field(path, [o], cfg, P)
    assert np.all(np.linalg.norm(V, axis=1) <= 1 + cap + 1e-12)


def test_kinodynamic_without_virtual_equals_composite():
    cfg = F.FieldConfig(k_p=0.5, gamma0=-1)
    path = F.Line((0, 0), (1, 0))
    obs = [F.circle_obstacle((5, 1), 1, 3), F.circle_obstacle((12, -1), 1, 2.5, gamma=-1)]
    P = np.random.default_rng(2).uniform([-2, -4], [18, 4], size=(300, 2))
    assert np.array_equal(F.kinodynamic_field(path, obs, cfg, P), F.composite_field(path, obs, cfg, P))


def test_kinodynamic_buffer_point_hand_composition():
    # point in the buffer of a virtual obstacle with s = 0.5, actual obstacle inactive (phi_a >= 0)
    cfg = F.FieldConfig(k_p=0.5, gamma0=-1)
    path = F.Line((0, 0), (1, 0))
    act = F.circle_obstacle((0, 5), 1, 2)
    k_c = 1.0
    virt = F.ObstacleSpec(F.Circle((0, 5), 4.0, 1.0, kind="obstacle"), c=-8.0, is_virtual=True, k_c=k_c,
                          anchor_actual=0, k_r=0.3)
    # s = exp(k_c / (c - phi)) = 0.5  ->  phi = c - k_c / ln 0.5
    phi = -8.0 - k_c / np.log(0.5)
    r = np.sqrt(16.0 + phi)
    p = np.array([0.0, 5.0 - r])
    assert act.value(p) >= 0 and virt.value(p) < 0
    assert F.s_factor(virt, p, True) == pytest.approx(0.5)
    want = 0.5 * _unit(F.path_field(path, cfg, p)) + 0.5 * _unit(F.repulsive_field(virt, p))
    assert np.allclose(F.kinodynamic_field(path, [act, virt], cfg, p), want)
    # latched off: the virtual obstacle contributes s = 1
    assert np.allclose(F.kinodynamic_field(path, [act, virt], cfg, p, buffer_state=[True]),
                       _unit(F.path_field(path, cfg, p)))


def test_composite_singular_path_raises():
    cfg = F.FieldConfig()
    with pytest.raises(F.SingularFieldError):
        F.composite_field(F.Circle((0, 0), 1.0), [], cfg, np.zeros(2))


def test_virtual_placement_rule():
    path_pts = np.c_[np.linspace(-20, 20, 400), np.zeros(400)]
    act = F.circle_obstacle((0, 1), 2, 5)
    good = F.circle_obstacle((0, 1), 3, 8, is_virtual=True, anchor_actual=0)
    bad = F.circle_obstacle((0, 1), 6, 9, is_virtual=True, anchor_actual=0)
    assert F.check_virtual_placement([act, good], path_pts)
    assert not F.check_virtual_placement([act, bad], path_pts)


# ---------------------------------------------------------------------------
# speed plan


def test_speed_plan_examples():
    assert F.speed_plan(0.0, F.FieldConfig(v_d=3.0)) == 3.0
    assert F.speed_plan(1.0, F.FieldConfig(v_d=10.0, a_max=4.0)) == pytest.approx(2.0)
    assert F.speed_plan(1.0, F.FieldConfig(v_d=1.0, a_max=4.0)) == 1.0


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e3), st.floats(0.1, 40), st.floats(0.1, 10))
def test_speed_plan_bound(kappa, v_d, a_max):
    v = F.speed_plan(kappa, F.FieldConfig(v_d=v_d, a_max=a_max))
    assert v * v * kappa <= a_max
    assert 0 < v <= v_d


def test_speed_plan_rejects_negative():
    with pytest.raises(ValueError):
        F.speed_plan(-1.0, F.FieldConfig())


# ---------------------------------------------------------------------------
# grid


def test_constant_grid_and_node_lookup():
    cfg = F.FieldConfig(x_min=0, x_max=1, y_min=0, y_max=1, resolution=1.0)
    g = F.constant_grid((0.3, -0.4), cfg)
    assert g.shape == (2, 2)
    assert np.all(g.chi == np.array([0.3, -0.4]))


def test_lookup_at_node_is_exact():
    cfg = F.FieldConfig(x_min=-1, x_max=1, y_min=-1, y_max=1, resolution=0.5, gamma0=-1)
    g = F.precompute_grid(F.Line((0, 0), (1, 0)), [], cfg)
    for iy in range(g.shape[0]):
        for ix in range(g.shape[1]):
            assert np.array_equal(g.lookup(g.node(iy, ix)), g.chi[iy, ix])


def test_nearest_node_with_lowest_index_ties():
    cfg = F.FieldConfig(x_min=0, x_max=9, y_min=0, y_max=9, resolution=1.0)
    g = F.constant_grid((1, 0), cfg)
    g.chi = np.random.default_rng(0).normal(size=g.chi.shape)
    nodes = np.array([[g.node(iy, ix) for ix in range(10)] for iy in range(10)]).reshape(-1, 2)
    pts = np.random.default_rng(1).uniform(-0.4, 9.4, size=(400, 2))
    # exact ties between neighbours
    pts = np.vstack([pts, [[2.5, 3.0], [4.0, 6.5], [0.5, 0.5], [8.5, 8.5]]])
    for p in pts:
        d = np.linalg.norm(nodes - p, axis=1)
        # brute force: smallest distance, lowest linear index (row-major y then x) on ties
        j = int(np.flatnonzero(d <= d.min() + 1e-12)[0])
        assert np.array_equal(g.lookup(p), g.chi.reshape(-1, 2)[j])


def test_grid_size_cap():
    cfg = F.FieldConfig(x_min=0, x_max=100, y_min=0, y_max=100, resolution=0.01, max_nodes=1000)
    with pytest.raises(F.GridSizeError):
        F.precompute_grid(F.Line(), [], cfg)


def test_grid_save_load_roundtrip(tmp_path):
    cfg = F.FieldConfig(x_min=-5, x_max=25, y_min=-8, y_max=8, resolution=0.5, gamma0=-1, k_p=0.3)
    obs = [F.circle_obstacle((10, 0.5), 1.5, 3.0),
           F.circle_obstacle((10, 0.5), 2.5, 6.0, is_virtual=True, anchor_actual=0, k_r=0.1)]
    g = F.precompute_grid(F.Line(), obs, cfg)
    g.save(tmp_path / "g.bin")
    raw = (tmp_path / "g.bin").read_bytes()
    assert raw[:4] == b"GVFG"
    h = F.GridField.load(tmp_path / "g.bin")
    assert np.array_equal(h.chi, g.chi)
    t1 = F.integrate_trajectory(g, cfg, (0, 0), 40)
    t2 = F.integrate_trajectory(h, cfg, (0, 0), 40)
    assert np.array_equal(t1.points, t2.points)


# ---------------------------------------------------------------------------
# integration


def test_straight_integration():
    cfg = F.FieldConfig(x_min=-1, x_max=3, y_min=-1, y_max=1, resolution=0.1, beta=0.1, v_d=4.0)
    g = F.constant_grid((1.0, 0.0), cfg)
    tr = F.integrate_trajectory(g, cfg, (0.0, 0.0), 10)
    assert np.allclose(tr.points[-1], [1.0, 0.0])
    assert np.all(tr.curvatures == 0) and np.all(tr.speeds == 4.0)


def test_singular_cell_inherits_previous_vector():
    cfg = F.FieldConfig(x_min=-1, x_max=3, y_min=-1, y_max=1, resolution=0.1, beta=0.1)
    g = F.constant_grid((1.0, 0.0), cfg)
    h = F.constant_grid((1.0, 0.0), cfg)
    iy, ix = h.nearest_index((0.5, 0.0))
    h.chi[iy, ix] = 0.0
    a = F.integrate_trajectory(g, cfg, (0.0, 0.0), 20)
    b = F.integrate_trajectory(h, cfg, (0.0, 0.0), 20)
    assert np.array_equal(a.points, b.points)


def test_singular_first_vector_errors():
    cfg = F.FieldConfig(x_min=-1, x_max=1, y_min=-1, y_max=1, resolution=0.1)
    with pytest.raises(F.TrajectoryInitError):
        F.integrate_trajectory(F.constant_grid((0.0, 0.0), cfg), cfg, (0.0, 0.0), 5)


def test_leaving_grid_truncates_with_status():
    cfg = F.FieldConfig(x_min=0, x_max=1, y_min=-1, y_max=1, resolution=0.1, beta=0.1)
    tr = F.integrate_trajectory(F.constant_grid((1.0, 0.0), cfg), cfg, (0.0, 0.0), 100)
    assert tr.status == "left_grid"
    assert len(tr) < 101


def test_circle_orbit_curvature():
    R = 5.0
    cfg = F.FieldConfig(k_p=1.0, gamma0=1, beta=0.05, x_min=-8, x_max=8, y_min=-8, y_max=8,
                        resolution=0.02, v_d=10.0, a_max=100.0)
    circ = F.Circle((0, 0), R, 1.0 / (2 * R))
    tr, _ = F.plan_trajectory(circ, [], cfg, (R + 1.0, 0.0), 1500)
    r = np.linalg.norm(tr.points[-300:], axis=1)
    assert np.max(np.abs(r - R)) < 0.05
    # orbit curvature: total heading change over arc length after the transient
    d = np.diff(tr.points[-600:], axis=0)
    psi = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    kappa = abs(psi[-1] - psi[0]) / np.sum(np.linalg.norm(d[1:], axis=1))
    assert abs(kappa - 1 / R) < 0.05 / R
    # per-vertex estimates carry nearest-node jitter but stay centred on 1/R
    assert abs(np.median(tr.curvatures[-600:]) - 1 / R) < 0.05 / R


def test_trajectory_spacing_and_kinodynamic_bound():
    cfg = F.FieldConfig(k_p=0.3, gamma0=-1, beta=0.2, x_min=-5, x_max=70, y_min=-15, y_max=15,
                        resolution=0.1, v_d=6.944, a_max=3.0)
    obs = [F.circle_obstacle((30, 0.5), 2.5, 6.0, gamma=1),
           F.circle_obstacle((30, 0.5), 5.0, 12.0, gamma=1, is_virtual=True, anchor_actual=0, k_r=0.1)]
    tr, _ = F.plan_trajectory(F.Line(), obs, cfg, (0, 0), 320)
    seg = np.linalg.norm(np.diff(tr.points, axis=0), axis=1)
    assert np.all(seg <= cfg.beta * (1 + 1e-6))
    assert np.all(tr.speeds ** 2 * tr.curvatures <= cfg.a_max + 1e-9)
    # never crosses the repulsive boundary
    assert np.min(obs[0].value(tr.points)) > obs[0].c
    # deterministic
    tr2, _ = F.plan_trajectory(F.Line(), obs, cfg, (0, 0), 320)
    assert np.array_equal(tr.points, tr2.points)


def test_latch_sequence():
    lat = F._Latch(1)
    # outside -> buffer -> inside actual reactive -> buffer again: latched
    assert not lat.update([0])[0]
    assert not lat.update([1])[0]
    assert not lat.update([2])[0]
    assert lat.update([1])[0]
    # leaving both regions re-arms it
    assert not lat.update([0])[0]


def test_discrete_curvature_hand_value():
    pts = np.array([[0, 0], [1, 0], [1, 1]], dtype=float)
    k = F.discrete_curvature(pts)
    assert k[1] == pytest.approx(np.pi / 2)


def test_trajectory_csv_roundtrip(tmp_path):
    tr = F.GuidingTrajectory(np.array([[0, 0], [1, 0.5]]), np.array([2.0, 3.0]), np.array([0.0, 0.1]))
    tr.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "x,y,speed,curvature"
    back = F.GuidingTrajectory.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.points, tr.points) and np.array_equal(back.speeds, tr.speeds)
