"""Pursuit-evasion switch for the exponential obstacle barrier."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .fields import Circle, Ellipse, ObstacleSpec

log = logging.getLogger(__name__)


class NoEscapeCondition(ValueError):
    """Pursuer is faster than the evader; the arccos has no solution."""


class HeadingUndefinedError(ValueError):
    pass


@dataclass
class GameGeometry:
    l: float
    l_safe: float
    v_p: float
    v_e: float

    def __post_init__(self):
        if self.l <= 0 or self.l_safe < 0 or self.v_e <= 0 or self.v_p < 0:
            raise ValueError("need l > 0, l_safe >= 0, v_e > 0, v_p >= 0")


@dataclass
class BarrierConfig:
    mu_active: float = 1.0
    l: float = 2.0
    l_safe: float = 6.0

    def __post_init__(self):
        if self.mu_active <= 0:
            raise ValueError("mu_active must be positive")


def bup_angle(geom: GameGeometry) -> float:
    if geom.v_p > geom.v_e:
        raise NoEscapeCondition("pursuer faster than evader")
    if geom.v_p == 0:
        warnings.warn("v_p = 0 puts the BUP angle on the open boundary pi/2", RuntimeWarning)
    return float(np.arccos(-geom.v_p / geom.v_e))


def to_evader_frame(evader_pose, pursuer_pos, evader_speed=1.0):
    """Pursuer position in the evader frame: Y along the evader velocity, X to its right."""
    if evader_speed <= 0:
        raise HeadingUndefinedError("evader speed is zero")
    x, y, th = evader_pose
    d = np.asarray(pursuer_pos, dtype=float) - np.array([x, y])
    c, s = np.cos(th), np.sin(th)
    return np.array([d[0] * s - d[1] * c, d[0] * c + d[1] * s])


def in_pursuit_region(p_e, geom: GameGeometry, s_bar: Optional[float] = None) -> bool:
    X, Y = float(p_e[0]), float(p_e[1])
    l = geom.l
    if np.hypot(X, Y) > l + geom.l_safe:
        return False
    if s_bar is None:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                s_bar = bup_angle(geom)
        except NoEscapeCondition:
            return True
    sn, cs = np.sin(s_bar), np.cos(s_bar)
    if abs(X) < l * sn and Y >= -np.sqrt(max(l * l - X * X, 0.0)):
        return True
    if abs(cs) < 1e-12:
        # s_bar = pi/2: the tangent lines are vertical and H1, H2 are empty
        return False
    t = np.tan(s_bar)
    if X <= -l * sn and Y >= t * X + l / cs:
        return True
    if X >= l * sn and Y >= -t * X + l / cs:
        return True
    return False


def barrier_value(robot_pos, x_p, mu) -> float:
    d = np.linalg.norm(np.asarray(robot_pos, float)[:2] - np.asarray(x_p, float))
    return float(mu * np.exp(-d))


def barrier_gradient(robot_pos, x_p, mu, n_K, pos_idx=(0, 1)):
    """d h / d x~ where the position sits at ``pos_idx`` of the lifted error state.

    Returns (gradient, status); status is "degenerate" at zero distance.
    """
    g = np.zeros(n_K)
    if mu == 0:
        return g, "off"
    diff = np.asarray(robot_pos, float)[:2] - np.asarray(x_p, float)
    d = np.linalg.norm(diff)
    if d == 0:
        return g, "degenerate"
    g[list(pos_idx)] = -mu * np.exp(-d) * diff / d
    return g, "ok"


def barrier_hessian(robot_pos, x_p, mu, n_K, pos_idx=(0, 1)):
    H = np.zeros((n_K, n_K))
    diff = np.asarray(robot_pos, float)[:2] - np.asarray(x_p, float)
    d = np.linalg.norm(diff)
    if mu == 0 or d == 0:
        return H
    u = diff / d
    e = mu * np.exp(-d)
    blk = e * (np.outer(u, u) - (np.eye(2) - np.outer(u, u)) / d)
    idx = np.ix_(list(pos_idx), list(pos_idx))
    H[idx] = blk
    return H


# ---------------------------------------------------------------------------
# nearest boundary point


def _center(o: ObstacleSpec, t):
    s = o.surface
    if isinstance(s, (Circle, Ellipse)):
        return s.center + o.offset(t)
    raise ValueError("nearest-boundary search needs a surface with a centre")


def nearest_boundary_point(o: ObstacleSpec, p, level=0.0, t=0.0, n_seed=64):
    """Closest point of the level set {phi = level} to p.

    Circles are solved in closed form; other centred surfaces are sampled on
    ``n_seed`` rays from the centre and refined by a bounded 1-D search.
    """
    p = np.asarray(p, dtype=float)
    s = o.surface
    c = _center(o, t)
    if isinstance(s, Circle):
        r = s.level_radius(level)
        d = p - c
        n = np.linalg.norm(d)
        u = d / n if n > 0 else np.array([1.0, 0.0])
        return c + r * u

    def ray_point(th):
        u = np.array([np.cos(th), np.sin(th)])
        f = lambda r: o.value(c + r * u, t) - level
        hi = 1.0
        while f(hi) < 0:
            hi *= 2.0
            if hi > 1e6:
                raise ValueError("level set not bounded along ray")
        return c + brentq(f, 0.0, hi, xtol=1e-12) * u

    ths = np.linspace(-np.pi, np.pi, n_seed, endpoint=False)
    pts = np.array([ray_point(th) for th in ths])
    i = int(np.argmin(np.linalg.norm(pts - p, axis=1)))
    step = 2 * np.pi / n_seed
    res = minimize_scalar(lambda th: np.linalg.norm(ray_point(th) - p),
                          bounds=(ths[i] - step, ths[i] + step), method="bounded",
                          options={"xatol": 1e-10})
    return ray_point(res.x)


def obstacle_velocity(o: ObstacleSpec, t, h=1e-3):
    if o.motion is None:
        return np.zeros(2)
    return (o.offset(t + h) - o.offset(t - h)) / (2 * h)


@dataclass
class MuDecision:
    mu: float
    x_p: Optional[np.ndarray]
    obstacle: Optional[int]
    in_region: bool = False
    distance: float = np.inf
    movers_in_range: int = 0


def barrier_anchor(o: ObstacleSpec, pos, t=0.0):
    """Reactive-boundary point when outside it, else the repulsive-boundary point."""
    lvl = 0.0 if o.value(pos, t) >= 0 else o.c
    return nearest_boundary_point(o, pos, lvl, t)


def select_mu(robot_pos, evader_heading, v_e, obstacles: Sequence[ObstacleSpec], cfg: BarrierConfig,
              t=0.0) -> MuDecision:
    """Pick the nearest moving obstacle as pursuer and switch the barrier on inside its pursuit region."""
    movers = [i for i, o in enumerate(obstacles) if o.motion is not None and not o.is_virtual]
    if not movers:
        return MuDecision(0.0, None, None)
    pos = np.asarray(robot_pos, float)[:2]
    best, best_d, best_xp = None, np.inf, None
    n_range = 0
    for i in movers:
        xp = barrier_anchor(obstacles[i], pos, t)
        d = np.linalg.norm(xp - pos)
        if d <= cfg.l + cfg.l_safe:
            n_range += 1
        if d < best_d:
            best, best_d, best_xp = i, d, xp
    if n_range > 1:
        log.info("%d moving obstacles within l + l_safe; nearest one is used", n_range)
    o = obstacles[best]
    vp = float(np.linalg.norm(obstacle_velocity(o, t)))
    geom = GameGeometry(cfg.l, cfg.l_safe, vp, max(v_e, 1e-9))
    p_e = to_evader_frame((pos[0], pos[1], evader_heading), _center(o, t), max(v_e, 1e-9))
    inside = in_pursuit_region(p_e, geom)
    mu = cfg.mu_active if inside else 0.0
    return MuDecision(mu, best_xp, best, inside, float(best_d), n_range)
