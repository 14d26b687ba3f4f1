"""Bicycle-model plant, process noise and triggered moving obstacles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

V_FLOOR = 0.1


class PlantError(FloatingPointError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    m: float = 2257.0
    I_z: float = 3524.9
    l_f: float = 1.33
    l_r: float = 1.81
    C_af: float = 66900.0
    C_ar: float = 62700.0

    def __post_init__(self):
        if min(self.m, self.I_z, self.l_f, self.l_r, self.C_af, self.C_ar) <= 0:
            raise ValueError("vehicle parameters must be positive")


NOMINAL = VehicleParams()
# evaluation plant of the model-mismatch experiment
MISMATCH = VehicleParams(m=1257.0, I_z=1524.9, C_af=8790.0, C_ar=30400.0)
MISMATCH_NOISE_STD = 0.002

STATE_NAMES = ("X", "Y", "psi", "vx", "vy", "omega")


@dataclass
class NoiseConfig:
    std: np.ndarray = field(default_factory=lambda: np.zeros(6))
    seed: int = 0

    def __post_init__(self):
        self.std = np.broadcast_to(np.asarray(self.std, dtype=float), (6,)).copy()
        if np.any(self.std < 0):
            raise ValueError("noise stds must be non-negative")

    def rng(self):
        return np.random.default_rng(self.seed)


def bicycle_derivative(s, u, p: VehicleParams, v_floor=V_FLOOR, return_status=False):
    """Right-hand side of the dynamic bicycle model; u = (a_x, delta_f)."""
    X, Y, psi, vx, vy, om = s
    ax, delta = u
    c, sn = np.cos(psi), np.sin(psi)
    if vx < v_floor:
        # kinematic fallback: tyre terms divide by v_x
        d = np.array([vx * c, vx * sn, 0.0, ax, 0.0, 0.0])
        return (d, "floor") if return_status else d
    dX = vx * c - vy * sn
    dY = vx * sn + vy * c
    dvx = vy * om + ax
    dvy = (2.0 * p.C_af * (delta / p.m - (vy + p.l_f * om) / (p.m * vx))
           + 2.0 * p.C_ar * (p.l_r * om - vy) / (p.m * vx) - vx * om)
    dom = (2.0 / p.I_z) * (p.l_f * p.C_af * (delta - (vy + p.l_f * om) / vx)
                           - p.l_r * p.C_ar * (p.l_r * om - vy) / vx)
    d = np.array([dX, dY, om, dvx, dvy, dom])
    return (d, "ok") if return_status else d


def rk4(s, u, p, dt):
    s = np.asarray(s, dtype=float)
    k1 = bicycle_derivative(s, u, p)
    k2 = bicycle_derivative(s + 0.5 * dt * k1, u, p)
    k3 = bicycle_derivative(s + 0.5 * dt * k2, u, p)
    k4 = bicycle_derivative(s + dt * k3, u, p)
    return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def step(s, u, p: VehicleParams, dt, noise: Optional[NoiseConfig] = None, rng=None, substeps=1):
    """RK4 over dt (in ``substeps`` equal pieces), then additive Gaussian noise."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(s, dtype=float)
    # the tyre terms scale like 1/v_x; refine the RK4 step so h * stiffness stays inside its stability region
    if x[3] >= V_FLOOR:
        lam = max(2 * (p.C_af + p.C_ar) / (p.m * x[3]),
                  2 * (p.l_f ** 2 * p.C_af + p.l_r ** 2 * p.C_ar) / (p.I_z * x[3]))
        substeps = max(substeps, int(np.ceil(dt * lam / 2.0)))
    h = dt / substeps
    for _ in range(substeps):
        x = rk4(x, u, p, h)
    if noise is not None and np.any(noise.std > 0):
        rng = noise.rng() if rng is None else rng
        x = x + noise.std * rng.standard_normal(6)
    if not np.all(np.isfinite(x)):
        raise PlantError("non-finite plant state")
    return x


class Plant:
    """Holds the plant parameters and the per-episode noise stream."""

    def __init__(self, params: VehicleParams = NOMINAL, dt=0.1, plant_dt=0.02,
                 noise: Optional[NoiseConfig] = None):
        self.params = params
        self.dt = dt
        self.substeps = max(1, int(round(dt / plant_dt)))
        self.noise = noise if noise is not None else NoiseConfig()
        self.rng = self.noise.rng()

    def step(self, s, u):
        return step(s, u, self.params, self.dt, self.noise, self.rng, self.substeps)


# ---------------------------------------------------------------------------
# moving obstacles


class TriggeredMotion:
    """Offset that stays zero until the robot comes within ``trigger`` metres, then grows linearly."""

    def __init__(self, velocity, trigger=25.0):
        self.velocity = np.asarray(velocity, dtype=float)
        self.trigger = float(trigger)
        self.t0: Optional[float] = None

    def __call__(self, t):
        if self.t0 is None or t <= self.t0:
            return np.zeros(2)
        return self.velocity * (t - self.t0)

    def reset(self):
        self.t0 = None


def obstacle_center(o, t=0.0):
    return np.asarray(o.surface.center, dtype=float) + o.offset(t)


def advance_obstacles(obstacles: Sequence, t, robot_pos):
    """Start every untriggered mover whose reactive boundary is within its trigger distance.

    Returns the current centres of all obstacles.
    """
    pos = np.asarray(robot_pos, dtype=float)[:2]
    for o in obstacles:
        m = o.motion
        if isinstance(m, TriggeredMotion) and m.t0 is None:
            d = np.linalg.norm(obstacle_center(o, t) - pos)
            if d < m.trigger:
                m.t0 = float(t)
                log.debug("obstacle %s triggered at t=%.2f", o.name, t)
    return [obstacle_center(o, t) for o in obstacles]


def vehicle_trajectory(x0, controls, p=NOMINAL, dt=0.1, substeps=5, noise=None, seed=0):
    """Open-loop rollout; returns states (T+1, 6)."""
    xs = [np.asarray(x0, dtype=float)]
    rng = np.random.default_rng(seed)
    for u in controls:
        xs.append(step(xs[-1], u, p, dt, noise, rng, substeps))
    return np.array(xs)


def excitation_dataset(n_traj=20, T=60, p=NOMINAL, dt=0.1, seed=0, v_range=(3.0, 9.0), psi_range=np.pi):
    """Random smooth-input rollouts for fitting the nominal lifted model."""
    rng = np.random.default_rng(seed)
    trajs = []
    for _ in range(n_traj):
        v0 = rng.uniform(*v_range)
        x0 = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-psi_range, psi_range),
                       v0, 0.0, 0.0])
        # sum of a few sinusoids for each input, with a weak pull of v_x back to v0
        t = np.arange(T) * dt
        ax = sum(rng.uniform(-0.6, 0.6) * np.sin(rng.uniform(0.2, 2.0) * t + rng.uniform(0, 6.3))
                 for _ in range(3))
        de = sum(rng.uniform(-0.06, 0.06) * np.sin(rng.uniform(0.2, 2.0) * t + rng.uniform(0, 6.3))
                 for _ in range(3))
        xs = [x0]
        us = np.stack([ax, de], axis=1)
        for k in range(T):
            us[k, 0] += 0.5 * (v0 - xs[-1][3])
            xs.append(step(xs[-1], us[k], p, dt, substeps=5))
        trajs.append((np.array(xs), us))
    return trajs
