"""Vehicle tracking layer: guiding-trajectory reference, lifted error problem and the control loop glue.

The error problem for one receding-horizon cycle is posed in a local frame
anchored at the reference pose closest to the vehicle, so headings stay small
and the lifted trig observables stay well inside their fitted range.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gp as gpm
from .koopman import KoopmanModel
from .lpc import (HorizonState, KernelFeatureSet, RhrlConfig, RhrlController, feature_vector,
                  terminal_penalty)
from .safety import barrier_gradient
from .sim import NOMINAL, VehicleParams

log = logging.getLogger(__name__)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# reference along a guiding trajectory


class Reference:
    """Arc-length parameterised guiding trajectory with chord headings and a feasible speed profile."""

    def __init__(self, points, speeds, chord=1.0, a_long=1.5, v_min=0.5):
        pts = np.asarray(points, dtype=float)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        keep = np.concatenate([[True], seg > 1e-9])
        self.points = pts[keep]
        self.s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(self.points, axis=0), axis=1))])
        self.length = float(self.s[-1])
        self.chord = chord
        v = np.maximum(np.asarray(speeds, dtype=float)[keep], v_min)
        # forward/backward longitudinal acceleration limits on the planned speeds
        ds = np.diff(self.s)
        for i in range(1, len(v)):
            v[i] = min(v[i], np.sqrt(v[i - 1] ** 2 + 2 * a_long * ds[i - 1]))
        for i in range(len(v) - 2, -1, -1):
            v[i] = min(v[i], np.sqrt(v[i + 1] ** 2 + 2 * a_long * ds[i]))
        self.v = v

    def position(self, s):
        s = np.clip(s, 0.0, self.length)
        return np.stack([np.interp(s, self.s, self.points[:, 0]),
                         np.interp(s, self.s, self.points[:, 1])], axis=-1)

    def heading(self, s):
        b = self.chord
        s = np.asarray(s, dtype=float)
        lo = np.clip(s - b, 0.0, self.length)
        hi = np.clip(s + b, 0.0, self.length)
        hi = np.where(hi - lo < 1e-6, np.minimum(lo + 1e-3, self.length), hi)
        lo = np.where(hi - lo < 1e-6, hi - 1e-3, lo)
        d = self.position(hi) - self.position(lo)
        return np.arctan2(d[..., 1], d[..., 0])

    def curvature(self, s):
        b = self.chord
        return _wrap(self.heading(np.asarray(s) + b) - self.heading(np.asarray(s) - b)) / (2 * b)

    def speed(self, s):
        return np.interp(np.clip(s, 0.0, self.length), self.s, self.v)

    def project(self, p, s_hint=None, window=(-3.0, 15.0)):
        """Arc length of the closest trajectory point; searched near ``s_hint`` when given."""
        p = np.asarray(p, dtype=float)[:2]
        if s_hint is None:
            i0, i1 = 0, len(self.points) - 1
        else:
            i0 = max(0, int(np.searchsorted(self.s, s_hint + window[0])) - 1)
            i1 = min(len(self.points) - 1, int(np.searchsorted(self.s, s_hint + window[1])) + 1)
        a = self.points[i0:i1]
        b = self.points[i0 + 1:i1 + 1]
        if len(a) == 0:
            return float(np.clip(s_hint if s_hint is not None else 0.0, 0, self.length))
        d = b - a
        L2 = np.maximum(np.sum(d * d, axis=1), 1e-18)
        t = np.clip(np.sum((p - a) * d, axis=1) / L2, 0.0, 1.0)
        q = a + t[:, None] * d
        j = int(np.argmin(np.sum((q - p) ** 2, axis=1)))
        return float(self.s[i0 + j] + t[j] * np.sqrt(L2[j]))


def frenet_errors(points, p, psi):
    """Signed lateral offset (left positive) and heading error against the nearest segment."""
    pts = np.asarray(points, dtype=float)
    a, b = pts[:-1], pts[1:]
    d = b - a
    L2 = np.maximum(np.sum(d * d, axis=1), 1e-18)
    t = np.clip(np.sum((p - a) * d, axis=1) / L2, 0.0, 1.0)
    q = a + t[:, None] * d
    j = int(np.argmin(np.sum((q - p) ** 2, axis=1)))
    tang = d[j] / np.sqrt(L2[j])
    r = np.asarray(p) - q[j]
    e_y = float(tang[0] * r[1] - tang[1] * r[0])
    if np.hypot(*r) > 0 and abs(e_y) < 1e-12:
        e_y = float(np.hypot(*r))
    e_psi = float(_wrap(psi - np.arctan2(tang[1], tang[0])))
    return e_y, e_psi


# ---------------------------------------------------------------------------
# steady-state reference inputs


def steady_lateral(v, omega, p: VehicleParams):
    """(v_y, delta) that hold v_y and omega constant at speed v and yaw rate omega."""
    v = max(v, 0.1)
    M = np.array([[2 * p.C_af / p.m, -2 * (p.C_af + p.C_ar) / (p.m * v)],
                  [p.l_f * p.C_af, (p.l_r * p.C_ar - p.l_f * p.C_af) / v]])
    rhs = np.array([2 * (p.C_af * p.l_f - p.C_ar * p.l_r) * omega / (p.m * v) + v * omega,
                    (p.l_f ** 2 * p.C_af + p.l_r ** 2 * p.C_ar) * omega / v])
    delta, vy = np.linalg.solve(M, rhs)
    return vy, delta


def to_local(x, origin):
    """Global vehicle state -> frame at origin = (X0, Y0, psi0)."""
    X0, Y0, psi0 = origin
    c, s = np.cos(psi0), np.sin(psi0)
    dx, dy = x[0] - X0, x[1] - Y0
    return np.array([c * dx + s * dy, -s * dx + c * dy, _wrap(x[2] - psi0), x[3], x[4], x[5]])


def point_to_local(p, origin):
    X0, Y0, psi0 = origin
    c, s = np.cos(psi0), np.sin(psi0)
    dx, dy = p[0] - X0, p[1] - Y0
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def vec_to_local(v, origin):
    c, s = np.cos(origin[2]), np.sin(origin[2])
    return np.array([c * v[0] + s * v[1], -s * v[0] + c * v[1]])


# ---------------------------------------------------------------------------
# horizon problem


class VehicleHorizon:
    """Lifted error dynamics along one horizon of reference states.

    x~_{t+1} = A x~ + B u~ + B_d d(z) - r_t with r_t the reference's own
    one-step inconsistency under the nominal lifted model.
    """

    def __init__(self, model: KoopmanModel, ups_r, u_r, sgp: Optional[gpm.SparseGp] = None,
                 barrier=None, gp_mode="linearized"):
        self.model = model
        self.ups_r = ups_r
        self.u_r = u_r
        self.sgp = None if sgp is None or sgp.empty else sgp
        self.n_K, self.n_u = model.n_K, model.n_u
        self.r = ups_r[1:] - ups_r[:-1] @ model.A.T - u_r @ model.B.T
        # barrier: (mu, x_p per stage in the local frame) or None
        self.barrier_spec = barrier
        self._jac = [gpm.linearize(model, self.sgp, upsilon_r=ups_r[t], u_r=u_r[t]) for t in range(len(u_r))]
        if gp_mode not in ("linearized", "exact"):
            raise ValueError("gp_mode must be 'linearized' or 'exact'")
        self.gp_mode = gp_mode
        if self.sgp is not None and gp_mode == "linearized":
            # first-order expansion of the residual about the reference: the horizon stays affine
            d_r = np.array([self.sgp.mean(self.sgp.gp_input(ups_r[t], u_r[t])) for t in range(len(u_r))])
            self.r = self.r - d_r @ self.sgp.B_d.T

    def step(self, t, x, u):
        if self.sgp is not None and self.gp_mode == "linearized":
            A_d, B_c = self._jac[t]
            return A_d @ x + B_c @ u - self.r[t]
        out = self.model.A @ x + self.model.B @ u - self.r[t]
        if self.sgp is not None:
            z = self.sgp.gp_input(x + self.ups_r[t], u + self.u_r[t])
            out = out + self.sgp.B_d @ self.sgp.mean(z)
        return out

    def jacobians(self, t):
        return self._jac[t]

    def barrier_all(self, xs):
        n = len(xs)
        hs = np.zeros(n)
        gs = np.zeros((n, self.n_K))
        if self.barrier_spec is None:
            return hs, gs
        mu, xps = self.barrier_spec
        if mu == 0:
            return hs, gs
        pos = xs[:, :2] + self.ups_r[:n, :2]
        diff = pos - xps[:n]
        d = np.linalg.norm(diff, axis=1)
        hs = mu * np.exp(-d)
        ok = d > 0
        gs[ok, :2] = -(hs[ok] / d[ok])[:, None] * diff[ok]
        return hs, gs

    def barrier(self, t, x):
        hs, gs = self.barrier_all(np.array([x]) if t == 0 else np.vstack([np.zeros((t, len(x))), x]))
        return hs[t], gs[t]


# ---------------------------------------------------------------------------
# controller


@dataclass
class VehicleControlConfig:
    N: int = 5
    gamma: float = 0.8
    q: Sequence[float] = (1.0, 20.0, 5.0, 1.0)  # X, Y, psi, v_x rows of the lifted error
    r: Sequence[float] = (1.0, 1.0)
    u_b: Sequence[float] = (3.0, 0.4)
    i_max: int = 100
    tol_w: float = 1e-4
    eta_scale: float = 0.5
    ald_threshold: float = 0.3
    feature_scale: Sequence[float] = (1.0, 0.5, 0.2, 1.0, 0.2, 0.2, 0.5, 0.2, 1.0, 0.2)
    max_centers: int = 40
    feature_seed: int = 0
    gp_mode: str = "linearized"
    params: VehicleParams = NOMINAL


def build_features(model: KoopmanModel, cfg: VehicleControlConfig, v=6.0, n_samples=200):
    """ALD centres from nominal-model error rollouts under the terminal LQR gain."""
    rng = np.random.default_rng(cfg.feature_seed)
    n_K = model.n_K
    Q = np.zeros((n_K, n_K))
    Q[np.arange(len(cfg.q)), np.arange(len(cfg.q))] = cfg.q
    R_eff = np.diag(np.asarray(cfg.r) / np.asarray(cfg.u_b))
    P = terminal_penalty(model.A, model.B, Q, R_eff, cfg.gamma)
    K = cfg.gamma * np.linalg.solve(R_eff + cfg.gamma * model.B.T @ P @ model.B, model.B.T @ P @ model.A)
    sc = np.array([1.0, 0.5, 0.1, 1.0, 0.1, 0.1])
    samples = []
    for _ in range(n_samples):
        xr = np.array([0, 0, 0, v * rng.uniform(0.5, 1.2), 0, 0])
        x = xr + sc * rng.standard_normal(6)
        e = model.lift(x) - model.lift(xr)
        for _ in range(cfg.N + 1):
            samples.append(e)
            u = np.clip(-K @ e, -np.asarray(cfg.u_b), np.asarray(cfg.u_b))
            e = model.A @ e + model.B @ u
    S = np.array(samples)
    fs = KernelFeatureSet.from_samples(S, cfg.ald_threshold, scale=np.asarray(cfg.feature_scale),
                                       max_centers=cfg.max_centers)
    pp = np.array([np.sum(feature_vector(fs, s) ** 2) for s in S])
    eta = cfg.eta_scale / float(np.max(pp))
    return fs, P, Q, R_eff, eta


class VehicleController:
    """Receding-horizon tracking of a guiding trajectory with the kernel actor-critic solver."""

    def __init__(self, model: KoopmanModel, cfg: VehicleControlConfig, dt=0.1):
        self.model = model
        self.cfg = cfg
        self.dt = dt
        fs, P, Q, R_eff, eta = build_features(model, cfg)
        self.rcfg = RhrlConfig(N=cfg.N, Q=Q, R=np.diag(cfg.r), u_b=np.asarray(cfg.u_b, float), P=P,
                               gamma=cfg.gamma, eta_a=eta, eta_c=eta, i_max=cfg.i_max, tol_w=cfg.tol_w)
        self.solver = RhrlController(fs, self.rcfg, P)
        self.ref: Optional[Reference] = None
        self.s = None

    def set_reference(self, ref: Reference):
        self.ref = ref
        self.s = None

    def horizon_reference(self, s0, origin):
        N, dt, p = self.cfg.N, self.dt, self.cfg.params
        ss = [s0]
        for _ in range(N):
            ss.append(ss[-1] + self.ref.speed(ss[-1]) * dt)
        ss = np.array(ss)
        pos = np.array([point_to_local(q, origin) for q in self.ref.position(ss)])
        psi = _wrap(self.ref.heading(ss) - origin[2])
        psi = np.unwrap(psi)
        v = self.ref.speed(ss)
        om = v * self.ref.curvature(ss)
        xr = np.zeros((N + 1, 6))
        ur = np.zeros((N, 2))
        for t in range(N + 1):
            vy, de = steady_lateral(v[t], om[t], p)
            xr[t] = [pos[t, 0], pos[t, 1], psi[t], v[t], vy, om[t]]
            if t < N:
                ur[t, 1] = de
        for t in range(N):
            ur[t, 0] = (v[t + 1] - v[t]) / dt - xr[t, 4] * xr[t, 5]
        return xr, ur, ss

    def control(self, x, sgp=None, barrier=None, t=0.0):
        """Return (u, info) for the global state x.

        ``barrier`` is (mu, x_p, v_obs) in world coordinates or None.
        """
        s0 = self.ref.project(x[:2], self.s)
        self.s = s0
        p0 = self.ref.position(s0)
        origin = (p0[0], p0[1], float(self.ref.heading(s0)))
        xl = to_local(x, origin)
        xr, ur, ss = self.horizon_reference(s0, origin)
        ups_r = self.model.lift(xr)
        bspec = None
        if barrier is not None and barrier[0] > 0:
            mu, xp, vo = barrier
            xp_l = point_to_local(xp, origin)
            vo_l = vec_to_local(vo, origin)
            xps = xp_l + np.outer(np.arange(self.cfg.N + 1) * self.dt, vo_l)
            bspec = (mu, xps)
        prob = VehicleHorizon(self.model, ups_r, ur, sgp, bspec, self.cfg.gp_mode)
        xt = self.model.lift(xl) - ups_r[0]
        res = self.solver.solve(xt, prob)
        u = ur[0] + res.u
        return u, {"s": s0, "u_ref": ur[0], "u_tilde": res.u, "iterations": res.iterations,
                   "converged": res.converged, "status": res.status, "solve_time": res.solve_time,
                   "value": res.value}
