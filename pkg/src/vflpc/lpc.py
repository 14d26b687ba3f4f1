"""Receding-horizon kernel actor-critic controller with an exponential barrier in the cost.

Each of the N+1 horizon stages owns an actor weight matrix W_a (n_phi x n_u)
and a critic weight matrix W_c (n_phi x n_K) over a shared Gaussian kernel
dictionary. One solve iterates: roll the horizon out with the current actors,
form control and costate targets from the current critics, take one gradient
step per stage, until the weights stop moving.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Protocol

import numpy as np

log = logging.getLogger(__name__)


class StabilizabilityError(np.linalg.LinAlgError):
    pass


class ModelBlowupError(FloatingPointError):
    pass


def _check_pd(M, name, strict=True):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    shift = 0.0 if strict else 1e-12 * max(1.0, np.abs(M).max())
    try:
        np.linalg.cholesky(M + shift * np.eye(len(M)))
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}") from None
    return M


@dataclass
class RhrlConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    u_b: np.ndarray
    P: Optional[np.ndarray] = None
    gamma: float = 1.0
    eta_a: float = 0.5
    eta_c: float = 0.5
    i_max: int = 200
    tol_w: float = 1e-4
    max_halvings: int = 5
    divergence_loss: float = 1e6

    def __post_init__(self):
        self.Q = _check_pd(self.Q, "Q", strict=False)
        self.R = _check_pd(self.R, "R")
        self.u_b = np.atleast_1d(np.asarray(self.u_b, dtype=float))
        if self.P is not None:
            self.P = _check_pd(self.P, "P")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.eta_a <= 0 or self.eta_c <= 0 or self.i_max < 1 or self.N < 1:
            raise ValueError("learning rates, i_max and N must be positive")
        if np.any(self.u_b <= 0):
            raise ValueError("u_b must be positive")
        self._Rinv = np.linalg.inv(self.R)


@dataclass
class KernelFeatureSet:
    """Gaussian kernel features; ``scale`` divides each state coordinate before the kernel."""

    centers: np.ndarray
    width: float = 1.0
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if len(self.centers) < 1:
            raise ValueError("need at least one centre")
        if self.width <= 0:
            raise ValueError("width must be positive")
        self.scale = np.ones(self.centers.shape[1]) if self.scale is None else np.asarray(self.scale, float)

    @property
    def n_phi(self):
        return len(self.centers)

    @property
    def n_K(self):
        return self.centers.shape[1]

    def __call__(self, x):
        return feature_vector(self, x)

    @classmethod
    def from_samples(cls, samples, threshold=0.1, width=None, scale=None, max_centers=None):
        """ALD-selected centres; width defaults to the median pairwise centre distance."""
        from .gp import ald_sparsify

        S = np.atleast_2d(np.asarray(samples, dtype=float))
        sc = np.ones(S.shape[1]) if scale is None else np.asarray(scale, float)
        w0 = 1.0 if width is None else width
        C = ald_sparsify(S / sc, threshold, ell=w0) * sc
        if max_centers is not None:
            C = C[:max_centers]
        if width is None and len(C) > 1:
            d = np.linalg.norm((C[:, None] - C[None]) / sc, axis=-1)
            width = float(np.median(d[np.triu_indices(len(C), 1)]))
        return cls(C, width if width else 1.0, sc)


def feature_vector(fs: KernelFeatureSet, x):
    d = (np.asarray(x, dtype=float) - fs.centers) / fs.scale
    return np.exp(-0.5 * np.sum(d * d, axis=1) / fs.width ** 2)


@dataclass
class ActorCriticStage:
    W_a: np.ndarray
    W_c: np.ndarray

    def copy(self):
        return ActorCriticStage(self.W_a.copy(), self.W_c.copy())


def actor_eval(stage: ActorCriticStage, fs: KernelFeatureSet, x):
    return stage.W_a.T @ feature_vector(fs, x)


def critic_eval(stage: ActorCriticStage, fs: KernelFeatureSet, x):
    return stage.W_c.T @ feature_vector(fs, x)


@dataclass
class HorizonState:
    stages: List[ActorCriticStage]
    i: int = 0

    @classmethod
    def zeros(cls, N, n_phi, n_u, n_K):
        return cls([ActorCriticStage(np.zeros((n_phi, n_u)), np.zeros((n_phi, n_K))) for _ in range(N + 1)])

    @property
    def N(self):
        return len(self.stages) - 1

    def copy(self):
        return HorizonState([s.copy() for s in self.stages], self.i)


def warm_start_shift(h: HorizonState) -> HorizonState:
    """Stage tau takes the previous stage tau+1; the terminal stage takes the previous N-1."""
    N = h.N
    new = [h.stages[t + 1].copy() for t in range(N)]
    new.append(h.stages[max(N - 1, 0)].copy())
    return HorizonState(new, 0)


def target_control(lam_next, B_ctrl, cfg: RhrlConfig):
    return cfg.u_b * np.tanh(-0.5 * cfg.gamma * cfg._Rinv @ (B_ctrl.T @ lam_next))


def target_costate(x, lam_next, A_d, barrier_grad, terminal: bool, cfg: RhrlConfig, P=None):
    if terminal:
        P = cfg.P if P is None else P
        return 2.0 * P @ x + barrier_grad
    return 2.0 * cfg.Q @ x + cfg.gamma * A_d.T @ lam_next + barrier_grad


@dataclass
class UpdateResult:
    W: np.ndarray
    loss_before: float
    loss_after: float
    eta: float
    diverged: bool = False


def _gd_step(W, phi, target, eta, max_halvings, div):
    approx = W.T @ phi
    err = approx - target
    loss0 = 0.5 * float(err @ err)
    if not np.isfinite(loss0) or loss0 > div:
        return UpdateResult(W, loss0, loss0, eta, True)
    grad = np.outer(phi, err)
    for _ in range(max_halvings + 1):
        Wn = W - eta * grad
        e1 = Wn.T @ phi - target
        loss1 = 0.5 * float(e1 @ e1)
        if loss1 <= loss0:
            break
        eta *= 0.5
    return UpdateResult(Wn, loss0, loss1, eta)


def update_stage(stage: ActorCriticStage, fs: KernelFeatureSet, x, u_target, lam_target, cfg: RhrlConfig,
                 update_actor=True):
    """One gradient step of each half-squared error; returns (stage', actor result, critic result)."""
    phi = feature_vector(fs, x)
    rc = _gd_step(stage.W_c, phi, lam_target, cfg.eta_c, cfg.max_halvings, cfg.divergence_loss)
    if update_actor and u_target is not None:
        ra = _gd_step(stage.W_a, phi, u_target, cfg.eta_a, cfg.max_halvings, cfg.divergence_loss)
    else:
        ra = UpdateResult(stage.W_a, 0.0, 0.0, cfg.eta_a)
    return ActorCriticStage(ra.W, rc.W), ra, rc


def terminal_penalty(A, B, Q, R, gamma=1.0, tol=1e-10, max_sweeps=10_000):
    """Fixed point of the (discounted) Riccati recursion, iterated from P = Q."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    P = Q.copy()
    for _ in range(max_sweeps):
        BtP = B.T @ P
        K = np.linalg.solve(R + gamma * BtP @ B, BtP @ A)
        Pn = Q + gamma * A.T @ P @ A - gamma ** 2 * A.T @ P @ B @ K
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)):
            break
        if np.max(np.abs(Pn - P)) <= tol * max(1.0, np.max(np.abs(Pn))):
            return Pn
        P = Pn
    raise StabilizabilityError("Riccati recursion did not converge")


def riccati_gains(A, B, Q, R, P, N, gamma=1.0):
    """Time-varying gains of the finite-horizon discounted LQ problem; u_t = -K[t] x_t."""
    Pt = np.atleast_2d(P)
    Ks = []
    for _ in range(N):
        K = gamma * np.linalg.solve(R + gamma * B.T @ Pt @ B, B.T @ Pt @ A)
        Pt = Q + gamma * A.T @ Pt @ A - gamma * A.T @ Pt @ B @ K
        Pt = 0.5 * (Pt + Pt.T)
        Ks.append(K)
    return Ks[::-1]


# ---------------------------------------------------------------------------
# horizon problems


class HorizonProblem(Protocol):
    """Prediction model for one solve; tau runs over 0..N."""

    n_K: int
    n_u: int

    def step(self, tau: int, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def jacobians(self, tau: int): ...

    def barrier(self, tau: int, x: np.ndarray): ...


class LinearProblem:
    """x+ = A x + B u (+ offset[tau]), optional time-varying barrier (mu, x_p) acting on x[:2]."""

    def __init__(self, A, B, offsets=None, barriers=None, pos_idx=(0, 1)):
        self.A = np.atleast_2d(A)
        self.B = np.atleast_2d(B)
        self.offsets = offsets
        self.barriers = barriers
        self.pos_idx = pos_idx
        self.n_K, self.n_u = self.B.shape

    def step(self, tau, x, u):
        out = self.A @ x + self.B @ u
        if self.offsets is not None:
            out = out + self.offsets[tau]
        return out

    def jacobians(self, tau):
        return self.A, self.B

    def barrier(self, tau, x):
        if self.barriers is None:
            return 0.0, np.zeros(self.n_K)
        from .safety import barrier_gradient, barrier_value

        mu, xp = self.barriers[tau]
        if mu == 0 or xp is None:
            return 0.0, np.zeros(self.n_K)
        pos = x[list(self.pos_idx)]
        g, _ = barrier_gradient(pos, xp, mu, self.n_K, self.pos_idx)
        return barrier_value(pos, xp, mu), g


def horizon_cost(xs, us, problem, cfg: RhrlConfig, P=None):
    """sum gamma^t L(x_t, u_t) + gamma^N (x_N' P x_N + h(x_N))."""
    P = cfg.P if P is None else P
    N = len(us)
    J = 0.0
    for t in range(N):
        h, _ = problem.barrier(t, xs[t])
        J += cfg.gamma ** t * (xs[t] @ cfg.Q @ xs[t] + us[t] @ cfg.R @ us[t] + h)
    hN, _ = problem.barrier(N, xs[N])
    return float(J + cfg.gamma ** N * (xs[N] @ P @ xs[N] + hN))


def rollout(problem, x0, policy, N):
    xs = [np.asarray(x0, dtype=float)]
    us = []
    for t in range(N):
        u = policy(t, xs[-1])
        us.append(u)
        xn = problem.step(t, xs[-1], u)
        if not np.all(np.isfinite(xn)):
            raise ModelBlowupError(f"non-finite predicted state at stage {t + 1}")
        xs.append(xn)
    return np.array(xs), np.array(us)


@dataclass
class SolveResult:
    u: np.ndarray
    state: HorizonState
    iterations: int
    converged: bool
    status: str
    value: float
    deltas: list = field(default_factory=list)
    values: list = field(default_factory=list)
    critic_loss: float = 0.0
    actor_loss: float = 0.0
    xs: Optional[np.ndarray] = None
    us: Optional[np.ndarray] = None
    solve_time: float = 0.0


def _saturate(u, u_b):
    lim = u_b * (1.0 - 1e-9)
    return np.clip(u, -lim, lim)


def _barrier_all(problem, xs):
    if hasattr(problem, "barrier_all"):
        return problem.barrier_all(xs)
    hs, gs = zip(*(problem.barrier(t, x) for t, x in enumerate(xs)))
    return np.array(hs, dtype=float), np.array(gs)


def _batched_gd(W, Phi, target, eta, cfg):
    """Per-stage gradient step with step halving; W (S, n_phi, m), Phi (S, n_phi), target (S, m)."""
    err = np.einsum("sp,spm->sm", Phi, W) - target
    loss0 = 0.5 * np.sum(err * err, axis=1)
    grad = Phi[:, :, None] * err[:, None, :]
    pp = np.sum(Phi * Phi, axis=1)
    # the loss after a step along -grad is loss0 * (1 - eta |Phi|^2)^2
    etas = np.full(len(W), float(eta))
    for _ in range(cfg.max_halvings):
        worse = (1.0 - etas * pp) ** 2 > 1.0
        if not np.any(worse):
            break
        etas = np.where(worse, 0.5 * etas, etas)
    Wn = W - etas[:, None, None] * grad
    loss1 = loss0 * (1.0 - etas * pp) ** 2
    return Wn, loss0, loss1


def rhrl_solve(x0, problem, fs: KernelFeatureSet, warm: HorizonState, cfg: RhrlConfig,
               P=None, record_values=False) -> SolveResult:
    """Iterate the horizon actor-critic updates from ``warm``; return the first-stage control.

    Every iteration rolls the horizon out with the current actors, evaluates
    all targets from the current critics, then updates every stage.
    """
    t0 = time.perf_counter()
    P = cfg.P if P is None else P
    if P is None:
        raise ValueError("terminal penalty P is required")
    N = cfg.N
    if warm.N != N:
        raise ValueError("warm state horizon does not match cfg.N")
    Wa = np.array([s.W_a for s in warm.stages], dtype=float)
    Wc = np.array([s.W_c for s in warm.stages], dtype=float)
    x0 = np.asarray(x0, dtype=float)
    jac = [problem.jacobians(t) for t in range(N)]
    Ad = np.array([j[0] for j in jac])
    Bc = np.array([j[1] for j in jac])
    # -1/2 gamma R^-1 B^T, stage-wise
    Ku = -0.5 * cfg.gamma * np.einsum("ij,tkj->tik", cfg._Rinv, Bc)
    deltas, values = [], []
    converged, status = False, "max_iter"
    it = 0
    la = lc = 0.0

    def roll():
        xs = np.empty((N + 1, len(x0)))
        us = np.empty((N, len(cfg.u_b)))
        Phi = np.empty((N + 1, fs.n_phi))
        xs[0] = x0
        for t in range(N):
            Phi[t] = feature_vector(fs, xs[t])
            us[t] = _saturate(Phi[t] @ Wa[t], cfg.u_b)
            xs[t + 1] = problem.step(t, xs[t], us[t])
            if not np.all(np.isfinite(xs[t + 1])):
                raise ModelBlowupError(f"non-finite predicted state at stage {t + 1}")
        Phi[N] = feature_vector(fs, xs[N])
        return xs, us, Phi

    for it in range(1, cfg.i_max + 1):
        xs, us, Phi = roll()
        hs, hg = _barrier_all(problem, xs)
        if record_values:
            values.append(_cost_from(xs, us, hs, cfg, P))
        lam_hat = np.einsum("sp,spk->sk", Phi, Wc)
        lam_t = np.empty_like(lam_hat)
        lam_t[:N] = 2.0 * xs[:N] @ cfg.Q.T + cfg.gamma * np.einsum("tji,tj->ti", Ad, lam_hat[1:]) + hg[:N]
        lam_t[N] = 2.0 * P @ xs[N] + hg[N]
        u_t = cfg.u_b * np.tanh(np.einsum("tik,tk->ti", Ku, lam_hat[1:]))
        Wc_n, lc0, _ = _batched_gd(Wc, Phi, lam_t, cfg.eta_c, cfg)
        Wa_n = Wa.copy()
        Wa_n[:N], la0, _ = _batched_gd(Wa[:N], Phi[:N], u_t, cfg.eta_a, cfg)
        lc, la = float(lc0.sum()), float(la0.sum())
        if not (np.isfinite(lc) and np.isfinite(la)) or max(lc0.max(), la0.max()) > cfg.divergence_loss:
            status = "diverged"
            break
        delta = max(float(np.max(np.abs(Wa_n - Wa))), float(np.max(np.abs(Wc_n - Wc))))
        Wa, Wc = Wa_n, Wc_n
        deltas.append(delta)
        if delta < cfg.tol_w:
            converged, status = True, "converged"
            break
    xs, us, _ = roll()
    hs, _ = _barrier_all(problem, xs)
    value = _cost_from(xs, us, hs, cfg, P)
    u = us[0].copy()
    stages = [ActorCriticStage(Wa[t].copy(), Wc[t].copy()) for t in range(N + 1)]
    return SolveResult(u, HorizonState(stages, it), it, converged, status, value, deltas, values,
                       lc, la, xs, us, time.perf_counter() - t0)


def _cost_from(xs, us, hs, cfg, P):
    N = len(us)
    disc = cfg.gamma ** np.arange(N)
    stage = np.einsum("ti,ij,tj->t", xs[:N], cfg.Q, xs[:N]) + np.einsum("ti,ij,tj->t", us, cfg.R, us) + hs[:N]
    return float(disc @ stage + cfg.gamma ** N * (xs[N] @ P @ xs[N] + hs[N]))


class RhrlController:
    """Keeps the warm-start state across receding-horizon cycles."""

    def __init__(self, fs: KernelFeatureSet, cfg: RhrlConfig, P=None):
        self.fs = fs
        self.cfg = cfg
        self.P = cfg.P if P is None else P
        self.state = HorizonState.zeros(cfg.N, fs.n_phi, len(cfg.u_b), fs.n_K)
        self.last: Optional[SolveResult] = None

    def solve(self, x0, problem, record_values=False):
        res = rhrl_solve(x0, problem, self.fs, self.state, self.cfg, self.P, record_values)
        self.last = res
        self.state = warm_start_shift(res.state)
        return res
