"""Sparse (FITC) Gaussian-process residual model for the lifted dynamics.

Inputs are z = [selected lifted coordinates, u], scaled coordinate-wise by
``z_scale`` before entering an isotropic squared-exponential kernel.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

log = logging.getLogger(__name__)

SIGMA_N_FLOOR = 1e-6


class GpConditioningError(np.linalg.LinAlgError):
    pass


@dataclass
class GpHyperparams:
    sigma_f: np.ndarray
    ell: np.ndarray
    sigma_n: np.ndarray

    def __post_init__(self):
        self.sigma_f = np.atleast_1d(np.asarray(self.sigma_f, dtype=float)).copy()
        self.ell = np.atleast_1d(np.asarray(self.ell, dtype=float)).copy()
        self.sigma_n = np.atleast_1d(np.asarray(self.sigma_n, dtype=float)).copy()
        n = max(len(self.sigma_f), len(self.ell), len(self.sigma_n))
        self.sigma_f, self.ell, self.sigma_n = (np.broadcast_to(a, (n,)).copy()
                                                for a in (self.sigma_f, self.ell, self.sigma_n))
        if np.any(self.sigma_f <= 0) or np.any(self.ell <= 0) or np.any(self.sigma_n <= 0):
            raise ValueError("hyperparameters must be strictly positive")

    @property
    def n_y(self):
        return len(self.sigma_f)

    def dim(self, a):
        return GpHyperparams(self.sigma_f[a], self.ell[a], self.sigma_n[a])

    def to_dict(self):
        return {"sigma_f": self.sigma_f.tolist(), "ell": self.ell.tolist(),
                "sigma_n": self.sigma_n.tolist()}


def _sqdist(A, B):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def _kmat(A, B, sf, ell):
    return sf * sf * np.exp(-0.5 * _sqdist(A, B) / (ell * ell))


def se_kernel(hp: GpHyperparams, z_i, z_j, a=0):
    """sigma_f^2 exp(-|z_i - z_j|^2 / (2 ell^2)) for output dimension ``a``."""
    d = np.asarray(z_i, dtype=float) - np.asarray(z_j, dtype=float)
    return float(hp.sigma_f[a] ** 2 * np.exp(-0.5 * d @ d / hp.ell[a] ** 2))


def _clamp_var(var):
    low = var < 0
    if np.any(var < -1e-10):
        log.warning("posterior variance %.3g clamped to zero", float(var.min()))
    return np.where(low, 0.0, var)


def _chol(K, what="kernel matrix"):
    try:
        return cholesky(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise GpConditioningError(f"{what} is not positive definite") from exc


# ---------------------------------------------------------------------------
# full GP


def full_gp_posterior(Z, Y, hp: GpHyperparams, zs):
    """Exact GP posterior mean and variance per output dimension.

    Z (n, n_z), Y (n, n_y), zs (n_z,) or (m, n_z). Returns arrays shaped
    (n_y,) or (m, n_y).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(len(Z), -1)
    if len(Z) == 0:
        raise ValueError("empty dataset")
    single = np.ndim(zs) == 1
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    means, vars_ = [], []
    for a in range(Y.shape[1]):
        sf, ell, sn = hp.sigma_f[a], hp.ell[a], hp.sigma_n[a]
        L = _chol(_kmat(Z, Z, sf, ell) + sn * sn * np.eye(len(Z)))
        alpha = cho_solve((L, True), Y[:, a])
        ks = _kmat(Z, zs, sf, ell)
        v = solve_triangular(L, ks, lower=True)
        means.append(ks.T @ alpha)
        vars_.append(_clamp_var(sf * sf - np.sum(v * v, 0)))
    m, s = np.array(means).T, np.array(vars_).T
    return (m[0], s[0]) if single else (m, s)


def log_marginal_likelihood(Z, y, sf, ell, sn):
    n = len(Z)
    K = _kmat(Z, Z, sf, ell) + sn * sn * np.eye(n)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve((L, True), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi))


# ---------------------------------------------------------------------------
# sparsification


def ald_sparsify(Z, threshold, ell=1.0, sigma_f=1.0, return_index=False):
    """Greedy approximate-linear-dependence filter.

    A sample is kept when its kernel-space projection residual onto the
    already-kept samples exceeds ``threshold``. Order of kept samples is
    preserved.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    kzz = sigma_f ** 2
    keep = []
    L = np.zeros((0, 0))
    for i, z in enumerate(Z):
        if not keep:
            if kzz > threshold:
                keep.append(i)
                L = np.array([[np.sqrt(kzz)]])
            continue
        k = _kmat(Z[keep], z[None], sigma_f, ell)[:, 0]
        l = solve_triangular(L, k, lower=True)
        delta = kzz - l @ l
        if delta > threshold:
            m = len(keep)
            Ln = np.zeros((m + 1, m + 1))
            Ln[:m, :m] = L
            Ln[m, :m] = l
            Ln[m, m] = np.sqrt(delta)
            L = Ln
            keep.append(i)
    idx = np.array(keep, dtype=int)
    return (Z[idx], idx) if return_index else Z[idx]


def select_inducing(Z, n_ind, ell=1.0):
    """Greedy pivoted-Cholesky choice: repeatedly take the point of largest residual variance."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = len(Z)
    if n <= n_ind:
        return np.arange(n)
    diag = np.ones(n)
    rows = []
    chosen = []
    for _ in range(n_ind):
        j = int(np.argmax(diag))
        if diag[j] <= 1e-12:
            break
        kj = _kmat(Z, Z[j:j + 1], 1.0, ell)[:, 0]
        for r, c in zip(rows, chosen):
            kj = kj - r * r[j]
        r = kj / np.sqrt(diag[j])
        rows.append(r)
        chosen.append(j)
        diag = np.maximum(diag - r * r, 0.0)
        diag[chosen] = 0.0
    return np.array(sorted(chosen), dtype=int)


# ---------------------------------------------------------------------------
# hyperparameters


@dataclass
class HyperOptResult:
    hp: GpHyperparams
    log_lik: np.ndarray
    init_log_lik: np.ndarray
    status: list


def optimize_hyperparams(Z, Y, init: GpHyperparams, max_iter=100, sigma_n_floor=SIGMA_N_FLOOR,
                         bounds_log_ell=(-6.0, 6.0)) -> HyperOptResult:
    """Per-output L-BFGS-B ascent of the log marginal likelihood in log-parameters.

    Never returns a point worse than ``init``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(len(Z), -1)
    if len(Z) == 0:
        raise ValueError("empty dataset")
    sf, ell, sn = init.sigma_f.copy(), init.ell.copy(), np.maximum(init.sigma_n, sigma_n_floor)
    lls, ll0s, status = [], [], []
    for a in range(Y.shape[1]):
        y = Y[:, a]

        def nll(theta):
            v = -log_marginal_likelihood(Z, y, *np.exp(theta))
            return v if np.isfinite(v) else 1e100

        th0 = np.log([sf[a], ell[a], sn[a]])
        f0 = nll(th0)
        bounds = [(-8.0, 8.0), bounds_log_ell, (np.log(sigma_n_floor), 4.0)]
        res = minimize(nll, th0, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iter})
        if res.fun <= f0:
            th, f, st = res.x, res.fun, "converged" if res.success else "max_iter"
        else:
            th, f, st = th0, f0, "no_improvement"
        sf[a], ell[a], sn[a] = np.exp(th)
        sn[a] = max(sn[a], sigma_n_floor)
        lls.append(-f)
        ll0s.append(-f0)
        status.append(st)
    return HyperOptResult(GpHyperparams(sf, ell, sn), np.array(lls), np.array(ll0s), status)


# ---------------------------------------------------------------------------
# FITC


def default_selection(n_K=10, n_y=3, offset=3):
    """B_d = [0 I 0]^T selecting the velocity rows of the lifted state."""
    Bd = np.zeros((n_K, n_y))
    Bd[offset:offset + n_y] = np.eye(n_y)
    return Bd


@dataclass
class SparseGp:
    """FITC posterior per output dimension.

    ``state_idx`` lists the lifted coordinates that form the state part of z;
    the control follows. An empty GP predicts zero mean.
    """

    hp: GpHyperparams
    B_d: np.ndarray
    state_idx: np.ndarray
    n_u: int
    z_scale: np.ndarray = None
    Z: np.ndarray = None
    Y: np.ndarray = None
    Z_ind: np.ndarray = None
    jitter: float = 1e-10
    _cache: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.B_d = np.asarray(self.B_d, dtype=float)
        self.state_idx = np.asarray(self.state_idx, dtype=int)
        n_z = len(self.state_idx) + self.n_u
        self.z_scale = np.ones(n_z) if self.z_scale is None else np.asarray(self.z_scale, float)
        if self.Z is None:
            self.Z = np.zeros((0, n_z))
            self.Y = np.zeros((0, self.n_y))
        if self.Z_ind is None:
            self.Z_ind = self.Z.copy()
        self.refresh()

    @property
    def n_y(self):
        return self.B_d.shape[1]

    @property
    def n_z(self):
        return len(self.z_scale)

    @property
    def empty(self):
        return len(self.Z) == 0 or len(self.Z_ind) == 0

    def gp_input(self, upsilon, u):
        return np.concatenate([np.asarray(upsilon, float)[..., self.state_idx], np.asarray(u, float)], axis=-1)

    def refresh(self):
        """Rebuild the cached factorisations from Z, Y, Z_ind and hp."""
        self._cache = []
        if self.empty:
            return
        Zs = self.Z / self.z_scale
        Us = self.Z_ind / self.z_scale
        m = len(Us)
        for a in range(self.n_y):
            sf, ell, sn = self.hp.sigma_f[a], self.hp.ell[a], self.hp.sigma_n[a]
            Kuu = _kmat(Us, Us, sf, ell)
            jit = self.jitter * sf * sf
            for _ in range(8):
                try:
                    L = cholesky(Kuu + jit * np.eye(m), lower=True)
                    break
                except np.linalg.LinAlgError:
                    jit *= 10.0
            else:
                raise GpConditioningError("inducing kernel matrix is not positive definite")
            Kuf = _kmat(Us, Zs, sf, ell)
            V = solve_triangular(L, Kuf, lower=True)
            lam = np.maximum(sf * sf - np.sum(V * V, 0), 0.0) + sn * sn
            Vl = V / lam
            LB = _chol(np.eye(m) + Vl @ V.T, "FITC system")
            c = solve_triangular(LB, Vl @ self.Y[:, a], lower=True)
            alpha = solve_triangular(L.T, solve_triangular(LB.T, c, lower=False), lower=False)
            self._cache.append((L, LB, alpha, sf, ell))

    def posterior(self, zs):
        """FITC mean and variance, shape (n_y,) for one input or (m, n_y)."""
        single = np.ndim(zs) == 1
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        if self.empty:
            m = np.zeros((len(zs), self.n_y))
            v = np.broadcast_to(self.hp.sigma_f ** 2, m.shape).copy()
            return (m[0], v[0]) if single else (m, v)
        Ss = zs / self.z_scale
        Us = self.Z_ind / self.z_scale
        means, vars_ = [], []
        for L, LB, alpha, sf, ell in self._cache:
            ks = _kmat(Us, Ss, sf, ell)
            means.append(ks.T @ alpha)
            w = solve_triangular(L, ks, lower=True)
            w2 = solve_triangular(LB, w, lower=True)
            vars_.append(_clamp_var(sf * sf - np.sum(w * w, 0) + np.sum(w2 * w2, 0)))
        m, v = np.array(means).T, np.array(vars_).T
        return (m[0], v[0]) if single else (m, v)

    def mean(self, z):
        z = np.asarray(z, dtype=float)
        if self.empty:
            return np.zeros(z.shape[:-1] + (self.n_y,))
        Ss = np.atleast_2d(z) / self.z_scale
        Us = self.Z_ind / self.z_scale
        out = np.array([_kmat(Ss, Us, sf, ell) @ alpha for _, _, alpha, sf, ell in self._cache]).T
        return out[0] if z.ndim == 1 else out

    def mean_jacobian(self, z):
        """d mean / d z, shape (n_y, n_z)."""
        z = np.asarray(z, dtype=float)
        J = np.zeros((self.n_y, self.n_z))
        if self.empty:
            return J
        s = z / self.z_scale
        Us = self.Z_ind / self.z_scale
        for a, (_, _, alpha, sf, ell) in enumerate(self._cache):
            k = _kmat(Us, s[None], sf, ell)[:, 0]
            J[a] = ((Us - s).T @ (k * alpha)) / (ell * ell)
        return J / self.z_scale

    # serialisation
    def to_dict(self):
        return {"hp": self.hp.to_dict(), "B_d": self.B_d.tolist(), "state_idx": self.state_idx.tolist(),
                "n_u": self.n_u, "z_scale": self.z_scale.tolist(), "Z": self.Z.tolist(),
                "Y": self.Y.tolist(), "Z_ind": self.Z_ind.tolist(), "jitter": self.jitter}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d):
        n_z = len(d["state_idx"]) + d["n_u"]
        n_y = np.shape(d["B_d"])[1]
        return cls(GpHyperparams(**d["hp"]), np.array(d["B_d"]), np.array(d["state_idx"]), d["n_u"],
                   np.array(d["z_scale"]), np.array(d["Z"], float).reshape(-1, n_z),
                   np.array(d["Y"], float).reshape(-1, n_y), np.array(d["Z_ind"], float).reshape(-1, n_z),
                   d.get("jitter", 1e-10))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fitc_posterior(sgp: SparseGp, zs):
    return sgp.posterior(zs)


def gp_mean_jacobian(sgp: SparseGp, z):
    return sgp.mean_jacobian(z)


def residual_target(model, B_d, x_k, u_k, x_next):
    """B_d^+ (lift(x_{k+1}) - A lift(x_k) - B u_k)."""
    B_d = np.asarray(B_d, dtype=float)
    if np.linalg.matrix_rank(B_d) < B_d.shape[1]:
        raise ValueError("B_d must have full column rank")
    r = model.lift(x_next) - model.A @ model.lift(x_k) - model.B @ np.asarray(u_k, float)
    return np.linalg.pinv(B_d) @ r


def compensated_step(model, sgp: Optional[SparseGp], xt, ut, z):
    """A x~ + B u~ + B_d mean(z)."""
    out = model.A @ np.asarray(xt, float) + model.B @ np.asarray(ut, float)
    if sgp is not None and not sgp.empty:
        out = out + sgp.B_d @ sgp.mean(z)
    return out


def linearize(model, sgp: Optional[SparseGp], x_r=None, u_r=None, upsilon_r=None):
    """Jacobians of the compensated step at a reference, split into state and input blocks."""
    if sgp is None or sgp.empty:
        return model.A.copy(), model.B.copy()
    ups = model.lift(x_r) if upsilon_r is None else np.asarray(upsilon_r, float)
    z = sgp.gp_input(ups, u_r)
    J = sgp.mean_jacobian(z)
    ns = len(sgp.state_idx)
    Jx = np.zeros((sgp.n_y, model.n_K))
    Jx[:, sgp.state_idx] = J[:, :ns]
    return model.A + sgp.B_d @ Jx, model.B + sgp.B_d @ J[:, ns:]


# ---------------------------------------------------------------------------
# online learner


@dataclass
class OnlineGpConfig:
    n_ind: int = 30
    refresh_every: int = 50
    ald_threshold: float = 1e-3
    max_dict: int = 400
    hyper_iter: int = 60
    sigma_f: float = 0.1
    ell: float = 1.0
    sigma_n: float = 0.01
    min_samples: int = 20
    ald_ell: float = 0.5  # fixed ALD kernel length in scaled input units
    ell_bounds: tuple = (0.2, 20.0)
    sigma_n_min: float = 1e-3


class OnlineResidualGp:
    """Collects (z, d) samples every step; sparsifies, refits and rebuilds on a fixed cadence."""

    def __init__(self, model, cfg: OnlineGpConfig, state_idx, z_scale, B_d=None):
        self.model = model
        self.cfg = cfg
        self.B_d = default_selection(model.n_K) if B_d is None else np.asarray(B_d, float)
        self.state_idx = np.asarray(state_idx, int)
        self.z_scale = np.asarray(z_scale, float)
        n_y = self.B_d.shape[1]
        self.hp = GpHyperparams(np.full(n_y, cfg.sigma_f), np.full(n_y, cfg.ell),
                                np.full(n_y, max(cfg.sigma_n, cfg.sigma_n_min)))
        self.Zbuf, self.Ybuf = [], []
        self.Zd = np.zeros((0, len(self.z_scale)))
        self.Yd = np.zeros((0, n_y))
        self.steps = 0
        self.sgp = SparseGp(self.hp, self.B_d, self.state_idx, model.n_u, self.z_scale)

    def ingest(self, x_k, u_k, x_next):
        y = residual_target(self.model, self.B_d, x_k, u_k, x_next)
        z = self.sgp.gp_input(self.model.lift(x_k), u_k)
        self.Zbuf.append(z)
        self.Ybuf.append(y)
        self.steps += 1
        if self.steps % self.cfg.refresh_every == 0:
            self.rebuild()

    def rebuild(self):
        cfg = self.cfg
        Z = np.vstack([self.Zd] + ([np.array(self.Zbuf)] if self.Zbuf else []))
        Y = np.vstack([self.Yd] + ([np.array(self.Ybuf)] if self.Ybuf else []))
        self.Zbuf, self.Ybuf = [], []
        if len(Z) < cfg.min_samples:
            self.Zd, self.Yd = Z, Y
            return
        # fixed ALD kernel so the dictionary does not swing with the refitted length scales
        _, idx = ald_sparsify(Z / self.z_scale, cfg.ald_threshold, ell=cfg.ald_ell, return_index=True)
        if len(idx) > cfg.max_dict:
            idx = idx[-cfg.max_dict:]
        self.Zd, self.Yd = Z[idx], Y[idx]
        res = optimize_hyperparams(self.Zd / self.z_scale, self.Yd, self.hp, max_iter=cfg.hyper_iter,
                                   sigma_n_floor=cfg.sigma_n_min, bounds_log_ell=tuple(np.log(cfg.ell_bounds)))
        self.hp = res.hp
        ind = select_inducing(self.Zd / self.z_scale, cfg.n_ind, ell=float(np.median(self.hp.ell)))
        self.sgp = SparseGp(self.hp, self.B_d, self.state_idx, self.model.n_u, self.z_scale,
                            self.Zd, self.Yd, self.Zd[ind])
        log.debug("gp rebuild: %d dict, %d inducing, ell=%s", len(self.Zd), len(ind), self.hp.ell)
