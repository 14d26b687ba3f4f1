"""Lifted linear models fitted by extended DMD over a fixed observable dictionary."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2


class ConditioningError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# dictionary


def _feature(desc: dict, x):
    kind = desc["type"]
    if kind == "rbf":
        dims = desc.get("dims")
        xs = x[..., dims] if dims is not None else x
        d = xs - np.asarray(desc["center"], dtype=float)
        return np.exp(-0.5 * np.sum(d * d, axis=-1) / desc["width"] ** 2)
    if kind == "monomial":
        return np.prod(x ** np.asarray(desc["powers"], dtype=float), axis=-1)
    if kind == "trig":
        # x[scale] * (sin/cos(x[angle]) - offset)
        f = np.sin if desc["func"] == "sin" else np.cos
        return x[..., desc["scale"]] * (f(x[..., desc["angle"]]) - desc.get("offset", 0.0))
    raise ValueError(f"unknown feature type {kind!r}")


def _feature_grad(desc: dict, x):
    """Gradient of one feature w.r.t. x (single point)."""
    g = np.zeros_like(x)
    kind = desc["type"]
    if kind == "rbf":
        dims = desc.get("dims")
        idx = np.arange(len(x)) if dims is None else np.asarray(dims)
        d = x[idx] - np.asarray(desc["center"], dtype=float)
        val = np.exp(-0.5 * d @ d / desc["width"] ** 2)
        g[idx] = -val * d / desc["width"] ** 2
    elif kind == "monomial":
        p = np.asarray(desc["powers"], dtype=float)
        for i in np.nonzero(p)[0]:
            q = p.copy()
            q[i] -= 1
            g[i] = p[i] * np.prod(x ** q)
    elif kind == "trig":
        a, s = desc["angle"], desc["scale"]
        if desc["func"] == "sin":
            g[s] += np.sin(x[a])
            g[a] += x[s] * np.cos(x[a])
        else:
            g[s] += np.cos(x[a]) - desc.get("offset", 0.0)
            g[a] -= x[s] * np.sin(x[a])
    else:
        raise ValueError(f"unknown feature type {kind!r}")
    return g


@dataclass
class ObservableDictionary:
    n_x: int
    lift_terms: List[dict] = field(default_factory=list)

    @property
    def n_K(self):
        return self.n_x + len(self.lift_terms)

    def lift(self, x):
        return lift(self, x)

    def jacobian(self, x):
        """d lift / d x, shape (n_K, n_x)."""
        x = np.asarray(x, dtype=float)
        rows = [np.eye(self.n_x)]
        if self.lift_terms:
            rows.append(np.array([_feature_grad(d, x) for d in self.lift_terms]))
        return np.vstack(rows)

    def to_dict(self):
        return {"n_x": self.n_x, "lift_terms": self.lift_terms}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_x"]), [dict(t) for t in d["lift_terms"]])


def lift(dictionary: ObservableDictionary, x):
    """[x; rho(x)], vectorised over leading axes."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dictionary.n_x:
        raise ValueError(f"state has dimension {x.shape[-1]}, expected {dictionary.n_x}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")
    if not dictionary.lift_terms:
        return x.copy()
    feats = np.stack([_feature(d, x) for d in dictionary.lift_terms], axis=-1)
    return np.concatenate([x, feats], axis=-1)


def identity_dictionary(n_x):
    return ObservableDictionary(n_x, [])


def vehicle_dictionary(centered=False):
    """Ten observables for the planar vehicle state [X, Y, psi, vx, vy, omega].

    The trig products make the global position kinematics exactly linear in the
    lifted coordinates. With ``centered`` the cosine terms become
    v (cos psi - 1): same span, but at psi = 0 the velocities enter the position
    rows only through the identity block, so a correction of v_x, v_y reaches
    the position prediction directly.
    """
    off = 1.0 if centered else 0.0
    terms = [
        {"type": "trig", "scale": 3, "angle": 2, "func": "sin"},
        {"type": "trig", "scale": 4, "angle": 2, "func": "cos", "offset": off},
        {"type": "trig", "scale": 3, "angle": 2, "func": "cos", "offset": off},
        {"type": "trig", "scale": 4, "angle": 2, "func": "sin"},
    ]
    return ObservableDictionary(6, terms)


def rbf_dictionary(states, n_centers, width=None, dims=None, seed=0):
    """Identity plus Gaussian RBFs with k-means centres over ``states``."""
    X = np.asarray(states, dtype=float)
    sub = X if dims is None else X[:, dims]
    centers, _ = kmeans2(sub, n_centers, minit="++", seed=np.random.default_rng(seed))
    if width is None:
        d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        width = float(np.median(d[d > 0])) if np.any(d > 0) else 1.0
    terms = [{"type": "rbf", "center": c.tolist(), "width": width,
              **({"dims": list(dims)} if dims is not None else {})} for c in centers]
    return ObservableDictionary(X.shape[1], terms)


# ---------------------------------------------------------------------------
# data


@dataclass
class TrajectoryDataset:
    X: np.ndarray  # (M, n_x) states x_k
    U: np.ndarray  # (M, n_u)
    Xn: np.ndarray  # (M, n_x) successors x_{k+1}
    dt: float
    traj_id: np.ndarray = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.Xn = np.atleast_2d(np.asarray(self.Xn, dtype=float))
        if not (len(self.X) == len(self.U) == len(self.Xn)) or self.X.shape != self.Xn.shape:
            raise ValueError("inconsistent snapshot dimensions")
        if self.traj_id is None:
            self.traj_id = np.zeros(len(self.X), dtype=int)
        self.traj_id = np.asarray(self.traj_id, dtype=int)

    def __len__(self):
        return len(self.X)

    @classmethod
    def from_trajectories(cls, trajs, dt):
        """``trajs`` is a list of (states (T+1, n_x), inputs (T, n_u))."""
        X, U, Xn, ids = [], [], [], []
        for i, (xs, us) in enumerate(trajs):
            xs, us = np.asarray(xs, float), np.asarray(us, float)
            X.append(xs[:-1])
            Xn.append(xs[1:])
            U.append(us[: len(xs) - 1])
            ids.append(np.full(len(xs) - 1, i))
        return cls(np.vstack(X), np.vstack(U), np.vstack(Xn), dt, np.concatenate(ids))

    def subset(self, mask):
        return TrajectoryDataset(self.X[mask], self.U[mask], self.Xn[mask], self.dt, self.traj_id[mask])

    def split_by_trajectory(self, train_frac=0.8, seed=0):
        ids = np.unique(self.traj_id)
        rng = np.random.default_rng(seed)
        rng.shuffle(ids)
        n_train = max(1, int(round(train_frac * len(ids))))
        if n_train == len(ids) and len(ids) > 1:
            n_train -= 1
        tr = np.isin(self.traj_id, ids[:n_train])
        return self.subset(tr), self.subset(~tr)

    @classmethod
    def from_csv(cls, path, n_x, n_u):
        """Columns t, x1..x_nx, u1..u_nu; the row's input drives it to the next row.

        A non-increasing time stamp starts a new trajectory.
        """
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 1 + n_x + n_u:
            raise ValueError(f"expected {1 + n_x + n_u} columns, got {data.shape[1]}")
        t = data[:, 0]
        breaks = np.concatenate([[0], np.nonzero(np.diff(t) <= 0)[0] + 1, [len(t)]])
        trajs = []
        for a, b in zip(breaks[:-1], breaks[1:]):
            if b - a >= 2:
                trajs.append((data[a:b, 1:1 + n_x], data[a:b - 1, 1 + n_x:]))
        dts = np.diff(t)
        dt = float(np.median(dts[dts > 0])) if np.any(dts > 0) else 1.0
        return cls.from_trajectories(trajs, dt)

    @staticmethod
    def write_csv(path, trajs, dt):
        """Write (states, inputs) trajectories; the final state carries a zero input."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            xs0, us0 = trajs[0]
            n_x, n_u = np.shape(xs0)[1], np.shape(us0)[1]
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n_x)] + [f"u{i + 1}" for i in range(n_u)])
            for xs, us in trajs:
                us = np.vstack([us, np.zeros((1, n_u))])
                for k, (x, u) in enumerate(zip(xs, us)):
                    w.writerow([repr(k * dt)] + [repr(float(v)) for v in x] + [repr(float(v)) for v in u])


# ---------------------------------------------------------------------------
# model


@dataclass
class KoopmanModel:
    A: np.ndarray
    B: np.ndarray
    dictionary: ObservableDictionary
    dt: float = 1.0
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.A.shape[0], -1)
        n = self.dictionary.n_K
        if self.A.shape != (n, n):
            raise ValueError("A does not match the lifted dimension")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("non-finite model matrices")

    @property
    def n_K(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    def lift(self, x):
        return lift(self.dictionary, x)

    def save(self, path):
        obj = {"dt": self.dt, "dictionary": self.dictionary.to_dict(),
               "A": self.A.tolist(), "B": self.B.tolist(), "report": self.report}
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            obj = json.load(fh)
        return cls(np.array(obj["A"], dtype=float), np.array(obj["B"], dtype=float),
                   ObservableDictionary.from_dict(obj["dictionary"]), float(obj["dt"]),
                   obj.get("report", {}))


def fit_edmd(data: TrajectoryDataset, dictionary: ObservableDictionary, ridge=1e-8) -> KoopmanModel:
    """Least-squares [A B] from stacked lifted snapshots, with optional ridge penalty."""
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    Psi = lift(dictionary, data.X)
    Psin = lift(dictionary, data.Xn)
    Z = np.hstack([Psi, data.U])  # rows are snapshots
    n = Z.shape[1]
    if ridge == 0:
        if len(Z) < n or np.linalg.matrix_rank(Z) < n:
            raise ConditioningError("rank-deficient regressors with zero ridge")
        G, *_ = np.linalg.lstsq(Z, Psin, rcond=None)
    else:
        Za = np.vstack([Z, np.sqrt(ridge) * np.eye(n)])
        Ya = np.vstack([Psin, np.zeros((n, Psin.shape[1]))])
        G, *_ = np.linalg.lstsq(Za, Ya, rcond=None)
    nK = dictionary.n_K
    A, B = G[:nK].T.copy(), G[nK:].T.copy()
    res = Psin - Z @ G
    report = {
        "n_snapshots": int(len(Z)),
        "residual_fro": float(np.linalg.norm(res)),
        "residual_max": float(np.max(np.abs(res))) if res.size else 0.0,
        "rmse_state": float(np.sqrt(np.mean(res[:, : dictionary.n_x] ** 2))),
        "ridge": float(ridge),
    }
    return KoopmanModel(A, B, dictionary, data.dt, report)


def snapshot_residuals(model: KoopmanModel, data: TrajectoryDataset):
    """Per-snapshot lifted residual norms."""
    Psi = model.lift(data.X)
    res = model.lift(data.Xn) - Psi @ model.A.T - data.U @ model.B.T
    return np.linalg.norm(res, axis=1)


def one_step_rmse(model: KoopmanModel, data: TrajectoryDataset, dims=None):
    """RMSE of the predicted raw state on ``data`` (optionally a subset of dims)."""
    _, xn = predict(model, data.X, data.U)
    err = xn - data.Xn
    if dims is not None:
        err = err[:, dims]
    return float(np.sqrt(np.mean(err ** 2)))


def predict(model: KoopmanModel, x, u):
    """(A lift(x) + B u, its first n_x entries); vectorised over rows."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != model.n_u:
        raise ValueError("input dimension mismatch")
    z = model.lift(x) @ model.A.T + u @ model.B.T
    return z, z[..., : model.dictionary.n_x]


def predict_lifted(model: KoopmanModel, upsilon, u):
    return np.asarray(upsilon, float) @ model.A.T + np.asarray(u, float) @ model.B.T


def error_dynamics(model: KoopmanModel, x, u, x_r, u_r):
    """Lifted error state, input error and its nominal one-step propagation."""
    xt = model.lift(x) - model.lift(x_r)
    ut = np.asarray(u, dtype=float) - np.asarray(u_r, dtype=float)
    return xt, ut, model.A @ xt + model.B @ ut
