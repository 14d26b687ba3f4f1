"""Guiding vector fields: path-following, repulsive, composite and kinodynamic.

Positions are arrays whose last axis has length 2; every field function is
vectorised over the leading axes, so the same code evaluates a single point
or a whole grid.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

# 90 degree rotation, E @ g == (-g_y, g_x)
E = np.array([[0.0, -1.0], [1.0, 0.0]])


class FieldEvaluationError(ValueError):
    """A surface returned a non-finite value or gradient."""


class SingularFieldError(FieldEvaluationError):
    """A constituent field with nonzero weight vanished and cannot be normalised."""


class GridSizeError(ValueError):
    pass


def _rot(v):
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


# ---------------------------------------------------------------------------
# implicit surfaces


class ImplicitSurface:
    """Scalar field whose zero level set is a path or an obstacle boundary.

    Subclasses implement ``value`` and ``gradient``; ``hessian_available`` is
    informational.
    """

    kind = "path"
    hessian_available = False

    def value(self, p):
        raise NotImplementedError

    def gradient(self, p):
        raise NotImplementedError

    def __call__(self, p):
        return self.value(p)

    def describe(self) -> dict:
        raise NotImplementedError


class Line(ImplicitSurface):
    """Signed distance to the line through ``point`` with direction ``direction``."""

    hessian_available = True

    def __init__(self, point=(0.0, 0.0), direction=(1.0, 0.0), kind="path"):
        self.point = np.asarray(point, dtype=float)
        d = np.asarray(direction, dtype=float)
        self.direction = d / np.linalg.norm(d)
        # left normal, so phi > 0 on the left of the direction of travel
        self.normal = _rot(self.direction)
        self.kind = kind

    def value(self, p):
        return (np.asarray(p, dtype=float) - self.point) @ self.normal

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.normal, p.shape).copy()

    def describe(self):
        return {"type": "line", "point": self.point.tolist(),
                "direction": self.direction.tolist(), "kind": self.kind}


class Circle(ImplicitSurface):
    """``scale * (|p - c|^2 - R^2)``; ``scale = 1/(2R)`` makes it a distance near the rim."""

    hessian_available = True

    def __init__(self, center=(0.0, 0.0), radius=1.0, scale=1.0, kind="path"):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.scale = float(scale)
        self.kind = kind

    def value(self, p):
        d = np.asarray(p, dtype=float) - self.center
        return self.scale * (np.sum(d * d, axis=-1) - self.radius ** 2)

    def gradient(self, p):
        return 2.0 * self.scale * (np.asarray(p, dtype=float) - self.center)

    def level_radius(self, level):
        """Radius of the level set ``value == level``."""
        return float(np.sqrt(self.radius ** 2 + level / self.scale))

    def describe(self):
        return {"type": "circle", "center": self.center.tolist(), "radius": self.radius,
                "scale": self.scale, "kind": self.kind}


class Ellipse(ImplicitSurface):
    """``scale * ((x'/a)^2 + (y'/b)^2 - 1)`` in a frame rotated by ``angle``."""

    hessian_available = True

    def __init__(self, center=(0.0, 0.0), a=1.0, b=1.0, angle=0.0, scale=1.0, kind="path"):
        self.center = np.asarray(center, dtype=float)
        self.a, self.b = float(a), float(b)
        self.angle = float(angle)
        self.scale = float(scale)
        self.kind = kind
        c, s = np.cos(self.angle), np.sin(self.angle)
        self._R = np.array([[c, -s], [s, c]])

    def _local(self, p):
        return (np.asarray(p, dtype=float) - self.center) @ self._R

    def value(self, p):
        q = self._local(p)
        return self.scale * ((q[..., 0] / self.a) ** 2 + (q[..., 1] / self.b) ** 2 - 1.0)

    def gradient(self, p):
        q = self._local(p)
        gl = np.stack([2 * q[..., 0] / self.a ** 2, 2 * q[..., 1] / self.b ** 2], axis=-1)
        return self.scale * gl @ self._R.T

    def describe(self):
        return {"type": "ellipse", "center": self.center.tolist(), "a": self.a, "b": self.b,
                "angle": self.angle, "scale": self.scale, "kind": self.kind}


class PolynomialPath(ImplicitSurface):
    """Graph path ``y = poly(x)``, phi = y - poly(x); coefficients highest power first."""

    hessian_available = True

    def __init__(self, coeffs, kind="path"):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self._d = np.polyder(self.coeffs) if len(self.coeffs) > 1 else np.zeros(1)
        self.kind = kind

    @classmethod
    def fit(cls, points, degree=3):
        pts = np.asarray(points, dtype=float)
        return cls(np.polyfit(pts[:, 0], pts[:, 1], degree))

    def value(self, p):
        p = np.asarray(p, dtype=float)
        return p[..., 1] - np.polyval(self.coeffs, p[..., 0])

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        gx = -np.polyval(self._d, p[..., 0])
        return np.stack([gx, np.ones_like(gx)], axis=-1)

    def describe(self):
        return {"type": "polynomial", "coeffs": self.coeffs.tolist(), "kind": self.kind}


def surface_from_dict(d: dict) -> ImplicitSurface:
    d = dict(d)
    kind = d.pop("type")
    if kind == "line":
        return Line(**d)
    if kind == "circle":
        return Circle(**d)
    if kind == "ellipse":
        return Ellipse(**d)
    if kind == "polynomial":
        if "points" in d:
            return PolynomialPath.fit(d["points"], d.get("degree", 3))
        return PolynomialPath(**d)
    raise ValueError(f"unknown surface type {kind!r}")


# ---------------------------------------------------------------------------
# configuration types


@dataclass
class ObstacleSpec:
    surface: ImplicitSurface
    c: float
    gamma: int = 1
    k_r: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    is_virtual: bool = False
    k_c: float = 1.0
    anchor_actual: Optional[int] = None
    motion: Optional[Callable[[float], np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        if not self.c < 0:
            raise ValueError("repulsive level c must be negative")
        if self.gamma not in (1, -1):
            raise ValueError("gamma must be +1 or -1")
        if min(self.k_r, self.l1, self.l2) <= 0:
            raise ValueError("k_r, l1, l2 must be positive")
        if self.is_virtual and (self.k_c <= 0 or self.anchor_actual is None):
            raise ValueError("virtual obstacles need k_c > 0 and an anchor_actual index")

    def offset(self, t=0.0):
        if self.motion is None:
            return np.zeros(2)
        return np.asarray(self.motion(t), dtype=float)

    def value(self, p, t=0.0):
        return self.surface.value(np.asarray(p, dtype=float) - self.offset(t))

    def gradient(self, p, t=0.0):
        return self.surface.gradient(np.asarray(p, dtype=float) - self.offset(t))


def check_virtual_placement(obstacles: Sequence[ObstacleSpec], path_points, t=0.0) -> bool:
    """Every sampled path point inside a virtual obstacle must lie inside its anchor's reactive region."""
    pts = np.asarray(path_points, dtype=float)
    for o in obstacles:
        if not o.is_virtual:
            continue
        anchor = obstacles[o.anchor_actual]
        if anchor.is_virtual:
            return False
        inside_v = o.value(pts, t) < o.c  # interior of the virtual repulsive boundary
        inside_a = anchor.value(pts, t) < 0
        if np.any(inside_v & ~inside_a):
            return False
    return True


def circle_obstacle(center, r_repulsive, r_reactive, **kw) -> ObstacleSpec:
    """Circular obstacle with phi ~ signed distance to the reactive rim."""
    if not 0 < r_repulsive < r_reactive:
        raise ValueError("need 0 < r_repulsive < r_reactive")
    surf = Circle(center, r_reactive, scale=1.0 / (2.0 * r_reactive), kind="obstacle")
    c = surf.scale * (r_repulsive ** 2 - r_reactive ** 2)
    return ObstacleSpec(surface=surf, c=c, **kw)


@dataclass
class FieldConfig:
    k_p: float = 1.0
    gamma0: int = 1
    beta: float = 0.1
    epsilon_singular: float = 1e-6
    x_min: float = -10.0
    x_max: float = 10.0
    y_min: float = -10.0
    y_max: float = 10.0
    resolution: float = 0.25
    v_d: float = 5.0
    a_max: float = 4.0
    max_nodes: int = 4_000_000

    def __post_init__(self):
        for name in ("k_p", "beta", "epsilon_singular", "resolution", "v_d", "a_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma0 not in (1, -1):
            raise ValueError("gamma0 must be +1 or -1")


@dataclass
class GuidingTrajectory:
    points: np.ndarray
    speeds: np.ndarray
    curvatures: np.ndarray
    status: str = "complete"

    def __len__(self):
        return len(self.points)

    def arc_length(self):
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "speed", "curvature"])
            for (x, y), v, k in zip(self.points, self.speeds, self.curvatures):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(v)), repr(float(k))])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(points=data[:, :2].copy(), speeds=data[:, 2].copy(), curvatures=data[:, 3].copy())


# ---------------------------------------------------------------------------
# constituent fields


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FieldEvaluationError("non-finite surface value or gradient")


def _gvf(phi, grad, gamma, k):
    return gamma * _rot(grad) - k * phi[..., None] * grad


def path_field(s: ImplicitSurface, cfg: FieldConfig, p):
    """gamma0 E grad(phi) - k_p phi grad(phi)."""
    phi = np.asarray(s.value(p), dtype=float)
    g = np.asarray(s.gradient(p), dtype=float)
    _check_finite(phi, g)
    return _gvf(phi, g, cfg.gamma0, cfg.k_p)


def repulsive_field(o: ObstacleSpec, p, t=0.0):
    phi = np.asarray(o.value(p, t), dtype=float)
    g = np.asarray(o.gradient(p, t), dtype=float)
    _check_finite(phi, g)
    return _gvf(phi, g, o.gamma, o.k_r)


def _bump_from_phi(phi, c, l1, l2):
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_f1 = l1 / (c - phi)
        log_f2 = l2 / phi
        up = expit(log_f1 - log_f2)
    up = np.where(phi <= c, 0.0, np.where(phi >= 0, 1.0, up))
    return up, 1.0 - up


def bump_pair(o: ObstacleSpec, p, t=0.0):
    """Smooth partition (up, cap) with up + cap == 1; up=1 outside the reactive boundary."""
    phi = o.value(p, t)
    _check_finite(phi)
    up, cap = _bump_from_phi(phi, o.c, o.l1, o.l2)
    if np.ndim(up) == 0:
        return float(up), float(cap)
    return up, cap


def _s_from_phi(phi, c, k_c, in_buffer):
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        inner = np.exp(k_c / (c - phi))
    inner = np.where(phi > c, inner, 0.0)
    return np.where(in_buffer, inner, 1.0)


def s_factor(o: ObstacleSpec, p, in_buffer, t=0.0):
    """Convergence-rate factor of a virtual obstacle; 1 outside its buffer region.

    Saturates to 0 at (or below) the repulsive level inside the buffer.
    """
    if not o.is_virtual:
        raise ValueError("s_factor is defined for virtual obstacles only")
    s = _s_from_phi(o.value(p, t), o.c, o.k_c, in_buffer)
    return float(s) if np.ndim(s) == 0 else s


def _normalize(v, eps=0.0):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = n > eps
    out = np.where(ok, v / np.where(ok, n, 1.0), 0.0)
    return out, ok[..., 0]


def in_buffer_region(obstacles: Sequence[ObstacleSpec], j: int, p, t=0.0):
    """Membership of p in the buffer region of virtual obstacle j."""
    o = obstacles[j]
    anchor = obstacles[o.anchor_actual]
    return (anchor.value(p, t) >= 0) & (o.value(p, t) < 0)


def region_code(obstacles, j, p, t=0.0):
    """0 outside, 1 in the buffer region, 2 inside the anchor's reactive boundary."""
    o = obstacles[j]
    anchor = obstacles[o.anchor_actual]
    pa = anchor.value(p, t)
    pv = o.value(p, t)
    code = np.where(pa < 0, 2, np.where(pv < 0, 1, 0))
    return code


@dataclass
class FieldLayers:
    """Separable pieces of the kinodynamic field, so virtual obstacles can be switched off."""

    path_part: np.ndarray  # prod(up_i) * normalized path field
    actual_part: np.ndarray  # sum(cap_i * normalized repulsive field)
    s: np.ndarray  # (n_virtual, ...) s_i with the buffer rule applied
    virtual_dir: np.ndarray  # (n_virtual, ..., 2) normalized repulsive fields of virtual obstacles
    region: np.ndarray  # (n_virtual, ...) region codes
    singular_path: np.ndarray  # path field vanished where it carries weight
    overlap: np.ndarray  # two actual obstacles blend here

    def compose(self, latched=None):
        if self.s.shape[0] == 0:
            return self.path_part + self.actual_part
        s = self.s
        if latched is not None:
            lat = np.asarray(latched, dtype=bool).reshape((-1,) + (1,) * (s.ndim - 1))
            s = np.where(lat, 1.0, s)
        prod_s = np.prod(s, axis=0)
        virt = np.sum((1.0 - s)[..., None] * self.virtual_dir, axis=0)
        return prod_s[..., None] * self.path_part + self.actual_part + virt


def field_layers(path: ImplicitSurface, obstacles: Sequence[ObstacleSpec], cfg: FieldConfig, p, t=0.0):
    p = np.asarray(p, dtype=float)
    lead = p.shape[:-1]
    chi_p, ok_p = _normalize(path_field(path, cfg, p))
    prod_up = np.ones(lead)
    actual = np.zeros(lead + (2,))
    n_active = np.zeros(lead, dtype=int)
    virtual_idx = [i for i, o in enumerate(obstacles) if o.is_virtual]
    for o in obstacles:
        if o.is_virtual:
            continue
        up, cap = _bump_from_phi(o.value(p, t), o.c, o.l1, o.l2)
        chi_r, ok_r = _normalize(repulsive_field(o, p, t))
        prod_up = prod_up * up
        actual = actual + cap[..., None] * chi_r
        n_active += (cap > 0) & (up > 0)
    s_list, vdir, regions = [], [], []
    for j in virtual_idx:
        o = obstacles[j]
        inb = in_buffer_region(obstacles, j, p, t)
        s_list.append(_s_from_phi(o.value(p, t), o.c, o.k_c, inb))
        d, _ = _normalize(repulsive_field(o, p, t))
        vdir.append(d)
        regions.append(region_code(obstacles, j, p, t))
    s = np.array(s_list).reshape((len(virtual_idx),) + lead)
    virtual_dir = np.array(vdir).reshape((len(virtual_idx),) + lead + (2,))
    region = np.array(regions, dtype=np.int8).reshape((len(virtual_idx),) + lead)
    prod_s = np.prod(s, axis=0) if len(virtual_idx) else np.ones(lead)
    weight_p = prod_up * prod_s
    return FieldLayers(
        path_part=prod_up[..., None] * chi_p,
        actual_part=actual,
        s=s,
        virtual_dir=virtual_dir,
        region=region,
        singular_path=(weight_p > 0) & ~ok_p,
        overlap=n_active > 1,
    )


def composite_field(path, obstacles, cfg, p, t=0.0):
    """Composite field over the actual obstacles (virtual obstacles are ignored)."""
    actual = [o for o in obstacles if not o.is_virtual]
    lay = field_layers(path, actual, cfg, p, t)
    if np.any(lay.singular_path):
        raise SingularFieldError("path field vanishes where it carries weight")
    return lay.compose()


def kinodynamic_field(path, obstacles, cfg, p, t=0.0, buffer_state=None):
    """Kinodynamic composite field.

    ``buffer_state`` is a sequence of latch flags, one per virtual obstacle in
    list order; a latched virtual obstacle contributes s = 1.
    """
    lay = field_layers(path, obstacles, cfg, p, t)
    if np.any(lay.singular_path):
        raise SingularFieldError("path field vanishes where it carries weight")
    return lay.compose(buffer_state)


def speed_plan(kappa, cfg: FieldConfig):
    """min(v_d, sqrt(a_max / kappa)), vectorised."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0):
        raise ValueError("curvature must be non-negative")
    with np.errstate(divide="ignore", over="ignore"):
        cap = np.sqrt(cfg.a_max / kappa)
    v = np.where(cfg.v_d <= cap, cfg.v_d, cap)
    # sqrt rounding can leave v^2 kappa a hair above a_max
    over = v * v * kappa > cfg.a_max
    v = np.where(over, np.nextafter(v, 0), v)
    return float(v) if v.ndim == 0 else v


# ---------------------------------------------------------------------------
# grid


_MAGIC = b"GVFG"
_HEADER = struct.Struct("<4sIQQQ5d")


@dataclass
class GridField:
    x_min: float
    y_min: float
    resolution: float
    chi: np.ndarray  # (ny, nx, 2), all virtual obstacles active
    layers: Optional[FieldLayers] = field(default=None, repr=False)

    @property
    def shape(self):
        return self.chi.shape[:2]

    @property
    def x_max(self):
        return self.x_min + (self.chi.shape[1] - 1) * self.resolution

    @property
    def y_max(self):
        return self.y_min + (self.chi.shape[0] - 1) * self.resolution

    @property
    def n_virtual(self):
        return 0 if self.layers is None else self.layers.s.shape[0]

    def node(self, iy, ix):
        return np.array([self.x_min + ix * self.resolution, self.y_min + iy * self.resolution])

    def contains(self, p):
        half = 0.5 * self.resolution
        return (self.x_min - half <= p[0] <= self.x_max + half
                and self.y_min - half <= p[1] <= self.y_max + half)

    def nearest_index(self, p):
        # ceil(v - 0.5) rounds ties down, i.e. to the lowest linear index
        ny, nx = self.shape
        ix = int(np.ceil((p[0] - self.x_min) / self.resolution - 0.5))
        iy = int(np.ceil((p[1] - self.y_min) / self.resolution - 0.5))
        return min(max(iy, 0), ny - 1), min(max(ix, 0), nx - 1)

    def lookup(self, p):
        iy, ix = self.nearest_index(p)
        return self.chi[iy, ix].copy()

    def vector(self, p, latched=None):
        iy, ix = self.nearest_index(p)
        if latched is None or self.layers is None or not np.any(latched):
            return self.chi[iy, ix].copy()
        lay = self.layers
        node = FieldLayers(
            lay.path_part[iy, ix], lay.actual_part[iy, ix], lay.s[:, iy, ix],
            lay.virtual_dir[:, iy, ix], lay.region[:, iy, ix],
            lay.singular_path[iy, ix], lay.overlap[iy, ix])
        return node.compose(latched)

    def regions(self, p):
        if self.layers is None:
            return np.zeros(0, dtype=np.int8)
        iy, ix = self.nearest_index(p)
        return self.layers.region[:, iy, ix]

    # binary layout: header, chi (row-major float64 2-vectors), then optional layers
    def save(self, path):
        ny, nx = self.shape
        nv = self.n_virtual
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, 1, nx, ny, nv, self.x_min, self.x_max,
                                  self.y_min, self.y_max, self.resolution))
            fh.write(np.ascontiguousarray(self.chi, dtype="<f8").tobytes())
            if self.layers is not None:
                lay = self.layers
                for arr in (lay.path_part, lay.actual_part, lay.s, lay.virtual_dir,
                            lay.region.astype("<f8"), lay.singular_path.astype("<f8"),
                            lay.overlap.astype("<f8")):
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        magic, version, nx, ny, nv, x0, x1, y0, y1, res = _HEADER.unpack_from(raw, 0)
        if magic != _MAGIC or version != 1:
            raise ValueError("not a grid field file")
        off = _HEADER.size

        def take(shape):
            nonlocal off
            n = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
            return arr.astype(float)

        chi = take((ny, nx, 2))
        layers = None
        if off < len(raw):
            pp = take((ny, nx, 2))
            ap = take((ny, nx, 2))
            s = take((nv, ny, nx))
            vd = take((nv, ny, nx, 2))
            region = take((nv, ny, nx)).astype(np.int8)
            sing = take((ny, nx)).astype(bool)
            ovl = take((ny, nx)).astype(bool)
            layers = FieldLayers(pp, ap, s, vd, region, sing, ovl)
        return cls(x0, y0, res, chi, layers)


def grid_axes(cfg: FieldConfig):
    if not (cfg.x_max > cfg.x_min and cfg.y_max > cfg.y_min):
        raise ValueError("grid bounds must be well ordered")
    nx = int(np.floor((cfg.x_max - cfg.x_min) / cfg.resolution + 1e-9)) + 1
    ny = int(np.floor((cfg.y_max - cfg.y_min) / cfg.resolution + 1e-9)) + 1
    return nx, ny


def precompute_grid(path, obstacles, cfg: FieldConfig, t=0.0) -> GridField:
    """Evaluate the kinodynamic field at every grid node (obstacles frozen at time t)."""
    nx, ny = grid_axes(cfg)
    if nx * ny > cfg.max_nodes:
        raise GridSizeError(f"grid of {nx}x{ny} nodes exceeds max_nodes={cfg.max_nodes}")
    xs = cfg.x_min + cfg.resolution * np.arange(nx)
    ys = cfg.y_min + cfg.resolution * np.arange(ny)
    P = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)
    lay = field_layers(path, obstacles, cfg, P, t)
    if np.any(lay.overlap):
        log.warning("sandwiched regions of %d grid nodes overlap; blend applied as written",
                    int(lay.overlap.sum()))
    chi = lay.compose()
    return GridField(cfg.x_min, cfg.y_min, cfg.resolution, chi, lay)


def constant_grid(vector, cfg: FieldConfig) -> GridField:
    nx, ny = grid_axes(cfg)
    chi = np.broadcast_to(np.asarray(vector, dtype=float), (ny, nx, 2)).copy()
    return GridField(cfg.x_min, cfg.y_min, cfg.resolution, chi)


# ---------------------------------------------------------------------------
# integration


class TrajectoryInitError(FieldEvaluationError):
    pass


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def discrete_curvature(points):
    """|heading change| / segment length at every vertex; ends copy their neighbour."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    kappa = np.zeros(n)
    if n < 3:
        return kappa
    d = np.diff(pts, axis=0)
    psi = np.arctan2(d[:, 1], d[:, 0])
    seg = np.linalg.norm(d, axis=1)
    dpsi = np.abs(_wrap(np.diff(psi)))
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(seg[1:] > 0, dpsi / seg[1:], 0.0)
    kappa[1:-1] = k
    kappa[0] = kappa[1]
    kappa[-1] = kappa[-2]
    return kappa


class _Latch:
    """Per-virtual-obstacle cease-influence bookkeeping along one trajectory."""

    def __init__(self, n):
        self.visited_b = np.zeros(n, dtype=bool)
        self.latched = np.zeros(n, dtype=bool)
        self.prev = np.zeros(n, dtype=np.int8)

    def update(self, regions):
        for j, r in enumerate(regions):
            if r == 0:
                self.latched[j] = False
                self.visited_b[j] = False
            elif r == 1:
                if self.prev[j] == 2 and self.visited_b[j]:
                    self.latched[j] = True
                self.visited_b[j] = True
            self.prev[j] = r
        return self.latched


def integrate_trajectory(grid: GridField, cfg: FieldConfig, xi0, n_steps: int) -> GuidingTrajectory:
    """xi_{k+1} = xi_k + beta * chi(nearest node), with singular-vector inheritance."""
    xi = np.asarray(xi0, dtype=float).copy()
    if not grid.contains(xi):
        raise ValueError("initial point lies outside the grid")
    latch = _Latch(grid.n_virtual)
    pts = [xi.copy()]
    prev = None
    status = "complete"
    for k in range(n_steps):
        latched = latch.update(grid.regions(xi))
        v = grid.vector(xi, latched)
        nv = np.linalg.norm(v)
        if not np.isfinite(nv):
            raise FieldEvaluationError("non-finite field value on grid")
        if nv < cfg.epsilon_singular:
            if prev is None:
                raise TrajectoryInitError("field is singular at the initial point")
            v, nv = prev, np.linalg.norm(prev)
        if nv > 1.0:
            # overlapping blends can exceed unit norm; keep steps at most beta
            v = v / nv
        prev = v
        nxt = xi + cfg.beta * v
        if not grid.contains(nxt):
            status = "left_grid"
            break
        xi = nxt
        pts.append(xi.copy())
    pts = np.array(pts)
    kappa = discrete_curvature(pts)
    speeds = speed_plan(kappa, cfg)
    return GuidingTrajectory(points=pts, speeds=np.atleast_1d(speeds), curvatures=kappa, status=status)


def plan_trajectory(path, obstacles, cfg, xi0, n_steps, t=0.0):
    grid = precompute_grid(path, obstacles, cfg, t)
    return integrate_trajectory(grid, cfg, xi0, n_steps), grid
