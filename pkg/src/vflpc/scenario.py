"""Scenario files: TOML tree -> validated episode configuration."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controller import VehicleControlConfig
from .fields import FieldConfig, ImplicitSurface, ObstacleSpec, circle_obstacle, surface_from_dict
from .gp import OnlineGpConfig
from .safety import BarrierConfig
from .sim import MISMATCH, MISMATCH_NOISE_STD, NOMINAL, TriggeredMotion, VehicleParams


class ConfigError(ValueError):
    """Bad or inconsistent scenario file."""


@dataclass
class ModelSource:
    path: Optional[str] = None
    n_traj: int = 30
    T: int = 80
    seed: int = 0
    psi_range: float = 0.5
    v_min: float = 3.0
    v_max: float = 9.0
    ridge: float = 1e-8
    centered: bool = True


@dataclass
class Scenario:
    name: str
    path: ImplicitSurface
    obstacles: List[ObstacleSpec]
    field: FieldConfig
    start: np.ndarray
    n_field_steps: int
    plant: VehicleParams = NOMINAL
    noise_std: float = 0.0
    seed: int = 0
    dt: float = 0.1
    plant_dt: float = 0.02
    max_steps: int = 1000
    goal: Optional[np.ndarray] = None
    goal_tol: float = 2.0
    duration: Optional[float] = None
    v0: Optional[float] = None
    lateral_offset: float = 0.0
    model: ModelSource = field(default_factory=ModelSource)
    control: VehicleControlConfig = field(default_factory=VehicleControlConfig)
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    barrier_enabled: bool = True
    gp: OnlineGpConfig = field(default_factory=OnlineGpConfig)
    gp_enabled: bool = False
    q1: float = 1.0
    q2: float = 1.0
    metric_R: Optional[np.ndarray] = None
    stuck_steps: int = 100
    replan_margin: float = 5.0
    source: Optional[str] = None

    @property
    def actual(self):
        return [o for o in self.obstacles if not o.is_virtual]


def _sub(cls, d: dict, what: str, **extra):
    names = {f.name for f in fields(cls)}
    bad = set(d) - names
    if bad:
        raise ConfigError(f"unknown keys in [{what}]: {sorted(bad)}")
    try:
        return cls(**{**d, **extra})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{what}]: {e}") from e


_OBST_KEYS = {"name", "shape", "center", "r_repulsive", "r_reactive", "gamma", "k_r", "l1", "l2",
              "velocity", "trigger", "virtual", "surface", "c"}
_VIRT_KEYS = {"r_repulsive", "r_reactive", "k_c", "k_r", "l1", "l2", "gamma", "surface", "c"}


def _obstacles(items) -> List[ObstacleSpec]:
    actual, virtual = [], []
    for j, d in enumerate(items):
        bad = set(d) - _OBST_KEYS
        if bad:
            raise ConfigError(f"unknown keys in obstacle {j}: {sorted(bad)}")
        name = d.get("name", f"obstacle{j}")
        kw = {k: d[k] for k in ("gamma", "k_r", "l1", "l2") if k in d}
        motion = None
        if "velocity" in d:
            motion = TriggeredMotion(d["velocity"], d.get("trigger", 25.0))
        try:
            if d.get("shape", "circle") == "circle":
                o = circle_obstacle(d["center"], d["r_repulsive"], d["r_reactive"], name=name, motion=motion, **kw)
            else:
                surf = surface_from_dict({**d["surface"], "kind": "obstacle"})
                o = ObstacleSpec(surf, d["c"], name=name, motion=motion, **kw)
        except KeyError as e:
            raise ConfigError(f"obstacle {name}: missing {e}") from e
        except ValueError as e:
            raise ConfigError(f"obstacle {name}: {e}") from e
        idx = len(actual)
        actual.append(o)
        if "virtual" in d:
            v = d["virtual"]
            bad = set(v) - _VIRT_KEYS
            if bad:
                raise ConfigError(f"unknown keys in obstacle {name} virtual: {sorted(bad)}")
            vkw = {k: v[k] for k in ("k_c", "k_r", "l1", "l2") if k in v}
            vkw.setdefault("gamma", v.get("gamma", o.gamma))
            try:
                if "surface" in v:
                    surf = surface_from_dict({**v["surface"], "kind": "obstacle"})
                    vo = ObstacleSpec(surf, v["c"], is_virtual=True, anchor_actual=idx, name=name + "_v",
                                      motion=motion, **vkw)
                else:
                    vo = circle_obstacle(d["center"], v["r_repulsive"], v["r_reactive"], is_virtual=True,
                                         anchor_actual=idx, name=name + "_v", motion=motion, **vkw)
            except (KeyError, ValueError) as e:
                raise ConfigError(f"obstacle {name} virtual: {e}") from e
            virtual.append(vo)
    return actual + virtual


def _plant(d: dict):
    preset = d.get("preset", "nominal")
    base = {"nominal": NOMINAL, "mismatch": MISMATCH}.get(preset)
    if base is None:
        raise ConfigError(f"unknown plant preset {preset!r}")
    over = {k: v for k, v in d.items() if k not in ("preset", "noise_std", "plant_dt")}
    try:
        p = replace(base, **over)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[plant]: {e}") from e
    noise = d.get("noise_std", MISMATCH_NOISE_STD if preset == "mismatch" else 0.0)
    if noise < 0:
        raise ConfigError("[plant] noise_std must be non-negative")
    return p, float(noise), float(d.get("plant_dt", 0.02))


def scenario_from_dict(d: dict, source=None) -> Scenario:
    d = dict(d)
    try:
        path = surface_from_dict(d.pop("path"))
    except KeyError as e:
        raise ConfigError(f"missing section or key: {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[path]: {e}") from e
    fd = dict(d.pop("field", {}))
    start = fd.pop("start", None)
    n_steps = fd.pop("n_steps", None)
    if start is None or n_steps is None:
        raise ConfigError("[field] needs start and n_steps")
    fcfg = _sub(FieldConfig, fd, "field")
    obstacles = _obstacles(d.pop("obstacles", []))
    plant, noise, plant_dt = _plant(d.pop("plant", {}))
    model = _sub(ModelSource, d.pop("model", {}), "model")
    if model.path is not None and source is not None:
        mp = Path(model.path)
        if not mp.is_absolute():
            mp = Path(source).parent / mp
        if not mp.exists():
            raise ConfigError(f"model file not found: {mp}")
        model.path = str(mp)
    cd = dict(d.pop("control", {}))
    control = _sub(VehicleControlConfig, cd, "control", params=NOMINAL)
    bd = dict(d.pop("barrier", {}))
    b_on = bool(bd.pop("enabled", True))
    barrier = _sub(BarrierConfig, bd, "barrier")
    gd = dict(d.pop("gp", {}))
    g_on = bool(gd.pop("enabled", False))
    gp = _sub(OnlineGpConfig, gd, "gp")
    md = dict(d.pop("metrics", {}))
    ep = dict(d.pop("episode", {}))
    name = d.pop("name", "scenario")
    seed = int(d.pop("seed", 0))
    if d:
        raise ConfigError(f"unknown top-level keys: {sorted(d)}")
    goal = ep.pop("goal", None)
    known = {"dt", "max_steps", "goal_tol", "duration", "v0", "lateral_offset", "stuck_steps", "replan_margin"}
    if set(ep) - known:
        raise ConfigError(f"unknown keys in [episode]: {sorted(set(ep) - known)}")
    if goal is None and ep.get("duration") is None:
        raise ConfigError("[episode] needs a goal or a duration")
    R = md.get("R")
    return Scenario(
        name=name, path=path, obstacles=obstacles, field=fcfg, start=np.asarray(start, float),
        n_field_steps=int(n_steps), plant=plant, noise_std=noise, seed=seed, plant_dt=plant_dt,
        goal=None if goal is None else np.asarray(goal, float), model=model, control=control,
        barrier=barrier, barrier_enabled=b_on, gp=gp, gp_enabled=g_on,
        q1=float(md.get("q1", 1.0)), q2=float(md.get("q2", 1.0)),
        metric_R=None if R is None else np.asarray(R, float), source=None if source is None else str(source),
        **ep,
    )


def load_scenario(path) -> Scenario:
    """Load a scenario from a file path or the name of a bundled scene."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("vflpc") / "scenes" / f"{path}.toml"
        if bundled.is_file():
            p = Path(str(bundled))
        else:
            raise ConfigError(f"scenario not found: {path}")
    try:
        with open(p, "rb") as fh:
            d = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{p}: {e}") from e
    return scenario_from_dict(d, source=p)


def bundled_scenes():
    root = resources.files("vflpc") / "scenes"
    return sorted(Path(str(f)).stem for f in root.iterdir() if str(f).endswith(".toml"))
