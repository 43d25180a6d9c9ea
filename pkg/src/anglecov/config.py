"""Scenario configuration files.

Configs are INI files. Numbers may be written as simple arithmetic over
``pi`` (``pi/6``, ``0.5*pi``). :func:`dumps_config` writes a fully resolved
config with every default filled in and every float in round-trip form.
"""

from __future__ import annotations

import ast
import configparser
import io
import math
import operator
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .controller import ControllerParams
from .field import AXES, GridSpec
from .geometry import CameraParams, DroneState

MODES = ("gimbal", "baseline")

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


class ConfigError(ValueError):
    pass


def parse_number(text: str) -> float:
    """Evaluate a number or arithmetic expression over ``pi``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.Name) and node.id == "inf":
            return math.inf
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported expression: {text!r}")

    try:
        return ev(ast.parse(text.strip(), mode="eval"))
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc


def _numbers(text: str) -> list[float]:
    return [parse_number(part) for part in text.split(",") if part.strip()]


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridSpec
    drones: tuple[DroneState, ...]
    camera: CameraParams = field(default_factory=CameraParams)
    controller: ControllerParams = field(default_factory=ControllerParams)
    dt: float = 0.1
    duration: float = 150.0
    shooting_rate: float = 5.0
    cover_threshold: float = math.pi / 16
    mode: str = "gimbal"
    seed: int = 0
    psi0: float = 1.0
    workspace_margin: float = 1.0
    snapshot_every: float = 10.0
    workers: int = 1

    def __post_init__(self) -> None:
        self.validate()

    @property
    def n(self) -> int:
        return len(self.drones)

    @property
    def z_c(self) -> float:
        return self.drones[0].z_c

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def shot_every(self) -> int:
        """Integration steps between two shots."""
        return int(round(1.0 / (self.shooting_rate * self.dt)))

    @property
    def workspace(self) -> tuple[float, float, float, float]:
        (x0, x1), (y0, y1) = self.grid.bounds["x"], self.grid.bounds["y"]
        g = self.workspace_margin
        return x0 - g, x1 + g, y0 - g, y1 + g

    def validate(self) -> None:
        if not self.drones:
            raise ConfigError("at least one drone is required")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.controller.delta * self.dt >= 1.0:
            raise ConfigError(
                f"delta*dt must be < 1 (delta={self.controller.delta}, dt={self.dt})")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if not 0 < self.shooting_rate <= 1.0 / self.dt + 1e-9:
            raise ConfigError(f"shooting_rate must be in (0, 1/dt], got {self.shooting_rate}")
        if abs(1.0 / (self.shooting_rate * self.dt) - self.shot_every) > 1e-6:
            raise ConfigError("1/(shooting_rate*dt) must be a whole number of steps")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cover_threshold <= 0:
            raise ConfigError("cover_threshold must be positive")
        if self.psi0 < 0:
            raise ConfigError("psi0 must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        zs = {d.z_c for d in self.drones}
        if len(zs) != 1:
            raise ConfigError("all drones must share one altitude")
        if self.z_c <= self.grid.bounds["z"][1]:
            raise ConfigError("flight altitude must be above the target volume")
        x0, x1, y0, y1 = self.workspace
        for i, d in enumerate(self.drones):
            if not (0.0 < d.phi_v <= math.pi / 2):
                raise ConfigError(f"drone {i}: phi_v must lie in (0, pi/2], got {d.phi_v}")
            if not (x0 <= d.x <= x1 and y0 <= d.y <= y1):
                raise ConfigError(f"drone {i}: initial position outside the workspace")


_CAMERA_COMMENTS = {"fov": "half-angle of the field of view",
                    "sigma1": "sigma_1, FOV Gaussian width", "sigma2": "sigma_2, view-angle Gaussian width"}
_CONTROLLER_COMMENTS = {
    "gamma": "gamma, required decay rate of J", "a1": "a_1, slope of alpha_1",
    "a2": "a_2, slope of alpha_2", "delta": "delta, importance decay gain",
    "epsilon": "epsilon, input penalty", "phi_min": "gimbal vertical angle range",
    "v_xy": "planar speed limit (m/s)", "v_angle": "gimbal rate limit (rad/s)",
}


def load_config(path: str | Path, **overrides) -> ScenarioConfig:
    text = Path(path).read_text()
    return loads_config(text, **overrides)


def loads_config(text: str, **overrides) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in cp.sections():
        if section not in ("grid", "drones", "camera", "controller", "simulation", "manifest"):
            raise ConfigError(f"unknown section [{section}]")

    try:
        g = cp["grid"]
        bounds = {a: tuple(_numbers(g[a])) for a in AXES}
        resolution = {a: parse_number(g[f"res_{a}"]) for a in AXES}
    except KeyError as exc:
        raise ConfigError(f"[grid] is missing {exc}") from exc
    for a, b in bounds.items():
        if len(b) != 2:
            raise ConfigError(f"[grid] {a} needs 'lo, hi'")
    try:
        grid = GridSpec(bounds, resolution)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if "drones" not in cp:
        raise ConfigError("missing [drones] section")
    dsec = cp["drones"]
    z_c = parse_number(dsec.get("z_c", "1.0"))
    keys = sorted((k for k in dsec if k.startswith("drone")), key=lambda k: int(k[5:]))
    drones = []
    for k in keys:
        vals = _numbers(dsec[k])
        if len(vals) != 4:
            raise ConfigError(f"[drones] {k} needs 'x, y, phi_h, phi_v'")
        drones.append(DroneState(*vals, z_c=z_c))

    def section_kwargs(name, cls, text_keys=()):
        if name not in cp:
            return {}
        known = {f.name for f in fields(cls)}
        out = {}
        for k, v in cp[name].items():
            if k not in known:
                raise ConfigError(f"[{name}] unknown key {k!r}")
            out[k] = v.strip() if k in text_keys else parse_number(v)
        return out

    try:
        camera = CameraParams(**section_kwargs("camera", CameraParams, ("h1_mode",)))
        controller = ControllerParams(**section_kwargs("controller", ControllerParams, ("xi1_variant",)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sim = {}
    if "simulation" in cp:
        known = {f.name for f in fields(ScenarioConfig)} - {"grid", "drones", "camera", "controller"}
        for k, v in cp["simulation"].items():
            if k not in known:
                raise ConfigError(f"[simulation] unknown key {k!r}")
            if k == "mode":
                sim[k] = v.strip()
            elif k in ("seed", "workers"):
                sim[k] = int(parse_number(v))
            else:
                sim[k] = parse_number(v)
    sim.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(grid=grid, drones=tuple(drones), camera=camera, controller=controller, **sim)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def dumps_config(cfg: ScenarioConfig, manifest: dict | None = None) -> str:
    """Resolved config text; re-parsing it yields an equal :class:`ScenarioConfig`."""
    out = io.StringIO()
    if manifest:
        out.write("[manifest]\n")
        for k, v in manifest.items():
            out.write(f"{k} = {v}\n")
        out.write("\n")
    out.write("[grid]\n")
    for a in AXES:
        lo, hi = cfg.grid.bounds[a]
        out.write(f"{a} = {_fmt(lo)}, {_fmt(hi)}\n")
    for a in AXES:
        out.write(f"res_{a} = {_fmt(cfg.grid.resolution[a])}\n")
    out.write("\n[drones]\n")
    out.write(f"z_c = {_fmt(cfg.z_c)}\n")
    for i, d in enumerate(cfg.drones):
        out.write(f"drone{i} = {', '.join(_fmt(v) for v in (d.x, d.y, d.phi_h, d.phi_v))}\n")
    out.write("\n[camera]\n")
    for f in fields(CameraParams):
        note = _CAMERA_COMMENTS.get(f.name)
        out.write(f"{f.name} = {_fmt(getattr(cfg.camera, f.name))}" + (f"  ; {note}\n" if note else "\n"))
    out.write("\n[controller]\n")
    for f in fields(ControllerParams):
        note = _CONTROLLER_COMMENTS.get(f.name)
        out.write(f"{f.name} = {_fmt(getattr(cfg.controller, f.name))}" + (f"  ; {note}\n" if note else "\n"))
    out.write("\n[simulation]\n")
    for f in fields(ScenarioConfig):
        if f.name in ("grid", "drones", "camera", "controller"):
            continue
        out.write(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n")
    return out.getvalue()


def with_mode(cfg: ScenarioConfig, mode: str) -> ScenarioConfig:
    return replace(cfg, mode=mode)
