"""TOML run configuration: loading, validation, normalization and saving.

Every section maps onto one parameter type. Unknown sections or keys are
rejected, and each value is range checked by the constructor of the type it
feeds, so a bad file fails at load time with the offending ``section.key``.
"""

from __future__ import annotations

import ast
import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
import tomli
import tomli_w

from .cells import BiologyParams
from .poro import MechParams
from .sparse import LinearSolverConfig
from .stimulus import StimulusParams
from .stokes import InterfaceParams

RUN_MODES = ("biology-only", "mechanics-only", "coupled", "fallback")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class RunPlan:
    dt: float = 0.1
    n_steps: int = 300
    mode: str = "biology-only"
    n_mech: int = 1             # biology steps per mechanics solve; 0 freezes the first one
    output_stride: int = 100    # VTK snapshot cadence
    checkpoint_stride: int = 0  # 0 disables checkpoints
    mech_mode: str = "quasi-static"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.mode not in RUN_MODES:
            raise ValueError(f"mode must be one of {RUN_MODES}, got {self.mode!r}")
        if self.n_mech < 0:
            raise ValueError("n_mech must be >= 0")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")
        if self.checkpoint_stride < 0:
            raise ValueError("checkpoint_stride must be >= 0")
        if self.mech_mode not in ("quasi-static", "dynamic"):
            raise ValueError(f"unknown mech_mode {self.mech_mode!r}")


@dataclass(frozen=True)
class MeshSpec:
    geometry: str = "channel-over-porous"
    nx: int = 16
    ny: int = 8
    ny_fluid: int = 8
    length: float = 2.0
    height: float = 1.0
    fluid_height: float = 1.0
    file: str = ""  # Gmsh file, relative to the config file; overrides the generator

    def __post_init__(self):
        from .mesh import GEOMETRIES
        if not self.file and self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.nx < 1 or self.ny < 1 or self.ny_fluid < 1:
            raise ValueError("cell counts must be >= 1")
        if not (self.length > 0 and self.height > 0 and self.fluid_height > 0):
            raise ValueError("lengths must be > 0")


@dataclass(frozen=True)
class InitialSpec:
    c1: str = "0.5 * exp(-min(x, L - x, y) / 0.1)"
    c2: str = "0"
    h: str = "1"
    k: str = "0"

    def __post_init__(self):
        for name in ("c1", "c2", "h", "k"):
            compile_expression(getattr(self, name))


@dataclass(frozen=True)
class SolverSpec:
    method: str = "direct-LU"
    rtol: float = 1e-10
    max_iter: int = 10_000
    preconditioner: str = "none"
    newton_tol: float = 1e-10
    newton_max_it: int = 25

    def __post_init__(self):
        self.linear()
        if not self.newton_tol > 0 or self.newton_max_it < 1:
            raise ValueError("newton_tol must be > 0 and newton_max_it >= 1")

    def linear(self) -> LinearSolverConfig:
        return LinearSolverConfig(self.method, self.rtol, self.max_iter, self.preconditioner)


SECTIONS: dict[str, type] = {
    "biology": BiologyParams,
    "mechanics": MechParams,
    "stimulus": StimulusParams,
    "interface": InterfaceParams,
    "run": RunPlan,
    "mesh": MeshSpec,
    "initial": InitialSpec,
    "solver": SolverSpec,
}


@dataclass(frozen=True)
class Config:
    biology: BiologyParams = field(default_factory=BiologyParams)
    mechanics: MechParams = field(default_factory=MechParams)
    stimulus: StimulusParams = field(default_factory=StimulusParams)
    interface: InterfaceParams = field(default_factory=InterfaceParams)
    run: RunPlan = field(default_factory=RunPlan)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    base_dir: Path = field(default=Path("."), compare=False)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        out = {}
        for name in SECTIONS:
            sec = {}
            for key, value in asdict(getattr(self, name)).items():
                if value is None:
                    continue  # TOML has no null; absent means default
                sec[key] = list(value) if isinstance(value, tuple) else value
            out[name] = sec
        return out

    def override(self, section: str, **values) -> "Config":
        data = self.to_dict()
        data[section].update(values)
        return from_dict(data, base_dir=self.base_dir)

    def digest(self, exclude=("run.n_steps", "run.output_stride", "run.checkpoint_stride")) -> str:
        """Hash of the physics-relevant settings (used to guard restarts)."""
        data = self.to_dict()
        for item in exclude:
            sec, key = item.split(".")
            data[sec].pop(key, None)
        return hashlib.sha256(tomli_w.dumps(data).encode()).hexdigest()


def _coerce(cls, key, value, section):
    ftype = {f.name: f.type for f in fields(cls)}[key]
    where = f"{section}.{key}"
    text = str(ftype)
    if isinstance(value, bool) and "bool" not in text:
        raise ConfigError(f"{where}: expected a number, got a boolean", where)
    if text in ("float",) and isinstance(value, int):
        return float(value)
    if "tuple" in text and isinstance(value, list):
        return tuple(float(v) for v in value)
    if text == "int" and isinstance(value, float):
        if not value.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {value}", where)
        return int(value)
    return value


def from_dict(data: dict, base_dir: Path | str = ".") -> Config:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        bad = sorted(unknown)[0]
        raise ConfigError(f"unknown section [{bad}]; expected one of {list(SECTIONS)}", bad)
    parts = {}
    for name, cls in SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{name}] must be a table", name)
        allowed = {f.name for f in fields(cls)}
        extra = set(raw) - allowed
        if extra:
            key = f"{name}.{sorted(extra)[0]}"
            raise ConfigError(f"unknown key {key}", key)
        kwargs = {k: _coerce(cls, k, v, name) for k, v in raw.items()}
        try:
            parts[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            key = _guess_key(str(exc), name, raw)
            raise ConfigError(f"{key}: {exc}", key) from None
    return Config(**parts, base_dir=Path(base_dir))


def _guess_key(message: str, section: str, raw: dict) -> str:
    words = message.replace(",", " ").replace(":", " ").split()
    for word in words:
        if word in raw:
            return f"{section}.{word}"
    for word in words:
        if any(word == f.name for f in fields(SECTIONS[section])):
            return f"{section}.{word}"
    return section


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return loads(text, base_dir=path.parent, source=str(path))


def loads(text: str, base_dir: Path | str = ".", source: str = "<string>") -> Config:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        # the decoder message ends with "(at line N, column M)"
        raise ConfigError(f"{source}: parse error: {exc}") from None
    return from_dict(data, base_dir=base_dir)


def dumps(config: Config) -> str:
    return tomli_w.dumps(config.to_dict())


def save_config(config: Config, path: str | Path) -> None:
    Path(path).write_text(dumps(config))


def default_config_text() -> str:
    return resources.files("meniscus.data").joinpath("defaults.toml").read_text()


def default_config() -> Config:
    return loads(default_config_text(), source="defaults.toml")


# --------------------------------------------------------------------------
# initial-condition expressions

_FUNCS: dict[str, Callable] = {
    "exp": np.exp, "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "sqrt": np.sqrt,
    "abs": np.abs, "log": np.log,
    "min": lambda *a: np.minimum.reduce(np.broadcast_arrays(*a)),
    "max": lambda *a: np.maximum.reduce(np.broadcast_arrays(*a)),
}
_CONSTS = {"pi": math.pi, "e": math.e}
_VARS = ("x", "y", "L", "H")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}
_CMPOPS = {ast.Lt: np.less, ast.LtE: np.less_equal, ast.Gt: np.greater,
           ast.GtE: np.greater_equal}


def compile_expression(text: str) -> Callable[..., np.ndarray]:
    """Compile an arithmetic expression in ``x, y, L, H`` to a numpy function.

    Supports ``+ - * / **``, comparisons (true is 1.0), the functions in
    ``_FUNCS`` and the constants ``pi`` and ``e``. Nothing else parses.
    """
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"bad expression {text!r}: {exc.msg}") from None

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda env: v
        if isinstance(node, ast.Name):
            if node.id in _VARS:
                return lambda env, n=node.id: env[n]
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda env: v
            raise ValueError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = build(node.operand)
            sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
            return lambda env: sign * inner(env)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, a, b = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda env: op(a(env), b(env))
        if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPOPS:
            op, a, b = _CMPOPS[type(node.ops[0])], build(node.left), build(node.comparators[0])
            return lambda env: op(a(env), b(env)).astype(float)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and not node.keywords:
            fn, args = _FUNCS[node.func.id], [build(a) for a in node.args]
            if not args:
                raise ValueError(f"{node.func.id}() needs arguments")
            return lambda env: fn(*(a(env) for a in args))
        raise ValueError(f"unsupported syntax in expression {text!r}")

    body = build(tree)

    def evaluate(points, L: float = 1.0, H: float = 1.0) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        env = {"x": pts[:, 0], "y": pts[:, 1], "L": L, "H": H}
        return np.broadcast_to(np.asarray(body(env), dtype=float), (len(pts),)).copy()

    return evaluate
