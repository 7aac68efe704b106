"""Experiment configuration: a flat INI-like text format.

    # comment
    [geometry]
    shape = csg_difference(circle(0, 0, 0.9), circle(0.55, 0, 0.75))
    box = -pi/3, pi/3, -pi/3, pi/3

    [potential]
    kind = gaussian-obstacle
    params = 4, -0.35, 0

    [model]
    kind = cubic
    beta = 10

    [discretization]
    resolutions = pi/90, pi/120, pi/180

Numbers may be arithmetic expressions in `pi`. Shapes are nested calls of
circle, ellipse, rectangle, lshape, halfplane, csg_difference and
csg_intersection. A custom potential is an arithmetic expression in x and y
using sin, cos, exp, sqrt. Errors carry the line and column of the offending
text.
"""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, replace

import numpy as np

from .flow import MODEL_KINDS, FlowConfig, ModelSpec
from .geometry import (Circle, CSGDifference, CSGIntersection, Ellipse, GeometryError, Grid2D,
                       HalfPlane, LShape, Rectangle, Shape, build_level_set, classify)
from .linalg import SolverConfig
from .operators import POTENTIAL_KINDS, Potential


class ConfigError(ValueError):
    def __init__(self, msg, line=None, col=None):
        where = "" if line is None else f"line {line}, column {col}: "
        super().__init__(where + msg)
        self.line, self.col = line, col


# ---------------------------------------------------------------------------
# restricted expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}
_CONSTS = {"pi": math.pi}


class _ExprError(ValueError):
    def __init__(self, msg, node=None, col=None):
        super().__init__(msg)
        self.col = col if col is not None else getattr(node, "col_offset", 0)


def _parse(text):
    try:
        return ast.parse(text.strip(), mode="eval").body
    except SyntaxError as exc:
        raise _ExprError(f"malformed expression: {exc.msg}",
                         col=max(0, (exc.offset or 1) - 1)) from None


def _arith(node, env):
    """Evaluate +, -, *, /, ** over numbers, named constants and `env`."""
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise _ExprError(f"unknown name {node.id!r}", node)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_arith(node.left, env), _arith(node.right, env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        return _UNOPS[type(node.op)](_arith(node.operand, env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise _ExprError(f"{node.func.id} takes one argument", node)
        return _FUNCS[node.func.id](_arith(node.args[0], env))
    raise _ExprError(f"unsupported syntax {type(node).__name__}", node)


def eval_number(text: str) -> float:
    """Arithmetic over numbers and pi."""
    return float(_arith(_parse(text), {}))


def compile_expression(text: str):
    """Restricted arithmetic expression in x, y -> vectorised callable."""
    tree = _parse(text)
    probe = {"x": np.float64(0.3), "y": np.float64(-0.2)}
    with np.errstate(all="ignore"):
        _arith(tree, probe)  # validates the syntax up front

    def fn(x, y):
        return _arith(tree, {"x": np.asarray(x, float), "y": np.asarray(y, float)})

    return fn


_SHAPES = {
    "circle": (Circle, 3, 3),
    "ellipse": (Ellipse, 2, 4),
    "rectangle": (Rectangle, 4, 4),
    "halfplane": (HalfPlane, 3, 3),
}


def _shape(node) -> Shape:
    if not (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)) or node.keywords:
        raise _ExprError("expected a shape call such as circle(0, 0, 1)", node)
    name = node.func.id
    args = node.args
    if name in ("csg_difference", "csg_intersection"):
        if len(args) != 2:
            raise _ExprError(f"{name} takes two shapes", node)
        cls = CSGDifference if name == "csg_difference" else CSGIntersection
        return cls(_shape(args[0]), _shape(args[1]))
    if name == "lshape":
        if len(args) != 8:
            raise _ExprError("lshape takes 8 numbers: outer x0 y0 x1 y1, removed x0 y0 x1 y1", node)
        v = [_arith(a, {}) for a in args]
        try:
            return LShape(tuple(v[:4]), tuple(v[4:]))
        except GeometryError as exc:
            raise _ExprError(str(exc), node) from None
    if name not in _SHAPES:
        raise _ExprError(f"unknown shape {name!r}", node)
    cls, lo, hi = _SHAPES[name]
    if not lo <= len(args) <= hi:
        raise _ExprError(f"{name} takes {lo}" + (f" to {hi}" if hi > lo else "") + " arguments",
                         node)
    try:
        return cls(*(_arith(a, {}) for a in args))
    except GeometryError as exc:
        raise _ExprError(str(exc), node) from None


def parse_shape(text: str) -> Shape:
    return _shape(_parse(text))


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    shape: Shape
    box: tuple[float, float, float, float]
    resolutions: tuple[float, ...]
    model: ModelSpec = ModelSpec()
    potential: Potential = Potential("box")
    dt: float | None = None  # None: dt = h
    tol_phase1: float = 1e-8
    tol_phase2: float = 1e-8
    max_steps: int = 1_000_000
    init: str = "auto"
    continuation_steps: int = 4
    rescale_threshold: float | None = 100.0
    preconditioner: str = "jacobi"
    curvature_cutoff: float | None = None
    reference_mu: float | None = None
    reference_energy: float | None = None
    reference_source: str = "none"  # literature | annotation | none
    rate_reference: str = "self-finest"  # literature | self-finest
    report_scale: float = 1.0
    excited: tuple[int, ...] = ()
    excited_mu: tuple[float, ...] = ()
    markers: tuple[tuple[float, float], ...] = ()
    flags: tuple[str, ...] = ()
    out_dir: str = ""

    def __post_init__(self):
        validate(self)

    def flow_config(self) -> FlowConfig:
        return FlowConfig(dt=self.dt, tol_phase1=self.tol_phase1, tol_phase2=self.tol_phase2,
                          max_steps=self.max_steps, init=self.init,
                          continuation_steps=self.continuation_steps,
                          rescale_threshold=self.rescale_threshold,
                          solver=SolverConfig(preconditioner=self.preconditioner))

    def grid(self, h: float) -> Grid2D:
        return Grid2D.from_box(*self.box, h)

    @property
    def needs_gradients(self) -> bool:
        return self.model.kind == "hoi-split"

    @property
    def output_dir(self) -> str:
        return self.out_dir or f"out/{self.name}"

    def with_tolerance(self, tol: float) -> "ExperimentConfig":
        return replace(self, tol_phase1=tol, tol_phase2=tol)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.model.beta < 0:
        raise ConfigError("beta must be >= 0: the condensate is assumed defocusing")
    hs = cfg.resolutions
    if not hs:
        raise ConfigError("at least one resolution is required")
    if any(h <= 0 for h in hs) or any(a <= b for a, b in zip(hs, hs[1:])):
        raise ConfigError("resolutions must be positive and strictly decreasing")
    x0, x1, y0, y1 = cfg.box
    if not (x1 > x0 and y1 > y0):
        raise ConfigError("box must be given as xmin, xmax, ymin, ymax with positive size")
    if cfg.dt is not None and not cfg.dt > 0:
        raise ConfigError("dt must be positive")
    if cfg.init not in ("auto", "linear", "thomas-fermi", "continuation"):
        raise ConfigError(f"unknown init policy {cfg.init!r}")
    if cfg.rate_reference not in ("literature", "self-finest"):
        raise ConfigError("rate_reference must be 'literature' or 'self-finest'")
    if cfg.reference_source not in ("literature", "annotation", "none"):
        raise ConfigError("reference source must be literature, annotation or none")
    if cfg.rate_reference == "literature" and cfg.reference_mu is None:
        raise ConfigError("rate_reference = literature needs reference mu")
    if len(cfg.excited_mu) not in (0, len(cfg.excited)):
        raise ConfigError("excited_mu must list one value per excited index")
    if any(k < 1 for k in cfg.excited):
        raise ConfigError("excited state indices start at 1")


def check_margin(cfg: ExperimentConfig) -> None:
    """Domain must leave two exterior node rows inside the box at the coarsest h."""
    g = cfg.grid(cfg.resolutions[0])
    try:
        classify(g, build_level_set(g, cfg.shape))
    except GeometryError as exc:
        raise ConfigError(f"{exc} (h = {cfg.resolutions[0]!r})") from None


# (section, key) -> (field, parse, format)


def _floats(text):
    return tuple(eval_number(t) for t in text.split(",") if t.strip())


def _opt_float(text):
    return None if text.strip().lower() in ("none", "") else eval_number(text)


def _fmt_opt(v):
    return "none" if v is None else repr(v)


def _words(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _markers(text):
    out = []
    for part in text.split(";"):
        if part.strip():
            xy = _floats(part)
            if len(xy) != 2:
                raise _ExprError("markers are `x, y` pairs separated by ';'")
            out.append(xy)
    return tuple(out)


def _join(vals):
    return ", ".join(repr(float(v)) for v in vals)


_SCHEMA = {
    ("experiment", "name"): ("name", str.strip, str),
    ("experiment", "flags"): ("flags", _words, ", ".join),
    ("experiment", "out_dir"): ("out_dir", str.strip, str),
    ("experiment", "markers"): ("markers", _markers, lambda m: "; ".join(_join(p) for p in m)),
    ("geometry", "shape"): ("shape", parse_shape, lambda s: s.expr()),
    ("geometry", "box"): ("box", _floats, _join),
    ("geometry", "curvature_cutoff"): ("curvature_cutoff", _opt_float, _fmt_opt),
    ("discretization", "resolutions"): ("resolutions", _floats, _join),
    ("discretization", "dt"): ("dt", lambda t: None if t.strip() == "h" else eval_number(t),
                               lambda v: "h" if v is None else repr(v)),
    ("flow", "tol_phase1"): ("tol_phase1", eval_number, repr),
    ("flow", "tol_phase2"): ("tol_phase2", eval_number, repr),
    ("flow", "max_steps"): ("max_steps", lambda t: int(eval_number(t)), str),
    ("flow", "init"): ("init", str.strip, str),
    ("flow", "continuation_steps"): ("continuation_steps", lambda t: int(eval_number(t)), str),
    ("flow", "rescale_threshold"): ("rescale_threshold", _opt_float, _fmt_opt),
    ("flow", "preconditioner"): ("preconditioner", str.strip, str),
    ("reference", "mu"): ("reference_mu", _opt_float, _fmt_opt),
    ("reference", "energy"): ("reference_energy", _opt_float, _fmt_opt),
    ("reference", "source"): ("reference_source", str.strip, str),
    ("reference", "rate_reference"): ("rate_reference", str.strip, str),
    ("reference", "report_scale"): ("report_scale", eval_number, repr),
    ("excited", "states"): ("excited", lambda t: tuple(int(eval_number(v)) for v in _words(t)),
                            lambda v: ", ".join(map(str, v))),
    ("excited", "mu"): ("excited_mu", _floats, _join),
}
_MODEL_KEYS = ("kind", "beta", "gamma", "delta")
_POTENTIAL_KEYS = ("kind", "params", "expression")
_REQUIRED = (("geometry", "shape"), ("geometry", "box"), ("discretization", "resolutions"))


def parse_config(text: str, name: str = "experiment") -> ExperimentConfig:
    values: dict = {"name": name}
    model = {"kind": "cubic", "beta": 0.0, "gamma": 0.0, "delta": 0.0}
    pot = {"kind": "box", "params": (), "expression": None}
    seen = set()
    section = None
    pos = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno, indent + 1)
            section = stripped[1:-1].strip()
            if section not in {s for s, _ in _SCHEMA} | {"model", "potential"}:
                raise ConfigError(f"unknown section [{section}]", lineno, indent + 2)
            continue
        if "=" not in stripped:
            raise ConfigError("expected `key = value`", lineno, indent + 1)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno, indent + 1)
        key, _, val = stripped.partition("=")
        key = key.strip()
        vcol = indent + len(stripped) - len(val.lstrip()) + 1
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, indent + 1)
        seen.add((section, key))
        pos[(section, key)] = (lineno, vcol)
        try:
            if section == "model":
                if key not in _MODEL_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [model]", lineno, indent + 1)
                model[key] = val.strip() if key == "kind" else eval_number(val)
            elif section == "potential":
                if key not in _POTENTIAL_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [potential]", lineno, indent + 1)
                if key == "kind":
                    pot[key] = val.strip()
                elif key == "params":
                    pot[key] = _floats(val)
                else:
                    compile_expression(val)
                    pot[key] = val.strip()
            else:
                if (section, key) not in _SCHEMA:
                    raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, indent + 1)
                fname, parse, _ = _SCHEMA[(section, key)]
                values[fname] = parse(val)
        except _ExprError as exc:
            raise ConfigError(str(exc), lineno, vcol + exc.col) from None
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), lineno, vcol) from None
    for sec, key in _REQUIRED:
        if (sec, key) not in seen:
            raise ConfigError(f"missing required field {key!r} in [{sec}]")
    if len(values["box"]) != 4:
        raise ConfigError("box needs four numbers", *pos[("geometry", "box")])

    def at(sec, key):
        return pos.get((sec, key), (None, None))

    if model["kind"] not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {model['kind']!r}", *at("model", "kind"))
    if model["beta"] < 0:
        raise ConfigError("beta must be >= 0: the condensate is assumed defocusing",
                          *at("model", "beta"))
    if pot["kind"] not in POTENTIAL_KINDS:
        raise ConfigError(f"unknown potential kind {pot['kind']!r}", *at("potential", "kind"))
    if pot["kind"] == "custom-expression" and not pot["expression"]:
        raise ConfigError("custom-expression potential needs `expression`")
    try:
        spec = ModelSpec(model["kind"], model["beta"], model["gamma"], model["delta"])
        cfg = ExperimentConfig(model=spec, potential=Potential(pot["kind"], pot["params"],
                                                               pot["expression"]), **values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Full text form with every default written out."""
    by_section: dict[str, list[str]] = {}
    for (sec, key), (fname, _, fmt) in _SCHEMA.items():
        by_section.setdefault(sec, []).append(f"{key} = {fmt(getattr(cfg, fname))}")
    m, p = cfg.model, cfg.potential
    by_section["model"] = [f"kind = {m.kind}", f"beta = {m.beta!r}", f"gamma = {m.gamma!r}",
                           f"delta = {m.delta!r}"]
    by_section["potential"] = [f"kind = {p.kind}", f"params = {_join(p.params)}"]
    if p.expression is not None:
        by_section["potential"].append(f"expression = {p.expression}")
    order = ("experiment", "geometry", "potential", "model", "discretization", "flow",
             "reference", "excited")
    out = []
    for sec in order:
        out.append(f"[{sec}]")
        out.extend(by_section[sec])
        out.append("")
    return "\n".join(out)


def load_config(path) -> ExperimentConfig:
    from pathlib import Path
    p = Path(path)
    return parse_config(p.read_text(), name=p.stem)

