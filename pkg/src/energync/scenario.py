"""Scenario documents: INI-style text describing sources, nodes, flows and a path.

Function values use a small constructor grammar::

    affine(rho, sigma)   ratelatency(R, T)   exp(a, theta)   zero   pwl[(t, v), ...]

Arguments are arithmetic expressions (``e``, ``pi``, ``exp()``, ``log()``,
``sqrt()`` and ``**`` are available), so ``exp(e**-2, 1)`` is ``e^{-(x+2)}``.
Generators are written as calls with keyword arguments, e.g.
``cpoisson(lam=2, mean_jump=1)``.
"""

from __future__ import annotations

import ast
import configparser
import math
import operator
import re
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

from .curves import (
    BoundingFn,
    Curve,
    Grid,
    PiecewiseFn,
    affine,
    exponential,
    pwl,
    rate_latency,
    zero,
)
from .energy import PowerRate, SecModel, SedModel, combine_sources, combine_sources_independent
from .errors import ClassViolation, InvalidSpec, ParseError, SemanticError
from .service import SERVICE_KINDS, ArrivalModel, ServiceModel
from .sim import GeneratorSpec

# -- expression and literal grammar -------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_NAMES = {"e": math.e, "pi": math.pi, "inf": math.inf}
_FUNCS = {"exp": math.exp, "log": math.log, "sqrt": math.sqrt}


def _number(node: ast.AST) -> float:
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_number(node.operand))
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return float(_BINOPS[type(node.op)](_number(node.left), _number(node.right)))
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
            and len(node.args) == 1 and not node.keywords):
        return _FUNCS[node.func.id](_number(node.args[0]))
    raise ValueError(f"not an arithmetic expression: {ast.unparse(node)}")


def eval_number(text: str) -> float:
    try:
        return _number(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"bad number {text!r}: {exc}") from None


_ARITY = {"affine": 2, "ratelatency": 2, "exp": 2}


def parse_function(text: str, grid: Grid) -> PiecewiseFn:
    """Sample a function literal onto ``grid``; raises ``ValueError`` on bad syntax."""
    try:
        node = ast.parse(text.strip(), mode="eval").body
    except SyntaxError:
        raise ValueError(f"bad function literal {text!r}") from None
    if isinstance(node, ast.Name) and node.id == "zero":
        return zero(grid.step)
    if isinstance(node, ast.Subscript) and isinstance(node.value, ast.Name) and node.value.id == "pwl":
        items = node.slice.elts if isinstance(node.slice, ast.Tuple) else [node.slice]
        points = []
        for item in items:
            if not (isinstance(item, ast.Tuple) and len(item.elts) == 2):
                raise ValueError(f"pwl points must be (t, v) pairs in {text!r}")
            points.append((_number(item.elts[0]), _number(item.elts[1])))
        if not points or points[0][0] != 0:
            raise ValueError(f"pwl must start at t = 0 in {text!r}")
        return pwl(points, grid_step=grid.step)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _ARITY:
        name = node.func.id
        if node.keywords or len(node.args) != _ARITY[name]:
            raise ValueError(f"{name} takes {_ARITY[name]} positional arguments")
        a, b = (_number(arg) for arg in node.args)
        if name == "affine":
            return affine(a, b, grid)
        if name == "ratelatency":
            return rate_latency(a, b, grid)
        return exponential(a, b, grid)
    raise ValueError(f"unknown function literal {text!r}")


def parse_generator(text: str) -> GeneratorSpec:
    try:
        node = ast.parse(text.strip(), mode="eval").body
    except SyntaxError:
        raise ValueError(f"bad generator {text!r}") from None
    if not (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)) or node.args:
        raise ValueError(f"generator must look like kind(key=value, ...), got {text!r}")
    params = {}
    for kw in node.keywords:
        if isinstance(kw.value, ast.Name) and kw.value.id not in _NAMES:
            params[kw.arg] = kw.value.id
        else:
            params[kw.arg] = _number(kw.value)
    return GeneratorSpec(node.func.id, params)


def format_generator(spec: GeneratorSpec) -> str:
    args = ", ".join(f"{k}={v if isinstance(v, str) else repr(float(v))}" for k, v in spec.params.items())
    return f"{spec.kind}({args})"


def _float_list(text: str) -> tuple[float, ...]:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (eval_number(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"empty range {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9))
        return tuple(round(start + i * step, 12) for i in range(n + 1))
    return tuple(eval_number(p) for p in text.split(",") if p.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(n.strip() for n in text.split(",") if n.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(v: float) -> str:
    return repr(float(v))


# -- scenario model ------------------------------------------------------------

DEFAULT_X = tuple(round(0.25 * i, 12) for i in range(21))


@dataclass(frozen=True)
class AnalysisSpec:
    grid_step: float = 1e-3
    horizon: float = 20.0
    x_grid: tuple[float, ...] = DEFAULT_X
    replications: int = 10_000
    seed: int = 42
    t_samples: tuple[float, ...] = (0.25, 0.5, 1.0)
    sim_step: float = 1e-2
    drain: float = 0.5

    def __post_init__(self):
        if not (self.grid_step > 0 and self.horizon > 0 and self.sim_step > 0):
            raise ValueError("grid_step, horizon and sim_step must be positive")
        if self.horizon / self.grid_step > 1e6:
            raise ValueError("analysis grid would exceed 10^6 points")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.x_grid:
            raise ValueError("x_grid must not be empty")
        if any(not 0 < t <= 1 for t in self.t_samples) or not self.t_samples:
            raise ValueError("t_samples are fractions of the horizon in (0, 1]")
        if self.drain < 0:
            raise ValueError("drain must be non-negative")

    @property
    def grid(self) -> Grid:
        return Grid(self.grid_step, self.horizon)


@dataclass(frozen=True)
class SourceDecl:
    name: str
    alpha2: str
    f2: str = "zero"
    alpha1: str = "zero"
    f1: str = "zero"
    generator: GeneratorSpec | None = None


@dataclass(frozen=True)
class DischargeDecl:
    beta1: str
    beta2: str
    g1: str = "zero"
    g2: str = "zero"
    consumption: str = "delivered"


@dataclass(frozen=True)
class FlowDecl:
    name: str
    alpha: str
    f: str = "zero"
    generator: GeneratorSpec | None = None


@dataclass(frozen=True)
class NodeDecl:
    name: str
    beta: str
    sources: tuple[str, ...]
    g: str = "zero"
    kind: str = "sc"
    independent_sources: bool = False
    schedule: str | None = None

    @property
    def schedule_text(self) -> str:
        return self.schedule or self.beta


@dataclass(frozen=True)
class PathDecl:
    nodes: tuple[str, ...]
    flow: str | None = None


@dataclass(frozen=True)
class Scenario:
    analysis: AnalysisSpec
    power: PowerRate
    sources: tuple[SourceDecl, ...]
    nodes: tuple[NodeDecl, ...]
    path: PathDecl
    flows: tuple[FlowDecl, ...] = ()
    discharge: DischargeDecl | None = None
    lines: dict = field(default_factory=dict, compare=False, repr=False)
    _memo: dict = field(default_factory=dict, compare=False, repr=False)

    # lookups

    def source(self, name: str) -> SourceDecl:
        return next(s for s in self.sources if s.name == name)

    def node(self, name: str) -> NodeDecl:
        return next(n for n in self.nodes if n.name == name)

    @property
    def flow(self) -> FlowDecl | None:
        if self.path.flow is None:
            return None
        return next(f for f in self.flows if f.name == self.path.flow)

    @property
    def path_nodes(self) -> list[NodeDecl]:
        return [self.node(n) for n in self.path.nodes]

    # sampled models

    def curve(self, text: str) -> Curve:
        return _sampled(text, self.analysis.grid_step, self.analysis.horizon, Curve)

    def bounding(self, text: str) -> BoundingFn:
        return _sampled(text, self.analysis.grid_step, self.analysis.horizon, BoundingFn)

    def sec(self, src: SourceDecl) -> SecModel:
        return SecModel(self.curve(src.alpha1), self.bounding(src.f1), self.curve(src.alpha2), self.bounding(src.f2))

    def node_sec(self, node: NodeDecl, independent: bool | None = None) -> SecModel:
        indep = node.independent_sources if independent is None else independent
        key = ("sec", node.sources, indep)
        if key not in self._memo:
            models = [self.sec(self.source(s)) for s in node.sources]
            self._memo[key] = combine_sources_independent(models) if indep else combine_sources(models)
        return self._memo[key]

    def sed(self) -> SedModel | None:
        d = self.discharge
        if d is None:
            return None
        return SedModel(self.curve(d.beta1), self.bounding(d.g1), self.curve(d.beta2), self.bounding(d.g2))

    def service(self, node: NodeDecl) -> ServiceModel:
        return ServiceModel(self.curve(node.beta), self.bounding(node.g), node.kind)

    def arrival(self) -> ArrivalModel | None:
        f = self.flow
        return None if f is None else ArrivalModel(self.curve(f.alpha), self.bounding(f.f))

    def with_overrides(self, **analysis) -> "Scenario":
        """Copy with analysis settings replaced (``None`` values are ignored)."""
        changes = {k: v for k, v in analysis.items() if v is not None}
        if not changes:
            return self
        return replace(self, analysis=replace(self.analysis, **changes), _memo={})


@lru_cache(maxsize=256)
def _sampled(text: str, step: float, horizon: float, cls):
    return cls.of(parse_function(text, Grid(step, horizon)))


# -- parsing ---------------------------------------------------------------------

_SECTION_KEYS = {
    "analysis": {f.name for f in fields(AnalysisSpec)},
    "power": {"kind", "coefficient", "table"},
    "source": {"alpha1", "f1", "alpha2", "f2", "generator"},
    "discharge": {"beta1", "g1", "beta2", "g2", "consumption"},
    "flow": {"alpha", "f", "generator"},
    "node": {"beta", "g", "kind", "sources", "independent_sources", "schedule"},
    "path": {"nodes", "flow"},
}
_REQUIRED = {
    "source": ("alpha2",),
    "discharge": ("beta1", "beta2"),
    "flow": ("alpha",),
    "node": ("beta", "sources"),
    "path": ("nodes",),
}


def _line_index(text: str) -> dict:
    """Map ``section`` and ``(section, key)`` to 1-based line numbers."""
    index, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index[section] = no
        elif section and line and line[0] not in "#;" and re.match(r"^[A-Za-z_][\w.]*\s*[=:]", line):
            key = re.split(r"[=:]", line, 1)[0].strip().lower()
            index[(section, key)] = no
    return index


class _Reader:
    """Converts raw section values and raises located errors."""

    def __init__(self, lines: dict):
        self.lines = lines

    def where(self, section: str, key: str | None = None):
        return self.lines.get((section, key), self.lines.get(section))

    def value(self, section, key, raw, conv):
        try:
            return conv(raw)
        except (ValueError, InvalidSpec) as exc:
            raise ParseError(str(exc), self.where(section, key), f"{section}.{key}") from None


def _split(section: str) -> tuple[str, str | None]:
    kind, _, name = section.partition(".")
    return kind, (name or None)


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from None
    lines = _line_index(text)
    rd = _Reader(lines)

    sections: dict[str, list[tuple[str | None, dict]]] = {}
    for sec in cp.sections():
        kind, name = _split(sec)
        if kind not in _SECTION_KEYS:
            raise ParseError(f"unknown section [{sec}]", rd.where(sec))
        named = kind in ("source", "flow", "node")
        if named != (name is not None):
            raise ParseError(f"section [{sec}] {'needs' if named else 'takes no'} a name", rd.where(sec))
        body = dict(cp.items(sec))
        for key in body:
            if key not in _SECTION_KEYS[kind]:
                raise ParseError(f"unknown key {key!r}", rd.where(sec, key), f"{sec}.{key}")
        for key in _REQUIRED.get(kind, ()):
            if key not in body:
                raise ParseError(f"missing key {key!r}", rd.where(sec), f"{sec}.{key}")
        sections.setdefault(kind, []).append((name, body))

    def single(kind):
        items = sections.get(kind, [])
        return items[0][1] if items else None

    # analysis
    body = single("analysis") or {}
    conv = {
        "grid_step": eval_number, "horizon": eval_number, "x_grid": _float_list, "replications": lambda s: int(eval_number(s)),
        "seed": lambda s: int(eval_number(s)), "t_samples": _float_list, "sim_step": eval_number, "drain": eval_number,
    }
    values = {k: rd.value("analysis", k, v, conv[k]) for k, v in body.items()}
    try:
        analysis = AnalysisSpec(**values)
    except ValueError as exc:
        raise SemanticError(str(exc), rd.where("analysis"), "analysis") from None

    # power
    body = single("power") or {}
    kind = body.get("kind", "identity").strip()
    try:
        if kind == "table":
            table = _table_points(body.get("table", ""))
            power = PowerRate.from_table(table)
        else:
            coef = rd.value("power", "coefficient", body.get("coefficient", "1"), eval_number)
            power = PowerRate(kind, coef)
    except ValueError as exc:
        raise SemanticError(str(exc), rd.where("power"), "power") from None

    sources = tuple(
        SourceDecl(
            name, body["alpha2"].strip(), body.get("f2", "zero").strip(), body.get("alpha1", "zero").strip(),
            body.get("f1", "zero").strip(),
            rd.value(f"source.{name}", "generator", body["generator"], parse_generator) if "generator" in body else None,
        )
        for name, body in sections.get("source", [])
    )
    flows = tuple(
        FlowDecl(
            name, body["alpha"].strip(), body.get("f", "zero").strip(),
            rd.value(f"flow.{name}", "generator", body["generator"], parse_generator) if "generator" in body else None,
        )
        for name, body in sections.get("flow", [])
    )
    nodes = tuple(
        NodeDecl(
            name, body["beta"].strip(), _names(body["sources"]), body.get("g", "zero").strip(),
            body.get("kind", "sc").strip(),
            rd.value(f"node.{name}", "independent_sources", body.get("independent_sources", "false"), _bool),
            body["schedule"].strip() if "schedule" in body else None,
        )
        for name, body in sections.get("node", [])
    )
    body = single("discharge")
    discharge = None
    if body is not None:
        discharge = DischargeDecl(
            body["beta1"].strip(), body["beta2"].strip(), body.get("g1", "zero").strip(),
            body.get("g2", "zero").strip(), body.get("consumption", "delivered").strip(),
        )
    body = single("path")
    if body is None:
        raise SemanticError("scenario needs exactly one [path] section")
    flow_name = body.get("flow", "").strip() or None
    if flow_name is None and len(flows) == 1:
        flow_name = flows[0].name
    path = PathDecl(_names(body["nodes"]), flow_name)

    scenario = Scenario(analysis, power, sources, nodes, path, flows, discharge, lines)
    check_scenario(scenario)
    return scenario


def _table_points(text: str):
    text = text.strip()
    if text.startswith("pwl"):
        text = text[3:]
    try:
        node = ast.parse(text, mode="eval").body
        items = node.elts if isinstance(node, (ast.List, ast.Tuple)) else [node]
        return [(_number(i.elts[0]), _number(i.elts[1])) for i in items]
    except (SyntaxError, AttributeError, IndexError):
        raise ValueError(f"power table must be a list of (rate, power) pairs, got {text!r}") from None


def check_scenario(sc: Scenario) -> None:
    """Resolve references and sample every literal; raise ``SemanticError`` on failure."""
    where = sc.lines.get

    def fail(msg, section, key=None):
        raise SemanticError(msg, where((section, key)) or where(section), f"{section}.{key}" if key else section)

    def sample(section, key, text, cls):
        try:
            return (sc.curve if cls is Curve else sc.bounding)(text)
        except ClassViolation as exc:
            fail(f"{key} = {text}: {exc}", section, key)
        except ValueError as exc:
            raise ParseError(str(exc), where((section, key)), f"{section}.{key}") from None

    names = [s.name for s in sc.sources] + [f.name for f in sc.flows] + [n.name for n in sc.nodes]
    for src in sc.sources:
        sec = f"source.{src.name}"
        for key, cls in (("alpha1", Curve), ("f1", BoundingFn), ("alpha2", Curve), ("f2", BoundingFn)):
            sample(sec, key, getattr(src, key), cls)
        try:
            sc.sec(src)
        except ClassViolation as exc:
            fail(str(exc), sec)
    for fl in sc.flows:
        sample(f"flow.{fl.name}", "alpha", fl.alpha, Curve)
        sample(f"flow.{fl.name}", "f", fl.f, BoundingFn)
    if sc.discharge is not None:
        d = sc.discharge
        for key, cls in (("beta1", Curve), ("g1", BoundingFn), ("beta2", Curve), ("g2", BoundingFn)):
            sample("discharge", key, getattr(d, key), cls)
        if d.consumption not in ("delivered", "schedule"):
            fail("consumption must be delivered or schedule", "discharge", "consumption")
        try:
            sc.sed()
        except ClassViolation as exc:
            fail(str(exc), "discharge")
    for node in sc.nodes:
        sec = f"node.{node.name}"
        if node.kind not in SERVICE_KINDS:
            fail(f"kind must be one of {SERVICE_KINDS}", sec, "kind")
        if not node.sources:
            fail("node needs at least one source", sec, "sources")
        for s in node.sources:
            if s not in {src.name for src in sc.sources}:
                fail(f"unknown source {s!r}", sec, "sources")
        sample(sec, "beta", node.beta, Curve)
        sample(sec, "g", node.g, BoundingFn)
        sample(sec, "schedule", node.schedule_text, Curve)
    if len(set(names)) != len(names):
        fail("source, flow and node names must be unique", "path")
    if not sc.path.nodes:
        fail("path needs at least one node", "path", "nodes")
    for n in sc.path.nodes:
        if n not in {node.name for node in sc.nodes}:
            fail(f"unknown node {n!r}", "path", "nodes")
    if len(set(sc.path.nodes)) != len(sc.path.nodes):
        fail("a node may appear only once on the path", "path", "nodes")
    if sc.path.flow is not None and sc.path.flow not in {f.name for f in sc.flows}:
        fail(f"unknown flow {sc.path.flow!r}", "path", "flow")


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# -- serialisation ------------------------------------------------------------


def serialize_scenario(sc: Scenario) -> str:
    a = sc.analysis
    out = ["[analysis]"]
    for f in fields(AnalysisSpec):
        v = getattr(a, f.name)
        out.append(f"{f.name} = {', '.join(_fmt(x) for x in v) if isinstance(v, tuple) else (v if isinstance(v, int) else _fmt(v))}")
    out += ["", "[power]", f"kind = {sc.power.kind}"]
    if sc.power.kind == "table":
        out.append("table = " + ", ".join(f"({_fmt(r)}, {_fmt(p)})" for r, p in sc.power.table))
    else:
        out.append(f"coefficient = {_fmt(sc.power.coefficient)}")
    for src in sc.sources:
        out += ["", f"[source.{src.name}]", f"alpha1 = {src.alpha1}", f"f1 = {src.f1}",
                f"alpha2 = {src.alpha2}", f"f2 = {src.f2}"]
        if src.generator is not None:
            out.append(f"generator = {format_generator(src.generator)}")
    if sc.discharge is not None:
        d = sc.discharge
        out += ["", "[discharge]", f"beta1 = {d.beta1}", f"g1 = {d.g1}", f"beta2 = {d.beta2}", f"g2 = {d.g2}",
                f"consumption = {d.consumption}"]
    for fl in sc.flows:
        out += ["", f"[flow.{fl.name}]", f"alpha = {fl.alpha}", f"f = {fl.f}"]
        if fl.generator is not None:
            out.append(f"generator = {format_generator(fl.generator)}")
    for node in sc.nodes:
        out += ["", f"[node.{node.name}]", f"kind = {node.kind}", f"beta = {node.beta}", f"g = {node.g}",
                f"sources = {', '.join(node.sources)}", f"independent_sources = {str(node.independent_sources).lower()}"]
        if node.schedule is not None:
            out.append(f"schedule = {node.schedule}")
    out += ["", "[path]", f"nodes = {', '.join(sc.path.nodes)}"]
    if sc.path.flow is not None:
        out.append(f"flow = {sc.path.flow}")
    return "\n".join(out) + "\n"

