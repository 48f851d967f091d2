"""Scenario files: YAML documents with explicit physical units.

Every physical quantity is a string ``"<number> <unit>"`` (``"0.7 ohm"``,
``"0.9 mH"``, ``"50 kW"``, ``"0.2255 pu"``).  Validation errors carry the
offending field path and, when known, the source line.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Literal

import yaml

from .converter import ConverterControl, ConverterParams, DroopConfig, LCLFilter, Setpoints, VacGains
from .dq import DqVec, PerUnitBase, RLParams, rl_to_admittance
from .network import GridSource, Line, LoadSpec, NetworkModel
from .secondary import GainBounds, WeightConfig, validate_weights


class ScenarioError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path}: " if path else ""
        at = f" (line {line})" if line else ""
        super().__init__(f"{where}{message}{at}")


# unit -> (dimension, factor to SI)
_UNITS: dict[str, tuple[str, float]] = {
    "ohm": ("ohm", 1.0), "Ω": ("ohm", 1.0), "mohm": ("ohm", 1e-3),
    "H": ("H", 1.0), "mH": ("H", 1e-3), "uH": ("H", 1e-6),
    "W": ("W", 1.0), "kW": ("W", 1e3), "MW": ("W", 1e6),
    "var": ("var", 1.0), "kvar": ("var", 1e3), "Mvar": ("var", 1e6),
    "VA": ("VA", 1.0), "kVA": ("VA", 1e3), "MVA": ("VA", 1e6),
    "V": ("V", 1.0), "kV": ("V", 1e3),
    "A": ("A", 1.0),
    "Hz": ("Hz", 1.0),
    "s": ("s", 1.0), "ms": ("s", 1e-3),
    "F": ("F", 1.0), "uF": ("F", 1e-6),
    "pu": ("pu", 1.0), "%": ("pu", 1e-2),
}
_LOAD_KINDS = ("constant_power", "constant_current", "constant_impedance")
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


class _LocDict(dict):
    line: int = 0
    key_lines: dict


class _LocList(list):
    line: int = 0
    item_lines: list


class _Loader(yaml.SafeLoader):
    pass


def _map(loader, node):
    loader.flatten_mapping(node)
    d = _LocDict()
    d.line = node.start_mark.line + 1
    d.key_lines = {}
    for k_node, v_node in node.value:
        k = loader.construct_object(k_node, deep=True)
        d[k] = loader.construct_object(v_node, deep=True)
        d.key_lines[k] = k_node.start_mark.line + 1
    return d


def _seq(loader, node):
    out = _LocList(loader.construct_object(n, deep=True) for n in node.value)
    out.line = node.start_mark.line + 1
    out.item_lines = [n.start_mark.line + 1 for n in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _seq)


class _Ctx:
    """A node of the parsed document plus its dotted path, for diagnostics."""

    def __init__(self, data: Any, path: str, line: int | None):
        self.data = data
        self.path = path
        self.line = line

    def fail(self, msg: str, key: str | None = None):
        path = f"{self.path}.{key}" if key and self.path else (key or self.path)
        line = self.line
        if key is not None and isinstance(self.data, _LocDict):
            line = self.data.key_lines.get(key, line)
        raise ScenarioError(msg, path, line)

    def has(self, key: str) -> bool:
        return isinstance(self.data, dict) and key in self.data

    def sub(self, key: str, required: bool = True, default: Any = None) -> _Ctx:
        if not isinstance(self.data, dict):
            self.fail("expected a mapping")
        if key not in self.data:
            if required:
                self.fail("missing required field", key)
            return _Ctx(default, f"{self.path}.{key}" if self.path else key, self.line)
        v = self.data[key]
        line = self.data.key_lines.get(key, self.line) if isinstance(self.data, _LocDict) else self.line
        return _Ctx(v, f"{self.path}.{key}" if self.path else key, line)

    def items(self):
        if not isinstance(self.data, dict):
            self.fail("expected a mapping")
        for k in self.data:
            yield k, self.sub(k)

    def elements(self):
        if not isinstance(self.data, list):
            self.fail("expected a list")
        lines = getattr(self.data, "item_lines", [self.line] * len(self.data))
        for i, v in enumerate(self.data):
            yield _Ctx(v, f"{self.path}[{i}]", lines[i])

    def qty(self, dim: str, key: str | None = None, default: float | None = None) -> float:
        c = self.sub(key, default is None) if key else self
        if c.data is None:
            return float(default)  # type: ignore[arg-type]
        raw = c.data
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            if dim == "1":
                return float(raw)
            c.fail(f"missing unit, expected a quantity in {dim}")
        if not isinstance(raw, str):
            c.fail(f"expected a quantity in {dim}, got {raw!r}")
        m = _QTY.match(raw)
        if not m:
            c.fail(f"cannot parse quantity {raw!r}")
        val, unit = float(m.group(1)), m.group(2)
        if dim == "1":
            if unit:
                c.fail(f"expected a plain number, got unit {unit!r}")
            return val
        if unit not in _UNITS:
            c.fail(f"unknown unit {unit!r}")
        udim, fac = _UNITS[unit]
        if udim != dim:
            c.fail(f"unit {unit!r} is not a {dim} quantity")
        out = val * fac
        if not math.isfinite(out):
            c.fail("quantity must be finite")
        return out

    def num(self, key: str | None = None, default: float | None = None) -> float:
        return self.qty("1", key, default)

    def text(self, key: str, default: str | None = None, choices: tuple[str, ...] | None = None) -> str:
        c = self.sub(key, default is None, default)
        if not isinstance(c.data, str):
            c.fail("expected a string")
        if choices and c.data not in choices:
            c.fail(f"must be one of {', '.join(choices)}")
        return c.data

    def flag(self, key: str, default: bool) -> bool:
        c = self.sub(key, False, default)
        if not isinstance(c.data, bool):
            c.fail("expected true/false")
        return c.data


@dataclass(frozen=True)
class SecondaryConfig:
    enabled: bool = True
    period: float = 4.0
    first_at: float = 4.0
    comm_delay: float = 0.1
    eps_fix: float = 1e-4
    max_updates: int = 20
    seed_grid: int = 50


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_end: float = 10.0
    mode: Literal["quasi_static", "rms_dynamic"] = "quasi_static"
    vac_model: Literal["quasi_static", "dynamic"] = "quasi_static"
    log_every: int = 1
    solver_tol_pu: float = 1e-9


@dataclass(frozen=True)
class ConverterSpec:
    id: str
    node: str
    params: ConverterParams
    setpoints: Setpoints
    gains: VacGains
    vac_enabled: bool = True
    droop: DroopConfig | None = None

    def control(self, gains: VacGains | None = None, vac_enabled: bool | None = None) -> ConverterControl:
        return ConverterControl(
            self.params, self.setpoints, gains or self.gains,
            self.vac_enabled if vac_enabled is None else vac_enabled, self.droop,
        )


EventKind = Literal["load_step", "grid_voltage_step", "enable_vac", "disable_vac", "set_weights", "set_setpoint"]


@dataclass(frozen=True)
class Event:
    at: float
    kind: EventKind
    node: str | None = None
    dp: float = 0.0
    dq: float = 0.0
    fraction: float = 0.0
    converter: str | None = None
    weights: WeightConfig | None = None
    p: float | None = None
    q: float | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    network: NetworkModel
    converters: tuple[ConverterSpec, ...]
    weights: WeightConfig
    bounds: GainBounds
    secondary: SecondaryConfig = SecondaryConfig()
    sim: SimConfig = SimConfig()
    events: tuple[Event, ...] = ()
    seed: int = 0

    @property
    def base(self) -> PerUnitBase:
        return self.network.base

    def converter(self, cid: str) -> ConverterSpec:
        for c in self.converters:
            if c.id == cid:
                return c
        raise KeyError(cid)

    @property
    def params(self) -> dict[str, ConverterParams]:
        return {c.id: c.params for c in self.converters}

    def with_weights(self, w: WeightConfig) -> Scenario:
        return replace(self, weights=w)

    def with_events(self, events) -> Scenario:
        return replace(self, events=tuple(sorted(events, key=lambda e: e.at)))


def _weights(c: _Ctx, nodes, dgs, dg_nodes) -> WeightConfig:
    if c.has("uniform_a"):
        a0 = c.num("uniform_a")
        a = {n: a0 for n in nodes}
        b = {dg: 1.0 - a0 for dg in dgs}
    else:
        a = {str(k): v.num() for k, v in c.sub("a").items()}
        if c.has("b"):
            b = {str(k): v.num() for k, v in c.sub("b").items()}
        else:
            b = {dg: 1.0 - a.get(dg_nodes[dg], 1.0) for dg in dgs}
    for k in a:
        if k not in nodes:
            c.sub("a").fail(f"unknown node {k!r}", k)
    for k in b:
        if k not in dgs:
            c.sub("b").fail(f"unknown converter {k!r}", k)
    return WeightConfig(a, b)


def _converter(cid: str, c: _Ctx, nodes) -> ConverterSpec:
    node = c.text("node")
    if node not in nodes:
        c.fail(f"unknown node {node!r}", "node")
    kw: dict[str, Any] = {}
    for key, dim, name in (
        ("s_n", "VA", "s_n"), ("v_ll", "V", "v_ll"), ("u_dc", "V", "u_dc"),
        ("i_max", "A", "i_max"), ("p_max", "W", "p_max"), ("f_n", "Hz", "f_n"),
    ):
        if c.has(key):
            kw[name] = c.qty(dim, key)
    if c.has("id_limit"):
        kw["id_limit"] = c.text("id_limit", choices=("literal", "ac_power"))
    if c.has("filter"):
        f = c.sub("filter")
        kw["lcl"] = LCLFilter(
            r_f1=f.qty("ohm", "r_f1"), l_f1=f.qty("H", "l_f1"),
            r_f2=f.qty("ohm", "r_f2"), l_f2=f.qty("H", "l_f2"),
            c_f=f.qty("F", "c_f", LCLFilter().c_f),
        )
    for key, dim in (("t_f1", "s"), ("t_f2", "s")):
        if c.has(key):
            kw[key] = c.qty(dim, key)
    for key in ("kp_pll", "ki_pll", "kp_i", "ki_i"):
        if c.has(key):
            kw[key] = c.num(key)
    try:
        params = ConverterParams(**kw)
    except ValueError as exc:
        c.fail(str(exc))
    v_nom = params.v_nom
    sp = Setpoints(
        c.qty("W", "p", 0.0), c.qty("var", "q", 0.0),
        DqVec(c.qty("pu", "v_ref", 1.0) * v_nom, 0.0),
    )
    gains = VacGains(c.qty("pu", "r_v", 0.2255), c.qty("pu", "l_v", 0.0032))
    if gains.r_v < 0 or gains.l_v < 0 or (gains.r_v == 0 and gains.l_v == 0):
        c.fail("virtual impedance must be non-negative and non-zero", "r_v")
    droop = None
    if c.has("droop"):
        d = c.sub("droop")
        droop = DroopConfig(
            kind=d.text("kind", choices=("QV", "PV_QV")),
            k_q=d.num("k_q", 0.0), k_p=d.num("k_p", 0.0),
            deadband=d.qty("V", "deadband", 0.0), v_nom=v_nom,
            limit=d.qty("W", "limit", params.s_n),
        )
    return ConverterSpec(cid, node, params, sp, gains, c.flag("vac", True), droop)


def _event(c: _Ctx, nodes, dgs, dg_nodes) -> Event:
    at = c.qty("s", "at")
    if at < 0:
        c.fail("event time must be >= 0", "at")
    kind = c.text("type", choices=("load_step", "grid_voltage_step", "enable_vac", "disable_vac", "set_weights", "set_setpoint"))
    if kind == "load_step":
        node = c.text("node")
        if node not in nodes:
            c.fail(f"unknown node {node!r}", "node")
        return Event(at, kind, node=node, dp=c.qty("W", "dp", 0.0), dq=c.qty("var", "dq", 0.0))
    if kind == "grid_voltage_step":
        return Event(at, kind, fraction=c.qty("pu", "fraction"))
    if kind in ("enable_vac", "disable_vac", "set_setpoint"):
        cid = c.text("converter")
        if cid not in dgs:
            c.fail(f"unknown converter {cid!r}", "converter")
        if kind == "set_setpoint":
            return Event(at, kind, converter=cid, p=c.qty("W", "p", None) if c.has("p") else None,
                         q=c.qty("var", "q", None) if c.has("q") else None)
        return Event(at, kind, converter=cid)
    return Event(at, kind, weights=_weights(c.sub("weights"), nodes, dgs, dg_nodes))


def parse_scenario(text: str, name: str = "<scenario>") -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", "", mark.line + 1 if mark else None) from None
    root = _Ctx(doc, "", 1)
    if not isinstance(doc, dict):
        root.fail("scenario must be a mapping")

    b = root.sub("base", False, {})
    base = PerUnitBase(
        b.qty("VA", "s_base", 75e3) if b.data else 75e3,
        b.qty("V", "v_ll", 400.0) if b.data else 400.0,
        b.qty("Hz", "f_n", 50.0) if b.data else 50.0,
    )
    omega = base.omega_n

    nodes_c = root.sub("nodes")
    nodes = []
    for e in nodes_c.elements():
        if not isinstance(e.data, str):
            e.fail("node ids must be strings")
        if e.data in nodes:
            e.fail(f"duplicate node {e.data!r}")
        nodes.append(e.data)

    def adm(c: _Ctx):
        r, l = c.qty("ohm", "r"), c.qty("H", "l")
        if r < 0 or l < 0:
            c.fail("impedance must be non-negative", "r")
        try:
            return rl_to_admittance(RLParams(r, l), omega)
        except ZeroDivisionError:
            c.fail("zero impedance", "r")

    g = root.sub("grid")
    gnode = g.text("node")
    if gnode not in nodes:
        g.fail(f"unknown node {gnode!r}", "node")
    source = GridSource(gnode, DqVec(g.qty("pu", "voltage", 1.0) * base.v_peak, 0.0), adm(g))

    lines = []
    for e in root.sub("lines").elements():
        f, t = e.text("from"), e.text("to")
        for k, nd in (("from", f), ("to", t)):
            if nd not in nodes:
                e.fail(f"unknown node {nd!r}", k)
        lines.append(Line(f, t, adm(e), e.text("name", f"{f}-{t}")))

    loads = {}
    default_kind = root.text("load_model", "constant_power", _LOAD_KINDS) if root.has("load_model") else "constant_power"
    lc = root.sub("loads", False, {})
    if lc.data:
        for nd, e in lc.items():
            if nd not in nodes:
                lc.fail(f"unknown node {nd!r}", nd)
            kind = e.text("kind", default_kind, _LOAD_KINDS)
            if kind == "constant_power":
                loads[nd] = LoadSpec.constant_power(e.qty("W", "p", 0.0), e.qty("var", "q", 0.0))
            elif kind == "constant_impedance":
                loads[nd] = LoadSpec.constant_impedance(e.qty("W", "p", 0.0), e.qty("var", "q", 0.0), base.v_peak)
            else:
                loads[nd] = LoadSpec.constant_current(DqVec(e.qty("A", "i_d", 0.0), e.qty("A", "i_q", 0.0)))

    convs = []
    cc = root.sub("converters", False, {})
    if cc.data:
        for cid, e in cc.items():
            convs.append(_converter(str(cid), e, nodes))
    dg_nodes = {c.id: c.node for c in convs}
    dgs = sorted(dg_nodes)
    try:
        net = NetworkModel(tuple(nodes), tuple(lines), source, loads, dg_nodes, base)
    except ValueError as exc:
        raise ScenarioError(str(exc), "lines", root.sub("lines").line) from None

    sc = root.sub("secondary", False, {})
    sec = SecondaryConfig()
    if sc.data:
        sec = SecondaryConfig(
            enabled=sc.flag("enabled", True),
            period=sc.qty("s", "period", sec.period),
            first_at=sc.qty("s", "first_at", sec.first_at),
            comm_delay=sc.qty("s", "comm_delay", sec.comm_delay),
            eps_fix=sc.qty("pu", "eps_fix", sec.eps_fix),
            max_updates=int(sc.num("max_updates", sec.max_updates)),
            seed_grid=int(sc.num("seed_grid", sec.seed_grid)),
        )
        if sec.enabled and sec.period <= 0:
            sc.fail("period must be > 0", "period")
        if sec.comm_delay < 0:
            sc.fail("comm_delay must be >= 0", "comm_delay")
        if sec.comm_delay >= sec.period:
            sc.fail("comm_delay must be shorter than the update period", "comm_delay")

    if sc.has("weights"):
        wc = sc.sub("weights")
        w = _weights(wc, nodes, dgs, dg_nodes)
    else:
        wc = sc
        w = WeightConfig({n: 1.0 for n in nodes}, {dg: 0.0 for dg in dgs})
    bad = validate_weights(w, net)
    if bad:
        wc.fail("; ".join(bad))
    bounds = GainBounds()
    if sc.has("bounds"):
        bc = sc.sub("bounds")
        try:
            bounds = GainBounds(bc.qty("pu", "r_v_min", 0.1), bc.qty("pu", "l_v_min", 5e-4))
        except ValueError as exc:
            bc.fail(str(exc))

    simc = root.sub("simulation", False, {})
    sim = SimConfig()
    if simc.data:
        sim = SimConfig(
            dt=simc.qty("s", "dt", sim.dt),
            t_end=simc.qty("s", "t_end", sim.t_end),
            mode=simc.text("mode", sim.mode, ("quasi_static", "rms_dynamic")),  # type: ignore[arg-type]
            vac_model=simc.text("vac_model", sim.vac_model, ("quasi_static", "dynamic")),  # type: ignore[arg-type]
            log_every=int(simc.num("log_every", sim.log_every)),
            solver_tol_pu=simc.num("solver_tol_pu", sim.solver_tol_pu),
        )
        if sim.dt <= 0:
            simc.fail("dt must be > 0", "dt")
        if sim.t_end < 0:
            simc.fail("t_end must be >= 0", "t_end")
        if sim.log_every < 1:
            simc.fail("log_every must be >= 1", "log_every")

    events = []
    ec = root.sub("events", False, [])
    if ec.data:
        last = -math.inf
        for e in ec.elements():
            ev = _event(e, nodes, dgs, dg_nodes)
            if ev.at < last:
                e.fail("events must be in time order", "at")
            last = ev.at
            if ev.weights is not None:
                bad = validate_weights(ev.weights, net)
                if bad:
                    e.fail("; ".join(bad), "weights")
            events.append(ev)

    seed = int(root.num("seed", 0)) if root.has("seed") else 0
    title = root.text("name", name) if root.has("name") else name
    return Scenario(title, net, tuple(sorted(convs, key=lambda c: c.id)), w, bounds, sec, sim, tuple(events), seed)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"scenario file not found: {p}")
    return parse_scenario(p.read_text(encoding="utf-8"), p.stem)


def bundled_scenarios() -> list[str]:
    return sorted(
        f.name[: -len(".scenario")]
        for f in resources.files("vacsec.data").iterdir()
        if f.name.endswith(".scenario")
    )


def bundled_scenario(name: str) -> Scenario:
    """A scenario shipped with the package, by file stem."""
    f = resources.files("vacsec.data").joinpath(f"{name}.scenario")
    if not f.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}; have {bundled_scenarios()}")
    return parse_scenario(f.read_text(encoding="utf-8"), name)


def resolve_scenario(ref: str | Path) -> Scenario:
    """Load ``ref`` as a path, falling back to a bundled scenario name."""
    p = Path(ref)
    if p.exists():
        return load_scenario(p)
    stem = p.name[: -len(".scenario")] if p.name.endswith(".scenario") else p.name
    if stem in bundled_scenarios():
        return bundled_scenario(stem)
    raise FileNotFoundError(f"scenario file not found: {ref}")
