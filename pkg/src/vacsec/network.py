"""Grid topology, KCL algebra and the quasi-static network solver.

Node voltages and currents live in the common DQ frame anchored to the ideal
grid source, as complex numbers ``d + jq`` in peak volts/amperes.  Line
admittances are in siemens.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Sequence

import numpy as np

from . import kernels
from .converter import ConverterControl, VoltageCollapseError
from .dq import (
    Admittance2, DqVec, PerUnitBase, SingularAdmittanceError, adm_add, adm_apply,
    adm_inverse,
)
from .kernels import layout as L

log = logging.getLogger(__name__)


class NetworkSolveError(RuntimeError):
    def __init__(self, message: str, worst_residual_pu: float = math.nan, node: str | None = None):
        super().__init__(message)
        self.worst_residual_pu = worst_residual_pu
        self.node = node


@dataclass(frozen=True)
class Line:
    from_node: str
    to_node: str
    y: Admittance2
    name: str = ""

    def __post_init__(self):
        if not self.y.is_invertible:
            raise ValueError(f"line {self.label} has zero admittance")

    @property
    def label(self) -> str:
        return self.name or f"{self.from_node}-{self.to_node}"


@dataclass(frozen=True)
class GridSource:
    node: str
    v: DqVec
    y_g: Admittance2


@dataclass(frozen=True)
class LoadSpec:
    kind: Literal["constant_power", "constant_current", "constant_impedance"] = "constant_power"
    p: float = 0.0
    q: float = 0.0
    i: DqVec = DqVec(0.0, 0.0)
    """constant-current load, in the frame of its own node voltage"""
    v_rated: float = 400.0 * math.sqrt(2.0) / math.sqrt(3.0)
    """peak phase voltage at which a constant-impedance load draws ``p + jq``"""

    @classmethod
    def constant_power(cls, p: float, q: float = 0.0) -> LoadSpec:
        return cls("constant_power", p, q)

    @classmethod
    def constant_current(cls, i: DqVec) -> LoadSpec:
        return cls("constant_current", i=i)

    @classmethod
    def constant_impedance(cls, p: float, q: float = 0.0, v_rated: float = 400.0 * math.sqrt(2.0) / math.sqrt(3.0)) -> LoadSpec:
        return cls("constant_impedance", p, q, v_rated=v_rated)

    @property
    def admittance(self) -> complex:
        """Shunt admittance of a constant-impedance load (S)."""
        if self.kind != "constant_impedance":
            return 0j
        return complex(self.p, -self.q) / (1.5 * self.v_rated**2)

    def with_power(self, p: float, q: float) -> LoadSpec:
        return replace(self, p=p, q=q)

    def current(self, v: complex) -> complex:
        if self.kind == "constant_impedance":
            return self.admittance * v
        if v == 0:
            raise VoltageCollapseError("constant-power load at zero voltage")
        if self.kind == "constant_power":
            return complex(self.p, -self.q) / (1.5 * v.conjugate())
        return self.i.to_complex() * v / abs(v)

    def scaled(self, k: float) -> LoadSpec:
        return replace(self, p=self.p * k, q=self.q * k, i=self.i.scale(k))


@dataclass(frozen=True)
class NetworkModel:
    nodes: tuple[str, ...]
    lines: tuple[Line, ...]
    grid_source: GridSource
    loads: Mapping[str, LoadSpec] = field(default_factory=dict)
    dg_nodes: Mapping[str, str] = field(default_factory=dict)
    """converter id -> node id"""
    base: PerUnitBase = PerUnitBase(75e3, 400.0, 50.0)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "lines", tuple(self.lines))
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise ValueError("duplicate node ids")
        for ln in self.lines:
            for nd in (ln.from_node, ln.to_node):
                if nd not in known:
                    raise ValueError(f"line {ln.label} references unknown node {nd!r}")
        if self.grid_source.node not in known:
            raise ValueError(f"grid source attached to unknown node {self.grid_source.node!r}")
        if not self.grid_source.y_g.is_invertible:
            raise ValueError("grid source admittance is zero")
        for nd in self.loads:
            if nd not in known:
                raise ValueError(f"load at unknown node {nd!r}")
        for dg, nd in self.dg_nodes.items():
            if nd not in known:
                raise ValueError(f"converter {dg!r} at unknown node {nd!r}")
        unreachable = known - self._reachable(self.grid_source.node)
        if unreachable:
            raise ValueError(f"nodes not connected to the grid source: {sorted(unreachable)}")

    def _reachable(self, start: str) -> set[str]:
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for ln in self.lines:
            adj[ln.from_node].append(ln.to_node)
            adj[ln.to_node].append(ln.from_node)
        seen = {start}
        todo = deque([start])
        while todo:
            for nb in adj[todo.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        return seen

    def index(self, node: str) -> int:
        return self.nodes.index(node)

    @property
    def converters(self) -> tuple[str, ...]:
        return tuple(sorted(self.dg_nodes))

    def dgs_at(self, node: str) -> list[str]:
        return sorted(dg for dg, nd in self.dg_nodes.items() if nd == node)

    def incident(self, node: str) -> list[tuple[str, Admittance2]]:
        """Neighbouring nodes with their connecting admittances (``K_j``)."""
        out = []
        for ln in self.lines:
            if ln.from_node == node:
                out.append((ln.to_node, ln.y))
            elif ln.to_node == node:
                out.append((ln.from_node, ln.y))
        return out

    def ybus(self, include_loads: bool = True) -> np.ndarray:
        """Nodal admittance matrix with the grid-source admittance and, unless
        ``include_loads`` is false, constant-impedance loads as shunts."""
        n = len(self.nodes)
        y = np.zeros((n, n), complex)
        for ln in self.lines:
            a, b = self.index(ln.from_node), self.index(ln.to_node)
            yl = ln.y.to_complex()
            y[a, a] += yl
            y[b, b] += yl
            y[a, b] -= yl
            y[b, a] -= yl
        k = self.index(self.grid_source.node)
        y[k, k] += self.grid_source.y_g.to_complex()
        if include_loads:
            for nd, ld in self.loads.items():
                y[self.index(nd), self.index(nd)] += ld.admittance
        return y

    def source_injection(self) -> np.ndarray:
        i = np.zeros(len(self.nodes), complex)
        i[self.index(self.grid_source.node)] = (
            self.grid_source.y_g.to_complex() * self.grid_source.v.to_complex()
        )
        return i

    def load_array(self) -> np.ndarray:
        lf = np.zeros((len(self.nodes), L.N_LFLOAT))
        for nd, ld in self.loads.items():
            k = self.index(nd)
            if ld.kind == "constant_power":
                lf[k, L.L_P] += ld.p
                lf[k, L.L_Q] += ld.q
            elif ld.kind == "constant_current":
                lf[k, L.L_ICC_D] += ld.i.d
                lf[k, L.L_ICC_Q] += ld.i.q
        return lf

    @property
    def i_base(self) -> float:
        return self.base.i_base

    def with_loads(self, loads: Mapping[str, LoadSpec]) -> NetworkModel:
        return replace(self, loads=dict(loads))

    def with_source_voltage(self, v: DqVec) -> NetworkModel:
        return replace(self, grid_source=replace(self.grid_source, v=v))


@dataclass
class NetworkSolution:
    nodes: tuple[str, ...]
    v_c: np.ndarray
    i_c_c: dict[str, complex]
    i_line_c: dict[str, complex]
    i_load_c: dict[str, complex]
    i_v_local: dict[str, complex]
    saturation: dict[str, tuple[bool, bool]]
    converged: bool
    iterations: int
    worst_residual_pu: float

    @property
    def v(self) -> dict[str, DqVec]:
        return {n: DqVec.from_complex(complex(x)) for n, x in zip(self.nodes, self.v_c)}

    @property
    def i_c(self) -> dict[str, DqVec]:
        return {k: DqVec.from_complex(x) for k, x in self.i_c_c.items()}

    @property
    def i_line(self) -> dict[str, DqVec]:
        return {k: DqVec.from_complex(x) for k, x in self.i_line_c.items()}

    def vmag(self, node: str) -> float:
        return float(abs(self.v_c[self.nodes.index(node)]))

    def angle(self, node: str) -> float:
        return float(np.angle(self.v_c[self.nodes.index(node)]))


def converter_arrays(net: NetworkModel, controls: Mapping[str, ConverterControl]):
    """Flatten converter controls into the kernel column layout."""
    ids = [dg for dg in net.converters if dg in controls]
    cf = np.zeros((len(ids), L.N_CFLOAT))
    ci = np.zeros((len(ids), L.N_CINT), dtype=np.int64)
    for k, dg in enumerate(ids):
        c = controls[dg]
        p = c.params
        y = c.gains.admittance_si(p.base)
        cf[k, L.C_G] = y.real
        cf[k, L.C_B] = y.imag
        cf[k, L.C_VREF_D] = c.setpoints.v_ref.d
        cf[k, L.C_VREF_Q] = c.setpoints.v_ref.q
        cf[k, L.C_P] = c.setpoints.p_ref
        cf[k, L.C_Q] = c.setpoints.q_ref
        cf[k, L.C_IMAX] = p.i_max
        cf[k, L.C_IDMAX_LIT] = min(p.i_max, p.p_max / p.u_dc)
        cf[k, L.C_PMAX] = p.p_max
        cf[k, L.C_VFLOOR] = p.v_floor_pu * p.v_nom
        ci[k, L.CI_NODE] = net.index(net.dg_nodes[dg])
        ci[k, L.CI_VAC_ON] = int(c.vac_enabled)
        ci[k, L.CI_IDMODE] = 0 if p.id_limit == "literal" else 1
        if c.droop is not None:
            d = c.droop
            ci[k, L.CI_DROOP] = 1 if d.kind == "QV" else 2
            cf[k, L.C_KP_DROOP] = d.k_p
            cf[k, L.C_KQ_DROOP] = d.k_q
            cf[k, L.C_DEADBAND] = d.deadband
            cf[k, L.C_DROOP_VNOM] = d.v_nom
            cf[k, L.C_DROOP_LIM] = d.limit
        if c.fixed_current is not None:
            ci[k, L.CI_MODE] = 1
            cf[k, L.C_FIXED_RE] = c.fixed_current.real
            cf[k, L.C_FIXED_IM] = c.fixed_current.imag
    return ids, cf, ci


def node_voltage_solve(
    neighbor_v: Sequence[DqVec],
    i_c: DqVec,
    i_l: DqVec,
    lines: Sequence[Admittance2],
) -> DqVec:
    """Voltage of a node from its neighbours, injections and line admittances."""
    ysum = Admittance2(0.0, 0.0)
    acc = i_c - i_l
    for vi, y in zip(neighbor_v, lines, strict=True):
        ysum = adm_add(ysum, y)
        acc = acc + adm_apply(y, vi)
    try:
        return adm_apply(adm_inverse(ysum), acc)
    except SingularAdmittanceError as exc:
        raise SingularAdmittanceError("singular admittance sum at node") from exc


def _current_relaxation(ybus, i_src, lf, cf, ci, v, tol, alpha, sweeps):
    """Damped fixed point on converter currents.

    Each sweep solves the network with converter currents held fixed, then
    moves the currents a fraction ``alpha`` toward the control law.  Slower
    than Newton but it walks across saturation kinks where Newton stalls.
    """
    ic, _, _ = kernels.conv_injection(v, cf, ci)
    fixed_ci = ci.copy()
    fixed_ci[:, L.CI_MODE] = 1
    fixed_cf = cf.copy()
    for _ in range(sweeps):
        fixed_cf[:, L.C_FIXED_RE] = ic.real
        fixed_cf[:, L.C_FIXED_IM] = ic.imag
        v, ok, _, _ = kernels.solve_kcl(ybus, i_src, lf, fixed_cf, fixed_ci, v, tol * 1e-3, 50)
        if not ok:
            break
        new, _, _ = kernels.conv_injection(v, cf, ci)
        if np.max(np.abs(new - ic), initial=0.0) < tol * 1e-2:
            break
        ic = (1.0 - alpha) * ic + alpha * new
    return v


def quasi_static_solve(
    net: NetworkModel,
    controls: Mapping[str, ConverterControl],
    v0: np.ndarray | None = None,
    tol_pu: float = 1e-9,
    max_iter: int = 100,
) -> NetworkSolution:
    """Simultaneous KCL solution with converters at their steady-state law."""
    ybus = net.ybus()
    i_src = net.source_injection()
    lf = net.load_array()
    ids, cf, ci = converter_arrays(net, controls)
    tol = tol_pu * net.i_base
    if v0 is None:
        v0 = np.full(len(net.nodes), net.grid_source.v.to_complex())
    v, ok, iters, worst = kernels.solve_kcl(ybus, i_src, lf, cf, ci, np.asarray(v0, complex), tol, max_iter)
    if not ok and cf.shape[0]:
        log.debug("Newton stalled (worst %.3g A); relaxing converter currents", worst)
        for alpha in (0.5, 0.1):
            vr = _current_relaxation(ybus, i_src, lf, cf, ci, np.asarray(v0, complex).copy(), tol, alpha, 400)
            v2, ok2, it2, w2 = kernels.solve_kcl(ybus, i_src, lf, cf, ci, vr, tol, 0)
            iters += it2
            if ok2:
                v, ok, worst = v2, True, w2
                break
    res = np.abs(kernels.kcl_residual(v, ybus, i_src, lf, cf, ci)) / net.i_base
    if not ok or not np.all(np.isfinite(v)):
        k = int(np.nanargmax(res)) if np.all(np.isfinite(res)) else 0
        raise NetworkSolveError(
            f"network solve did not converge: worst residual {np.nanmax(res):.3g} pu at {net.nodes[k]}",
            float(np.nanmax(res)),
            net.nodes[k],
        )
    for dg in ids:
        c = controls[dg]
        vm = abs(v[net.index(net.dg_nodes[dg])])
        if c.fixed_current is None and vm <= c.params.v_floor_pu * c.params.v_nom:
            raise VoltageCollapseError(f"voltage collapse at converter {dg}: {vm:.3g} V")
    return _package(net, controls, ids, cf, ci, v, ok, iters, float(res.max()) if len(res) else 0.0)


def _package(net, controls, ids, cf, ci, v, ok, iters, worst_pu) -> NetworkSolution:
    ic, flags, ivl = kernels.conv_injection(v, cf, ci)
    i_line = {}
    for ln in net.lines:
        a, b = net.index(ln.from_node), net.index(ln.to_node)
        i_line[ln.label] = complex(ln.y.to_complex() * (v[a] - v[b]))
    i_load = {nd: ld.current(complex(v[net.index(nd)])) for nd, ld in net.loads.items()}
    return NetworkSolution(
        nodes=net.nodes,
        v_c=np.asarray(v, complex),
        i_c_c={dg: complex(ic[k]) for k, dg in enumerate(ids)},
        i_line_c=i_line,
        i_load_c=i_load,
        i_v_local={dg: complex(ivl[k]) for k, dg in enumerate(ids)},
        saturation={dg: (bool(flags[k, 0]), bool(flags[k, 1])) for k, dg in enumerate(ids)},
        converged=bool(ok),
        iterations=int(iters),
        worst_residual_pu=worst_pu,
    )


def kcl_residual(
    net: NetworkModel,
    sol: NetworkSolution,
    controls: Mapping[str, ConverterControl] | None = None,
) -> dict[str, float]:
    """Per-node KCL mismatch magnitude in pu of the network current base.

    Converter currents are taken from the solution as recorded, so a
    perturbed voltage shows up as a line/load mismatch.  Pass ``controls`` to
    re-evaluate the converter law at the solution voltages instead.
    """
    v = sol.v_c
    # branch form, so equal voltages cancel exactly
    f = np.zeros(len(net.nodes), complex)
    for ln in net.lines:
        a, b = net.index(ln.from_node), net.index(ln.to_node)
        i_ab = ln.y.to_complex() * (v[a] - v[b])
        f[a] += i_ab
        f[b] -= i_ab
    k = net.index(net.grid_source.node)
    f[k] += net.grid_source.y_g.to_complex() * (v[k] - net.grid_source.v.to_complex())
    for nd, ld in net.loads.items():
        f[net.index(nd)] += ld.current(complex(v[net.index(nd)]))
    if controls is not None:
        ids, cf, ci = converter_arrays(net, controls)
        ic, _, _ = kernels.conv_injection(v, cf, ci)
        inj = dict(zip(ids, ic))
    else:
        inj = sol.i_c_c
    for dg, i in inj.items():
        f[net.index(net.dg_nodes[dg])] -= i
    return {n: float(abs(x)) / net.i_base for n, x in zip(net.nodes, f)}


def flat_solution(net: NetworkModel) -> NetworkSolution:
    """All nodes at the source voltage, no injections."""
    v = np.full(len(net.nodes), net.grid_source.v.to_complex())
    return NetworkSolution(net.nodes, v, {}, {ln.label: 0j for ln in net.lines}, {}, {}, {}, True, 0, 0.0)
