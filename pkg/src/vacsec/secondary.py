"""Recursive secondary controller: re-tunes every converter's virtual admittance.

Each iteration works on a frozen :class:`MeasurementSnapshot`.  Neighbour
voltages are replaced by their measured values, which makes every DG node's
predicted voltage an explicit rational function of that DG's own
``(g_v, b_v)``; the network-wide objective then splits into independent
two-variable problems, one per converter.

Gains are handled in pu of each converter's own base (``Z_base = V^2/S_n``,
reactance pu == inductance pu), so ``omega`` is 1 in the stability
constraints.  Voltage deviations are in pu of the nominal peak phase voltage
and virtual currents in pu of the converter's rated current.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .converter import ConverterParams, Setpoints, VacGains
from .dq import DqVec, FrameAngle, rotate
from .network import NetworkModel

log = logging.getLogger(__name__)

ZERO_ADMITTANCE = VacGains(1e9, 1e9)
"""Stand-in for a disconnected VAC (|Y_v| ~ 5e-10 pu)."""


class SubproblemError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeasurementSnapshot:
    """Everything the secondary level receives in one update period.

    Voltages and load currents are expressed in each node's own synchronised
    frame; ``node_delta`` maps those frames onto the common one and
    ``delta`` is the angle reported by each converter.
    """

    v_hat: Mapping[str, DqVec]
    node_delta: Mapping[str, FrameAngle]
    delta: Mapping[str, FrameAngle]
    i_load: Mapping[str, DqVec]
    setpoints: Mapping[str, Setpoints]
    gains_now: Mapping[str, VacGains]
    timestamp: float = 0.0
    v_source: DqVec | None = None

    def validate(self, net: NetworkModel) -> None:
        for nd in net.nodes:
            if nd not in self.v_hat or nd not in self.node_delta:
                raise ValueError(f"snapshot has no voltage for node {nd}")
            v = self.v_hat[nd]
            if not (math.isfinite(v.d) and math.isfinite(v.q)):
                raise ValueError(f"non-finite voltage at {nd}")
        for dg in net.converters:
            for name, table in (("angle", self.delta), ("setpoints", self.setpoints), ("gains", self.gains_now)):
                if dg not in table:
                    raise ValueError(f"snapshot has no {name} for converter {dg}")

    def v_common(self, node: str) -> complex:
        return rotate(self.v_hat[node], self.node_delta[node]).to_complex()

    def i_load_common(self, node: str) -> complex:
        if node not in self.i_load:
            return 0j
        return rotate(self.i_load[node], self.node_delta[node]).to_complex()


@dataclass(frozen=True)
class WeightConfig:
    a: Mapping[str, float]
    b: Mapping[str, float]

    @classmethod
    def uniform(cls, net: NetworkModel, a: float = 1.0) -> WeightConfig:
        return cls({n: a for n in net.nodes}, {dg: 1.0 - a for dg in net.converters})


@dataclass(frozen=True)
class GainBounds:
    r_v_min: float = 0.1
    l_v_min: float = 5e-4
    i_max: Mapping[str, float] = field(default_factory=dict)
    """per-converter current limit override (A, peak)"""

    def __post_init__(self):
        if self.r_v_min < 0 or self.l_v_min < 0:
            raise ValueError("gain lower bounds must be >= 0")


@dataclass(frozen=True)
class SubproblemResult:
    dg: str
    gains: VacGains
    g: float
    b: float
    objective_term: float
    feasible: bool
    diagnostic: str = ""


@dataclass(frozen=True)
class GainUpdate:
    gains: dict[str, VacGains]
    objective_value: float
    per_node_terms: dict[str, float]
    converged: bool
    max_change: float
    results: dict[str, SubproblemResult] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    timestamp: float = 0.0


def validate_weights(w: WeightConfig, net: NetworkModel) -> list[str]:
    """Violations of the weight tuning rule; empty list means valid."""
    out: list[str] = []
    for nd in net.nodes:
        if nd not in w.a:
            out.append(f"missing weight a for node {nd}")
            continue
        a = w.a[nd]
        if not a > 0:
            out.append(f"a_{nd} must be > 0 (got {a})")
        elif a > 1:
            out.append(f"a_{nd} must be <= 1 (got {a})")
    for dg in net.converters:
        if dg not in w.b:
            out.append(f"missing weight b for converter {dg}")
            continue
        b = w.b[dg]
        if not 0 <= b < 1:
            out.append(f"b_{dg} must lie in [0, 1) (got {b})")
        nd = net.dg_nodes[dg]
        if nd in w.a and abs(w.a[nd] + b - 1.0) > 1e-9:
            out.append(f"a_{nd} + b_{dg} must equal 1 (got {w.a[nd] + b:.6g})")
    return out


@dataclass(frozen=True)
class LocalProblem:
    """Frozen-measurement data of one DG subproblem (SI, common frame).

    The predicted node voltage is ``(rhs + y v*) / (ysum + y)`` with ``y``
    the DG's virtual admittance in siemens.
    """

    dg: str
    node: str
    z_base: float
    ysum: complex
    rhs: complex
    vs: complex
    ipq: complex
    v_nom: float
    i_base: float
    i_max: float

    def voltage(self, g_pu, b_pu):
        y = (np.asarray(g_pu) + 1j * np.asarray(b_pu)) / self.z_base
        return (self.rhs + y * self.vs) / (self.ysum + y)

    def virtual_current(self, g_pu, b_pu):
        y = (np.asarray(g_pu) + 1j * np.asarray(b_pu)) / self.z_base
        return y * (self.vs - self.voltage(g_pu, b_pu))

    def admittance_for_current(self, i_v):
        """Inverse of :meth:`virtual_current`: the pu admittance drawing ``i_v``."""
        k = self.vs * self.ysum - self.rhs
        y = np.asarray(i_v) * self.ysum / (k - np.asarray(i_v)) * self.z_base
        return y.real, y.imag

    def evaluate(self, g_pu, b_pu, a_w: float, b_w: float, r_min: float, l_min: float):
        return kernels.grid_eval(
            g_pu, b_pu, self.z_base, self.ysum, self.rhs, self.vs, self.v_nom,
            a_w, b_w, self.i_base, self.ipq, self.i_max, r_min, l_min,
        )


def _ipq_common(sp: Setpoints, v_sd: float, delta: FrameAngle) -> complex:
    i = DqVec(2.0 * sp.p_ref / (3.0 * v_sd), -2.0 * sp.q_ref / (3.0 * v_sd))
    return rotate(i, delta).to_complex()


def local_problem(
    dg: str,
    snap: MeasurementSnapshot,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
    bounds: GainBounds | None = None,
) -> LocalProblem:
    node = net.dg_nodes[dg]
    p = params[dg]
    ysum = 0j
    rhs = -snap.i_load_common(node)
    for nb, y in net.incident(node):
        ysum += y.to_complex()
        rhs += y.to_complex() * snap.v_common(nb)
    if net.grid_source.node == node:
        vg = snap.v_source if snap.v_source is not None else net.grid_source.v
        ysum += net.grid_source.y_g.to_complex()
        rhs += net.grid_source.y_g.to_complex() * vg.to_complex()
    v_sd = snap.v_hat[node].d
    ipq = _ipq_common(snap.setpoints[dg], v_sd, snap.delta[dg])
    rhs += ipq
    # other converters on the same node keep their current gains
    for other in net.dgs_at(node):
        if other == dg:
            continue
        po = params[other]
        yo = snap.gains_now[other].admittance_si(po.base)
        ysum += yo
        rhs += yo * rotate(snap.setpoints[other].v_ref, snap.delta[other]).to_complex()
        rhs += _ipq_common(snap.setpoints[other], v_sd, snap.delta[other])
    i_max = p.i_max
    if bounds is not None and dg in bounds.i_max:
        i_max = bounds.i_max[dg]
    return LocalProblem(
        dg=dg,
        node=node,
        z_base=p.base.z_base,
        ysum=ysum,
        rhs=rhs,
        vs=rotate(snap.setpoints[dg].v_ref, snap.delta[dg]).to_complex(),
        ipq=ipq,
        v_nom=net.base.v_peak,
        i_base=p.base.i_base,
        i_max=i_max,
    )


def predicted_node_voltage(
    g_v: float,
    b_v: float,
    dg: str,
    snap: MeasurementSnapshot,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
) -> DqVec:
    """Common-frame voltage at ``dg``'s node for pu gains ``(g_v, b_v)``."""
    lp = local_problem(dg, snap, net, params)
    den = lp.ysum + (g_v + 1j * b_v) / lp.z_base
    if abs(den) == 0:
        raise ZeroDivisionError(f"singular admittance sum at {lp.node}")
    return DqVec.from_complex(complex(lp.voltage(g_v, b_v)))


def stability_constraint_residuals(
    g_v: float, b_v: float, bounds: GainBounds, omega: float = 1.0
) -> tuple[float, float]:
    """Quadratic lower-bound constraints on R_v and L_v; feasible iff both < 0."""
    m2 = g_v * g_v + b_v * b_v
    return -g_v + bounds.r_v_min * m2, b_v + omega * bounds.l_v_min * m2


def current_constraint_residual(
    g_v: float,
    b_v: float,
    dg: str,
    snap: MeasurementSnapshot,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
    bounds: GainBounds | None = None,
) -> float:
    """``|i_c|^2 - I_max^2`` (A^2) at the predicted node voltage."""
    lp = local_problem(dg, snap, net, params, bounds)
    ic = lp.virtual_current(g_v, b_v) + lp.ipq
    return float(abs(ic) ** 2 - lp.i_max**2)


def objective_value(
    gains: Mapping[str, VacGains],
    snap: MeasurementSnapshot,
    w: WeightConfig,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
) -> tuple[float, dict[str, float]]:
    """Weighted squared voltage deviation plus weighted virtual-current effort.

    Returns the total and the per-node voltage terms.  Nodes without a DG
    enter with their measured deviation.
    """
    v_nom = net.base.v_peak
    dev = {nd: abs(snap.v_common(nd)) for nd in net.nodes}
    effort = 0.0
    for dg in net.converters:
        if dg not in gains:
            continue
        lp = local_problem(dg, snap, net, params)
        y = gains[dg].admittance_pu()
        dev[lp.node] = float(abs(lp.voltage(y.g, y.b)))
        iv = lp.virtual_current(y.g, y.b)
        effort += w.b.get(dg, 0.0) * float(abs(iv / lp.i_base) ** 2)
    terms = {nd: w.a.get(nd, 1.0) * (1.0 - dev[nd] / v_nom) ** 2 for nd in net.nodes}
    return sum(terms.values()) + effort, terms


def _search_box(bounds: GainBounds, y_cap: float) -> tuple[float, float]:
    """Bounding box of the feasible lens in the admittance plane.

    R_v >= R_min is the disk |y - 1/(2 R_min)| <= 1/(2 R_min) and
    X_v >= X_min the disk |y + j/(2 X_min)| <= 1/(2 X_min).
    """
    g_hi, b_lo = y_cap, -y_cap
    if bounds.r_v_min > 0:
        g_hi = min(g_hi, 1.0 / bounds.r_v_min)
        b_lo = max(b_lo, -0.5 / bounds.r_v_min)
    if bounds.l_v_min > 0:
        g_hi = min(g_hi, 0.5 / bounds.l_v_min)
        b_lo = max(b_lo, -1.0 / bounds.l_v_min)
    return g_hi, b_lo


def _seed_points(bounds: GainBounds, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Log-spaced impedance grid covering R_v >= R_min, L_v >= L_min."""
    r = np.geomspace(max(bounds.r_v_min, 1e-3) * (1 + 1e-6), 1e3, n)
    x = np.geomspace(max(bounds.l_v_min, 1e-4) * (1 + 1e-6), 1e3, n)
    rr, xx = np.meshgrid(r, x, indexing="ij")
    m2 = rr * rr + xx * xx
    return (rr / m2).ravel(), (-xx / m2).ravel()


_F_SCALE = 1e4
_MARGIN = 1e-9


def solve_subproblem(
    dg: str,
    snap: MeasurementSnapshot,
    w: WeightConfig,
    bounds: GainBounds,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
    seed_n: int = 50,
) -> SubproblemResult:
    """Minimise one DG's objective term over its pu ``(g_v, b_v)``.

    A log-spaced feasible seed grid picks the basin; SLSQP refines from the
    best seeds and from the DG's current gains, and the current gains win
    ties so that a converged recursion stays put.
    """
    lp = local_problem(dg, snap, net, params, bounds)
    a_w = w.a.get(lp.node, 1.0)
    b_w = w.b.get(dg, 0.0)
    rmin, lmin = bounds.r_v_min, bounds.l_v_min

    def f(x):
        val, _ = lp.evaluate(x[0], x[1], a_w, b_w, rmin, lmin)
        return float(val) * _F_SCALE

    def cons(x):
        c1, c2 = stability_constraint_residuals(x[0], x[1], bounds)
        ic = lp.virtual_current(x[0], x[1]) + lp.ipq
        c3 = (abs(ic) ** 2 - lp.i_max**2) / lp.i_max**2
        return -np.array([c1, c2, c3]) - _MARGIN

    def feasible(x):
        return bool(np.all(cons(x) > -_MARGIN * 0.5))

    gs, bs = _seed_points(bounds, seed_n)
    vals, ok = lp.evaluate(gs, bs, a_w, b_w, rmin, lmin)
    if not ok.any():
        # zero admittance is the last resort; infeasible means the set-point
        # current alone exceeds the rating
        y0 = ZERO_ADMITTANCE.admittance_pu()
        term = float(lp.evaluate(y0.g, y0.b, a_w, b_w, rmin, lmin)[0])
        return SubproblemResult(dg, ZERO_ADMITTANCE, y0.g, y0.b, term, False,
                                "saturated: no feasible gains, set-point current exceeds rating")

    order = np.argsort(np.where(ok, vals, np.inf))[:3]
    starts = [np.array([gs[k], bs[k]]) for k in order if ok[k]]
    y_now = snap.gains_now[dg].admittance_pu() if dg in snap.gains_now else None
    warm = None
    if y_now is not None and feasible(np.array([y_now.g, y_now.b])):
        warm = np.array([y_now.g, y_now.b])
        starts.insert(0, warm)

    cands = []
    for k, x0 in enumerate(starts):
        res = minimize(
            f, x0, method="SLSQP",
            constraints=[{"type": "ineq", "fun": cons}],
            options={"ftol": 1e-14, "maxiter": 300},
        )
        x = res.x if np.all(np.isfinite(res.x)) and feasible(res.x) else x0
        fx = f(x)
        if not feasible(x):
            continue
        cands.append((fx, k, x))
    if not cands:
        raise SubproblemError(f"no feasible candidate for {dg}")
    best_f = min(c[0] for c in cands)
    tol = 1e-9 * max(best_f, 1e-3)
    # prefer the warm-started candidate (k == 0) on ties
    near = [c for c in cands if c[0] <= best_f + tol]
    chosen = min(near, key=lambda c: (c[1] != 0 or warm is None, c[0]))
    x = chosen[2]
    return SubproblemResult(
        dg, VacGains.from_admittance_pu(float(x[0]), float(x[1])), float(x[0]), float(x[1]),
        chosen[0] / _F_SCALE, True,
    )


def secondary_iteration(
    snap: MeasurementSnapshot,
    w: WeightConfig,
    bounds: GainBounds,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
    eps_fix: float = 1e-4,
    seed_n: int = 50,
) -> GainUpdate:
    """One recursion step: every DG re-optimised against the same snapshot."""
    snap.validate(net)
    results: dict[str, SubproblemResult] = {}
    errors: dict[str, str] = {}
    gains: dict[str, VacGains] = {}
    for dg in net.converters:
        try:
            res = solve_subproblem(dg, snap, w, bounds, net, params, seed_n)
        except Exception as exc:  # carried per DG, others still update
            log.warning("subproblem %s failed: %s", dg, exc)
            errors[dg] = str(exc)
            gains[dg] = snap.gains_now[dg]
            continue
        results[dg] = res
        gains[dg] = res.gains
    total, terms = objective_value(gains, snap, w, net, params)
    change = 0.0
    for dg, g in gains.items():
        old = snap.gains_now[dg]
        change = max(change, abs(g.r_v - old.r_v), abs(g.l_v - old.l_v))
    return GainUpdate(gains, total, terms, change < eps_fix, change, results, errors, snap.timestamp)


@dataclass(frozen=True)
class GridSpec:
    n_r: int = 400
    n_x: int = 400
    z_max: float = 1e3
    """largest R_v and X_v on the grid, in pu"""
    refine: bool = True


@dataclass(frozen=True)
class OracleResult:
    gains: VacGains
    g: float
    b: float
    objective: float
    grid_objective: float
    grid_gains: VacGains
    cell: tuple[float, float]
    """grid ratio between neighbouring R_v and X_v values"""


_Z_FLOOR = 1e-4
_Z_MARGIN = 1e-10


def impedance_grid(bounds: GainBounds, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Log-spaced R_v and X_v (pu) from just inside the lower bounds to ``z_max``.

    Doubling ``n`` keeps every point of the coarser grid.
    """
    r_lo = max(bounds.r_v_min, _Z_FLOOR) * (1.0 + _Z_MARGIN)
    x_lo = max(bounds.l_v_min, _Z_FLOOR) * (1.0 + _Z_MARGIN)
    return np.geomspace(r_lo, spec.z_max, spec.n_r + 1)[:-1], np.geomspace(x_lo, spec.z_max, spec.n_x + 1)[:-1]


def _zoom(evaluate, r, x, hr, hx, r_lo, x_lo, max_iter=400):
    """Pattern search in log space on a 21 x 21 window around the incumbent.

    The window recentres while the best point sits on its border and shrinks
    5x otherwise, so the search can travel along an active constraint.
    """
    f = float(evaluate(np.array(r), np.array(x)))
    hr, hx = 2.0 * hr, 2.0 * hx
    for _ in range(max_iter):
        if hr < 1e-13 and hx < 1e-13:
            break
        zr = np.maximum(r * np.exp(np.linspace(-hr, hr, 21)), r_lo)
        zx = np.maximum(x * np.exp(np.linspace(-hx, hx, 21)), x_lo)
        zrr, zxx = np.meshgrid(zr, zx, indexing="ij")
        zv = evaluate(zrr, zxx)
        j = np.unravel_index(np.argmin(zv), zv.shape)
        border = j[0] in (0, 20) and zr[j[0]] > r_lo or j[1] in (0, 20) and zx[j[1]] > x_lo
        if zv[j] < f:
            r, x, f = float(zrr[j]), float(zxx[j]), float(zv[j])
        else:
            border = False
        if not border:
            hr, hx = hr / 5.0, hx / 5.0
    return r, x, f


def brute_force_oracle(
    dg: str,
    snap: MeasurementSnapshot,
    w: WeightConfig,
    bounds: GainBounds,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
    spec: GridSpec = GridSpec(),
) -> OracleResult:
    """Derivative-free minimum by exhaustive evaluation.

    A log grid over (R_v, X_v), dense scans of both bound edges and of the
    current-limit circle, each refined by shrinking local grids.
    """
    lp = local_problem(dg, snap, net, params, bounds)
    a_w = w.a.get(lp.node, 1.0)
    b_w = w.b.get(dg, 0.0)
    rmin, lmin = bounds.r_v_min, bounds.l_v_min
    r_lo = max(rmin, _Z_FLOOR) * (1.0 + _Z_MARGIN)
    x_lo = max(lmin, _Z_FLOOR) * (1.0 + _Z_MARGIN)

    def evaluate(r, x):
        m2 = r * r + x * x
        vals, ok = lp.evaluate(r / m2, -x / m2, a_w, b_w, rmin, lmin)
        return np.where(ok, vals, np.inf)

    r1, x1 = impedance_grid(bounds, spec)
    rr, xx = np.meshgrid(r1, x1, indexing="ij")
    vals = evaluate(rr, xx)
    k = np.unravel_index(np.argmin(vals), vals.shape)
    if not np.isfinite(vals[k]):
        raise SubproblemError(f"oracle grid for {dg} has no feasible point")
    r0, x0, f0 = float(rr[k]), float(xx[k]), float(vals[k])
    cell = (r1[1] / r1[0] if len(r1) > 1 else 1.0, x1[1] / x1[0] if len(x1) > 1 else 1.0)
    r, x, fbest = r0, x0, f0
    if spec.refine:
        starts = [(r0, x0)]
        # optima on a bound edge can sit in a sliver thinner than one cell
        edge = np.geomspace(1.0, spec.z_max / min(r_lo, x_lo), 20 * max(spec.n_r, spec.n_x))
        for er, ex in ((np.full_like(edge, r_lo), x_lo * edge), (r_lo * edge, np.full_like(edge, x_lo))):
            ev = evaluate(er, ex)
            j = int(np.argmin(ev))
            if np.isfinite(ev[j]):
                starts.append((float(er[j]), float(ex[j])))
        # the current limit circle, parametrised by the angle of i_v + i_pq
        rho = lp.i_max * (1.0 - 1e-9)

        def on_circle(phi):
            g_c, b_c = lp.admittance_for_current(rho * np.exp(1j * phi) - lp.ipq)
            vals, ok = lp.evaluate(g_c, b_c, a_w, b_w, rmin, lmin)
            return np.where(ok & (g_c > 0) & (b_c < 0), vals, np.inf), g_c, b_c

        phi = np.linspace(-math.pi, math.pi, 20 * max(spec.n_r, spec.n_x), endpoint=False)
        h = phi[1] - phi[0]
        cv, _, _ = on_circle(phi)
        j = int(np.argmin(cv))
        if np.isfinite(cv[j]):
            p0 = float(phi[j])
            for _ in range(14):
                zp = np.linspace(p0 - 2 * h, p0 + 2 * h, 21)
                zv, _, _ = on_circle(zp)
                p0 = float(zp[int(np.argmin(zv))])
                h /= 5.0
            fv, g_c, b_c = on_circle(np.array(p0))
            if float(fv) < fbest:
                m2 = float(g_c) ** 2 + float(b_c) ** 2
                r, x, fbest = float(g_c) / m2, -float(b_c) / m2, float(fv)
        for rs, xs in starts:
            rz, xz, fz = _zoom(evaluate, rs, xs, math.log(cell[0]), math.log(cell[1]), r_lo, x_lo)
            if fz < fbest:
                r, x, fbest = rz, xz, fz
    m2 = r * r + x * x
    return OracleResult(VacGains(r, x), r / m2, -x / m2, fbest, f0, VacGains(r0, x0), cell)


def oracle_grid(bounds: GainBounds, n: int, y_cap: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform (g_v, b_v) grid over the box enclosing the feasible lens."""
    g_hi, b_lo = _search_box(bounds, y_cap)
    return np.linspace(0.0, g_hi, n + 1)[1:], np.linspace(b_lo, 0.0, n + 1)[:-1]


def joint_brute_force(
    snap: MeasurementSnapshot,
    w: WeightConfig,
    bounds: GainBounds,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
    n: int = 6,
    y_cap: float = 30.0,
) -> tuple[dict[str, tuple[int, int]], float]:
    """Minimise the full objective over the product grid of all DGs' gains.

    Returns the chosen grid indices per DG and the minimum objective.  The
    objective is evaluated for every joint combination through
    :func:`objective_value`'s formula, without assuming separability.
    """
    dgs = list(net.converters)
    g1, b1 = oracle_grid(bounds, n, y_cap)
    pts = [(gi, bi) for gi in range(n) for bi in range(n)]
    v_nom = net.base.v_peak
    lps = {dg: local_problem(dg, snap, net, params, bounds) for dg in dgs}
    const = sum(
        w.a.get(nd, 1.0) * (1.0 - abs(snap.v_common(nd)) / v_nom) ** 2
        for nd in net.nodes
        if not net.dgs_at(nd)
    )
    combos = np.array(list(itertools.product(range(len(pts)), repeat=len(dgs))), dtype=int)
    total = np.full(len(combos), const)
    feasible = np.ones(len(combos), bool)
    pg = np.array([g1[p[0]] for p in pts])
    pb = np.array([b1[p[1]] for p in pts])
    for col, dg in enumerate(dgs):
        lp = lps[dg]
        g = pg[combos[:, col]]
        b = pb[combos[:, col]]
        vj = lp.voltage(g, b)
        iv = lp.virtual_current(g, b)
        total += w.a.get(lp.node, 1.0) * (1.0 - np.abs(vj) / v_nom) ** 2
        total += w.b.get(dg, 0.0) * np.abs(iv / lp.i_base) ** 2
        c1, c2 = stability_constraint_residuals(g, b, bounds)
        c3 = np.abs(iv + lp.ipq) ** 2 - lp.i_max**2
        feasible &= (c1 < 0) & (c2 < 0) & (c3 < 0)
    if not feasible.any():
        raise SubproblemError("joint grid has no feasible point")
    k = int(np.argmin(np.where(feasible, total, np.inf)))
    return {dg: pts[combos[k, col]] for col, dg in enumerate(dgs)}, float(total[k])


def per_dg_grid_argmin(
    snap: MeasurementSnapshot,
    w: WeightConfig,
    bounds: GainBounds,
    net: NetworkModel,
    params: Mapping[str, ConverterParams],
    n: int = 6,
    y_cap: float = 30.0,
) -> dict[str, tuple[int, int]]:
    g1, b1 = oracle_grid(bounds, n, y_cap)
    out = {}
    for dg in net.converters:
        lp = local_problem(dg, snap, net, params, bounds)
        gg, bb = np.meshgrid(g1, b1, indexing="ij")
        vals, ok = lp.evaluate(gg, bb, w.a.get(lp.node, 1.0), w.b.get(dg, 0.0), bounds.r_v_min, bounds.l_v_min)
        k = np.unravel_index(np.argmin(np.where(ok, vals, np.inf)), vals.shape)
        out[dg] = (int(k[0]), int(k[1]))
    return out


def snapshot_from_solution(
    net: NetworkModel,
    sol,
    setpoints: Mapping[str, Setpoints],
    gains_now: Mapping[str, VacGains],
    timestamp: float = 0.0,
    delta: Mapping[str, float] | None = None,
) -> MeasurementSnapshot:
    """Measurements as every node's synchronised frame would report them.

    Each node's frame is aligned with its own voltage (locked PLL), so the
    measured voltage is ``(|v|, 0)``.  ``delta`` overrides the converter
    angles, e.g. with the PLL states of a dynamic run.
    """
    v_hat, nd_delta, i_load = {}, {}, {}
    for nd in net.nodes:
        ang = FrameAngle(sol.angle(nd))
        nd_delta[nd] = ang
        v_hat[nd] = DqVec(sol.vmag(nd), 0.0)
        il = sol.i_load_c.get(nd, 0j)
        i_load[nd] = rotate(DqVec.from_complex(il), FrameAngle(-ang.delta))
    conv_delta = {
        dg: FrameAngle(delta[dg]) if delta is not None else nd_delta[net.dg_nodes[dg]]
        for dg in net.converters
    }
    return MeasurementSnapshot(
        v_hat=v_hat, node_delta=nd_delta, delta=conv_delta, i_load=i_load,
        setpoints=dict(setpoints), gains_now=dict(gains_now), timestamp=timestamp,
    )
