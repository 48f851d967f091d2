"""Time-stepped runs of a scenario with the periodic secondary update channel.

Two modes share one loop:

``quasi_static``
    every step is a network equilibrium with converters at their
    steady-state control law; only the gain ramp carries state.
``rms_dynamic``
    converters keep PLL, VAC input filter, optional dynamic VAC states and a
    second-order inner current loop; the network stays algebraic.

Secondary snapshots are taken at ``first_at + k*period``; the resulting
gains reach the converters ``comm_delay`` later and then ramp through the
``T_f2`` filter.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .converter import (
    ConverterControl, ConverterState, CurrentLoop, SaturationFlags, Setpoints,
    VacGains, apply_current_limits, compose_current_ref, droop_baseline,
    gain_ramp_step, lowpass_step, pll_step, pq_current_ref, vac_dynamic_step,
    vac_quasi_static,
)
from .dq import DqVec, FrameAngle, rotate
from .network import LoadSpec, NetworkModel, NetworkSolution, quasi_static_solve
from .scenario import Event, Scenario
from .secondary import (
    GainUpdate, WeightConfig, secondary_iteration,
    snapshot_from_solution,
)

log = logging.getLogger(__name__)

_EPS_T = 1e-9


class SimulationError(RuntimeError):
    """A run aborted; ``t`` is the simulation time and ``log`` the partial log."""

    def __init__(self, message: str, t: float, partial: SimulationLog | None = None):
        super().__init__(f"t={t:.4f} s: {message}")
        self.t = t
        self.log = partial


@dataclass(frozen=True)
class UpdateRecord:
    t_snapshot: float
    t_applied: float
    update: GainUpdate
    deviation_before: float
    """total deviation of the measured state the update was computed from"""


@dataclass
class SimulationLog:
    nodes: tuple[str, ...]
    converters: tuple[str, ...]
    v_nom: float
    t: list[float] = field(default_factory=list)
    v_c: list[np.ndarray] = field(default_factory=list)
    p: list[np.ndarray] = field(default_factory=list)
    q: list[np.ndarray] = field(default_factory=list)
    i_d: list[np.ndarray] = field(default_factory=list)
    i_q: list[np.ndarray] = field(default_factory=list)
    r_v: list[np.ndarray] = field(default_factory=list)
    l_v: list[np.ndarray] = field(default_factory=list)
    saturation: list[np.ndarray] = field(default_factory=list)
    i_v: list[np.ndarray] = field(default_factory=list)
    """unsaturated virtual-admittance current, local frame"""
    deviation: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    marker: list[bool] = field(default_factory=list)
    updates: list[UpdateRecord] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name))

    @property
    def vmag(self) -> np.ndarray:
        """Peak phase voltage magnitude, samples x nodes."""
        return np.abs(np.asarray(self.v_c)).reshape(len(self.t), len(self.nodes))

    @property
    def vrms(self) -> np.ndarray:
        """Line-to-line rms voltage, samples x nodes."""
        return self.vmag * math.sqrt(1.5)

    def node(self, nd: str) -> int:
        return self.nodes.index(nd)

    def dg(self, cid: str) -> int:
        return self.converters.index(cid)

    def at(self, t: float) -> int:
        """Index of the last sample at or before ``t``."""
        k = int(np.searchsorted(np.asarray(self.t), t + _EPS_T, side="right")) - 1
        return max(k, 0)

    @property
    def deviation_at_updates(self) -> list[float]:
        return [u.deviation_before for u in self.updates]


def total_deviation(vmag: np.ndarray, v_nom: float) -> float:
    """Unweighted sum of squared pu deviations from nominal over all nodes."""
    return float(np.sum((1.0 - np.asarray(vmag) / v_nom) ** 2))


def weighted_deviation(vmag: np.ndarray, nodes, w: WeightConfig, v_nom: float) -> float:
    return float(sum(w.a.get(n, 1.0) * (1.0 - m / v_nom) ** 2 for n, m in zip(nodes, vmag)))


@dataclass
class _Plant:
    """Mutable run state shared by both modes."""

    net: NetworkModel
    setpoints: dict[str, Setpoints]
    vac_on: dict[str, bool]
    gains: dict[str, VacGains]
    target: dict[str, VacGains]
    weights: WeightConfig
    dirty: bool = True


def _apply_event(ev: Event, plant: _Plant) -> None:
    net = plant.net
    if ev.kind == "load_step":
        old = net.loads.get(ev.node, LoadSpec.constant_power(0.0))
        if old.kind == "constant_current":
            raise ValueError(f"load_step needs a power-rated load at {ev.node}")
        loads = dict(net.loads)
        loads[ev.node] = old.with_power(old.p + ev.dp, old.q + ev.dq)
        plant.net = net.with_loads(loads)
    elif ev.kind == "grid_voltage_step":
        plant.net = net.with_source_voltage(net.grid_source.v.scale(1.0 + ev.fraction))
    elif ev.kind == "enable_vac":
        plant.vac_on[ev.converter] = True
    elif ev.kind == "disable_vac":
        plant.vac_on[ev.converter] = False
    elif ev.kind == "set_weights":
        plant.weights = ev.weights
    elif ev.kind == "set_setpoint":
        sp = plant.setpoints[ev.converter]
        plant.setpoints[ev.converter] = replace(
            sp,
            p_ref=sp.p_ref if ev.p is None else ev.p,
            q_ref=sp.q_ref if ev.q is None else ev.q,
        )
    plant.dirty = True


def _controls(s: Scenario, plant: _Plant, fixed: dict[str, complex] | None = None) -> dict[str, ConverterControl]:
    out = {}
    for c in s.converters:
        out[c.id] = ConverterControl(
            c.params, plant.setpoints[c.id], plant.gains[c.id], plant.vac_on[c.id], c.droop,
            None if fixed is None else fixed[c.id],
        )
    return out


def _ramp(s: Scenario, plant: _Plant, dt: float) -> None:
    for c in s.converters:
        cur, tgt = plant.gains[c.id], plant.target[c.id]
        if cur == tgt:
            continue
        nxt = gain_ramp_step(cur, tgt, dt, c.params.t_f2)
        if abs(nxt.r_v - tgt.r_v) < 1e-13 * max(1.0, tgt.r_v) and abs(nxt.l_v - tgt.l_v) < 1e-13 * max(1.0, tgt.l_v):
            nxt = tgt
        plant.gains[c.id] = nxt
        plant.dirty = True


class _Schedule:
    def __init__(self, s: Scenario, dt: float):
        self.enabled = s.secondary.enabled and bool(s.converters)
        self.period = s.secondary.period
        self.first = s.secondary.first_at
        self.delay = s.secondary.comm_delay
        self.dt = dt
        self.k_snap = 0
        self.pending: list[tuple[int, GainUpdate, float, float]] = []

    def step_of(self, t: float) -> int:
        return int(round(t / self.dt))

    def snapshot_due(self, n: int) -> bool:
        if not self.enabled:
            return False
        return n == self.step_of(self.first + self.k_snap * self.period)


def run_simulation(
    s: Scenario,
    mode: str | None = None,
    t_end: float | None = None,
    progress: Callable[[float], None] | None = None,
) -> SimulationLog:
    """Run ``s`` and return the uniformly sampled log."""
    mode = mode or s.sim.mode
    if mode not in ("quasi_static", "rms_dynamic"):
        raise ValueError(f"unknown simulation mode {mode!r}")
    dt = s.sim.dt
    t_end = s.sim.t_end if t_end is None else t_end
    n_steps = int(round(t_end / dt))
    plant = _Plant(
        net=s.network,
        setpoints={c.id: c.setpoints for c in s.converters},
        vac_on={c.id: c.vac_enabled for c in s.converters},
        gains={c.id: c.gains for c in s.converters},
        target={c.id: c.gains for c in s.converters},
        weights=s.weights,
    )
    out = SimulationLog(s.network.nodes, tuple(c.id for c in s.converters), s.network.base.v_peak)
    sched = _Schedule(s, dt)
    events = list(s.events)
    ev_i = 0
    tol = s.sim.solver_tol_pu
    unconverged_streak = 0
    carry = False

    sol = _solve(s, plant, None, None, tol, 0.0, out)
    dyn = _DynamicConverters(s, plant, sol, dt) if mode == "rms_dynamic" else None

    for n in range(n_steps + 1):
        t = round(n * dt, 12)
        marker = False
        while ev_i < len(events) and events[ev_i].at <= t + _EPS_T:
            _apply_event(events[ev_i], plant)
            ev_i += 1
        for item in [p for p in sched.pending if p[0] == n]:
            sched.pending.remove(item)
            _, upd, t_snap, dev0 = item
            for dg, g in upd.gains.items():
                plant.target[dg] = g
            out.updates.append(UpdateRecord(t_snap, t, upd, dev0))
            marker = True
        if n > 0:
            _ramp(s, plant, dt)

        if dyn is None:
            if plant.dirty or n == 0:
                sol = _solve(s, plant, sol, None, tol, t, out)
                plant.dirty = False
        else:
            sol = _solve(s, plant, sol, dyn.fixed_currents(), tol, t, out)

        if sched.snapshot_due(n):
            snap = snapshot_from_solution(
                plant.net, sol, plant.setpoints, plant.target, t,
                delta=dyn.deltas() if dyn is not None else None,
            )
            upd = secondary_iteration(
                snap, plant.weights, s.bounds, plant.net, s.params,
                s.secondary.eps_fix, s.secondary.seed_grid,
            )
            for dg, err in upd.errors.items():
                out.diagnostics.append(f"t={t:.3f} s: subproblem {dg} failed: {err}")
            unconverged_streak = 0 if upd.converged else unconverged_streak + 1
            if unconverged_streak == s.secondary.max_updates:
                out.diagnostics.append(
                    f"t={t:.3f} s: gains not stationary after {unconverged_streak} updates"
                )
            dev0 = total_deviation(np.abs(sol.v_c), out.v_nom)
            sched.pending.append((sched.step_of(t + sched.delay), upd, t, dev0))
            sched.k_snap += 1

        if dyn is not None:
            dyn.advance(sol, plant)

        carry = carry or marker
        if n % s.sim.log_every == 0:
            _record(out, s, plant, sol, t, carry, dyn)
            carry = False
        if progress is not None:
            progress(t)
    return out


def _solve(s, plant, prev: NetworkSolution | None, fixed, tol, t, out) -> NetworkSolution:
    from .converter import VoltageCollapseError
    from .network import NetworkSolveError

    try:
        return quasi_static_solve(
            plant.net, _controls(s, plant, fixed),
            v0=None if prev is None else prev.v_c, tol_pu=tol,
        )
    except (NetworkSolveError, VoltageCollapseError) as exc:
        raise SimulationError(str(exc), t, out) from exc


def _record(out: SimulationLog, s: Scenario, plant: _Plant, sol: NetworkSolution, t: float, marker: bool, dyn) -> None:
    net = plant.net
    m = len(s.converters)
    p = np.zeros(m)
    q = np.zeros(m)
    i_d = np.zeros(m)
    i_q = np.zeros(m)
    sat = np.zeros((m, 2), bool)
    i_v = np.zeros(m, complex)
    for k, c in enumerate(s.converters):
        v = sol.v_c[net.index(c.node)]
        ic = sol.i_c_c[c.id]
        sp = 1.5 * v * np.conj(ic)
        p[k], q[k] = sp.real, sp.imag
        ang = dyn.state[c.id].delta if dyn is not None else float(np.angle(v))
        il = ic * np.exp(-1j * ang)
        i_d[k], i_q[k] = il.real, il.imag
        if dyn is None:
            sat[k] = sol.saturation[c.id]
            i_v[k] = sol.i_v_local[c.id] if plant.vac_on[c.id] else 0j
        else:
            f = dyn.state[c.id].saturation
            sat[k] = (f.d_limited, f.q_limited)
            i_v[k] = dyn.state[c.id].vac_i.to_complex()
    vm = np.abs(sol.v_c)
    out.t.append(t)
    out.v_c.append(sol.v_c.copy())
    out.p.append(p)
    out.q.append(q)
    out.i_d.append(i_d)
    out.i_q.append(i_q)
    out.r_v.append(np.array([plant.gains[c.id].r_v for c in s.converters]))
    out.l_v.append(np.array([plant.gains[c.id].l_v for c in s.converters]))
    out.saturation.append(sat)
    out.i_v.append(i_v)
    out.deviation.append(total_deviation(vm, out.v_nom))
    out.objective.append(weighted_deviation(vm, net.nodes, plant.weights, out.v_nom))
    out.marker.append(marker)


class _DynamicConverters:
    """Per-converter control states for the RMS-dynamic mode."""

    def __init__(self, s: Scenario, plant: _Plant, sol: NetworkSolution, dt: float):
        self.s = s
        self.dt = dt
        self.dynamic_vac = s.sim.vac_model == "dynamic"
        self.loops = {c.id: CurrentLoop(c.params, dt) for c in s.converters}
        self.state: dict[str, ConverterState] = {}
        net = plant.net
        for c in s.converters:
            v = sol.v_c[net.index(c.node)]
            ang = float(np.angle(v))
            il = sol.i_c_c[c.id] * np.exp(-1j * ang)
            sat = sol.saturation[c.id]
            self.state[c.id] = ConverterState(
                x_pll=0.0,
                theta_pll=ang,
                omega_g=c.params.omega_n,
                delta=ang,
                vac_i=DqVec.from_complex(sol.i_v_local[c.id]) if plant.vac_on[c.id] else DqVec(0.0, 0.0),
                v_filt=DqVec(abs(v), 0.0),
                gains_filt=plant.gains[c.id],
                i_c=DqVec.from_complex(complex(il)),
                di_c=DqVec(0.0, 0.0),
                saturation=SaturationFlags(*sat),
            )

    def fixed_currents(self) -> dict[str, complex]:
        return {
            cid: rotate(st.i_c, FrameAngle(st.delta)).to_complex()
            for cid, st in self.state.items()
        }

    def deltas(self) -> dict[str, float]:
        return {cid: st.delta for cid, st in self.state.items()}

    def advance(self, sol: NetworkSolution, plant: _Plant) -> None:
        net = plant.net
        dt = self.dt
        for c in self.s.converters:
            st = self.state[c.id]
            p = c.params
            v_local = rotate(DqVec.from_complex(complex(sol.v_c[net.index(c.node)])), FrameAngle(-st.delta))
            st = pll_step(st, v_local.q, dt, p)
            v_f = lowpass_step(st.v_filt, v_local, dt, p.t_f1)
            sp = plant.setpoints[c.id]
            if c.droop is not None:
                dp, dq = droop_baseline(v_f.magnitude(), c.droop)
                sp = replace(sp, p_ref=sp.p_ref + dp, q_ref=sp.q_ref + dq)
            gains = plant.gains[c.id]
            if not plant.vac_on[c.id]:
                i_v = DqVec(0.0, 0.0)
            elif self.dynamic_vac:
                i_v = vac_dynamic_step(st.vac_i, gains.rl_si(p.base), v_f, sp.v_ref, dt, p.omega_n)
            else:
                i_v = vac_quasi_static(gains.admittance_si(p.base), v_f, sp.v_ref)
            v_sd = max(v_local.d, p.v_floor_pu * p.v_nom)
            i_pq = pq_current_ref(sp, v_sd, p)
            i_ref, flags = apply_current_limits(compose_current_ref(i_v, i_pq, plant.vac_on[c.id]), p, v_sd)
            i_c, di_c = self.loops[c.id].step(st.i_c, st.di_c, i_ref)
            # hardware protection: the lag's overshoot never exceeds the rating
            i_c, _ = apply_current_limits(i_c, p, v_sd)
            self.state[c.id] = replace(
                st, v_filt=v_f, vac_i=i_v, gains_filt=gains, i_c=i_c, di_c=di_c, saturation=flags,
            )
