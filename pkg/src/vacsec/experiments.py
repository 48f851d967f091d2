"""Experiment batteries built on :func:`run_simulation`."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Sequence, Union

import numpy as np

from .scenario import Scenario
from .network import quasi_static_solve
from .secondary import MeasurementSnapshot, WeightConfig, snapshot_from_solution
from .simulation import SimulationError, SimulationLog, run_simulation

Range = Union[tuple[float, float], Mapping[str, tuple[float, float]]]

_MONO_TOL = 1e-9
FLAT_TOL = 1e-3
"""relative rise still counted as flat while a DG is saturated"""


@dataclass(frozen=True)
class BatchRun:
    index: int
    loads: dict[str, float]
    generation: dict[str, float]
    deviation: tuple[float, ...]
    """total deviation before each update, then at the end of the run"""
    converged: bool
    saturated: tuple[str, ...]
    error: str | None = None
    saturated_at: tuple[bool, ...] = ()
    """whether any DG was saturated at each trajectory sample"""

    @property
    def monotone(self) -> bool:
        d = self.deviation
        return all(b <= a + _MONO_TOL * max(1.0, a) for a, b in zip(d, d[1:]))

    def stable(self, flat_tol: float = FLAT_TOL) -> bool:
        """Non-increasing, except near-flat steps taken while saturated."""
        d, sat = self.deviation, self.saturated_at
        for k, (a, b) in enumerate(zip(d, d[1:])):
            if b <= a + _MONO_TOL * max(1.0, a):
                continue
            held = k + 1 < len(sat) and sat[k] and sat[k + 1]
            if not (held and b - a <= flat_tol * a):
                return False
        return True


@dataclass(frozen=True)
class BatchReport:
    seed: int
    runs: tuple[BatchRun, ...]

    @property
    def failures(self) -> list[BatchRun]:
        return [r for r in self.runs if r.error is not None]

    @property
    def non_monotone(self) -> list[BatchRun]:
        return [r for r in self.runs if r.error is None and not r.monotone]

    @property
    def unstable(self) -> list[BatchRun]:
        return [r for r in self.runs if r.error is None and not r.stable()]


def _ranges(spec: Range, keys: Sequence[str]) -> dict[str, tuple[float, float]]:
    if isinstance(spec, Mapping):
        return {k: tuple(spec[k]) for k in keys}  # type: ignore[misc]
    return {k: (float(spec[0]), float(spec[1])) for k in keys}


def sample_operating_point(
    s: Scenario,
    rng: np.random.Generator,
    load_range: Range = (0.0, 50e3),
    gen_range: Range = (0.0, 15e3),
) -> tuple[Scenario, dict[str, float], dict[str, float]]:
    """Scenario with uniformly drawn load powers and DG active set-points (W)."""
    load_nodes = [n for n in s.network.nodes if n in s.network.loads]
    lr = _ranges(load_range, load_nodes)
    gr = _ranges(gen_range, [c.id for c in s.converters])
    loads = {n: float(rng.uniform(*lr[n])) for n in load_nodes}
    gens = {c.id: float(rng.uniform(*gr[c.id])) for c in s.converters}
    net = s.network.with_loads(
        {n: s.network.loads[n].with_power(p, s.network.loads[n].q) for n, p in loads.items()}
    )
    convs = tuple(replace(c, setpoints=replace(c.setpoints, p_ref=gens[c.id])) for c in s.converters)
    return replace(s, network=net, converters=convs), loads, gens


def _trajectory(lg: SimulationLog) -> tuple[tuple[float, ...], tuple[bool, ...]]:
    idx = [lg.at(u.t_snapshot) for u in lg.updates] + [len(lg) - 1]
    sat = tuple(bool(np.any(lg.saturation[k])) for k in idx)
    return tuple(lg.deviation_at_updates) + (lg.deviation[-1],), sat


def run_stochastic_batch(
    s: Scenario,
    runs: int = 30,
    seed: int | None = None,
    load_range: Range = (0.0, 50e3),
    gen_range: Range = (0.0, 15e3),
) -> BatchReport:
    """Independent runs at random operating points, reproducible from ``seed``."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seed = s.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    out = []
    for k in range(runs):
        sk, loads, gens = sample_operating_point(s, rng, load_range, gen_range)
        try:
            lg = run_simulation(sk)
        except (SimulationError, ValueError, RuntimeError) as exc:
            out.append(BatchRun(k, loads, gens, (), False, (), str(exc)))
            continue
        sat = tuple(c for j, c in enumerate(lg.converters) if lg.saturation[-1][j].any())
        conv = bool(lg.updates) and lg.updates[-1].update.converged
        dev, sat_at = _trajectory(lg)
        out.append(BatchRun(k, loads, gens, dev, conv, sat, None, sat_at))
    return BatchReport(seed, tuple(out))


@dataclass(frozen=True)
class SweepPoint:
    value: float
    weights: WeightConfig
    deviation: dict[str, float]
    """|1 - V/V_n| per node at steady state"""
    total_deviation: float
    i_v: dict[str, float]
    """|i_v| per DG in amperes"""
    saturated: dict[str, bool]
    log: SimulationLog = field(repr=False, compare=False, default=None)  # type: ignore[assignment]


@dataclass(frozen=True)
class SweepReport:
    kind: str
    points: tuple[SweepPoint, ...]

    def series(self, node: str) -> list[float]:
        return [p.deviation[node] for p in self.points]

    def current(self, dg: str) -> list[float]:
        return [p.i_v[dg] for p in self.points]


def uniform_weights(s: Scenario, a: float) -> WeightConfig:
    return WeightConfig.uniform(s.network, a)


def single_weights(s: Scenario, node: str, dg: str, a: float) -> WeightConfig:
    """``a`` at ``node`` and ``1 - a`` for ``dg``; everything else at a=1, b=0."""
    aw = {n: 1.0 for n in s.network.nodes}
    bw = {c: 0.0 for c in s.network.converters}
    aw[node] = a
    bw[dg] = 1.0 - a
    return WeightConfig(aw, bw)


def steady_state(s: Scenario, w: WeightConfig, updates: int = 2) -> SimulationLog:
    """Quasi-static run that ends after ``updates`` secondary updates settled."""
    sec = s.secondary
    t_end = sec.first_at + updates * sec.period
    s2 = replace(
        s,
        weights=w,
        secondary=replace(sec, enabled=True),
        sim=replace(s.sim, mode="quasi_static", t_end=t_end),
        events=tuple(e for e in s.events if e.at < t_end),
    )
    return run_simulation(s2)


def run_weight_sweep(
    s: Scenario,
    kind: Literal["uniform", "single"] = "uniform",
    values: Sequence[float] | None = None,
    node: str = "N4",
    dg: str = "DG3",
    updates: int = 2,
) -> SweepReport:
    """Steady-state voltage deviation and virtual current over a weight sweep."""
    if values is None:
        values = np.round(np.arange(0.9, 0.05, -0.1), 10) if kind == "uniform" else np.round(np.arange(1.0, 0.05, -0.1), 10)
    pts = []
    v_nom = s.network.base.v_peak
    for a in values:
        w = uniform_weights(s, float(a)) if kind == "uniform" else single_weights(s, node, dg, float(a))
        lg = steady_state(s, w, updates)
        vm = lg.vmag[-1]
        dev = {n: float(abs(1.0 - vm[k] / v_nom)) for k, n in enumerate(lg.nodes)}
        iv = {c: float(abs(lg.i_v[-1][j])) for j, c in enumerate(lg.converters)}
        sat = {c: bool(np.any([row[j].any() for row in lg.saturation])) for j, c in enumerate(lg.converters)}
        pts.append(SweepPoint(float(a), w, dev, float(lg.deviation[-1]), iv, sat, lg))
    return SweepReport(kind, tuple(pts))


def initial_snapshot(s: Scenario, timestamp: float = 0.0) -> MeasurementSnapshot:
    """Measurement snapshot of the scenario's initial quasi-static equilibrium."""
    controls = {c.id: c.control() for c in s.converters}
    sol = quasi_static_solve(s.network, controls, tol_pu=s.sim.solver_tol_pu)
    return snapshot_from_solution(
        s.network, sol, {c.id: c.setpoints for c in s.converters},
        {c.id: c.gains for c in s.converters}, timestamp,
    )
