from __future__ import annotations

import math

import pytest

from vacsec.dq import Admittance2, DqVec, PerUnitBase, RLParams, rl_to_admittance
from vacsec.network import GridSource, Line, LoadSpec, NetworkModel
from vacsec.scenario import bundled_scenario

V_PEAK = 400.0 * math.sqrt(2.0) / math.sqrt(3.0)
OMEGA = 2.0 * math.pi * 50.0

# criterion label -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def line_y(r: float, l: float) -> Admittance2:
    return rl_to_admittance(RLParams(r, l), OMEGA)


def two_bus(load: LoadSpec | None = None, y_g: Admittance2 | None = None) -> NetworkModel:
    """Grid at N1 behind ``y_g``, one line N1-N2 with a load at N2."""
    return NetworkModel(
        nodes=("N1", "N2"),
        lines=(Line("N1", "N2", line_y(0.7, 0.9e-3)),),
        grid_source=GridSource("N1", DqVec(V_PEAK, 0.0), y_g or line_y(0.08, 0.25e-3)),
        loads={"N2": load} if load is not None else {},
        base=PerUnitBase(75e3, 400.0, 50.0),
    )


@pytest.fixture(scope="session")
def table_scenario():
    return bundled_scenario("table2_table3")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE, key=lambda k: (not k.isdigit(), int(k) if k.isdigit() else 0, k)):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>5s}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_operating_point(seed: int, vac: bool = True):
    """Table scenario with random loads, set-points and gains, solved.

    Raises ``NetworkSolveError`` for draws without an equilibrium.
    """
    import numpy as np

    from vacsec.converter import ConverterControl, Setpoints, VacGains
    from vacsec.network import quasi_static_solve
    from vacsec.secondary import snapshot_from_solution

    rng = np.random.default_rng(seed)
    s = bundled_scenario("table2_table3")
    net = s.network.with_loads({
        n: LoadSpec.constant_power(float(rng.uniform(0, 40e3)), float(rng.uniform(-5e3, 5e3)))
        for n in s.network.nodes if rng.random() < 0.8
    })
    sp, gains, ctl = {}, {}, {}
    for c in s.converters:
        sp[c.id] = Setpoints(float(rng.uniform(0, 12e3)), float(rng.uniform(-3e3, 3e3)))
        gains[c.id] = VacGains(float(rng.uniform(0.1, 1.5)), float(rng.uniform(5e-4, 0.3)))
        ctl[c.id] = ConverterControl(c.params, sp[c.id], gains[c.id], vac)
    sol = quasi_static_solve(net, ctl)
    snap = snapshot_from_solution(net, sol, sp, gains, 0.0)
    return s, net, sol, snap


def solvable_snapshots(count: int, start: int = 0, vac: bool = True):
    from vacsec.network import NetworkSolveError

    out, seed = [], start
    while len(out) < count:
        try:
            out.append(random_operating_point(seed, vac))
        except NetworkSolveError:
            pass
        seed += 1
    return out
