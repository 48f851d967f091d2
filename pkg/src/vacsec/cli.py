"""Command line entry point: ``vacsec <command> <scenario> ...``.

``<scenario>`` is a path to a scenario file or the stem of a bundled one
(``vacsec validate table2_table3``).  Exit status is 0 on success, 1 on a
scenario or simulation error and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Sequence

from .export import export
from .scenario import ScenarioError, bundled_scenarios, resolve_scenario
from .simulation import SimulationError, run_simulation


def _load(ref: str):
    return resolve_scenario(ref)


def _cmd_validate(args) -> int:
    s = _load(args.scenario)
    print(
        f"ok: {s.name}: {len(s.network.nodes)} nodes, {len(s.converters)} converters, "
        f"{len(s.events)} events, mode {s.sim.mode}, dt {s.sim.dt:g} s, t_end {s.sim.t_end:g} s"
    )
    return 0


def _cmd_simulate(args) -> int:
    s = _load(args.scenario)
    t0 = time.perf_counter()
    lg = run_simulation(s, mode=args.mode, t_end=args.t_end)
    dt = time.perf_counter() - t0
    print(f"{s.name}: {len(lg)} samples, {len(lg.updates)} updates, {dt:.2f} s wall")
    for u in lg.updates:
        gains = " ".join(f"{c}=({g.r_v:.4g},{g.l_v:.4g})" for c, g in u.update.gains.items())
        print(
            f"  update t={u.t_applied:g} s  deviation {u.deviation_before:.6g}  "
            f"converged {u.update.converged}  {gains}"
        )
    vrms = lg.vrms[-1]
    print("  final Vrms " + " ".join(f"{n}={v:.2f}" for n, v in zip(lg.nodes, vrms)))
    print(f"  final total deviation {lg.deviation[-1]:.6g}")
    for d in lg.diagnostics:
        print(f"  warning: {d}")
    if args.out:
        for p in export(lg, args.out):
            print(f"  wrote {p}")
    return 0


def _cmd_batch(args) -> int:
    from .experiments import run_stochastic_batch

    s = _load(args.scenario)
    rep = run_stochastic_batch(s, runs=args.runs, seed=args.seed)
    for r in rep.runs:
        if r.error is not None:
            print(f"run {r.index:3d}  FAILED  {r.error}")
            continue
        traj = " ".join(f"{d:.5g}" for d in r.deviation)
        sat = ",".join(r.saturated) or "-"
        print(f"run {r.index:3d}  monotone {str(r.monotone):5s}  stable {str(r.stable()):5s}  sat {sat:11s}  {traj}")
    print(
        f"seed {rep.seed}: {len(rep.runs)} runs, {len(rep.failures)} failed, "
        f"{len(rep.non_monotone)} non-monotone, {len(rep.unstable)} rising outside saturation"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        data = {
            "seed": rep.seed,
            "runs": [
                {
                    "index": r.index, "loads": r.loads, "generation": r.generation,
                    "deviation": list(r.deviation), "converged": r.converged,
                    "saturated": list(r.saturated), "error": r.error,
                }
                for r in rep.runs
            ],
        }
        p = out / "batch.json"
        p.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"wrote {p}")
    return 1 if rep.failures else 0


def _cmd_sweep(args) -> int:
    from .experiments import run_weight_sweep

    s = _load(args.scenario)
    rep = run_weight_sweep(s, args.kind, node=args.node, dg=args.dg)
    nodes = list(rep.points[0].deviation)
    dgs = list(rep.points[0].i_v)
    print("a      total     " + " ".join(f"{n:>9s}" for n in nodes) + "  " + " ".join(f"|iv|{d:>5s}" for d in dgs))
    for p in rep.points:
        dev = " ".join(f"{p.deviation[n]:9.5f}" for n in nodes)
        cur = " ".join(f"{p.i_v[d]:8.3f}{'*' if p.saturated[d] else ' '}" for d in dgs)
        print(f"{p.value:4.2f}  {p.total_deviation:.6f}  {dev}  {cur}")
    print("* saturated during the run")
    return 0


def _cmd_oracle(args) -> int:
    from .experiments import initial_snapshot
    from .secondary import GridSpec, brute_force_oracle, solve_subproblem

    s = _load(args.scenario)
    if args.dg not in s.network.converters:
        print(f"error: unknown converter {args.dg!r}", file=sys.stderr)
        return 1
    snap = initial_snapshot(s)
    spec = GridSpec(args.grid, args.grid)
    res = solve_subproblem(args.dg, snap, s.weights, s.bounds, s.network, s.params)
    orc = brute_force_oracle(args.dg, snap, s.weights, s.bounds, s.network, s.params, spec)
    gap = (res.objective_term - orc.objective) / max(abs(orc.objective), 1e-12)
    print(f"solver  g={res.g:.6g} b={res.b:.6g}  R_v={res.gains.r_v:.6g} L_v={res.gains.l_v:.6g}  J={res.objective_term:.9g}")
    print(f"oracle  g={orc.g:.6g} b={orc.b:.6g}  R_v={orc.gains.r_v:.6g} L_v={orc.gains.l_v:.6g}  J={orc.objective:.9g}")
    print(f"gap {gap:+.3e} relative")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vacsec", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("scenario")
    p.add_argument("--out", help="directory for CSV and metrics files")
    p.add_argument("--mode", choices=("quasi_static", "rms_dynamic"))
    p.add_argument("--t-end", type=float, dest="t_end")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("batch", help="randomised operating-point batch")
    p.add_argument("scenario")
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_batch)

    p = sub.add_parser("sweep", help="steady-state weight sweep")
    p.add_argument("scenario")
    p.add_argument("--kind", choices=("uniform", "single"), default="uniform")
    p.add_argument("--node", default="N4")
    p.add_argument("--dg", default="DG3")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("validate", help="parse and validate a scenario")
    p.add_argument("scenario")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("oracle", help="compare the subproblem solver with a grid search")
    p.add_argument("scenario")
    p.add_argument("--dg", required=True)
    p.add_argument("--grid", type=int, default=400)
    p.set_defaults(func=_cmd_oracle)

    sub.add_parser("list", help="list bundled scenarios").set_defaults(func=_cmd_list)
    return ap


def _cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
