"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel on the bundled four-node case, checks that both backends
agree, and prints the speed-up.  A full quasi-static run of the same case
is timed under each backend as an end-to-end figure.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from vacsec.experiments import initial_snapshot
from vacsec.kernels import backends
from vacsec.network import converter_arrays
from vacsec.scenario import bundled_scenario
from vacsec.secondary import local_problem

CASE = "table2_table3"


def _inputs():
    s = bundled_scenario(CASE)
    net = s.network
    controls = {c.id: c.control() for c in s.converters}
    _, cf, ci = converter_arrays(net, controls)
    v0 = np.full(len(net.nodes), net.base.v_peak + 0j)
    snap = initial_snapshot(s)
    lp = local_problem("DG1", snap, net, s.params, s.bounds)
    g, b = np.meshgrid(np.linspace(0.01, 10.0, 400), np.linspace(-10.0, -0.01, 400))
    return dict(
        ybus=net.ybus(), i_src=net.source_injection(), lf=net.load_array(), cf=cf, ci=ci,
        v0=v0, lp=lp, g=g.ravel(), b=b.ravel(),
    )


def _calls(k, d):
    lp = d["lp"]
    return {
        "conv_injection": lambda: k.conv_injection(d["v0"], d["cf"], d["ci"]),
        "kcl_residual": lambda: k.kcl_residual(d["v0"], d["ybus"], d["i_src"], d["lf"], d["cf"], d["ci"]),
        "solve_kcl": lambda: k.solve_kcl(d["ybus"], d["i_src"], d["lf"], d["cf"], d["ci"], d["v0"], 1e-9, 100),
        "grid_eval_160k": lambda: k.grid_eval(
            d["g"], d["b"], lp.z_base, lp.ysum, lp.rhs, lp.vs, lp.v_nom, 1.0, 0.0,
            lp.i_base, lp.ipq, lp.i_max, 0.1, 5e-4,
        ),
    }


def _agree(a, b) -> float:
    if isinstance(a, tuple):
        return max(_agree(x, y) for x, y in zip(a, b))
    if isinstance(a, (int, float, complex, np.number, np.ndarray)):
        x, y = np.asarray(a), np.asarray(b)
        if x.dtype == bool or y.dtype == bool:
            return float(np.any(x != y))
        x = np.where(np.isfinite(x), x, 0)
        y = np.where(np.isfinite(y), y, 0)
        return float(np.max(np.abs(x - y) / np.maximum(1.0, np.abs(x)))) if x.size else 0.0
    return 0.0


def _end_to_end(pure: bool) -> float:
    env = dict(os.environ, VACSEC_PURE_PYTHON="1" if pure else "0")
    code = (
        "import time;from vacsec.scenario import bundled_scenario;"
        "from vacsec.simulation import run_simulation;"
        f"s=bundled_scenario({CASE!r});t=time.perf_counter();run_simulation(s);"
        "print(time.perf_counter()-t)"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    bk = backends()
    if "cython" not in bk:
        print("compiled backend not built; run `pip install --no-build-isolation -e .`")
        sys.exit(1)
    d = _inputs()
    py, cy = _calls(bk["python"], d), _calls(bk["cython"], d)
    print(f"{'kernel':18s} {'python [us]':>12s} {'cython [us]':>12s} {'speed-up':>9s} {'max rel diff':>13s}")
    for name in py:
        n = 3 if name.startswith("grid") else 200
        tp = min(timeit.repeat(py[name], number=n, repeat=args.repeat)) / n
        tc = min(timeit.repeat(cy[name], number=n, repeat=args.repeat)) / n
        diff = _agree(py[name](), cy[name]())
        print(f"{name:18s} {tp * 1e6:12.1f} {tc * 1e6:12.1f} {tp / tc:8.1f}x {diff:13.2e}")
    tp, tc = _end_to_end(True), _end_to_end(False)
    print(f"{'simulate ' + CASE:18s} {tp * 1e6:12.0f} {tc * 1e6:12.0f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
