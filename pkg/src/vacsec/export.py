"""CSV time series and JSON metrics summary for a :class:`SimulationLog`.

Column order of ``timeseries.csv``::

    time_s, update
    Vrms_<node>                      line-to-line rms volts, one per node
    P_<dg>, Q_<dg>, i_d_<dg>, i_q_<dg>, R_v_<dg>, L_v_<dg>
                                     W, var, A, A, pu, pu; grouped per DG
    total_deviation, saturation

``saturation`` is a bitmask: bit ``2j`` is the d-axis limit of DG ``j`` and
bit ``2j + 1`` its q-axis limit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .simulation import SimulationLog

CSV_NAME = "timeseries.csv"
METRICS_NAME = "metrics.json"
DG_FIELDS = ("P", "Q", "i_d", "i_q", "R_v", "L_v")


class ExportError(ValueError):
    pass


def columns(log: SimulationLog) -> list[str]:
    cols = ["time_s", "update"]
    cols += [f"Vrms_{n}" for n in log.nodes]
    cols += [f"{f}_{c}" for c in log.converters for f in DG_FIELDS]
    return cols + ["total_deviation", "saturation"]


def saturation_mask(flags: np.ndarray) -> int:
    bits = np.asarray(flags, bool).reshape(-1)
    return int(sum(1 << k for k, b in enumerate(bits) if b))


def _num(x: float) -> str:
    return repr(float(x))


def rows(log: SimulationLog):
    vrms = log.vrms
    for k, t in enumerate(log.t):
        row = [_num(t), str(int(log.marker[k]))]
        row += [_num(v) for v in vrms[k]]
        for j in range(len(log.converters)):
            row += [
                _num(log.p[k][j]), _num(log.q[k][j]), _num(log.i_d[k][j]),
                _num(log.i_q[k][j]), _num(log.r_v[k][j]), _num(log.l_v[k][j]),
            ]
        row += [_num(log.deviation[k]), str(saturation_mask(log.saturation[k]))]
        yield row


def saturation_events(log: SimulationLog) -> list[dict]:
    """Rising edges of each converter limit flag."""
    events = []
    prev = np.zeros((len(log.converters), 2), bool)
    for k, t in enumerate(log.t):
        cur = np.asarray(log.saturation[k], bool).reshape(len(log.converters), 2)
        for j, c in enumerate(log.converters):
            for a, axis in enumerate("dq"):
                if cur[j, a] and not prev[j, a]:
                    events.append({"t": float(t), "dg": c, "axis": axis})
        prev = cur
    return events


def metrics(log: SimulationLog) -> dict:
    if len(log) == 0:
        raise ExportError("nothing to export")
    fixed = next((k + 1 for k, u in enumerate(log.updates) if u.update.converged), None)
    return {
        "final_deviation": float(log.deviation[-1]),
        "final_objective": float(log.objective[-1]) if log.objective else None,
        "updates": len(log.updates),
        "iterations_to_fixed_point": fixed,
        "deviation_at_updates": [float(d) for d in log.deviation_at_updates],
        "saturation_events": saturation_events(log),
        "diagnostics": list(log.diagnostics),
        "nodes": list(log.nodes),
        "converters": list(log.converters),
    }


def export(log: SimulationLog, path: str | Path) -> list[Path]:
    """Write the CSV and metrics files into directory ``path``."""
    if len(log) == 0:
        raise ExportError("nothing to export")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / CSV_NAME
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns(log))
        w.writerows(rows(log))
    met_path = out / METRICS_NAME
    met_path.write_text(json.dumps(metrics(log), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [csv_path, met_path]
