"""Report serialization and delimited dumps.

Reports are JSON documents with sorted keys and repr-round-trip floats, so
identical runs produce byte-identical files apart from the ``generated_at``
stamp. All artifacts are written atomically (temp file plus rename).
"""

from __future__ import annotations

import datetime
import json
import os
import tempfile

import numpy as np


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json_atomic(path, payload: dict) -> None:
    data = json.dumps(_jsonable(payload), sort_keys=True, indent=2)
    _write_text_atomic(path, data + "\n")


def _write_text_atomic(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_atomic(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    _write_text_atomic(path, "\n".join(lines) + "\n")


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def state_to_dict(state) -> dict:
    return {"m": [float(v) for v in state.m],
            "v": [float(v) for v in state.v],
            "z": [float(v) for v in state.z],
            "epsilon": float(state.epsilon)}


def equilibrium_to_dict(report, include_trace: bool = False) -> dict:
    out = {
        "state": state_to_dict(report.state),
        "residuals": report.residuals.to_dict(),
        "all_nonempty": bool(report.all_nonempty),
        "iterations": int(report.iterations),
        "start_index": int(report.start_index),
        "realized_sizes": [float(v) for v in report.partition.realized_sizes],
        "realized_characteristics": [float(v) for v in
                                     report.partition.realized_characteristics],
        "type_masses": [[float(v) for v in row]
                        for row in report.partition.type_masses],
        "tie_count": int(report.partition.tie_count),
    }
    if report.stability is not None:
        out["stability"] = report.stability.to_dict()
    if report.welfare is not None:
        out["welfare"] = report.welfare.to_dict()
    if include_trace and report.trace:
        out["trace"] = [[int(i), float(r)] for i, r in report.trace]
    return out


def build_report(kind: str, config_text: str, equilibria, extras=None,
                 include_trace: bool = False) -> dict:
    payload = {
        "schema": "tiebout-report/1",
        "kind": kind,
        "generated_at": datetime.datetime.now(datetime.timezone.utc)
        .isoformat(),
        "config_text": config_text,
        "equilibria": [equilibrium_to_dict(r, include_trace) for r in equilibria],
    }
    if extras:
        payload.update(_jsonable(extras))
    return payload


def write_partition_csv(path, mu, partition) -> None:
    k_max = max(s.space.dimension for s in mu.samples)
    header = ([f"x_{d+1}" for d in range(k_max)]
              + ["type", "label", "cost_assigned", "cost_best_alternative"])
    rows = []
    for t, s in enumerate(mu.samples):
        labels = partition.labels[t]
        assigned = partition.assigned_costs[t]
        other = partition.best_other_costs[t]
        for idx in range(len(s.points)):
            coords = [float(c) for c in s.points[idx]]
            coords += [""] * (k_max - len(coords))
            rows.append(coords + [s.space.index, int(labels[idx]) + 1,
                                  float(assigned[idx]), float(other[idx])])
    write_csv_atomic(path, header, rows)


def write_borders_csv(path, borders) -> None:
    header = ["vx_1", "vx_2", "density", "grad_gap", "arc_weight"]
    rows = []
    for border in borders:
        for idx in range(len(border.vertices)):
            vx = [float(c) for c in border.vertices[idx]]
            if len(vx) == 1:
                vx = [vx[0], ""]
            rows.append(vx + [float(border.density[idx]),
                              float(border.grad_gap[idx]),
                              float(border.arc_weight[idx])])
    write_csv_atomic(path, header, rows)


def write_locus_csv(path, loci) -> None:
    """loci: list of (delta_p, chains)."""
    header = ["delta_p", "chain", "vx_1", "vx_2"]
    rows = []
    for delta_p, chains in loci:
        for c_idx, chain in enumerate(chains):
            for vertex in chain:
                rows.append([float(delta_p), c_idx, float(vertex[0]),
                             float(vertex[1])])
    write_csv_atomic(path, header, rows)


def write_sweep_csv(path, table, n_communities: int) -> None:
    pairs = sorted({(c.i, c.j) for row in table.rows if row.status == "ok"
                    for c in row.conditions})
    header = (["param", "branch", "status"]
              + [f"m_{i+1}" for i in range(n_communities)]
              + [f"condition_{i+1}_{j+1}" for i, j in pairs]
              + ["classification", "size_residual", "agent_max_regret"])
    rows = []
    for row in table.rows:
        if row.status != "ok":
            rows.append([row.value, "", row.status]
                        + [""] * (n_communities + len(pairs) + 3))
            continue
        eq = row.equilibrium
        cells = [row.value, row.branch_id, row.status]
        cells += [float(v) for v in eq.state.m]
        for pair in pairs:
            val = row.condition_sum(pair)
            cells.append("" if val is None else float(val))
        cells += [row.classification,
                  float(eq.residuals.size_residual),
                  float(eq.residuals.agent_max_regret)]
        rows.append(cells)
    write_csv_atomic(path, header, rows)
