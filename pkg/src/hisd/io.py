"""Serialisation of trajectories and convergence reports.

Floats are written with ``repr``, the shortest string that parses back to
the same double, so files round-trip bit-exactly.
"""

import csv
import io
import json

import numpy as np

from .dynamics import DirectionDiagnostics, SaddleState, StepDiagnostics
from .harness import Trajectory


def format_tau(tau):
    """``2^-6`` for exact powers of two, ``repr`` otherwise."""
    m, e = np.frexp(tau)
    if m == 0.5:
        return f"2^{int(e) - 1}"
    return repr(float(tau))


def _vec(a):
    return [float(v) for v in a]


def _diag_record(d):
    if d is None:
        return None
    return {
        "x_tilde": _vec(d.x_tilde),
        "x_tilde_norm_defect": d.x_tilde_norm_defect,
        "directions": [
            {
                "v_tilde": _vec(r.v_tilde),
                "v_hat": _vec(r.v_hat),
                "transport_defect": r.transport_defect,
                "gs_defect": r.gs_defect,
                "Y": r.Y,
            }
            for r in d.directions
        ],
    }


def _diag_from_record(rec):
    if rec is None:
        return None
    return StepDiagnostics(
        np.array(rec["x_tilde"]),
        rec["x_tilde_norm_defect"],
        tuple(
            DirectionDiagnostics(
                np.array(r["v_tilde"]), np.array(r["v_hat"]),
                r["transport_defect"], r["gs_defect"], r["Y"],
            )
            for r in rec["directions"]
        ),
    )


def write_trajectory_jsonl(traj, fh):
    meta = {
        "type": "meta",
        "tau": traj.tau,
        "T": traj.T,
        "record_every": traj.record_every,
        "k": traj.k,
        "scheme": traj.scheme,
        "splitting": traj.splitting,
        "max_defects": traj.max_defects,
        "max_constraint": list(traj.max_constraint),
        "sign_flips": [list(f) for f in traj.sign_flips],
    }
    fh.write(json.dumps(meta) + "\n")
    diags = [None] + list(traj.diagnostics)
    for j, (t, s) in enumerate(zip(traj.times, traj.states)):
        rec = {
            "type": "state",
            "n": j * traj.record_every,
            "t": t,
            "x": _vec(s.x),
            "v": [_vec(v) for v in s.directions],
            "diagnostics": _diag_record(diags[j]) if j < len(diags) else None,
        }
        fh.write(json.dumps(rec) + "\n")


def read_trajectory_jsonl(fh):
    meta = None
    times, states, diags = [], [], []
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["type"] == "meta":
            meta = rec
        elif rec["type"] == "state":
            times.append(rec["t"])
            states.append(SaddleState(
                np.array(rec["x"]), tuple(np.array(v) for v in rec["v"]), rec["t"]
            ))
            if rec["n"] > 0 and rec["diagnostics"] is not None:
                diags.append(_diag_from_record(rec["diagnostics"]))
    if meta is None:
        raise ValueError("trajectory file has no meta record")
    return Trajectory(
        tau=meta["tau"],
        T=meta["T"],
        record_every=meta["record_every"],
        times=times,
        states=states,
        diagnostics=diags,
        scheme=meta["scheme"],
        splitting=meta["splitting"],
        max_defects=meta["max_defects"],
        max_constraint=tuple(meta["max_constraint"]),
        sign_flips=[tuple(f) for f in meta["sign_flips"]],
    )


def write_trajectory_csv(traj, fh):
    d = traj.states[0].dimension
    k = traj.k
    header = ["n", "t"] + [f"x{j + 1}" for j in range(d)]
    for i in range(k):
        header += [f"v{i + 1}_{j + 1}" for j in range(d)]
    header.append("x_tilde_norm_defect")
    for i in range(k):
        header += [f"transport_defect_v{i + 1}", f"gs_defect_v{i + 1}", f"Y_v{i + 1}"]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    diags = [None] + list(traj.diagnostics)
    for j, (t, s) in enumerate(zip(traj.times, traj.states)):
        row = [j * traj.record_every, repr(t)] + [repr(float(v)) for v in s.x]
        for v in s.directions:
            row += [repr(float(c)) for c in v]
        dg = diags[j] if j < len(diags) else None
        if dg is None:
            row += [""] * (1 + 3 * k)
        else:
            row.append(repr(dg.x_tilde_norm_defect))
            for r in dg.directions:
                row += [repr(r.transport_defect), repr(r.gs_defect), repr(r.Y)]
        w.writerow(row)


def read_trajectory_csv(fh):
    """Read back positions and directions written by :func:`write_trajectory_csv`."""
    rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("x") and h[1:].isdigit())
    k = sum(1 for h in header if h.startswith("v") and h.endswith("_1"))
    states = []
    for row in body:
        vals = [float(c) for c in row[2:2 + d * (k + 1)]]
        x = np.array(vals[:d])
        vs = tuple(np.array(vals[d * (i + 1):d * (i + 2)]) for i in range(k))
        states.append(SaddleState(x, vs, float(row[1])))
    return states


def _rate(r):
    return "" if r is None else repr(r)


def report_header(k):
    cols = ["tau", "err_x", "CR_x"]
    for i in range(k):
        cols += [f"err_v{i + 1}", f"CR_v{i + 1}"]
    return cols


def report_rows(report):
    rx = [None] + report.rates_x
    rv = [[None] + r for r in report.rates_v]
    for j, tau in enumerate(report.taus):
        row = [tau, report.err_x[j], rx[j]]
        for i in range(report.k):
            row += [report.err_v[i][j], rv[i][j]]
        yield row


def report_to_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report_header(report.k))
    for row in report_rows(report):
        out = [repr(row[0])]
        for j in range(1, len(row), 2):
            out += [repr(row[j]), _rate(row[j + 1])]
        w.writerow(out)
    return buf.getvalue()


def report_to_jsonl(report):
    lines = []
    for row in report_rows(report):
        rec = {"tau": row[0], "err_x": row[1], "CR_x": row[2]}
        for i in range(report.k):
            rec[f"err_v{i + 1}"] = row[3 + 2 * i]
            rec[f"CR_v{i + 1}"] = row[4 + 2 * i]
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def format_report_table(report):
    """Human-readable table, errors to 3 significant digits, rates to 2 decimals."""
    head = ["tau", "max|e_x|", "CR"]
    for i in range(report.k):
        head += [f"max|e_v{i + 1}|", "CR"]
    lines = ["\t".join(head)]
    for row in report_rows(report):
        cells = [format_tau(row[0])]
        for j in range(1, len(row), 2):
            cells.append(f"{row[j]:.2E}")
            cells.append("" if row[j + 1] is None else f"{row[j + 1]:.2f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
