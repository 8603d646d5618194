"""Run reports: deterministic JSON, text tables and flow-line CSV."""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

SCHEMA_VERSION = 1
SIGNIFICANT = 12


def _clean(obj):
    """Recursively convert to JSON-ready values with pinned float precision."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        x = float(f"{x:.{SIGNIFICANT}g}")
        return 0.0 if x == 0 else x
    return obj


def to_json(report):
    """Byte-stable JSON: sorted keys, floats at 12 significant digits."""
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _matrix_lines(M, indent="    "):
    M = np.asarray(M)
    if M.size == 0:
        return [f"{indent}({M.shape[0]}x{M.shape[1]} empty)"]
    width = max(len(str(int(v))) for v in M.ravel())
    return [indent + "[ " + " ".join(str(int(v)).rjust(width) for v in row) + " ]" for row in M]


def to_text(report):
    """Human-readable tables for a run report."""
    out = []
    sc = report["scenario"]
    out.append(f"scenario {sc['name']}  (manifold of dimension {sc['dim']} in R^{sc['ambient_dim']})")
    out.append(f"  f = {sc['f']}")
    for c in sc["constraints"]:
        out.append(f"  0 = {c}")
    out.append("")
    out.append("critical points")
    out.append("   id  index            f  location")
    for c in report["critical_points"]:
        loc = ", ".join(f"{v: .6f}" for v in c["location"])
        out.append(f"  {c['id']:3d}  {c['index']:5d}  {c['value']: .8f}  ({loc})")
    ms = report["morse_smale"]
    out.append("")
    out.append(f"Morse-Smale: {'pass' if ms['passed'] else 'FAIL'}")
    for o in ms["offending"]:
        out.append(f"  flow line {o['source']} -> {o['target']} between points of non-decreasing index")
    if report.get("orbits") is not None:
        out.append("")
        out.append("connecting orbits")
        out.append("  source target lift sign  level point")
        for o in report["orbits"]:
            pt = ", ".join(f"{v: .6f}" for v in o["point"])
            out.append(f"  {o['source']:6d} {o['target']:6d} {o['target_lift']:4d} {o['sign']:+4d}  "
                       f"{o['level']:.6f} ({pt})")
    if report.get("boundary") is not None:
        out.append("")
        out.append("boundary matrices (columns: sources, rows: targets)")
        gens = report["generators"]
        for k in sorted(report["boundary"], key=int):
            out.append(f"  d_{k}: C_{k} {gens[k]} -> C_{int(k) - 1} {gens[str(int(k) - 1)]}")
            out.extend(_matrix_lines(report["boundary"][k]))
    for title, key in (("homology", "homology"), ("cohomology", "cohomology")):
        sec = report.get(key)
        if not sec:
            continue
        out.append("")
        out.append(title)
        for ring in sorted(sec):
            groups = sec[ring]["groups"]
            cells = "  ".join(f"{'H' if key == 'homology' else 'H^'}{k}={g}" for k, g in enumerate(groups))
            out.append(f"  over {ring}: {cells}")
        z = sec.get("Z", {})
        for k, gens_k in sorted(z.get("generators", {}).items(), key=lambda kv: int(kv[0])):
            for g in gens_k:
                out.append(f"    generator in degree {k}: {_chain_text(g, report['generators'][k])}")
    out.append("")
    out.append("checks")
    for name in sorted(report["checks"]):
        c = report["checks"][name]
        verdict = "skipped" if c["passed"] is None else ("pass" if c["passed"] else "FAIL")
        out.append(f"  {name:22s} {verdict}  {c.get('detail', '')}")
    cont = report.get("continuation")
    if cont:
        out.append("")
        out.append(f"continuation to {cont['target']}  (kappa = {cont['kappa']:.6g})")
        for k in sorted(cont["psi"], key=int):
            out.append(f"  psi_{k}:")
            out.extend(_matrix_lines(cont["psi"][k]))
    for e in report.get("errors", []):
        out.append(f"error in {e['stage']}: {e['type']}: {e['message']}")
    if report.get("timings"):
        out.append("")
        out.append("timings (s): " + ", ".join(f"{k} {v:.2f}" for k, v in report["timings"].items()))
    return "\n".join(out) + "\n"


def _chain_text(coeffs, ids):
    terms = []
    for c, i in zip(coeffs, ids):
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = "" if abs(c) == 1 else f"{abs(c)}*"
        terms.append(f"{sign} {mag}c{i}")
    if not terms:
        return "0"
    text = " ".join(terms)
    return text[2:] if text.startswith("+ ") else "-" + text[2:]


def emit_report(report, fmt="json", path=None):
    """Write a report as JSON or text to ``path`` (stdout when None)."""
    if fmt not in ("json", "text"):
        raise ValueError(f"unknown report format {fmt!r}")
    text = to_json(report) if fmt == "json" else to_text(report)
    if path is None or path == "-":
        import sys

        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def flowline_rows(spec, orbits):
    """Rows ``(orbit_id, source, target, sign, t, p1..pN, f)``."""
    rows = []
    for oid, o in enumerate(orbits):
        tr = o.trajectory
        for t, p, v in zip(tr.times, tr.points, tr.values):
            rows.append([oid, o.source, o.target, o.sign, float(t), *map(float, p), float(v)])
    return rows


def write_flowlines(spec, orbits, path):
    header = ["orbit_id", "source_id", "target_id", "sign", "t"]
    header += [f"p{i + 1}" for i in range(spec.ambient_dim)] + ["f"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in flowline_rows(spec, orbits):
        w.writerow([r[0], r[1], r[2], r[3]] + [f"{x:.{SIGNIFICANT}g}" for x in r[4:]])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    return len(orbits)
