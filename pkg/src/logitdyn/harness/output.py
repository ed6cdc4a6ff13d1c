"""CSV, SVG and JSON writers for trajectories, sweeps and verify reports."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from ..errors import InvalidInputError

SELECTORS = ("probs", "modal", "alphas")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _records(trajectories) -> list:
    if hasattr(trajectories, "records"):
        return list(trajectories.records)
    if isinstance(trajectories, dict):
        return [r for recs in trajectories.values() for r in recs]
    return list(trajectories)


def csv_header(num_classes: int) -> list:
    v = num_classes
    cols = ["step", "phase", "optimizer"]
    cols += [f"p_{i}" for i in range(v)]
    cols += [f"g_{i}" for i in range(v)]
    cols += [f"e_frozen_{k}" for k in range(1, v)]
    cols += [f"e_refreshed_{k}" for k in range(1, v)]
    cols += [f"lambda_{k}" for k in range(1, v)]
    cols += [f"alpha_{i}" for i in range(v)]
    cols += ["y_star", "tau", "delta_bin", "feasible", "err_w", "err_z", "err_g"]
    return cols


def _num(x) -> str:
    return format(float(x), ".17g")


def csv_row(rec) -> list:
    t = rec.top2
    row = [str(rec.step), rec.phase.value, rec.optimizer]
    for arr in (rec.probs, rec.residual, rec.e_frozen, rec.e_refreshed, rec.eigenvalues, rec.alphas.alpha):
        row += [_num(x) for x in arr]
    row += [str(rec.alphas.y_star), _num(t.tau), _num(t.delta_bin), "1" if t.feasible else "0"]
    row += [_num(rec.err_w), _num(rec.err_z), _num(rec.err_g)]
    return row


def emit_csv(trajectories, path) -> Path:
    recs = _records(trajectories)
    if not recs:
        raise InvalidInputError("no trajectory records to write")
    v = recs[0].probs.shape[0]
    recs.sort(key=lambda r: (r.optimizer, r.step))
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(csv_header(v))
        for r in recs:
            out.writerow(csv_row(r))
    return path


def read_csv(path) -> list:
    """Parse an emitted trajectory CSV back into dicts of floats (text columns kept)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key, val in row.items():
            if key not in ("phase", "optimizer"):
                row[key] = float(val)
    return rows


# -- SVG ---------------------------------------------------------------------


def _series(recs, selector) -> dict:
    """(optimizer, column) -> (steps, values)."""
    out = {}
    for r in sorted(recs, key=lambda r: (r.optimizer, r.step)):
        if selector == "probs":
            named = [(f"p_{i}", x) for i, x in enumerate(r.probs)]
        elif selector == "modal":
            named = [(f"e_refreshed_{k + 1}", x) for k, x in enumerate(r.e_refreshed)]
        else:
            named = [(f"alpha_{i}", x) for i, x in enumerate(r.alphas.alpha)]
        for col, val in named:
            steps, vals = out.setdefault((r.optimizer, col), ([], []))
            steps.append(r.step)
            vals.append(float(val))
    return out


def _bounds(values):
    finite = [v for v in values if math.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        lo, hi = lo - pad, hi + pad
    return lo, hi


def render_svg(trajectories, selector: str, width: int = 720, height: int = 420) -> str:
    if selector not in SELECTORS:
        raise InvalidInputError(f"selector must be one of {SELECTORS}, got {selector!r}")
    recs = _records(trajectories)
    if not recs:
        raise InvalidInputError("no trajectory records to plot")
    series = _series(recs, selector)
    all_steps = [s for steps, _ in series.values() for s in steps]
    x_lo, x_hi = _bounds([float(s) for s in all_steps])
    y_lo, y_hi = _bounds([v for _, vals in series.values() for v in vals])
    left, right, top, bottom = 60, 220, 20, 40
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return top + (y_hi - y) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
        f'<text x="{left}" y="{height - 10}" font-size="11">{escape(f"step {x_lo:g} .. {x_hi:g}")}</text>',
        f'<text x="{left - 55}" y="{top + 10}" font-size="11">{escape(f"{y_hi:.4g}")}</text>',
        f'<text x="{left - 55}" y="{top + ph}" font-size="11">{escape(f"{y_lo:.4g}")}</text>',
    ]
    for n, ((opt, col), (steps, vals)) in enumerate(series.items()):
        color = PALETTE[n % len(PALETTE)]
        pts = " ".join(f"{sx(s):.2f},{sy(v):.2f}" for s, v in zip(steps, vals) if math.isfinite(v))
        label = f"{opt}: {col}"
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}" data-label={quoteattr(label)}/>'
        )
        ly = top + 14 * (n + 1)
        parts.append(f'<line x1="{width - right + 10}" y1="{ly - 4}" x2="{width - right + 30}" y2="{ly - 4}" stroke="{color}"/>')
        parts.append(f'<text x="{width - right + 35}" y="{ly}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_svg(trajectories, selector: str, path) -> Path:
    text = render_svg(trajectories, selector)  # raises before touching the file
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    return path


# -- JSON --------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k) if not isinstance(k, tuple) else ":".join(map(str, k)): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def emit_json(data, path) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def emit_sweep_csv(sweep, path) -> Path:
    rows = sweep.rows()
    if not rows:
        raise InvalidInputError("empty sweep")
    v = len(rows[0]["final_probs"])
    cols = ["value", "optimizer", "eta", "rho"]
    cols += [f"p_{i}" for i in range(v)] + [f"abs_e_{k}" for k in range(1, v)]
    cols += ["first_err_w", "first_err_z", "first_err_g", "C_w", "C_z", "C_g"]
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(cols)
        for r in rows:
            line = [_num(r["value"]), r["optimizer"], _num(r["eta"]), _num(r["rho"])]
            line += [_num(x) for x in r["final_probs"]] + [_num(x) for x in r["final_abs_e"]]
            line += [_num(r[k]) for k in cols[-6:]]
            out.writerow(line)
    return path
