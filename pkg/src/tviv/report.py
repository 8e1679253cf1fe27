"""Table rendering and the forest-plot SVG writer.

Everything here is deterministic string building: identical inputs yield
identical bytes, which the CLI round-trip tests rely on.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import MalformedResultsError


def fmt(value, digits=4) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return "nan"
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.{digits}f}"
    return str(value)


def render_aligned(headers, rows) -> str:
    """Space-padded text table with a dashed header rule."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(headers))]
    def line(row):
        return "  ".join(c.rjust(w) for c, w in zip(row, widths))
    out = [line(cells[0]), "  ".join("-" * w for w in widths)]
    out.extend(line(r) for r in cells[1:])
    return "\n".join(out) + "\n"


STUDY_COLUMNS = (
    "regime", "method", "n", "alpha",
    "sigma_z", "sigma_a", "sigma_y",
    "bias", "rmse", "mce", "coverage", "n_successful", "error",
)


def study_rows(grid_rows, include_sigma=None):
    """Flatten GridRow records into tabular cells (Table-1 column order)."""
    if include_sigma is None:
        include_sigma = any(
            r.sigma_z or r.sigma_a or r.sigma_y for r in grid_rows
        )
    headers = ["regime", "method", "n", "alpha"]
    if include_sigma:
        headers += ["sigma_z", "sigma_a", "sigma_y"]
    headers += ["bias", "rmse", "mce", "coverage", "n_successful", "error"]
    rows = []
    for r in grid_rows:
        row = [r.regime, r.method, r.n, fmt(float(r.alpha), 2)]
        if include_sigma:
            row += [r.sigma_z, r.sigma_a, r.sigma_y]
        if r.metrics is None:
            row += ["", "", "", "", "", r.error or "failed"]
        else:
            m = r.metrics
            row += [
                fmt(m.abs_bias), fmt(m.rmse), fmt(m.mce),
                fmt(m.coverage, 1) if m.coverage is not None else "",
                m.n_successful, "",
            ]
        rows.append(row)
    return headers, rows


def rows_to_csv(headers, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    writer.writerows(rows)
    return buf.getvalue()


def estimate_rows(result, boot=None):
    """Per-term rows (beta_1..beta_T, ate) with optional CI columns."""
    T = len(result.beta)
    headers = ["method", "term", "estimate", "ci_lower", "ci_upper"]
    rows = []
    for t in range(T):
        lo = fmt(float(boot.ci_lower[t])) if boot is not None else ""
        hi = fmt(float(boot.ci_upper[t])) if boot is not None else ""
        rows.append([result.method, f"beta_{t + 1}", fmt(float(result.beta[t])), lo, hi])
    lo = fmt(float(boot.ci_lower[-1])) if boot is not None else ""
    hi = fmt(float(boot.ci_upper[-1])) if boot is not None else ""
    rows.append([result.method, "ate", fmt(result.ate), lo, hi])
    return headers, rows


def _scale(lo, hi, x0, x1):
    span = hi - lo
    if span <= 0:
        span = 1.0
    def to_px(v):
        return x0 + (v - lo) / span * (x1 - x0)
    return to_px


def forest_plot_svg(entries) -> str:
    """Forest plot: one whisker row per entry (label, estimate, lo, hi).

    Static SVG with a zero reference line; byte-identical for identical
    inputs.
    """
    entries = list(entries)
    if not entries:
        raise MalformedResultsError("no rows to plot")
    for e in entries:
        if len(e) != 4:
            raise MalformedResultsError(f"row needs (label, estimate, lo, hi): {e!r}")
    width, row_h, top, left, right = 720, 42, 48, 190, 40
    height = top + row_h * len(entries) + 46
    values = [v for _, est, lo, hi in entries for v in (est, lo, hi)] + [0.0]
    vmin, vmax = min(values), max(values)
    pad = 0.08 * (vmax - vmin or 1.0)
    to_px = _scale(vmin - pad, vmax + pad, left, width - right)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="13">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    zero_x = to_px(0.0)
    parts.append(
        f'<line x1="{zero_x:.2f}" y1="{top - 18}" x2="{zero_x:.2f}" '
        f'y2="{height - 38}" stroke="#888" stroke-dasharray="4,3"/>'
    )
    for i, (label, est, lo, hi) in enumerate(entries):
        y = top + row_h * i + row_h / 2
        x_lo, x_hi, x_est = to_px(lo), to_px(hi), to_px(est)
        parts.append(f'<text x="10" y="{y + 4:.2f}">{label}</text>')
        parts.append(
            f'<line x1="{x_lo:.2f}" y1="{y:.2f}" x2="{x_hi:.2f}" y2="{y:.2f}" '
            f'stroke="black" stroke-width="1.5"/>'
        )
        for x in (x_lo, x_hi):
            parts.append(
                f'<line x1="{x:.2f}" y1="{y - 6:.2f}" x2="{x:.2f}" '
                f'y2="{y + 6:.2f}" stroke="black" stroke-width="1.5"/>'
            )
        parts.append(f'<circle cx="{x_est:.2f}" cy="{y:.2f}" r="4.5" fill="black"/>')
        parts.append(
            f'<text x="{width - right + 6}" y="{y + 4:.2f}" font-size="11">'
            f'{est:.3g}</text>'
        )
    axis_y = height - 30
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = (vmin - pad) + frac * ((vmax + pad) - (vmin - pad))
        x = to_px(v)
        parts.append(
            f'<line x1="{x:.2f}" y1="{axis_y - 4}" x2="{x:.2f}" y2="{axis_y}" '
            f'stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{axis_y + 14}" text-anchor="middle" '
            f'font-size="11">{v:.3g}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
