"""Readiness report assembly and HTML rendering.

A client payload carries only aggregates: standard metrics, loop traces
(compacted), a class histogram, fixed-bin distribution histograms and 2-D PCA
projections, never raw rows. The server-side report is a single
self-contained HTML document (inline SVG, no external assets) plus a
machine-readable ``report.json`` it can be re-rendered from byte-identically.
"""

from __future__ import annotations

import html
import json
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .engine import ReadinessOutcome
from .metrics import MetricValue, standard_metrics
from .rules import render_rule
from .table import DataTable, numeric_values

DEFAULT_HISTOGRAM_BINS = 20
_DETAIL_LEAF_LIMIT = 64

PALETTE = [
    "#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed",
    "#0891b2", "#be185d", "#4d7c0f", "#b45309", "#475569",
]

_STATUS_COLORS = {
    "ready": "#15803d",
    "flagged": "#b91c1c",
    "degenerate": "#b45309",
    "absent": "#64748b",
}


def _leaf_count(v: Any) -> int:
    if isinstance(v, dict):
        return sum(_leaf_count(x) for x in v.values())
    if isinstance(v, (list, tuple)):
        return sum(_leaf_count(x) for x in v)
    return 1


def compact_detail(detail: dict[str, Any], max_leaves: int = _DETAIL_LEAF_LIMIT) -> dict[str, Any]:
    """Detail entries small enough to ship: everything row-sized is dropped."""
    return {k: v for k, v in detail.items() if _leaf_count(v) <= max_leaves}


def metric_to_json(m: MetricValue, with_detail: bool = True) -> dict[str, Any]:
    out: dict[str, Any] = {"name": m.name, "value": m.value}
    if with_detail and m.detail:
        detail = compact_detail(m.detail)
        if detail:
            out["detail"] = detail
    return out


def outcome_summary(o: ReadinessOutcome) -> dict[str, Any]:
    """Loop trace without the local table."""
    return {
        "module_id": o.module_id,
        "final_status": o.final_status,
        "trace": [
            {
                "iteration": e.iteration,
                "metric": metric_to_json(e.metric_value),
                "rule": render_rule(e.verdict.rule),
                "violated": e.verdict.violated,
                "remedy_summary": e.remedy_summary,
            }
            for e in o.trace
        ],
    }


def default_histogram_columns(t: DataTable) -> list[str]:
    label = t.meta.label_column
    numeric = [c.name for c in t.numeric_columns() if c.name != label]
    return numeric[:4]


def _histogram(t: DataTable, column: str, bins: int) -> dict[str, Any] | None:
    vals = numeric_values(t.column(column))
    if vals.size == 0:
        return None
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if hi == lo:
        hi = lo + 1.0
    edges = [lo + i * (hi - lo) / bins for i in range(bins + 1)]
    counts, _ = np.histogram(vals, bins=np.array(edges))
    return {"column": column, "edges": edges, "counts": [int(c) for c in counts]}


def class_histogram(t: DataTable) -> dict[str, int]:
    if t.meta.label_column is None:
        return {}
    counts: dict[str, int] = {}
    for v in t.column(t.meta.label_column).values:
        if v is not None:
            counts[str(v)] = counts.get(str(v), 0) + 1
    return dict(sorted(counts.items()))


def build_client_payload(
    table: DataTable,
    outcomes: Sequence[ReadinessOutcome],
    pca_points: list[tuple[float, float]] | None = None,
    histogram_columns: Sequence[str] | None = None,
    histogram_bins: int = DEFAULT_HISTOGRAM_BINS,
) -> dict[str, Any]:
    """Aggregate-only client payload; size is O(d^2 + bins + sample), never
    O(n_rows * d)."""
    if histogram_columns is None:
        histogram_columns = default_histogram_columns(table)
    histograms = []
    for name in histogram_columns:
        if table.has_column(name) and table.column(name).kind.is_numeric:
            h = _histogram(table, name, histogram_bins)
            if h is not None:
                histograms.append(h)
    return {
        "client_id": table.meta.client_id,
        "standard_metrics": [metric_to_json(m, with_detail=False)
                             for m in standard_metrics(table)],
        "outcomes": [outcome_summary(o) for o in outcomes],
        "class_histogram": class_histogram(table),
        "distribution_histograms": histograms,
        "pca_points": [[x, y] for x, y in pca_points] if pca_points is not None else None,
    }


@dataclass(frozen=True)
class DrReport:
    """Aggregated readiness report: machine-readable data plus rendered HTML."""

    data: dict[str, Any]
    html: str


def build_report(
    experiment_id: str,
    payloads: Sequence[dict[str, Any]],
    generated_at: str,
    absent: Sequence[str] = (),
    pca_explained_variance: Sequence[float] | None = None,
) -> DrReport:
    """Assemble the report from collected client payloads."""
    clients = sorted(payloads, key=lambda p: p["client_id"])
    counts = {"ready": 0, "flagged": 0, "degenerate": 0}
    for p in clients:
        for o in p["outcomes"]:
            counts[o["final_status"]] = counts.get(o["final_status"], 0) + 1
    data = {
        "experiment_id": experiment_id,
        "generated_at": generated_at,
        "clients": clients,
        "combined_pca": {
            "explained_variance": (
                [float(v) for v in pca_explained_variance]
                if pca_explained_variance is not None else None
            ),
            "points": [
                {"client_id": p["client_id"], "points": p["pca_points"] or []}
                for p in clients
            ],
        },
        "summary": {**counts, "absent": sorted(absent)},
    }
    return DrReport(data, render_html(data))


def report_to_json(report: DrReport) -> str:
    return json.dumps(report.data, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> DrReport:
    """Rebuild (re-render) a report from its JSON form; the timestamp is
    preserved, so the HTML is byte-identical to the original."""
    data = json.loads(text)
    return DrReport(data, render_html(data))


def write_report(report: DrReport, output_dir) -> tuple[str, str]:
    from pathlib import Path

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    html_path = out / "report.html"
    json_path = out / "report.json"
    html_path.write_text(report.html, encoding="utf-8")
    json_path.write_text(report_to_json(report), encoding="utf-8")
    return str(html_path), str(json_path)


# -- HTML rendering -----------------------------------------------------------

def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _esc(v: Any) -> str:
    return html.escape(str(v), quote=True)


def _badge(status: str) -> str:
    color = _STATUS_COLORS.get(status, "#334155")
    return (f'<span class="badge" style="background:{color}">'
            f"{_esc(status.capitalize())}</span>")


def svg_bar_chart(title: str, labels: list[str], values: list[float],
                  width: int = 340, height: int = 200, color: str = "#2563eb") -> str:
    pad_l, pad_b, pad_t = 34.0, 34.0, 22.0
    plot_w = width - pad_l - 8
    plot_h = height - pad_b - pad_t
    vmax = max(values) if values and max(values) > 0 else 1.0
    n = max(len(values), 1)
    slot = plot_w / n
    bar_w = slot * 0.72
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" role="img">',
        f'<text x="{pad_l}" y="14" class="ct">{_esc(title)}</text>',
        f'<line x1="{pad_l}" y1="{pad_t + plot_h:.2f}" x2="{width - 8}" '
        f'y2="{pad_t + plot_h:.2f}" stroke="#94a3b8" stroke-width="1"/>',
    ]
    for i, (label, value) in enumerate(zip(labels, values)):
        h = plot_h * (value / vmax)
        x = pad_l + i * slot + (slot - bar_w) / 2
        y = pad_t + plot_h - h
        parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" '
                     f'height="{h:.2f}" fill="{color}"/>')
        parts.append(f'<text x="{x + bar_w / 2:.2f}" y="{y - 3:.2f}" '
                     f'class="cv" text-anchor="middle">{_esc(_fmt(value))}</text>')
        show = n <= 8 or i == 0 or i == n - 1 or i == n // 2
        if show:
            parts.append(f'<text x="{x + bar_w / 2:.2f}" y="{pad_t + plot_h + 14:.2f}" '
                         f'class="cl" text-anchor="middle">{_esc(label)}</text>')
    parts.append("</svg>")
    return "".join(parts)


def svg_scatter(series: list[tuple[str, list[list[float]]]],
                width: int = 520, height: int = 360,
                title: str = "Combined PCA projection") -> str:
    pad = 36.0
    all_pts = [p for _, pts in series for p in pts]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" role="img">',
        f'<text x="{pad}" y="16" class="ct">{_esc(title)}</text>',
    ]
    if not all_pts:
        parts.append(f'<text x="{width / 2:.2f}" y="{height / 2:.2f}" class="cl" '
                     f'text-anchor="middle">no projection data</text>')
        parts.append("</svg>")
        return "".join(parts)
    xs = [p[0] for p in all_pts]
    ys = [p[1] for p in all_pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0
    x_lo -= 0.05 * x_span
    x_hi += 0.05 * x_span
    y_lo -= 0.05 * y_span
    y_hi += 0.05 * y_span
    plot_w = width - 2 * pad
    plot_h = height - 2 * pad

    def sx(x: float) -> float:
        return pad + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return pad + (y_hi - y) / (y_hi - y_lo) * plot_h

    parts.append(f'<rect x="{pad}" y="{pad}" width="{plot_w:.2f}" height="{plot_h:.2f}" '
                 f'fill="none" stroke="#94a3b8" stroke-width="1"/>')
    for k, (label, pts) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        for p in pts:
            parts.append(f'<circle cx="{sx(p[0]):.2f}" cy="{sy(p[1]):.2f}" r="2.6" '
                         f'fill="{color}" fill-opacity="0.75"/>')
        ly = pad + 14 + 16 * k
        parts.append(f'<circle cx="{width - pad - 108:.2f}" cy="{ly - 4:.2f}" r="4" fill="{color}"/>')
        parts.append(f'<text x="{width - pad - 98:.2f}" y="{ly:.2f}" class="cl">{_esc(label)}</text>')
    parts.append(f'<text x="{width / 2:.2f}" y="{height - 8:.2f}" class="cl" '
                 f'text-anchor="middle">component 1</text>')
    parts.append(f'<text x="12" y="{height / 2:.2f}" class="cl" '
                 f'transform="rotate(-90 12 {height / 2:.2f})" text-anchor="middle">component 2</text>')
    parts.append("</svg>")
    return "".join(parts)


_CSS = """
body { font-family: "Segoe UI", Tahoma, sans-serif; color: #0f172a; background: #f8fafc; margin: 0; }
main { max-width: 1100px; margin: 1.5rem auto; padding: 0 1rem; }
section { background: #ffffff; border: 1px solid #dbe3ef; border-radius: 10px; padding: 1rem 1.25rem; margin-bottom: 1rem; }
h1 { font-size: 1.4rem; margin: 0 0 0.3rem; }
h2 { font-size: 1.1rem; margin: 0 0 0.6rem; }
h3 { font-size: 0.95rem; margin: 0.8rem 0 0.4rem; color: #334155; }
table { border-collapse: collapse; width: 100%; font-size: 0.88rem; }
th, td { border-bottom: 1px solid #e2e8f0; padding: 0.35rem 0.5rem; text-align: left; }
th { color: #475569; }
.meta { color: #64748b; font-size: 0.85rem; }
.badge { color: #ffffff; border-radius: 999px; padding: 0.12rem 0.55rem; font-size: 0.78rem; }
.charts { display: flex; flex-wrap: wrap; gap: 0.8rem; }
.ct { font-size: 12px; fill: #334155; font-weight: 600; }
.cl { font-size: 10px; fill: #64748b; }
.cv { font-size: 9px; fill: #334155; }
.none { color: #64748b; font-style: italic; }
"""


def _standard_metrics_section(data: dict[str, Any]) -> str:
    clients = data["clients"]
    absent = data["summary"]["absent"]
    names: list[str] = []
    for p in clients:
        for m in p["standard_metrics"]:
            if m["name"] not in names:
                names.append(m["name"])
    rows = []
    header = "".join(f"<th>{_esc(p['client_id'])}</th>" for p in clients)
    header += "".join(f"<th>{_esc(a)} (absent)</th>" for a in absent)
    for name in names:
        cells = []
        for p in clients:
            found = next((m for m in p["standard_metrics"] if m["name"] == name), None)
            cells.append(f"<td>{_fmt(found['value']) if found else '&mdash;'}</td>")
        cells.extend("<td>&mdash;</td>" for _ in absent)
        rows.append(f"<tr><td>{_esc(name)}</td>{''.join(cells)}</tr>")
    if not rows:
        body = '<p class="none">no standard metrics</p>'
    else:
        body = (f"<table><thead><tr><th>metric</th>{header}</tr></thead>"
                f"<tbody>{''.join(rows)}</tbody></table>")
    return f'<section id="standard-metrics"><h2>Standard metrics</h2>{body}</section>'


def _custom_metrics_section(data: dict[str, Any]) -> str:
    rows = []
    for p in data["clients"]:
        for o in p["outcomes"]:
            trace = o["trace"]
            before = trace[0]["metric"]["value"] if trace else None
            after = trace[-1]["metric"]["value"] if trace else None
            rule = trace[0]["rule"] if trace else ""
            rows.append(
                "<tr>"
                f"<td>{_esc(p['client_id'])}</td>"
                f"<td>{_esc(o['module_id'])}</td>"
                f"<td>{_esc(trace[0]['metric']['name']) if trace else '&mdash;'}</td>"
                f"<td>{_fmt(before) if before is not None else '&mdash;'}</td>"
                f"<td>{_fmt(after) if after is not None else '&mdash;'}</td>"
                f"<td>{_esc(rule)}</td>"
                f"<td>{len(trace)}</td>"
                f"<td>{_badge(o['final_status'])}</td>"
                "</tr>"
            )
    for a in data["summary"]["absent"]:
        rows.append(f"<tr><td>{_esc(a)}</td><td colspan=\"6\">&mdash;</td>"
                    f"<td>{_badge('absent')}</td></tr>")
    if not rows:
        body = '<p class="none">none configured</p>'
    else:
        body = ("<table><thead><tr><th>client</th><th>module</th><th>metric</th>"
                "<th>before</th><th>after</th><th>violated when</th>"
                "<th>iterations</th><th>status</th></tr></thead>"
                f"<tbody>{''.join(rows)}</tbody></table>")
    return f'<section id="custom-metrics"><h2>Custom metrics</h2>{body}</section>'


def _client_charts_section(data: dict[str, Any]) -> str:
    blocks = []
    for p in data["clients"]:
        charts = []
        hist = p["class_histogram"]
        if hist:
            charts.append(svg_bar_chart("class distribution",
                                        list(hist.keys()),
                                        [float(v) for v in hist.values()]))
        for h in p["distribution_histograms"]:
            edges = h["edges"]
            labels = [_fmt((edges[i] + edges[i + 1]) / 2) for i in range(len(edges) - 1)]
            charts.append(svg_bar_chart(f"distribution: {h['column']}",
                                        labels,
                                        [float(v) for v in h["counts"]],
                                        color="#059669"))
        inner = ('<div class="charts">' + "".join(charts) + "</div>") if charts \
            else '<p class="none">no charts</p>'
        blocks.append(f"<h3>{_esc(p['client_id'])}</h3>{inner}")
    for a in data["summary"]["absent"]:
        blocks.append(f"<h3>{_esc(a)}</h3><p class=\"none\">absent: no data received</p>")
    return f'<section id="client-charts"><h2>Client charts</h2>{"".join(blocks)}</section>'


def _combined_charts_section(data: dict[str, Any]) -> str:
    combined = data["combined_pca"]
    series = [(e["client_id"], e["points"]) for e in combined["points"]]
    scatter = svg_scatter(series)
    note = ""
    ev = combined.get("explained_variance")
    if ev:
        note = (f'<p class="meta">leading eigenvalues of the pooled covariance: '
                f"{_fmt(ev[0])}, {_fmt(ev[1])}</p>")
    for a in data["summary"]["absent"]:
        note += f'<p class="none">{_esc(a)}: absent: not projected</p>'
    return (f'<section id="combined-charts"><h2>Combined charts</h2>'
            f"{scatter}{note}</section>")


def render_html(data: dict[str, Any]) -> str:
    s = data["summary"]
    head = (
        f'<section id="overview"><h1>Data readiness report: '
        f'{_esc(data["experiment_id"])}</h1>'
        f'<p class="meta">generated at {_esc(data["generated_at"])}</p>'
        f'<p class="meta">outcomes: {s.get("ready", 0)} ready, '
        f'{s.get("flagged", 0)} flagged, {s.get("degenerate", 0)} degenerate'
        + (f', absent clients: {", ".join(_esc(a) for a in s["absent"])}' if s["absent"] else "")
        + "</p></section>"
    )
    return (
        "<!doctype html>\n"
        '<html lang="en"><head><meta charset="utf-8"/>'
        f"<title>Data readiness report: {_esc(data['experiment_id'])}</title>"
        f"<style>{_CSS}</style></head><body><main>"
        + head
        + _standard_metrics_section(data)
        + _custom_metrics_section(data)
        + _client_charts_section(data)
        + _combined_charts_section(data)
        + "</main></body></html>\n"
    )


def render_report(
    payloads: Sequence[dict[str, Any]],
    combined_pca: Sequence[float] | None = None,
    experiment_id: str = "experiment",
    generated_at: str = "",
    absent: Sequence[str] = (),
) -> DrReport:
    """Render a report straight from payloads (combined scatter data lives in
    each payload's pca_points)."""
    return build_report(experiment_id, payloads, generated_at, absent, combined_pca)
