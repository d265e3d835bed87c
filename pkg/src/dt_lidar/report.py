"""Gap-report JSON handling and static SVG rendering."""

from __future__ import annotations

import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import ValidationError
from .stats import METRICS as STAT_METRICS

GAP_METRICS = ("cd", "mmd", "emd", "fd")
SPACES = ("raw", "latent")
_METRIC_TITLES = {"cd": "Chamfer", "mmd": "MMD", "emd": "EMD", "fd": "Frechet"}
_STAT_TITLES = {"point_count": "points/frame", "box_count": "boxes/frame",
                "mean_box_volume": "box volume"}
_SPACE_COLORS = {"raw": "#4477aa", "latent": "#ee6677"}
_SIDE_COLORS = {"a": "#228833", "b": "#aa3377"}


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError(f"report: {where} must be a finite number")
    return float(v)


def validate_report(report) -> dict:
    """Check the structure of a gap report, returning it unchanged."""
    if not isinstance(report, dict):
        raise ValidationError("report: expected a JSON object")
    if "raw" not in report:
        raise ValidationError("report: missing 'raw' block")
    for space in SPACES:
        if space not in report:
            continue
        block = report[space]
        if not isinstance(block, dict):
            raise ValidationError(f"report: '{space}' must be an object")
        for m in GAP_METRICS:
            if _num(block.get(m), f"{space}.{m}") < 0:
                raise ValidationError(f"report: {space}.{m} must be >= 0")
        proj = block.get("projection")
        if proj is not None:
            if not isinstance(proj, dict):
                raise ValidationError(f"report: {space}.projection must be an object")
            for side in ("a", "b"):
                rows = proj.get(side)
                if not isinstance(rows, list) or any(
                        not isinstance(r, list) or len(r) != 2 for r in rows):
                    raise ValidationError(
                        f"report: {space}.projection.{side} must be a list of 2-D points")
                for r in rows:
                    _num(r[0], f"{space}.projection.{side}")
                    _num(r[1], f"{space}.projection.{side}")
    stats = report.get("stats")
    if not isinstance(stats, dict) or not isinstance(stats.get("normalized"), dict):
        raise ValidationError("report: missing 'stats.normalized' block")
    for m in STAT_METRICS:
        pair = stats["normalized"].get(m)
        if not isinstance(pair, list) or len(pair) != 2:
            raise ValidationError(f"report: stats.normalized.{m} must be a pair")
        for v in pair:
            _num(v, f"stats.normalized.{m}")
    return report


def load_report(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    return validate_report(data)


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def render_svg(report: dict) -> str:
    """Render bars for each gap metric and a radar of normalized frame stats."""
    validate_report(report)
    spaces = [s for s in SPACES if s in report]
    panel_w, panel_h, bar_w = 150, 180, 40
    width = 40 + panel_w * len(GAP_METRICS) + 320
    projected = [s for s in spaces if report[s].get("projection")]
    height = 560 if projected else 300
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        '<g id="metrics">',
    ]
    base_y = 40 + panel_h
    for k, metric in enumerate(GAP_METRICS):
        x0 = 40 + k * panel_w
        values = [float(report[s][metric]) for s in spaces]
        top = max(values) if max(values) > 0 else 1.0
        out.append(f'<g class="metric-group" data-metric="{metric}">')
        out.append(f'<text x="{x0 + panel_w / 2 - 10:.1f}" y="25" text-anchor="middle">'
                   f'{_METRIC_TITLES[metric]}</text>')
        out.append(f'<line x1="{x0}" y1="{base_y}" x2="{x0 + panel_w - 20}" y2="{base_y}" '
                   'stroke="black"/>')
        for j, (space, value) in enumerate(zip(spaces, values)):
            h = (panel_h - 20) * value / top
            bx = x0 + 10 + j * (bar_w + 10)
            out.append(
                f'<rect class="metric-bar" data-space="{space}" data-metric="{metric}" '
                f'data-value="{value!r}" x="{bx}" y="{base_y - h:.3f}" width="{bar_w}" '
                f'height="{h:.3f}" fill="{_SPACE_COLORS[space]}"/>')
            out.append(f'<text x="{bx + bar_w / 2}" y="{base_y - h - 4:.3f}" '
                       f'text-anchor="middle">{_fmt(value)}</text>')
            out.append(f'<text x="{bx + bar_w / 2}" y="{base_y + 14}" '
                       f'text-anchor="middle">{space}</text>')
        out.append('</g>')
    out.append('</g>')

    cx = 40 + panel_w * len(GAP_METRICS) + 150
    cy, radius = 150, 100
    norm = report["stats"]["normalized"]
    n = len(STAT_METRICS)
    angles = [-math.pi / 2 + 2 * math.pi * i / n for i in range(n)]
    out.append('<g id="stats-radar">')
    out.append(f'<text x="{cx}" y="25" text-anchor="middle">normalized frame statistics</text>')
    for metric, ang in zip(STAT_METRICS, angles):
        ex, ey = cx + radius * math.cos(ang), cy + radius * math.sin(ang)
        out.append(f'<line class="radar-axis" x1="{cx}" y1="{cy}" x2="{ex:.3f}" y2="{ey:.3f}" '
                   'stroke="#999999"/>')
        out.append(f'<text x="{cx + 1.15 * radius * math.cos(ang):.3f}" '
                   f'y="{cy + 1.15 * radius * math.sin(ang) + 4:.3f}" text-anchor="middle">'
                   f'{escape(_STAT_TITLES[metric])}</text>')
    for side, idx in (("a", 0), ("b", 1)):
        pts = []
        for metric, ang in zip(STAT_METRICS, angles):
            r = radius * float(norm[metric][idx])
            pts.append(f"{cx + r * math.cos(ang):.3f},{cy + r * math.sin(ang):.3f}")
        out.append(f'<polygon class="radar-{side}" points="{" ".join(pts)}" '
                   f'fill="{_SIDE_COLORS[side]}" fill-opacity="0.25" '
                   f'stroke="{_SIDE_COLORS[side]}"/>')
    for side, y in (("a", 270), ("b", 285)):
        out.append(f'<text x="{cx - 60}" y="{y}" fill="{_SIDE_COLORS[side]}">'
                   f'dataset {side}</text>')
    out.append('</g>')
    if projected:
        out.extend(_projection_panels(report, projected))
    out.append('</svg>')
    return "\n".join(out) + "\n"


def _projection_panels(report: dict, spaces) -> list:
    size, top = 220, 320
    out = ['<g id="projections">']
    for j, space in enumerate(spaces):
        proj = report[space]["projection"]
        x0 = 40 + j * (size + 60)
        pts = [(side, p) for side in ("a", "b") for p in proj[side]]
        extent = max((max(abs(u), abs(v)) for _, (u, v) in pts), default=0.0) or 1.0
        scale = (size / 2 - 6) / extent
        cx, cy = x0 + size / 2, top + size / 2
        out.append(f'<g class="projection" data-space="{space}">')
        out.append(f'<text x="{cx}" y="{top - 6}" text-anchor="middle">{space} PCA</text>')
        out.append(f'<rect x="{x0}" y="{top}" width="{size}" height="{size}" fill="none" '
                   'stroke="#999999"/>')
        for side, (u, v) in pts:
            out.append(f'<circle class="proj-{side}" cx="{cx + u * scale:.3f}" '
                       f'cy="{cy - v * scale:.3f}" r="1.5" fill="{_SIDE_COLORS[side]}" '
                       'fill-opacity="0.5"/>')
        out.append('</g>')
    out.append('</g>')
    return out


def write_svg(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(report), encoding="utf-8")
    return path
