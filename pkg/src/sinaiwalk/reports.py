"""Deterministic report writers: JSON, RFC 4180 CSV and static SVG."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


def to_plain(obj):
    """Recursively convert numpy values and tuples to JSON-ready Python; NaN/inf -> None."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(to_plain(obj), indent=2, sort_keys=True, ensure_ascii=False,
                      allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g") if math.isfinite(v) else ""
    if v is None:
        return ""
    return str(v)


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h) for h in header]
            w.writerow([_cell(v) for v in row])
    return path


# ---------------------------------------------------------------------------
# SVG

_W, _H, _PAD = 640, 400, 48


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">')
    return "\n".join([head, f"<title>{escape(title)}</title>",
                      f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
                      *body, "</svg>", ""])


def _axes(xmin, xmax, ymin, ymax, xlabel, ylabel):
    def sx(x):
        return _PAD + (x - xmin) / (xmax - xmin) * (_W - 2 * _PAD)

    def sy(y):
        return _H - _PAD - (y - ymin) / (ymax - ymin) * (_H - 2 * _PAD)

    body = [f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
            f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
            f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
            f'<text x="14" y="{_H / 2:.1f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 14 {_H / 2:.1f})">{escape(ylabel)}</text>']
    for frac in (0.0, 0.5, 1.0):
        x = xmin + frac * (xmax - xmin)
        y = ymin + frac * (ymax - ymin)
        body.append(f'<text x="{sx(x):.1f}" y="{_H - _PAD + 16}" text-anchor="middle" '
                    f'font-size="10">{x:.3g}</text>')
        body.append(f'<text x="{_PAD - 4}" y="{sy(y) + 3:.1f}" text-anchor="end" '
                    f'font-size="10">{y:.3g}</text>')
    return sx, sy, body


def exit_time_density(t: np.ndarray) -> np.ndarray:
    """Density of the exit time of standard Brownian motion from (-1, 1), started at 0.

    Its Laplace transform is 1/cosh(sqrt(2 lam)); the short-time image series is
    used below t = 1 and the eigenfunction series above.
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    small = (t > 0) & (t < 1.0)
    ts = t[small]
    for k in range(6):
        a = 2 * k + 1
        out[small] += (-1) ** k * a / np.sqrt(2 * np.pi * ts ** 3) * np.exp(-a * a / (2 * ts))
    large = t >= 1.0
    tl = t[large]
    for k in range(6):
        a = 2 * k + 1
        out[large] += (-1) ** k * (np.pi / 4) * a * np.exp(-a * a * np.pi ** 2 * tl / 8)
    return out


def cosh2_density(x: np.ndarray, dt: float = 0.005) -> np.ndarray:
    """Density with Laplace transform 1/cosh^2(sqrt(2 lam)): two exit times convolved."""
    grid = np.arange(0.0, float(np.max(x)) + dt, dt)
    f = exit_time_density(grid)
    g = np.convolve(f, f)[:grid.size] * dt
    return np.interp(x, grid, g)


def gaps_histogram_svg(path: str | Path, gaps: np.ndarray, bins: int = 40) -> Path:
    gaps = np.asarray(gaps, dtype=np.float64)
    xmax = float(np.quantile(gaps, 0.995)) if gaps.size else 1.0
    hist, edges = np.histogram(gaps, bins=bins, range=(0.0, xmax), density=True)
    xs = np.linspace(0.0, xmax, 200)
    curve = cosh2_density(xs)
    ymax = float(max(hist.max(initial=0.0), curve.max())) * 1.1 or 1.0
    sx, sy, body = _axes(0.0, xmax, 0.0, ymax, "rescaled gap", "density")
    for h, a, b in zip(hist, edges[:-1], edges[1:]):
        body.append(f'<rect x="{sx(a):.2f}" y="{sy(h):.2f}" width="{sx(b) - sx(a):.2f}" '
                    f'height="{sy(0) - sy(h):.2f}" fill="#9ecae1" stroke="#3182bd" stroke-width="0.5"/>')
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, curve))
    body.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="1.5"/>')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_svg(body, "rescaled gaps between Gamma-maxima"), encoding="utf-8")
    return path


def potential_svg(path: str | Path, lo: int, S: np.ndarray, maxima, minima,
                  edge: float | None = None) -> Path:
    x = np.arange(lo, lo + S.size)
    ymin, ymax = float(S.min()), float(S.max())
    if ymax == ymin:
        ymax = ymin + 1.0
    sx, sy, body = _axes(float(x[0]), float(x[-1]) if x.size > 1 else x[0] + 1.0,
                         ymin, ymax, "site", "potential S")
    step = max(1, S.size // 2000)
    pts = " ".join(f"{sx(xi):.2f},{sy(si):.2f}" for xi, si in zip(x[::step], S[::step]))
    body.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="0.8"/>')
    for xs, colour in ((maxima, "#d62728"), (minima, "#2ca02c")):
        for p in xs:
            if lo <= p < lo + S.size:
                body.append(f'<circle cx="{sx(p):.2f}" cy="{sy(S[p - lo]):.2f}" r="3" fill="{colour}"/>')
    if edge is not None:
        for e in (-edge, edge):
            if x[0] <= e <= x[-1]:
                body.append(f'<line x1="{sx(e):.2f}" y1="{_PAD}" x2="{sx(e):.2f}" y2="{_H - _PAD}" '
                            f'stroke="grey" stroke-dasharray="4 3"/>')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_svg(body, "potential with valley markers"), encoding="utf-8")
    return path
