"""Flat SVG overlays of torus orbits in the unit square.

Segments that cross the boundary of the fundamental domain are split at the
crossing so no line is drawn across the square.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .torus import EigenFrame, reduce_point, wrap

SIZE = 600


def _xy(p, size=SIZE):
    # y axis points up in the plot
    return float(p[0]) * size, (1.0 - float(p[1])) * size


def split_segment(p, q) -> list:
    """Pieces of the shortest torus segment ``p -> q`` as ``[(a, b), ...]`` inside the unit square."""
    p = reduce_point(p)
    d = wrap(np.asarray(q, dtype=float) - p)
    # parameters where the straight segment p + t d crosses an integer line
    ts = [0.0, 1.0]
    for ax in (0, 1):
        if d[ax] != 0:
            for edge in (0.0, 1.0):
                t = (edge - p[ax]) / d[ax]
                if 0.0 < t < 1.0:
                    ts.append(float(t))
    ts = sorted(set(ts))
    out = []
    for t0, t1 in zip(ts[:-1], ts[1:]):
        mid = reduce_point(p + 0.5 * (t0 + t1) * d)
        shift = mid - (p + 0.5 * (t0 + t1) * d)
        a = p + t0 * d + shift
        b = p + t1 * d + shift
        out.append((a, b))
    return out


def _polyline(points, color, width, size=SIZE, closed=False) -> list:
    pts = [reduce_point(x) for x in points]
    pairs = list(zip(pts, pts[1:] + (pts[:1] if closed else [])))
    lines = []
    for a, b in pairs:
        for u, v in split_segment(a, b):
            x1, y1 = _xy(u, size)
            x2, y2 = _xy(v, size)
            lines.append(f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" '
                         f'stroke="{color}" stroke-width="{width}"/>')
    return lines


def _dots(points, color, r, size=SIZE) -> list:
    out = []
    for p in reduce_point(np.asarray(points, dtype=float).reshape(-1, 2)):
        x, y = _xy(p, size)
        out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="{r}" fill="{color}"/>')
    return out


def rect_corners(frame: EigenFrame, p, delta1: float, delta2: float) -> np.ndarray:
    """Corners of ``P(delta1, delta2, p)`` on the torus, in cyclic order."""
    Z = np.array([[-delta2, -delta1], [delta2, -delta1], [delta2, delta1], [-delta2, delta1]])
    return reduce_point(np.asarray(p, dtype=float) + frame.from_chart(Z))


def orbit_overlay(pseudo, shadow=None, frame: Optional[EigenFrame] = None, delta1: float = 0.0,
                  delta2: float = 0.0, rect_steps: Sequence[int] = (), size: int = SIZE) -> str:
    """SVG text with the pseudo-orbit (blue), shadow orbit (red) and rectangle outlines (grey)."""
    pseudo = np.asarray(pseudo, dtype=float).reshape(-1, 2)
    body = [f'<rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="black" stroke-width="1"/>']
    if frame is not None and delta1 > 0 and delta2 > 0:
        for k in rect_steps:
            if 0 <= k < len(pseudo):
                body += _polyline(list(rect_corners(frame, pseudo[k], delta1, delta2)), "#888888", 0.8, size, closed=True)
    body += _polyline(list(pseudo), "#1f77b4", 0.6, size)
    body += _dots(pseudo, "#1f77b4", 1.5, size)
    if shadow is not None:
        shadow = np.asarray(shadow, dtype=float).reshape(-1, 2)
        body += _polyline(list(shadow), "#d62728", 0.6, size)
        body += _dots(shadow, "#d62728", 1.0, size)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">')
    return "\n".join([head] + body + ["</svg>"]) + "\n"


def write_svg(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)
