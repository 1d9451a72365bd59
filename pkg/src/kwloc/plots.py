"""Static SVG rendering of one localisation example.

Top panel: feature heatmap with word boundaries and labels. Bottom panel:
the keyword's per-frame weights as a curve, with the proposed frame marked.
Output is plain text with fixed number formatting, so identical inputs give
identical bytes.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH = 900
HEAT_H = 160
CURVE_H = 140
MARGIN = 40


def _colour(v: float) -> str:
    # diverging blue-white-red on [-1, 1]
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, int(255 * (1 - v)), int(255 * (1 - v))
    else:
        r, g, b = int(255 * (1 + v)), int(255 * (1 + v)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def localisation_svg(
    features: np.ndarray,
    spans,
    frame_weights: np.ndarray,
    keyword: str,
    score: float,
    tau: int | None,
    theta: float,
    category: str,
) -> str:
    """Render features, spans and the per-input-frame weight curve."""
    T, F = features.shape
    plot_w = WIDTH - 2 * MARGIN
    cell_w = plot_w / T
    cell_h = HEAT_H / F
    scale = float(np.abs(features).max()) or 1.0
    height = MARGIN + HEAT_H + 30 + CURVE_H + MARGIN
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height:.0f}" '
        f'viewBox="0 0 {WIDTH} {height:.0f}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{height:.0f}" fill="white"/>',
    ]
    status = f"tau={tau}" if tau is not None else "no proposal"
    out.append(
        f'<text x="{MARGIN}" y="20">keyword {escape(keyword)}  score={score:.4f}  '
        f"theta={theta:.2f}  {status}  ({escape(category)})</text>"
    )
    top = MARGIN
    for t in range(T):
        for f in range(F):
            x = MARGIN + t * cell_w
            y = top + (F - 1 - f) * cell_h
            out.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{cell_w:.2f}" height="{cell_h:.2f}" '
                f'fill="{_colour(features[t, f] / scale)}"/>'
            )
    curve_top = top + HEAT_H + 30
    for s in spans:
        x0 = MARGIN + s.start * cell_w
        out.append(
            f'<line x1="{x0:.2f}" y1="{top}" x2="{x0:.2f}" y2="{curve_top + CURVE_H}" stroke="#333" stroke-width="0.6"/>'
        )
        xc = MARGIN + (s.start + s.end + 1) / 2 * cell_w
        weight = "bold" if s.word == keyword else "normal"
        out.append(
            f'<text x="{xc:.2f}" y="{top + HEAT_H + 16}" text-anchor="middle" font-weight="{weight}">'
            f"{escape(s.word)}</text>"
        )
    peak = float(frame_weights.max()) or 1.0
    pts = " ".join(
        f"{MARGIN + (t + 0.5) * cell_w:.2f},{curve_top + CURVE_H * (1 - frame_weights[t] / peak):.2f}" for t in range(T)
    )
    out.append(f'<polyline class="alpha" points="{pts}" fill="none" stroke="#c00" stroke-width="1.5"/>')
    out.append(
        f'<text x="{WIDTH - MARGIN}" y="{curve_top - 4}" text-anchor="end">'
        f"sum(alpha)={float(frame_weights.sum()):.6f}</text>"
    )
    if tau is not None:
        xt = MARGIN + (tau + 0.5) * cell_w
        out.append(
            f'<line x1="{xt:.2f}" y1="{curve_top}" x2="{xt:.2f}" y2="{curve_top + CURVE_H}" '
            f'stroke="#0a0" stroke-dasharray="4 2"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def frame_curve(weights: np.ndarray, frame_map: np.ndarray, T: int) -> np.ndarray:
    """Spread trunk-frame weights onto input frames at their mapped positions."""
    curve = np.zeros(T)
    np.add.at(curve, frame_map, weights)
    return curve
