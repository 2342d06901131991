# frontend/render.py
"""
Deterministic SVG 1.1 renders of geodesic trees, unit flows and labels.

Lattice coordinates map to SVG user units one-to-one, shifted so the
window's lower-left corner sits at (0, side - 1) and y grows upward on
screen. Every tree edge is one <line>; nothing else uses <line>.
"""
from typing import Dict, List, Optional, Tuple
from xml.sax.saxutils import escape

from fpp_analysis.labeling import TreeFlow
from fpp_core.lattice import LatticePath, Vertex, Window
from fpp_core.metric import GeodesicTree

from backend.models import RenderOptions

PALETTES: Dict[str, Dict[str, str]] = {
    "default": {"background": "#ffffff", "edge": "#1f4e79", "path": "#c0392b", "label": "#222222"},
    "grayscale": {"background": "#ffffff", "edge": "#333333", "path": "#000000", "label": "#000000"},
}
BASE_STROKE = 0.04


def _header(window: Window, comment: Optional[str]) -> List[str]:
    size = window.side + 1
    parts = ['<?xml version="1.0" encoding="UTF-8"?>']
    if comment:
        parts.append(f"<!-- {escape(comment.replace('--', '- -'))} -->")
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{size * 8}" height="{size * 8}" viewBox="-1 -1 {size} {size}">'
    )
    return parts


def _to_svg(window: Window, v: Vertex) -> Tuple[int, int]:
    return v[0] - window.x_min, window.y_max - v[1]


def _line(window: Window, a: Vertex, b: Vertex, width: float, color: str) -> str:
    x1, y1 = _to_svg(window, a)
    x2, y2 = _to_svg(window, b)
    return (
        f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" '
        f'stroke="{color}" stroke-width="{width:.6f}" stroke-linecap="round"/>'
    )


def render_tree(
    tree: GeodesicTree,
    flow: Optional[TreeFlow] = None,
    labels: Optional[Dict[Vertex, float]] = None,
    options: Optional[RenderOptions] = None,
    comment: Optional[str] = None,
) -> str:
    """
    One line per tree edge (per carrying edge when a flow is given, with
    stroke width stroke_scale * mass). Leaf labels print F to 4 decimals.
    """
    options = options or RenderOptions()
    colors = PALETTES[options.palette]
    window = tree.window
    if tree.reached_count < 1:
        raise ValueError("cannot render an empty tree")

    parts = _header(window, comment)
    side = window.side
    parts.append(f'<rect x="-1" y="-1" width="{side + 1}" height="{side + 1}" fill="{colors["background"]}"/>')

    parts.append("<g>")
    if flow is not None:
        root = window.index(tree.source)
        for i in sorted(flow.mass):
            if i == root:
                continue
            child = window.vertex(i)
            parent = window.vertex(int(tree.parent[i]))
            parts.append(_line(window, parent, child, options.stroke_scale * flow.mass[i], colors["edge"]))
    else:
        for parent, child in sorted(tree.edges(), key=lambda e: window.index(e[1])):
            parts.append(_line(window, parent, child, options.stroke_scale * BASE_STROKE, colors["edge"]))
    parts.append("</g>")

    if labels and options.show_labels:
        parts.append(f'<g font-family="monospace" font-size="0.8" fill="{colors["label"]}">')
        for leaf in sorted(labels, key=lambda v: window.index(v)):
            x, y = _to_svg(window, leaf)
            parts.append(f'<text x="{x}" y="{y}">{labels[leaf]:.4f}</text>')
        parts.append("</g>")

    sx, sy = _to_svg(window, tree.source)
    parts.append(f'<circle cx="{sx}" cy="{sy}" r="0.3" fill="{colors["path"]}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_path(
    path: LatticePath,
    window: Window,
    options: Optional[RenderOptions] = None,
    comment: Optional[str] = None,
) -> str:
    """A single geodesic drawn as one polyline."""
    options = options or RenderOptions()
    colors = PALETTES[options.palette]
    parts = _header(window, comment)
    side = window.side
    parts.append(f'<rect x="-1" y="-1" width="{side + 1}" height="{side + 1}" fill="{colors["background"]}"/>')
    pts = " ".join("{},{}".format(*_to_svg(window, v)) for v in path)
    parts.append(
        f'<polyline points="{pts}" fill="none" stroke="{colors["path"]}" '
        f'stroke-width="{options.stroke_scale * BASE_STROKE:.6f}"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
