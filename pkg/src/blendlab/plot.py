"""Dependency-free SVG scatter plots of blended samples over concept ellipses."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .concepts import ConceptSpec

log = logging.getLogger(__name__)

SIZE = 800
MARGIN = 60
MAX_POINTS = 2000
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
CONCEPT_COLOR = "#333333"


def _fmt(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _ellipse(cov: np.ndarray) -> tuple[float, float, float]:
    vals, vecs = np.linalg.eigh(cov)
    rx, ry = np.sqrt(np.maximum(vals[::-1], 0.0))
    major = vecs[:, 1]
    angle = float(np.degrees(np.arctan2(major[1], major[0])))
    return float(rx), float(ry), angle


def render_svg(runs: Mapping[str, np.ndarray], concepts: Sequence[ConceptSpec], title: str = "") -> str:
    """SVG document for sample sets keyed by run name, over the concepts' components."""
    if not runs or any(np.asarray(x).shape[0] == 0 for x in runs.values()):
        raise ValueError("cannot plot an empty sample set")
    pts = {}
    for name, x in runs.items():
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] < 2:
            x = np.column_stack([x[:, 0], np.zeros(len(x))])
        elif x.shape[1] > 2:
            log.warning("run %s has dimension %d; plotting the first two coordinates", name, x.shape[1])
        pts[name] = x[:MAX_POINTS, :2]

    comps = []
    for c in concepts:
        mix = c.mixture
        for k in range(mix.n_components):
            mu = mix.means[k][:2] if mix.dim >= 2 else np.array([mix.means[k][0], 0.0])
            cov = mix.covs[k][:2, :2] if mix.dim >= 2 else np.diag([mix.covs[k][0, 0], 1e-12])
            comps.append((c.label, k, mu, cov))

    allx = np.vstack(list(pts.values()) + [np.array([mu]) for _, _, mu, _ in comps])
    lo, hi = allx.min(axis=0), allx.max(axis=0)
    for _, _, mu, cov in comps:
        r = np.sqrt(np.max(np.linalg.eigvalsh(cov)))
        lo, hi = np.minimum(lo, mu - r), np.maximum(hi, mu + r)
    center = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo)) * 1.05 or 1.0
    scale = (SIZE - 2 * MARGIN) / (2 * half)

    def tx(p):
        return SIZE / 2 + (p[0] - center[0]) * scale, SIZE / 2 - (p[1] - center[1]) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>',
    ]
    if title:
        out.append(
            f'<text x="{SIZE // 2}" y="24" text-anchor="middle" font-family="sans-serif" '
            f'font-size="16">{escape(title)}</text>'
        )
    for i, (name, x) in enumerate(pts.items()):
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<g class="run" id="run-{i}" fill="{color}" fill-opacity="0.35">')
        for p in x:
            cx, cy = tx(p)
            out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="1.6"/>')
        out.append("</g>")
    for label, k, mu, cov in comps:
        rx, ry, ang = _ellipse(cov)
        cx, cy = tx(mu)
        out.append(f'<g class="component" data-concept="{escape(label)}" data-index="{k}">')
        out.append(
            f'<ellipse cx="0" cy="0" rx="{_fmt(rx * scale)}" ry="{_fmt(ry * scale)}" '
            f'transform="translate({_fmt(cx)} {_fmt(cy)}) rotate({_fmt(-ang)})" '
            f'fill="none" stroke="{CONCEPT_COLOR}" stroke-width="1.5"/>'
        )
        out.append(
            f'<path d="M {_fmt(cx - 6)} {_fmt(cy)} L {_fmt(cx + 6)} {_fmt(cy)} '
            f'M {_fmt(cx)} {_fmt(cy - 6)} L {_fmt(cx)} {_fmt(cy + 6)}" '
            f'stroke="{CONCEPT_COLOR}" stroke-width="2"/>'
        )
        out.append("</g>")
    out.append('<g class="legend" font-family="sans-serif" font-size="13">')
    y = 44
    for i, name in enumerate(pts):
        out.append(f'<rect x="{SIZE - 190}" y="{y - 10}" width="12" height="12" fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(f'<text x="{SIZE - 172}" y="{y}">{escape(str(name))}</text>')
        y += 18
    labels = list(dict.fromkeys(lab for lab, _, _, _ in comps))
    out.append(f'<text x="{SIZE - 190}" y="{y}">concepts: {escape(", ".join(labels))}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg(runs: Mapping[str, np.ndarray], concepts: Sequence[ConceptSpec], path, title: str = "") -> Path:
    doc = render_svg(runs, concepts, title)  # raises before anything is written
    path = Path(path)
    path.write_text(doc, encoding="utf-8", newline="\n")
    return path
