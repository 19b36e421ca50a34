"""Static SVG and plain-text views of cache traces, speculation traces, and
expert histograms.

Cache-trace grids put the token index on the horizontal axis and the expert
id on the vertical axis: one large filled square per activated expert, one
small gray square per cached (resident-before) expert. Speculation grids
put the layer on the horizontal axis and color cells by true positive /
false positive / false negative; layer 0 has nothing to guess from, so its
activated experts are drawn in the fn color but marked excluded and never
counted. Expert ids are displayed 0-based; layer labels alone are shown
1-based.

Every mark corresponds one-to-one with a log or trace entry (marks carry a
class attribute, so tests can parse the XML and recount them), output is
deterministic for fixed inputs, and no external resources are referenced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .metrics import ExpertHistogram
from .simulate import CacheEventLog
from .traces import ActivationTrace, SpeculationTrace

DEFAULT_PALETTE = {
    "activated": "#1f6fb2",
    "cached": "#9e9e9e",
    "tp": "#7d3c98",
    "fp": "#2e86de",
    "fn": "#c0392b",
}

# Text-grid cell characters (cache mode / speculation mode).
CH_BOTH = "#"
CH_ACTIVATED = "A"
CH_CACHED = "."
CH_EMPTY = " "
CH_TP = "+"
CH_FP = "g"
CH_FN = "x"


@dataclass(frozen=True)
class RenderSpec:
    mode: str = "cache_trace"  # cache_trace | speculation_trace | histogram
    cell_px: int = 12
    palette: dict = field(default_factory=lambda: dict(DEFAULT_PALETTE))

    def __post_init__(self):
        if self.mode not in ("cache_trace", "speculation_trace", "histogram"):
            raise ConfigError(f"unknown render mode {self.mode!r}")
        if self.cell_px < 4:
            raise ConfigError(f"cell_px must be >= 4, got {self.cell_px}")
        merged = dict(DEFAULT_PALETTE)
        merged.update(self.palette)
        object.__setattr__(self, "palette", merged)


_MARGIN_LEFT = 34
_MARGIN_TOP = 22
_MARGIN_BOTTOM = 18
_MARGIN_RIGHT = 8


def _svg_open(width: int, height: int, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="10">',
        f'<rect class="bg" x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text class="title" x="{_MARGIN_LEFT}" y="14" fill="#222222">{title}</text>',
    ]


def _grid_geometry(n_cols: int, n_rows: int, cell: int) -> tuple[int, int]:
    width = _MARGIN_LEFT + n_cols * cell + _MARGIN_RIGHT
    height = _MARGIN_TOP + n_rows * cell + _MARGIN_BOTTOM
    return width, height


def _row_labels(n_rows: int, cell: int) -> list[str]:
    out = []
    for e in range(n_rows):
        y = _MARGIN_TOP + e * cell + cell - 2
        out.append(f'<text class="ylabel" x="2" y="{y}" fill="#555555">{e}</text>')
    return out


def render_cache_trace(log: CacheEventLog, layer: int, spec: Optional[RenderSpec] = None) -> str:
    """SVG grid of one layer's activation and cache history."""
    spec = spec or RenderSpec(mode="cache_trace")
    if layer not in log.layers:
        raise ConfigError(f"layer {layer} was not simulated in this log")
    acts = log.activated[layer]
    rb = log.resident_before[layer]
    T = log.num_tokens
    E = log.shape.num_experts
    cell = spec.cell_px
    width, height = _grid_geometry(T, E, cell)
    title = f"layer {layer + 1} / {str(log.config.policy)} / cache {log.config.cache_size}"

    parts = _svg_open(width, height, title)
    parts.extend(_row_labels(E, cell))
    parts.append(
        f'<text class="xlabel" x="{_MARGIN_LEFT}" y="{height - 5}" fill="#555555">token 0..{max(T - 1, 0)}</text>'
    )
    big = cell - 2
    small = max(cell // 3, 2)
    off = (cell - small) // 2
    act_color = spec.palette["activated"]
    cached_color = spec.palette["cached"]
    for t in range(T):
        x0 = _MARGIN_LEFT + t * cell
        for j in range(acts.shape[1]):
            e = int(acts[t, j])
            y0 = _MARGIN_TOP + e * cell
            parts.append(
                f'<rect class="act" x="{x0 + 1}" y="{y0 + 1}" width="{big}" height="{big}" fill="{act_color}"/>'
            )
        for e in np.flatnonzero(rb[t]):
            y0 = _MARGIN_TOP + int(e) * cell
            parts.append(
                f'<rect class="cached" x="{x0 + off}" y="{y0 + off}" width="{small}" height="{small}" fill="{cached_color}"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_speculation(
    trace: SpeculationTrace,
    token: int,
    spec: Optional[RenderSpec] = None,
    activation: Optional[ActivationTrace] = None,
) -> str:
    """SVG grid of one token's speculation outcome across all layers.

    If the companion activation trace is given, layer 0's activated experts
    are drawn in the fn color with class "excluded" (they are display-only:
    no guess exists for the first layer and they count toward no statistic).
    """
    spec = spec or RenderSpec(mode="speculation_trace")
    if not 0 <= token < trace.num_tokens:
        raise ConfigError(f"token {token} not present in speculation trace")
    L = trace.shape.num_layers
    E = trace.shape.num_experts
    cell = spec.cell_px
    width, height = _grid_geometry(L, E, cell)

    parts = _svg_open(width, height, f"token {token}")
    parts.extend(_row_labels(E, cell))
    parts.append(
        f'<text class="xlabel" x="{_MARGIN_LEFT}" y="{height - 5}" fill="#555555">layer 1..{L}</text>'
    )
    big = cell - 2

    def rect(cls: str, l: int, e: int, color: str) -> str:
        x0 = _MARGIN_LEFT + l * cell
        y0 = _MARGIN_TOP + e * cell
        return f'<rect class="{cls}" x="{x0 + 1}" y="{y0 + 1}" width="{big}" height="{big}" fill="{color}"/>'

    if activation is not None:
        if activation.num_tokens != trace.num_tokens or activation.shape != trace.shape:
            raise ConfigError("activation trace does not match the speculation trace")
        for e in activation.activations[token, 0]:
            parts.append(rect("excluded", 0, int(e), spec.palette["fn"]))

    for j in range(trace.guessed.shape[1]):
        l = j + 1
        guessed = set(trace.guessed[token, j].tolist())
        actual = set(trace.actual[token, j].tolist())
        for e in sorted(guessed & actual):
            parts.append(rect("tp", l, e, spec.palette["tp"]))
        for e in sorted(guessed - actual):
            parts.append(rect("fp", l, e, spec.palette["fp"]))
        for e in sorted(actual - guessed):
            parts.append(rect("fn", l, e, spec.palette["fn"]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_histogram(hist: ExpertHistogram, spec: Optional[RenderSpec] = None) -> str:
    """SVG bar chart of one layer's expert-activation counts.

    Always emits one bar per expert; zero counts give zero-height bars.
    """
    spec = spec or RenderSpec(mode="histogram")
    E = len(hist.counts)
    bar_w = max(spec.cell_px, 8)
    chart_h = 10 * spec.cell_px
    width = _MARGIN_LEFT + E * (bar_w + 4) + _MARGIN_RIGHT
    height = _MARGIN_TOP + chart_h + _MARGIN_BOTTOM
    peak = max(hist.counts) if hist.counts else 0

    parts = _svg_open(width, height, f"layer {hist.layer + 1} expert activations (gini {hist.gini:.3f})")
    base_y = _MARGIN_TOP + chart_h
    color = spec.palette["activated"]
    for e, count in enumerate(hist.counts):
        h = 0 if peak == 0 else round(chart_h * count / peak)
        x0 = _MARGIN_LEFT + e * (bar_w + 4)
        parts.append(
            f'<rect class="bar" x="{x0}" y="{base_y - h}" width="{bar_w}" height="{h}" fill="{color}"/>'
        )
        parts.append(
            f'<text class="xlabel" x="{x0}" y="{base_y + 12}" fill="#555555">{e}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --- plain-text grids ------------------------------------------------------

def text_cache_trace(log: CacheEventLog, layer: int) -> str:
    """One character per (expert, token) cell; rows are experts 0..E-1."""
    if layer not in log.layers:
        raise ConfigError(f"layer {layer} was not simulated in this log")
    acts = log.activated[layer]
    rb = log.resident_before[layer]
    T = log.num_tokens
    E = log.shape.num_experts
    grid = [[CH_EMPTY] * T for _ in range(E)]
    for t in range(T):
        for e in np.flatnonzero(rb[t]):
            grid[int(e)][t] = CH_CACHED
        for j in range(acts.shape[1]):
            e = int(acts[t, j])
            grid[e][t] = CH_BOTH if rb[t, e] else CH_ACTIVATED
    return "\n".join("".join(row) for row in grid) + "\n"


def text_speculation(
    trace: SpeculationTrace, token: int, activation: Optional[ActivationTrace] = None
) -> str:
    """One character per (expert, layer) cell for a single token."""
    if not 0 <= token < trace.num_tokens:
        raise ConfigError(f"token {token} not present in speculation trace")
    L = trace.shape.num_layers
    E = trace.shape.num_experts
    grid = [[CH_EMPTY] * L for _ in range(E)]
    if activation is not None:
        for e in activation.activations[token, 0]:
            grid[int(e)][0] = CH_FN
    for j in range(trace.guessed.shape[1]):
        l = j + 1
        guessed = set(trace.guessed[token, j].tolist())
        actual = set(trace.actual[token, j].tolist())
        for e in guessed & actual:
            grid[e][l] = CH_TP
        for e in guessed - actual:
            grid[e][l] = CH_FP
        for e in actual - guessed:
            grid[e][l] = CH_FN
    return "\n".join("".join(row) for row in grid) + "\n"


def count_marks(svg: str) -> dict[str, int]:
    """Parse an emitted SVG and count marks by class (test/verification aid)."""
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg)
    counts: dict[str, int] = {}
    for elem in root.iter():
        cls = elem.attrib.get("class")
        if cls:
            counts[cls] = counts.get(cls, 0) + 1
    return counts
