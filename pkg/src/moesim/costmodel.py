"""Latency, transfer-volume, and peak-memory estimates from event logs.

The latency model is deliberately simple: per token, each simulated layer
costs a fixed compute time plus the serial transfer time of its missed
experts, with an ``overlap`` knob for the fraction of transfer hidden
behind compute (0 = fully serial, the default; overlapping transfers is a
sensitivity study here, not a simulated mechanism).

Peak memory is a fitted line over (offloads per layer, peak MB) points:
memory falls by a constant amount for every additional expert offloaded
per layer. The shipped default calibration is three measured points from a
32-layer, 8-expert model with 2-bit-quantized experts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .simulate import CacheEventLog
from .traces import SpeculationTrace

# Default size of one transferable expert. Derived from the default memory
# calibration: ~2000 MB per additional offload across 32 layers.
DEFAULT_EXPERT_BYTES = 62.5e6
DEFAULT_BANDWIDTH = 10e9
DEFAULT_COMPUTE_S = 0.005

# Shipped calibration points: (offloads per layer, measured peak MB).
DEFAULT_MEMORY_POINTS: tuple[tuple[int, float], ...] = (
    (4, 11148.3),
    (5, 9145.8),
    (6, 7127.7),
)


@dataclass(frozen=True)
class CostParams:
    expert_bytes: float = DEFAULT_EXPERT_BYTES
    bandwidth_bytes_per_s: float = DEFAULT_BANDWIDTH
    compute_s_per_layer: float = DEFAULT_COMPUTE_S
    overlap: float = 0.0

    def __post_init__(self):
        if self.expert_bytes <= 0:
            raise ConfigError(f"expert_bytes must be > 0, got {self.expert_bytes}")
        if self.bandwidth_bytes_per_s <= 0:
            raise ConfigError(f"bandwidth must be > 0, got {self.bandwidth_bytes_per_s}")
        if self.compute_s_per_layer < 0:
            raise ConfigError(f"compute time must be >= 0, got {self.compute_s_per_layer}")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError(f"overlap must be in [0, 1], got {self.overlap}")


@dataclass(frozen=True)
class MemoryModel:
    """peak_mb ~= intercept_mb + slope_mb_per_offload * offloads."""

    intercept_mb: float
    slope_mb_per_offload: float
    residuals_mb: tuple[float, ...]
    points: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {
            "intercept_mb": self.intercept_mb,
            "slope_mb_per_offload": self.slope_mb_per_offload,
            "residuals_mb": list(self.residuals_mb),
            "points": [list(p) for p in self.points],
        }


@dataclass(frozen=True)
class LatencyEstimate:
    seconds_per_token: float
    tokens_per_second: float
    bytes_transferred: int

    def to_dict(self) -> dict:
        return {
            "seconds_per_token": self.seconds_per_token,
            "tokens_per_second": self.tokens_per_second,
            "bytes_transferred": self.bytes_transferred,
        }


def estimate_latency(log: CacheEventLog, params: CostParams) -> LatencyEstimate:
    """Decode-latency estimate: compute plus unhidden miss transfers.

    Covers every step in the log (warmup included: the transfers are
    physical whether or not the metrics count them).
    """
    T = log.num_tokens
    if T == 0:
        return LatencyEstimate(0.0, 0.0, 0)
    total_misses = 0
    transfer_s = 0.0
    per_expert_s = params.expert_bytes / params.bandwidth_bytes_per_s
    for l in log.layers:
        misses = int(log.miss_counts(l).sum())
        total_misses += misses
        transfer_s += (1.0 - params.overlap) * misses * per_expert_s
    total = T * len(log.layers) * params.compute_s_per_layer + transfer_s
    return LatencyEstimate(
        seconds_per_token=total / T,
        tokens_per_second=T / total if total > 0 else float("inf"),
        bytes_transferred=int(round(total_misses * params.expert_bytes)),
    )


def speculation_cost(spec: SpeculationTrace, params: CostParams) -> tuple[int, int]:
    """Pure transfer-volume accounting for speculative prefetching.

    Every record prefetches its K guesses; each wrong guess must then be
    swapped for the expert it displaced, so transfers = K + |actual \\
    guessed| per record and wasted = |guessed \\ actual|. Returns
    (bytes_transferred, wasted_bytes). Cache interaction is excluded.
    """
    g, a = spec.guessed, spec.actual
    T, Lm1, K = g.shape
    tp = int((g[..., :, None] == a[..., None, :]).any(axis=-1).sum())
    records = T * Lm1
    fn = records * K - tp  # == fp
    transfer_units = records * K + fn
    wasted_units = fn
    return (
        int(round(transfer_units * params.expert_bytes)),
        int(round(wasted_units * params.expert_bytes)),
    )


def fit_memory_model(points: Iterable[Sequence[float]]) -> MemoryModel:
    """Least-squares line through (offloads, peak_mb) points."""
    pts = [(float(x), float(y)) for x, y in points]
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if len(pts) < 2 or np.unique(xs).size < 2:
        raise ConfigError("memory fit requires >= 2 points with distinct offload counts")
    slope, intercept = np.polyfit(xs, ys, 1)
    residuals = ys - (intercept + slope * xs)
    return MemoryModel(
        intercept_mb=float(intercept),
        slope_mb_per_offload=float(slope),
        residuals_mb=tuple(float(r) for r in residuals),
        points=tuple(pts),
    )


def estimate_peak_memory(model: MemoryModel, offloads: float) -> float:
    return model.intercept_mb + model.slope_mb_per_offload * offloads


def parse_memory_points(text: str) -> list[tuple[float, float]]:
    """Parse the CLI calibration format "4:11148.3,5:9145.8,6:7127.7"."""
    points = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            x, y = item.split(":")
            points.append((float(x), float(y)))
        except ValueError as exc:
            raise ConfigError(f"bad memory point {item!r}; expected offloads:peak_mb") from exc
    if not points:
        raise ConfigError("no memory calibration points given")
    return points
