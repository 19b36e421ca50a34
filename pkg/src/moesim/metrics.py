"""Quantitative analysis of event logs and speculation traces.

Cache precision treats the resident set as a prediction made before the
token arrives: precision = sum_t |S_t ∩ A_t| / sum_t |S_t| and recall =
sum_t |S_t ∩ A_t| / sum_t |A_t|, where S_t is the resident set before the
step and A_t the activated set. On steps where the cache is full the two
are locked together: recall = (C/K) * precision over those steps, since
|S_t| = C and |A_t| = K make both numerators the same hit total.

Speculation metrics count, per record, tp = |guessed ∩ actual|,
fp = |guessed \\ actual|, fn = |actual \\ guessed|. Because every record has
|guessed| = |actual|, each wrong guess is simultaneously one fp and one fn,
so fp == fn and precision == recall on every input.

Empty denominators are reported as an explicit undefined marker (None in
Python, null in JSON) rather than 0 or NaN, with the exception of the
overall hit_rate of an empty log, which is defined as 0 and flagged empty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .simulate import CacheEventLog
from .traces import ActivationTrace, SpeculationTrace


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


@dataclass(frozen=True)
class LayerCacheMetrics:
    layer: int
    hits: int
    misses: int
    hit_rate: Optional[float]
    precision: Optional[float]
    recall: Optional[float]

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "hits": self.hits,
            "misses": self.misses,
            "hit_rate": self.hit_rate,
            "precision": self.precision,
            "recall": self.recall,
        }


@dataclass(frozen=True)
class FullCacheMetrics:
    """The same ratios restricted to steps where |S_t| equals the capacity."""

    steps: int
    hits: int
    precision: Optional[float]
    recall: Optional[float]

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "hits": self.hits,
            "precision": self.precision,
            "recall": self.recall,
        }


@dataclass(frozen=True)
class CacheMetrics:
    total_hits: int
    total_misses: int
    hit_rate: float
    precision: Optional[float]
    recall: Optional[float]
    per_layer: tuple[LayerCacheMetrics, ...]
    full_cache: FullCacheMetrics
    including_warmup: dict
    warmup_tokens: int
    empty: bool

    def to_dict(self) -> dict:
        return {
            "hit_rate": self.hit_rate,
            "precision": self.precision,
            "recall": self.recall,
            "total_hits": self.total_hits,
            "total_misses": self.total_misses,
            "per_layer": [m.to_dict() for m in self.per_layer],
            "full_cache": self.full_cache.to_dict(),
            "including_warmup": self.including_warmup,
            "warmup_tokens": self.warmup_tokens,
            "empty": self.empty,
        }


def cache_metrics(log: CacheEventLog) -> CacheMetrics:
    """Aggregate hit/miss and precision/recall over a simulation log.

    The log's warmup_tokens are excluded from the headline numbers; the
    same sums including warmup are reported alongside.
    """
    K = log.shape.top_k
    C = log.config.cache_size
    warmup = log.config.warmup_tokens

    per_layer = []
    hits_sum = 0
    act_sum = 0
    res_sum = 0
    full_steps = 0
    full_hits = 0
    w_hits = 0
    w_act = 0
    w_res = 0

    for l in log.layers:
        hit_counts = log.hit_counts(l)
        res_sizes = log.resident_sizes(l)
        T = hit_counts.shape[0]
        kept = np.arange(T) >= warmup

        l_hits = int(hit_counts[kept].sum())
        l_act = int(kept.sum()) * K
        l_res = int(res_sizes[kept].sum())
        per_layer.append(
            LayerCacheMetrics(
                layer=l,
                hits=l_hits,
                misses=l_act - l_hits,
                hit_rate=_ratio(l_hits, l_act),
                precision=_ratio(l_hits, l_res),
                recall=_ratio(l_hits, l_act),
            )
        )
        hits_sum += l_hits
        act_sum += l_act
        res_sum += l_res

        full = kept & (res_sizes == C)
        full_steps += int(full.sum())
        full_hits += int(hit_counts[full].sum())

        w_hits += int(hit_counts.sum())
        w_act += T * K
        w_res += int(res_sizes.sum())

    return CacheMetrics(
        total_hits=hits_sum,
        total_misses=act_sum - hits_sum,
        hit_rate=hits_sum / act_sum if act_sum > 0 else 0.0,
        precision=_ratio(hits_sum, res_sum),
        recall=_ratio(hits_sum, act_sum),
        per_layer=tuple(per_layer),
        full_cache=FullCacheMetrics(
            steps=full_steps,
            hits=full_hits,
            precision=_ratio(full_hits, full_steps * C),
            recall=_ratio(full_hits, full_steps * K),
        ),
        including_warmup={
            "hit_rate": w_hits / w_act if w_act > 0 else 0.0,
            "precision": _ratio(w_hits, w_res),
            "recall": _ratio(w_hits, w_act),
        },
        warmup_tokens=warmup,
        empty=act_sum == 0,
    )


@dataclass(frozen=True)
class LayerSpeculationMetrics:
    layer: int
    tp: int
    fp: int
    fn: int
    precision: Optional[float]
    recall: Optional[float]

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
        }


@dataclass(frozen=True)
class SpeculationMetrics:
    tp: int
    fp: int
    fn: int
    precision: Optional[float]
    recall: Optional[float]
    per_layer: tuple[LayerSpeculationMetrics, ...]
    empty: bool

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "per_layer": [m.to_dict() for m in self.per_layer],
            "empty": self.empty,
        }


def speculation_metrics(trace: SpeculationTrace) -> SpeculationMetrics:
    """Count guessed-vs-actual agreement over all records (layers >= 1 only)."""
    g, a = trace.guessed, trace.actual
    T, Lm1, K = g.shape
    # tp per (token, layer): how many guessed ids appear in the actual set
    tp_cells = (g[..., :, None] == a[..., None, :]).any(axis=-1).sum(axis=-1)

    per_layer = []
    for j in range(Lm1):
        tp = int(tp_cells[:, j].sum())
        fp = T * K - tp
        per_layer.append(
            LayerSpeculationMetrics(
                layer=j + 1,
                tp=tp,
                fp=fp,
                fn=fp,
                precision=_ratio(tp, T * K),
                recall=_ratio(tp, T * K),
            )
        )
    tp = int(tp_cells.sum())
    total = T * Lm1 * K
    fp = total - tp
    return SpeculationMetrics(
        tp=tp,
        fp=fp,
        fn=fp,
        precision=_ratio(tp, total),
        recall=_ratio(tp, total),
        per_layer=tuple(per_layer),
        empty=total == 0,
    )


@dataclass(frozen=True)
class ExpertHistogram:
    layer: int
    counts: tuple[int, ...]
    gini: float
    min_count: int
    max_count: int

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "counts": list(self.counts),
            "gini": self.gini,
            "min_count": self.min_count,
            "max_count": self.max_count,
        }


def gini_coefficient(counts: np.ndarray) -> float:
    """Imbalance of an activation histogram, in [0, 1).

    gini = sum_i (2i - E - 1) c_i / (E * sum c_i) over ascending-sorted
    counts c_i, i = 1..E. Zero for a uniform histogram (and for an empty one).
    """
    c = np.sort(np.asarray(counts, dtype=np.float64))
    E = c.shape[0]
    total = c.sum()
    if total <= 0:
        return 0.0
    i = np.arange(1, E + 1, dtype=np.float64)
    return float(((2 * i - E - 1) * c).sum() / (E * total))


def expert_histograms(trace: ActivationTrace) -> list[ExpertHistogram]:
    """One activation histogram per layer; counts sum to K * num_tokens."""
    E = trace.shape.num_experts
    out = []
    for l in range(trace.shape.num_layers):
        counts = np.bincount(trace.activations[:, l, :].ravel(), minlength=E)
        out.append(
            ExpertHistogram(
                layer=l,
                counts=tuple(int(c) for c in counts),
                gini=gini_coefficient(counts),
                min_count=int(counts.min()) if E else 0,
                max_count=int(counts.max()) if E else 0,
            )
        )
    return out


def speculation_accuracy(trace: SpeculationTrace) -> Optional[float]:
    """tp / (tp + fn); None for an empty trace. Equal to precision and recall."""
    m = speculation_metrics(trace)
    return m.recall
