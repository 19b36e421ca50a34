"""Eviction policies for a fixed-capacity, per-layer expert cache.

Four policies share one step contract:

* ``lru``      -- evict the least-recently-used resident.
* ``lfu``      -- evict the lowest-frequency resident; counts accumulate over
                 the whole run with no decay.
* ``lfu-aged`` -- lfu with all counts multiplied by ``decay_factor`` every
                 ``decay_period`` steps, so popularity can expire.
* ``opt``      -- clairvoyant upper bound: evict the resident whose next use
                 lies farthest in the future (never used again goes first).

Experts activated by the current step are never eviction candidates within
that step: evicting an expert the token needs would force an immediate
reload. Recency is refreshed on every activation, hit or load. Frequency
counts of all activated experts increment by one per step under every
policy. Ties in lfu break least-recently-used first, then lowest expert id;
ties in opt break lowest expert id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import ConfigError

LRU = "lru"
LFU = "lfu"
LFU_AGED = "lfu-aged"
OPT = "opt"

_KINDS = (LRU, LFU, LFU_AGED, OPT)

DEFAULT_DECAY_FACTOR = 0.5
DEFAULT_DECAY_PERIOD = 16


@dataclass(frozen=True)
class PolicyKind:
    """An eviction policy selection, with decay parameters iff lfu-aged."""

    name: str
    decay_factor: Optional[float] = None
    decay_period: Optional[int] = None

    def __post_init__(self):
        if self.name not in _KINDS:
            raise ConfigError(f"unknown policy {self.name!r}; expected one of {_KINDS}")
        if self.name == LFU_AGED:
            if self.decay_factor is None or self.decay_period is None:
                raise ConfigError("lfu-aged requires decay_factor and decay_period")
            if not 0.0 < self.decay_factor <= 1.0:
                raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
            if self.decay_period < 1:
                raise ConfigError(f"decay_period must be >= 1, got {self.decay_period}")
        elif self.decay_factor is not None or self.decay_period is not None:
            raise ConfigError(f"decay parameters are only valid for {LFU_AGED}")

    @classmethod
    def lru(cls) -> "PolicyKind":
        return cls(LRU)

    @classmethod
    def lfu(cls) -> "PolicyKind":
        return cls(LFU)

    @classmethod
    def lfu_aged(
        cls, decay_factor: float = DEFAULT_DECAY_FACTOR, decay_period: int = DEFAULT_DECAY_PERIOD
    ) -> "PolicyKind":
        return cls(LFU_AGED, decay_factor, decay_period)

    @classmethod
    def opt(cls) -> "PolicyKind":
        return cls(OPT)

    @classmethod
    def parse(cls, text: str) -> "PolicyKind":
        """Parse "lru", "lfu", "lfu-aged:<factor>:<period>", or "opt"."""
        text = text.strip().lower()
        if text in (LRU, LFU, OPT):
            return cls(text)
        if text == LFU_AGED:
            return cls.lfu_aged()
        if text.startswith(LFU_AGED + ":"):
            parts = text.split(":")
            if len(parts) != 3:
                raise ConfigError(f"expected lfu-aged:<factor>:<period>, got {text!r}")
            try:
                factor = float(parts[1])
                period = int(parts[2])
            except ValueError as exc:
                raise ConfigError(f"bad lfu-aged parameters in {text!r}") from exc
            return cls.lfu_aged(factor, period)
        raise ConfigError(f"unknown policy {text!r}")

    def __str__(self) -> str:
        if self.name == LFU_AGED:
            return f"{LFU_AGED}:{self.decay_factor:g}:{self.decay_period}"
        return self.name


@dataclass
class CacheState:
    """Value-style cache state for one layer.

    ``recency`` lists exactly the resident experts, most recent first.
    ``freq`` covers every expert ever seen, resident or not; counts only
    decrease under lfu-aged decay. ``step`` counts tokens processed.
    """

    capacity: int
    resident: frozenset[int] = frozenset()
    recency: tuple[int, ...] = ()
    freq: dict[int, float] = field(default_factory=dict)
    step: int = 0


@dataclass(frozen=True)
class StepOutcome:
    """What one policy step did: hits/misses partition the activated set,
    loaded equals misses, and |evicted| = max(0, |resident_before| + |misses| - C)."""

    hits: frozenset[int]
    misses: frozenset[int]
    evicted: frozenset[int]
    loaded: frozenset[int]
    resident_before: frozenset[int]
    resident_after: frozenset[int]


def warm_state(kind: PolicyKind, capacity: int) -> CacheState:
    """Cold-start state: empty cache, zero counts, step 0."""
    if capacity < 1:
        raise ConfigError(f"cache capacity must be >= 1, got {capacity}")
    return CacheState(capacity=capacity)


def policy_step(
    state: CacheState,
    kind: PolicyKind,
    activated: Iterable[int],
    future: Optional[Sequence[Iterable[int]]] = None,
) -> tuple[CacheState, StepOutcome]:
    """Advance the cache by one token step.

    ``future`` is the remaining activation stream after this step and must be
    supplied iff ``kind`` is opt. Returns a fresh state; the input state is
    not mutated.
    """
    activated = frozenset(activated)
    if len(activated) > state.capacity:
        raise ConfigError(
            f"activated set of size {len(activated)} cannot fit in capacity {state.capacity}"
        )
    if kind.name == OPT and future is None:
        raise ConfigError("opt policy requires the remaining activation stream")
    if kind.name != OPT and future is not None:
        raise ConfigError(f"future stream is only valid for opt, not {kind.name}")

    freq = dict(state.freq)
    if (
        kind.name == LFU_AGED
        and state.step > 0
        and state.step % kind.decay_period == 0
    ):
        freq = {e: f * kind.decay_factor for e, f in freq.items()}

    resident_before = state.resident
    hits = activated & resident_before
    misses = activated - resident_before
    need = len(resident_before) + len(misses) - state.capacity

    evicted: list[int] = []
    if need > 0:
        candidates = [e for e in resident_before if e not in activated]
        evicted = _rank_victims(candidates, state, kind, freq, future)[:need]

    evicted_set = frozenset(evicted)
    resident_after = (resident_before - evicted_set) | misses

    recency = [e for e in state.recency if e not in activated and e not in evicted_set]
    for e in sorted(activated):
        recency.insert(0, e)

    for e in activated:
        freq[e] = freq.get(e, 0.0) + 1.0

    new_state = CacheState(
        capacity=state.capacity,
        resident=resident_after,
        recency=tuple(recency),
        freq=freq,
        step=state.step + 1,
    )
    outcome = StepOutcome(
        hits=hits,
        misses=misses,
        evicted=evicted_set,
        loaded=misses,
        resident_before=resident_before,
        resident_after=resident_after,
    )
    return new_state, outcome


def _rank_victims(
    candidates: list[int],
    state: CacheState,
    kind: PolicyKind,
    freq: dict[int, float],
    future: Optional[Sequence[Iterable[int]]],
) -> list[int]:
    """Order eviction candidates, first-to-evict first."""
    # Position from the oldest end of the recency list; oldest = 0.
    age = {e: i for i, e in enumerate(reversed(state.recency))}
    if kind.name == LRU:
        return sorted(candidates, key=lambda e: (age[e], e))
    if kind.name in (LFU, LFU_AGED):
        return sorted(candidates, key=lambda e: (freq.get(e, 0.0), age[e], e))
    # opt: farthest next use first; never used again beats everything.
    distance = {}
    for e in candidates:
        distance[e] = next(
            (i for i, step_set in enumerate(future) if e in step_set), float("inf")
        )
    return sorted(candidates, key=lambda e: (-distance[e], e))
