"""Per-layer cache simulation over an activation trace.

Each layer owns an independent cache with its own budget; ``simulate``
replays the policy over every requested layer and records, for every
(token, layer) step, the resident set before the update and the experts
evicted by it. Hits, misses, and loads are derived from those snapshots,
so metrics and rendering never re-run policy code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, TraceParseError, TraceValidationError
from .policies import LFU, LFU_AGED, LRU, OPT, PolicyKind, StepOutcome
from .traces import ActivationTrace, ModelShape

_POLICY_CODE = {LRU: kernels.P_LRU, LFU: kernels.P_LFU, LFU_AGED: kernels.P_LFU_AGED, OPT: kernels.P_OPT}


@dataclass(frozen=True)
class SimConfig:
    policy: PolicyKind
    cache_size: int
    warmup_tokens: int = 0
    layers: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.cache_size < 1:
            raise ConfigError(f"cache_size must be >= 1, got {self.cache_size}")
        if self.warmup_tokens < 0:
            raise ConfigError(f"warmup_tokens must be >= 0, got {self.warmup_tokens}")


@dataclass(frozen=True)
class LogStep:
    token: int
    layer: int
    resident_before: frozenset[int]
    outcome: StepOutcome


class CacheEventLog:
    """Complete per-step record of one simulation.

    Internally column-oriented: per simulated layer, (T, K) activated ids,
    (T, E) resident-before masks, and (T, E) evicted masks.
    """

    def __init__(
        self,
        config: SimConfig,
        shape: ModelShape,
        layers: tuple[int, ...],
        activated: dict[int, np.ndarray],
        resident_before: dict[int, np.ndarray],
        evicted: dict[int, np.ndarray],
        num_tokens: int,
    ):
        self.config = config
        self.shape = shape
        self.layers = layers
        self.activated = activated
        self.resident_before = resident_before
        self.evicted = evicted
        self.num_tokens = num_tokens

    def hit_counts(self, layer: int) -> np.ndarray:
        """(T,) number of activated experts already resident, per step."""
        acts = self.activated[layer]
        rb = self.resident_before[layer]
        if acts.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return np.take_along_axis(rb, acts, axis=1).sum(axis=1).astype(np.int64)

    def resident_sizes(self, layer: int) -> np.ndarray:
        """(T,) resident-set size before each step."""
        return self.resident_before[layer].sum(axis=1).astype(np.int64)

    def miss_counts(self, layer: int) -> np.ndarray:
        return self.shape.top_k - self.hit_counts(layer)

    def steps(self) -> Iterator[LogStep]:
        """Step records in (token, layer) order."""
        for t in range(self.num_tokens):
            for l in self.layers:
                acts = frozenset(self.activated[l][t].tolist())
                rb_mask = self.resident_before[l][t]
                ev_mask = self.evicted[l][t]
                rb = frozenset(np.flatnonzero(rb_mask).tolist())
                ev = frozenset(np.flatnonzero(ev_mask).tolist())
                hits = acts & rb
                misses = acts - rb
                yield LogStep(
                    token=t,
                    layer=l,
                    resident_before=rb,
                    outcome=StepOutcome(
                        hits=hits,
                        misses=misses,
                        evicted=ev,
                        loaded=misses,
                        resident_before=rb,
                        resident_after=(rb - ev) | misses,
                    ),
                )

    def __eq__(self, other) -> bool:
        if not isinstance(other, CacheEventLog):
            return False
        if (
            self.config != other.config
            or self.shape != other.shape
            or self.layers != other.layers
            or self.num_tokens != other.num_tokens
        ):
            return False
        return all(
            (self.activated[l] == other.activated[l]).all()
            and (self.resident_before[l] == other.resident_before[l]).all()
            and (self.evicted[l] == other.evicted[l]).all()
            for l in self.layers
        )


def offloads_to_cache_size(offloads_per_layer: int, shape: ModelShape) -> int:
    """Cache size implied by offloading ``offloads_per_layer`` experts."""
    if not 0 <= offloads_per_layer < shape.num_experts:
        raise ConfigError(
            f"offloads per layer must be in [0, {shape.num_experts}), got {offloads_per_layer}"
        )
    return shape.num_experts - offloads_per_layer


def simulate(trace: ActivationTrace, config: SimConfig) -> CacheEventLog:
    """Replay ``config.policy`` over every layer of ``trace`` independently.

    Pure function of its inputs: identical (trace, config) give identical
    logs, and each layer's result is independent of which other layers are
    simulated.
    """
    shape = trace.shape
    if shape.top_k > config.cache_size:
        raise ConfigError(
            f"top_k={shape.top_k} experts per step cannot fit in cache_size={config.cache_size}"
        )
    layers = config.layers if config.layers is not None else tuple(range(shape.num_layers))
    for l in layers:
        if not 0 <= l < shape.num_layers:
            raise ConfigError(f"layer {l} out of range [0, {shape.num_layers})")
    if len(set(layers)) != len(layers):
        raise ConfigError("layer subset contains duplicates")

    kind = config.policy
    code = _POLICY_CODE[kind.name]
    decay_factor = kind.decay_factor if kind.decay_factor is not None else 1.0
    decay_period = kind.decay_period if kind.decay_period is not None else 1

    activated: dict[int, np.ndarray] = {}
    resident_before: dict[int, np.ndarray] = {}
    evicted: dict[int, np.ndarray] = {}
    for l in layers:
        acts = np.ascontiguousarray(trace.layer_activations(l))
        rb, ev = kernels.replay_policy(
            acts, shape.num_experts, config.cache_size, code, decay_factor, decay_period
        )
        activated[l] = acts
        resident_before[l] = rb
        evicted[l] = ev

    return CacheEventLog(
        config=config,
        shape=shape,
        layers=tuple(layers),
        activated=activated,
        resident_before=resident_before,
        evicted=evicted,
        num_tokens=trace.num_tokens,
    )


# --- event-log JSONL -----------------------------------------------------
#
# Header: {"kind":"events","policy":P,"cache_size":C,"num_layers":L,
#          "num_experts":E,"top_k":K,"warmup_tokens":W}
# Step:   {"t":..,"l":..,"cached":[...],"hit":[...],"miss":[...],"evict":[...]}
# Arrays sorted ascending, steps in (token, layer) order.

def _dump(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_event_log(log: CacheEventLog, destination: BinaryIO) -> None:
    lines = [
        _dump(
            {
                "kind": "events",
                "policy": str(log.config.policy),
                "cache_size": log.config.cache_size,
                "num_layers": log.shape.num_layers,
                "num_experts": log.shape.num_experts,
                "top_k": log.shape.top_k,
                "warmup_tokens": log.config.warmup_tokens,
            }
        )
    ]
    for step in log.steps():
        o = step.outcome
        lines.append(
            _dump(
                {
                    "t": step.token,
                    "l": step.layer,
                    "cached": sorted(step.resident_before),
                    "hit": sorted(o.hits),
                    "miss": sorted(o.misses),
                    "evict": sorted(o.evicted),
                }
            )
        )
    destination.write(("\n".join(lines) + "\n").encode("utf-8"))


def read_event_log(source: BinaryIO) -> CacheEventLog:
    raw = source.read()
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceParseError("empty event log (missing header)", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON ({exc.msg})", line=1) from exc
    if header.get("kind") != "events":
        raise TraceParseError(f"expected an events file, got kind {header.get('kind')!r}", line=1)
    shape = ModelShape(header["num_layers"], header["num_experts"], header["top_k"])
    config = SimConfig(
        policy=PolicyKind.parse(header["policy"]),
        cache_size=int(header["cache_size"]),
        warmup_tokens=int(header.get("warmup_tokens", 0)),
    )

    rows: dict[tuple[int, int], dict] = {}
    for i, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"invalid JSON ({exc.msg})", line=i) from exc
        try:
            key = (obj["t"], obj["l"])
        except (KeyError, TypeError) as exc:
            raise TraceParseError(f"step record missing key {exc}", line=i) from exc
        if key in rows:
            raise TraceValidationError(f"line {i}: duplicate step for token {key[0]}, layer {key[1]}")
        rows[key] = obj

    layers = tuple(sorted({l for _, l in rows}))
    tokens = sorted({t for t, _ in rows})
    if tokens != list(range(len(tokens))):
        raise TraceValidationError("event log token indices must be contiguous from 0")
    num_tokens = len(tokens)
    if len(rows) != num_tokens * len(layers):
        raise TraceValidationError("event log must cover every (token, layer) pair it mentions")

    E, K = shape.num_experts, shape.top_k
    activated = {l: np.zeros((num_tokens, K), dtype=np.int64) for l in layers}
    resident_before = {l: np.zeros((num_tokens, E), dtype=np.uint8) for l in layers}
    evicted = {l: np.zeros((num_tokens, E), dtype=np.uint8) for l in layers}
    for (t, l), obj in rows.items():
        acts = sorted(obj["hit"]) + sorted(obj["miss"])
        acts.sort()
        if len(acts) != K or len(set(acts)) != K:
            raise TraceValidationError(
                f"token {t}, layer {l}: hit+miss must form {K} distinct experts"
            )
        for e in acts + list(obj["cached"]) + list(obj["evict"]):
            if not 0 <= e < E:
                raise TraceValidationError(
                    f"token {t}, layer {l}: expert id {e} out of range [0, {E})"
                )
        activated[l][t] = acts
        for e in obj["cached"]:
            resident_before[l][t][e] = 1
        for e in obj["evict"]:
            evicted[l][t][e] = 1

    full = tuple(range(shape.num_layers))
    config = SimConfig(
        policy=config.policy,
        cache_size=config.cache_size,
        warmup_tokens=config.warmup_tokens,
        layers=None if layers == full else layers,
    )
    return CacheEventLog(
        config=config,
        shape=shape,
        layers=layers,
        activated=activated,
        resident_before=resident_before,
        evicted=evicted,
        num_tokens=num_tokens,
    )


def save_event_log(log: CacheEventLog, path) -> None:
    with open(path, "wb") as fp:
        write_event_log(log, fp)


def load_event_log(path) -> CacheEventLog:
    with open(path, "rb") as fp:
        return read_event_log(fp)
