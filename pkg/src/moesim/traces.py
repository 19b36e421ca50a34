"""Activation/speculation trace data model and the JSONL trace file format.

A trace is a dense grid: one record per (token, layer) pair, tokens and
layers contiguous from 0. Activation records carry the set of experts the
gate selected for that token at that layer; speculation records pair the
guess made at the previous layer with the truth, and exist only for
layers >= 1 (there is nothing to guess from for the first layer).

Expert ids are 0-based everywhere, including on disk. Activation sets are
stored sorted ascending so serialization is canonical and diffable;
``num_tokens`` is always derived from the data, never stored.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Union

import numpy as np

from .errors import TraceParseError, TraceValidationError

ExpertId = int


@dataclass(frozen=True)
class ModelShape:
    """Static shape of the MoE model a trace belongs to.

    Defaults mirror a 32-layer, 8-expert, top-2 model.
    """

    num_layers: int = 32
    num_experts: int = 8
    top_k: int = 2

    def __post_init__(self):
        if self.num_layers < 1:
            raise TraceValidationError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_experts < 1:
            raise TraceValidationError(f"num_experts must be >= 1, got {self.num_experts}")
        if not 1 <= self.top_k <= self.num_experts:
            raise TraceValidationError(
                f"top_k must be in [1, num_experts={self.num_experts}], got {self.top_k}"
            )


@dataclass(frozen=True)
class ActivationRecord:
    token: int
    layer: int
    activated: frozenset[ExpertId]


@dataclass(frozen=True)
class SpeculationRecord:
    token: int
    layer: int
    guessed: frozenset[ExpertId]
    actual: frozenset[ExpertId]


def _check_expert_rows(arr: np.ndarray, shape: ModelShape, what: str) -> None:
    """Rows must be strictly ascending expert ids within [0, num_experts)."""
    if arr.size == 0:
        return
    if arr.min() < 0 or arr.max() >= shape.num_experts:
        raise TraceValidationError(f"{what}: expert id out of range [0, {shape.num_experts})")
    if arr.shape[-1] > 1 and not (np.diff(arr, axis=-1) > 0).all():
        raise TraceValidationError(f"{what}: expert sets must have {shape.top_k} distinct ids")


class ActivationTrace:
    """Per-token, per-layer activated expert sets, stored densely.

    ``activations`` has shape (num_tokens, num_layers, top_k) with each row
    sorted ascending.
    """

    kind = "activation"

    def __init__(self, shape: ModelShape, activations: np.ndarray):
        activations = np.ascontiguousarray(activations, dtype=np.int64)
        if activations.ndim != 3:
            raise TraceValidationError("activations must be a (tokens, layers, top_k) array")
        t, l, k = activations.shape
        if t > 0 and (l, k) != (shape.num_layers, shape.top_k):
            raise TraceValidationError(
                f"activations shape {activations.shape} does not match "
                f"(*, {shape.num_layers}, {shape.top_k})"
            )
        _check_expert_rows(activations, shape, "activation record")
        self.shape = shape
        self.activations = activations
        self.activations.setflags(write=False)

    @property
    def num_tokens(self) -> int:
        return self.activations.shape[0]

    @property
    def records(self) -> list[ActivationRecord]:
        return list(self.iter_records())

    def iter_records(self) -> Iterator[ActivationRecord]:
        for t in range(self.num_tokens):
            for l in range(self.shape.num_layers):
                yield ActivationRecord(t, l, frozenset(self.activations[t, l].tolist()))

    def layer_activations(self, layer: int) -> np.ndarray:
        """(num_tokens, top_k) activated ids for one layer."""
        if not 0 <= layer < self.shape.num_layers:
            raise TraceValidationError(f"layer {layer} out of range [0, {self.shape.num_layers})")
        return self.activations[:, layer, :]

    @classmethod
    def from_records(cls, shape: ModelShape, records) -> "ActivationTrace":
        cells: dict[tuple[int, int], list[int]] = {}
        for rec in records:
            key = (rec.token, rec.layer)
            if key in cells:
                raise TraceValidationError(f"duplicate record for token {key[0]}, layer {key[1]}")
            acts = sorted(rec.activated)
            if len(acts) != shape.top_k or len(set(acts)) != shape.top_k:
                raise TraceValidationError(
                    f"token {rec.token}, layer {rec.layer}: expected {shape.top_k} distinct experts"
                )
            cells[key] = acts
        return cls(shape, _pack_grid(cells, shape, first_layer=0))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ActivationTrace)
            and self.shape == other.shape
            and self.activations.shape == other.activations.shape
            and bool((self.activations == other.activations).all())
        )

    def __repr__(self) -> str:
        return f"ActivationTrace(shape={self.shape}, num_tokens={self.num_tokens})"


class SpeculationTrace:
    """Per-token guessed-vs-actual expert sets for layers >= 1.

    ``guessed`` and ``actual`` have shape (num_tokens, num_layers - 1, top_k);
    index j on the layer axis holds layer j + 1.
    """

    kind = "speculation"

    def __init__(self, shape: ModelShape, guessed: np.ndarray, actual: np.ndarray):
        guessed = np.ascontiguousarray(guessed, dtype=np.int64)
        actual = np.ascontiguousarray(actual, dtype=np.int64)
        if guessed.shape != actual.shape or guessed.ndim != 3:
            raise TraceValidationError("guessed/actual must be equal-shape (tokens, layers-1, top_k) arrays")
        if guessed.shape[1] == 0:
            # No layers to guess for (L=1): num_tokens is derived from records,
            # of which there are none.
            guessed = guessed[:0]
            actual = actual[:0]
        t, l, k = guessed.shape
        if t > 0 and (l, k) != (shape.num_layers - 1, shape.top_k):
            raise TraceValidationError(
                f"speculation arrays shape {guessed.shape} do not match "
                f"(*, {shape.num_layers - 1}, {shape.top_k})"
            )
        _check_expert_rows(guessed, shape, "guessed set")
        _check_expert_rows(actual, shape, "actual set")
        self.shape = shape
        self.guessed = guessed
        self.actual = actual
        self.guessed.setflags(write=False)
        self.actual.setflags(write=False)

    @property
    def num_tokens(self) -> int:
        return self.guessed.shape[0]

    @property
    def records(self) -> list[SpeculationRecord]:
        return list(self.iter_records())

    def iter_records(self) -> Iterator[SpeculationRecord]:
        for t in range(self.num_tokens):
            for j in range(self.guessed.shape[1]):
                yield SpeculationRecord(
                    t,
                    j + 1,
                    frozenset(self.guessed[t, j].tolist()),
                    frozenset(self.actual[t, j].tolist()),
                )

    @classmethod
    def from_records(cls, shape: ModelShape, records) -> "SpeculationTrace":
        g_cells: dict[tuple[int, int], list[int]] = {}
        a_cells: dict[tuple[int, int], list[int]] = {}
        for rec in records:
            if rec.layer < 1:
                raise TraceValidationError(
                    f"token {rec.token}: speculation records require layer >= 1, got {rec.layer}"
                )
            key = (rec.token, rec.layer)
            if key in g_cells:
                raise TraceValidationError(f"duplicate record for token {key[0]}, layer {key[1]}")
            g = sorted(rec.guessed)
            a = sorted(rec.actual)
            for name, ids in (("guessed", g), ("actual", a)):
                if len(ids) != shape.top_k or len(set(ids)) != shape.top_k:
                    raise TraceValidationError(
                        f"token {rec.token}, layer {rec.layer}: {name} set must hold "
                        f"{shape.top_k} distinct experts"
                    )
            g_cells[key] = g
            a_cells[key] = a
        return cls(
            shape,
            _pack_grid(g_cells, shape, first_layer=1),
            _pack_grid(a_cells, shape, first_layer=1),
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpeculationTrace)
            and self.shape == other.shape
            and self.guessed.shape == other.guessed.shape
            and bool((self.guessed == other.guessed).all())
            and bool((self.actual == other.actual).all())
        )

    def __repr__(self) -> str:
        return f"SpeculationTrace(shape={self.shape}, num_tokens={self.num_tokens})"


Trace = Union[ActivationTrace, SpeculationTrace]


def _pack_grid(cells: dict[tuple[int, int], list[int]], shape: ModelShape, first_layer: int) -> np.ndarray:
    """Pack {(token, layer): ids} into a dense (T, L - first_layer, K) array.

    Enforces token contiguity from 0 and full layer coverage
    [first_layer, num_layers) for every token.
    """
    n_layers = shape.num_layers - first_layer
    if not cells:
        return np.zeros((0, max(n_layers, 0), shape.top_k), dtype=np.int64)
    tokens = sorted({t for t, _ in cells})
    if tokens != list(range(len(tokens))):
        raise TraceValidationError("token indices must be contiguous from 0")
    expected = len(tokens) * n_layers
    if len(cells) != expected:
        raise TraceValidationError(
            f"expected one record per (token, layer): {expected} records, got {len(cells)}"
        )
    out = np.empty((len(tokens), n_layers, shape.top_k), dtype=np.int64)
    for (t, l), ids in cells.items():
        if not first_layer <= l < shape.num_layers:
            raise TraceValidationError(
                f"layer {l} out of range [{first_layer}, {shape.num_layers})"
            )
        out[t, l - first_layer] = ids
    return out


# --- JSONL serialization ---------------------------------------------------
#
# Line 1 (header):  {"kind":"activation"|"speculation","num_layers":L,"num_experts":E,"top_k":K}
# Activation line:  {"t":<token>,"l":<layer>,"a":[...]}         (a sorted ascending)
# Speculation line: {"t":<token>,"l":<layer>,"g":[...],"a":[...]}  (l >= 1)
#
# Keys appear in exactly this order and there are no extra keys.

def _dump(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_trace(trace: Trace, destination: BinaryIO) -> None:
    """Serialize a trace as JSONL. Round-trips bit-exactly with read_trace."""
    lines = [
        _dump(
            {
                "kind": trace.kind,
                "num_layers": trace.shape.num_layers,
                "num_experts": trace.shape.num_experts,
                "top_k": trace.shape.top_k,
            }
        )
    ]
    if isinstance(trace, ActivationTrace):
        for t in range(trace.num_tokens):
            for l in range(trace.shape.num_layers):
                lines.append(_dump({"t": t, "l": l, "a": trace.activations[t, l].tolist()}))
    else:
        for t in range(trace.num_tokens):
            for j in range(trace.guessed.shape[1]):
                lines.append(
                    _dump(
                        {
                            "t": t,
                            "l": j + 1,
                            "g": trace.guessed[t, j].tolist(),
                            "a": trace.actual[t, j].tolist(),
                        }
                    )
                )
    data = ("\n".join(lines) + "\n").encode("utf-8")
    try:
        destination.write(data)
    except OSError as exc:
        raise OSError(f"failed writing trace: {exc}") from exc


def read_trace(source: BinaryIO) -> Trace:
    """Parse a JSONL trace, validating every invariant.

    Record order in the file is irrelevant; the result is normalized to
    (token, layer) order. Raises TraceParseError with the offending line
    number on malformed input, TraceValidationError on invariant violations.
    """
    raw = source.read()
    if isinstance(raw, bytes):
        text = raw.decode("utf-8")
    else:
        text = raw
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceParseError("empty trace file (missing header)", line=1)

    header = _parse_json_line(lines[0], 1)
    kind = header.get("kind")
    if kind not in ("activation", "speculation"):
        raise TraceParseError(f"unknown trace kind {kind!r}", line=1)
    try:
        shape = ModelShape(
            num_layers=int(header["num_layers"]),
            num_experts=int(header["num_experts"]),
            top_k=int(header["top_k"]),
        )
    except KeyError as exc:
        raise TraceParseError(f"header missing key {exc}", line=1) from exc

    if kind == "activation":
        records = []
        for i, line in enumerate(lines[1:], start=2):
            obj = _parse_json_line(line, i)
            records.append(
                ActivationRecord(
                    _field_int(obj, "t", i), _field_int(obj, "l", i),
                    frozenset(_field_ids(obj, "a", i)),
                )
            )
            _check_record_size(obj, "a", shape.top_k, i)
        _check_layer_range(records, shape, first_layer=0)
        return ActivationTrace.from_records(shape, records)

    records = []
    for i, line in enumerate(lines[1:], start=2):
        obj = _parse_json_line(line, i)
        records.append(
            SpeculationRecord(
                _field_int(obj, "t", i), _field_int(obj, "l", i),
                frozenset(_field_ids(obj, "g", i)),
                frozenset(_field_ids(obj, "a", i)),
            )
        )
        _check_record_size(obj, "g", shape.top_k, i)
        _check_record_size(obj, "a", shape.top_k, i)
    _check_layer_range(records, shape, first_layer=1)
    return SpeculationTrace.from_records(shape, records)


def _parse_json_line(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
    if not isinstance(obj, dict):
        raise TraceParseError("expected a JSON object", line=lineno)
    return obj


def _field_int(obj: dict, key: str, lineno: int) -> int:
    if key not in obj:
        raise TraceParseError(f"missing key {key!r}", line=lineno)
    val = obj[key]
    if not isinstance(val, int) or isinstance(val, bool):
        raise TraceParseError(f"key {key!r} must be an integer", line=lineno)
    return val


def _field_ids(obj: dict, key: str, lineno: int) -> list[int]:
    if key not in obj:
        raise TraceParseError(f"missing key {key!r}", line=lineno)
    val = obj[key]
    if not isinstance(val, list) or any(not isinstance(x, int) or isinstance(x, bool) for x in val):
        raise TraceParseError(f"key {key!r} must be a list of integers", line=lineno)
    return val


def _check_record_size(obj: dict, key: str, top_k: int, lineno: int) -> None:
    ids = obj[key]
    if len(set(ids)) != len(ids):
        raise TraceValidationError(f"line {lineno}: duplicate expert in {key!r}: {ids}")
    if len(ids) != top_k:
        raise TraceValidationError(
            f"line {lineno}: {key!r} has {len(ids)} experts, expected top_k={top_k}"
        )


def _check_layer_range(records, shape: ModelShape, first_layer: int) -> None:
    for rec in records:
        if not first_layer <= rec.layer < shape.num_layers:
            raise TraceValidationError(
                f"token {rec.token}: layer {rec.layer} out of range "
                f"[{first_layer}, {shape.num_layers})"
            )
        if rec.token < 0:
            raise TraceValidationError(f"negative token index {rec.token}")


def save_trace(trace: Trace, path) -> None:
    with open(path, "wb") as fp:
        write_trace(trace, fp)


def load_trace(path) -> Trace:
    with open(path, "rb") as fp:
        return read_trace(fp)


def trace_to_bytes(trace: Trace) -> bytes:
    buf = io.BytesIO()
    write_trace(trace, buf)
    return buf.getvalue()


def trace_from_bytes(data: bytes) -> Trace:
    return read_trace(io.BytesIO(data))
