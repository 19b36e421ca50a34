import numpy as np
import pytest

from conftest import random_activation_trace, random_speculation_trace
from moesim.errors import TraceParseError, TraceValidationError
from moesim.traces import (
    ActivationRecord,
    ActivationTrace,
    ModelShape,
    SpeculationTrace,
    trace_from_bytes,
    trace_to_bytes,
)


def test_shape_validation():
    with pytest.raises(TraceValidationError):
        ModelShape(num_layers=0)
    with pytest.raises(TraceValidationError):
        ModelShape(top_k=9, num_experts=8)
    with pytest.raises(TraceValidationError):
        ModelShape(top_k=0)
    assert ModelShape() == ModelShape(32, 8, 2)


def test_single_record_roundtrip():
    shape = ModelShape(num_layers=1, num_experts=8, top_k=2)
    trace = ActivationTrace(shape, np.array([[[0, 1]]], dtype=np.int64))
    data = trace_to_bytes(trace)
    lines = data.decode().splitlines()
    assert lines[0] == '{"kind":"activation","num_layers":1,"num_experts":8,"top_k":2}'
    assert lines[1] == '{"t":0,"l":0,"a":[0,1]}'
    assert trace_from_bytes(data) == trace


def test_empty_trace_roundtrip():
    shape = ModelShape(num_layers=4, num_experts=8, top_k=2)
    trace = ActivationTrace(shape, np.zeros((0, 4, 2), dtype=np.int64))
    data = trace_to_bytes(trace)
    assert data.decode().count("\n") == 1  # header only
    back = trace_from_bytes(data)
    assert back.num_tokens == 0
    assert back == trace


def test_line_count_4_tokens_2_layers(rng):
    shape = ModelShape(num_layers=2, num_experts=8, top_k=2)
    trace = random_activation_trace(rng, shape, tokens=4)
    data = trace_to_bytes(trace)
    assert data.decode().count("\n") == 1 + 4 * 2


def test_trailing_newline_optional():
    shape = ModelShape(num_layers=1, num_experts=4, top_k=1)
    trace = ActivationTrace(shape, np.array([[[2]]], dtype=np.int64))
    data = trace_to_bytes(trace).rstrip(b"\n")
    assert trace_from_bytes(data) == trace


def test_record_order_normalized():
    text = (
        '{"kind":"activation","num_layers":2,"num_experts":4,"top_k":1}\n'
        '{"t":1,"l":1,"a":[3]}\n'
        '{"t":0,"l":0,"a":[0]}\n'
        '{"t":0,"l":1,"a":[1]}\n'
        '{"t":1,"l":0,"a":[2]}\n'
    )
    trace = trace_from_bytes(text.encode())
    assert trace.activations.tolist() == [[[0], [1]], [[2], [3]]]


def test_duplicate_expert_rejected():
    text = (
        '{"kind":"activation","num_layers":1,"num_experts":8,"top_k":2}\n'
        '{"t":0,"l":0,"a":[3,3]}\n'
    )
    with pytest.raises(TraceValidationError, match="duplicate expert"):
        trace_from_bytes(text.encode())


def test_layer_out_of_range_rejected():
    text = (
        '{"kind":"activation","num_layers":32,"num_experts":8,"top_k":2}\n'
        '{"t":0,"l":32,"a":[0,1]}\n'
    )
    with pytest.raises(TraceValidationError, match="out of range"):
        trace_from_bytes(text.encode())


def test_wrong_set_size_rejected():
    text = (
        '{"kind":"activation","num_layers":1,"num_experts":8,"top_k":2}\n'
        '{"t":0,"l":0,"a":[1]}\n'
    )
    with pytest.raises(TraceValidationError, match="expected top_k"):
        trace_from_bytes(text.encode())


def test_duplicate_cell_rejected():
    text = (
        '{"kind":"activation","num_layers":1,"num_experts":8,"top_k":2}\n'
        '{"t":0,"l":0,"a":[0,1]}\n'
        '{"t":0,"l":0,"a":[2,3]}\n'
    )
    with pytest.raises(TraceValidationError, match="duplicate record"):
        trace_from_bytes(text.encode())


def test_missing_cell_rejected():
    text = (
        '{"kind":"activation","num_layers":2,"num_experts":8,"top_k":2}\n'
        '{"t":0,"l":0,"a":[0,1]}\n'
    )
    with pytest.raises(TraceValidationError, match="one record per"):
        trace_from_bytes(text.encode())


def test_noncontiguous_tokens_rejected():
    text = (
        '{"kind":"activation","num_layers":1,"num_experts":8,"top_k":2}\n'
        '{"t":1,"l":0,"a":[0,1]}\n'
    )
    with pytest.raises(TraceValidationError, match="contiguous"):
        trace_from_bytes(text.encode())


def test_malformed_json_names_line():
    text = (
        '{"kind":"activation","num_layers":1,"num_experts":8,"top_k":2}\n'
        "not json\n"
    )
    with pytest.raises(TraceParseError, match="line 2"):
        trace_from_bytes(text.encode())


def test_bad_header_rejected():
    with pytest.raises(TraceParseError, match="line 1"):
        trace_from_bytes(b'{"kind":"nope"}\n')
    with pytest.raises(TraceParseError):
        trace_from_bytes(b"")


def test_speculation_layer_zero_rejected():
    text = (
        '{"kind":"speculation","num_layers":4,"num_experts":8,"top_k":2}\n'
        '{"t":0,"l":0,"g":[0,1],"a":[0,1]}\n'
    )
    with pytest.raises(TraceValidationError, match="out of range"):
        trace_from_bytes(text.encode())


def test_speculation_roundtrip(rng):
    shape = ModelShape(num_layers=4, num_experts=8, top_k=2)
    trace = random_speculation_trace(rng, shape, tokens=3)
    data = trace_to_bytes(trace)
    lines = data.decode().splitlines()
    assert lines[0] == '{"kind":"speculation","num_layers":4,"num_experts":8,"top_k":2}'
    assert len(lines) == 1 + 3 * 3
    assert trace_from_bytes(data) == trace


def test_from_records_matches_arrays(rng):
    shape = ModelShape(num_layers=3, num_experts=6, top_k=2)
    trace = random_activation_trace(rng, shape, tokens=5)
    rebuilt = ActivationTrace.from_records(shape, trace.records)
    assert rebuilt == trace
    rec = trace.records[0]
    assert rec == ActivationRecord(0, 0, frozenset(trace.activations[0, 0].tolist()))


def test_roundtrip_property_randomized(rng):
    # Property: read(write(t)) == t and the second serialization is byte-identical.
    for i in range(200):
        layers = int(rng.integers(1, 5))
        experts = int(rng.integers(2, 9))
        top_k = int(rng.integers(1, experts + 1))
        tokens = int(rng.integers(0, 6))
        shape = ModelShape(layers, experts, top_k)
        if i % 2 == 0:
            trace = random_activation_trace(rng, shape, tokens)
        else:
            if layers < 2:
                shape = ModelShape(2, experts, top_k)
            trace = random_speculation_trace(rng, shape, tokens)
        first = trace_to_bytes(trace)
        back = trace_from_bytes(first)
        assert back == trace
        assert trace_to_bytes(back) == first


def test_l1_speculation_trace_is_empty():
    shape = ModelShape(num_layers=1, num_experts=4, top_k=2)
    trace = SpeculationTrace(shape, np.zeros((0, 0, 2), dtype=np.int64), np.zeros((0, 0, 2), dtype=np.int64))
    assert trace.num_tokens == 0
    assert trace.records == []
    assert trace_from_bytes(trace_to_bytes(trace)) == trace
