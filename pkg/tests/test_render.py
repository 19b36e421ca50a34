import xml.etree.ElementTree as ET

import pytest

from conftest import random_activation_trace, random_speculation_trace, single_layer_trace
from moesim.errors import ConfigError
from moesim.metrics import expert_histograms
from moesim.policies import PolicyKind
from moesim.render import (
    count_marks,
    render_cache_trace,
    render_histogram,
    render_speculation,
    text_cache_trace,
    text_speculation,
)
from moesim.simulate import SimConfig, simulate
from moesim.traces import ModelShape, SpeculationRecord, SpeculationTrace


def simulate_single(rows, cache_size=4, num_experts=8):
    trace = single_layer_trace(num_experts, rows)
    return trace, simulate(trace, SimConfig(policy=PolicyKind.lru(), cache_size=cache_size))


class TestCacheTraceSvg:
    def test_one_token_counts(self):
        _, log = simulate_single([[0, 1]])
        svg = render_cache_trace(log, 0)
        marks = count_marks(svg)
        assert marks.get("act", 0) == 2
        assert marks.get("cached", 0) == 0

    def test_mark_conservation(self, rng):
        shape = ModelShape(num_layers=2, num_experts=8, top_k=2)
        trace = random_activation_trace(rng, shape, tokens=20)
        log = simulate(trace, SimConfig(policy=PolicyKind.lfu(), cache_size=4))
        for layer in (0, 1):
            marks = count_marks(render_cache_trace(log, layer))
            assert marks["act"] == 20 * 2
            assert marks["cached"] == int(log.resident_sizes(layer).sum())

    def test_deterministic_bytes(self, rng):
        shape = ModelShape(num_layers=1, num_experts=8, top_k=2)
        trace = random_activation_trace(rng, shape, tokens=10)
        log = simulate(trace, SimConfig(policy=PolicyKind.lru(), cache_size=4))
        assert render_cache_trace(log, 0) == render_cache_trace(log, 0)

    def test_valid_xml_no_external_refs(self, rng):
        shape = ModelShape(num_layers=1, num_experts=8, top_k=2)
        trace = random_activation_trace(rng, shape, tokens=5)
        log = simulate(trace, SimConfig(policy=PolicyKind.lru(), cache_size=4))
        svg = render_cache_trace(log, 0)
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")
        assert "http" not in svg.replace("http://www.w3.org/2000/svg", "")

    def test_layer_label_is_one_based(self):
        _, log = simulate_single([[0, 1]])
        assert "layer 1" in render_cache_trace(log, 0)

    def test_absent_layer_rejected(self, rng):
        shape = ModelShape(num_layers=2, num_experts=8, top_k=2)
        trace = random_activation_trace(rng, shape, tokens=3)
        log = simulate(trace, SimConfig(policy=PolicyKind.lru(), cache_size=4, layers=(0,)))
        with pytest.raises(ConfigError):
            render_cache_trace(log, 1)


def spec_trace_two_layers(records):
    shape = ModelShape(num_layers=3, num_experts=8, top_k=2)
    recs = []
    for t, per_layer in enumerate(records):
        for l, (g, a) in per_layer.items():
            recs.append(SpeculationRecord(t, l, frozenset(g), frozenset(a)))
    return SpeculationTrace.from_records(shape, recs)


class TestSpeculationSvg:
    def test_all_correct_token(self):
        trace = spec_trace_two_layers([{1: ({0, 1}, {0, 1}), 2: ({2, 3}, {2, 3})}])
        marks = count_marks(render_speculation(trace, 0))
        assert marks.get("tp", 0) == 4
        assert "fp" not in marks
        assert "fn" not in marks

    def test_fp_equals_fn_excluding_layer_zero(self, rng):
        shape = ModelShape(num_layers=5, num_experts=8, top_k=2)
        for _ in range(10):
            trace = random_speculation_trace(rng, shape, tokens=3)
            token = int(rng.integers(0, 3))
            marks = count_marks(render_speculation(trace, token))
            assert marks.get("fp", 0) == marks.get("fn", 0)

    def test_layer_zero_drawn_excluded_with_activation(self, rng):
        shape = ModelShape(num_layers=3, num_experts=8, top_k=2)
        act = random_activation_trace(rng, shape, tokens=2)
        spec = random_speculation_trace(rng, shape, tokens=2)
        svg = render_speculation(spec, 0, activation=act)
        marks = count_marks(svg)
        assert marks.get("excluded", 0) == 2  # K cells at layer 0
        # excluded cells use the fn color but never the fn class
        assert marks.get("fp", 0) == marks.get("fn", 0)

    def test_mismatched_activation_rejected(self, rng):
        shape = ModelShape(num_layers=3, num_experts=8, top_k=2)
        spec = random_speculation_trace(rng, shape, tokens=2)
        act = random_activation_trace(rng, shape, tokens=3)
        with pytest.raises(ConfigError):
            render_speculation(spec, 0, activation=act)

    def test_absent_token_rejected(self, rng):
        shape = ModelShape(num_layers=3, num_experts=8, top_k=2)
        trace = random_speculation_trace(rng, shape, tokens=2)
        with pytest.raises(ConfigError):
            render_speculation(trace, 5)

    def test_deterministic_bytes(self, rng):
        shape = ModelShape(num_layers=4, num_experts=8, top_k=2)
        trace = random_speculation_trace(rng, shape, tokens=2)
        assert render_speculation(trace, 1) == render_speculation(trace, 1)


class TestHistogramSvg:
    def test_bar_count_and_proportionality(self):
        rows = [[0, 1]] * 6 + [[0, 2]] * 2
        trace = single_layer_trace(8, rows)
        hist = expert_histograms(trace)[0]
        svg = render_histogram(hist)
        root = ET.fromstring(svg)
        bars = [e for e in root.iter() if e.attrib.get("class") == "bar"]
        assert len(bars) == 8
        heights = {i: float(b.attrib["height"]) for i, b in enumerate(bars)}
        assert heights[0] > heights[1] > heights[2] > 0
        for e in range(3, 8):
            assert heights[e] == 0.0  # zero-count experts keep zero-height bars
        # counts 8 and 6: height ratio 6/8 within rounding
        assert heights[1] / heights[0] == pytest.approx(6 / 8, abs=0.02)


class TestTextGrids:
    def test_cache_grid_characters(self):
        _, log = simulate_single([[0, 1], [0, 2]], cache_size=4, num_experts=4)
        text = text_cache_trace(log, 0)
        rows = text.splitlines()
        # token 0: experts 0,1 activated, nothing cached yet
        assert [r[0] for r in rows] == ["A", "A", " ", " "]
        # token 1: 0 activated+cached, 1 cached only, 2 activated only
        assert [r[1] for r in rows] == ["#", ".", "A", " "]

    def test_speculation_grid_characters(self):
        trace = spec_trace_two_layers([{1: ({0, 1}, {1, 2}), 2: ({4, 5}, {4, 5})}])
        text = text_speculation(trace, 0)
        rows = text.splitlines()
        assert rows[1][1] == "+"  # expert 1, layer 1: guessed and actual
        assert rows[0][1] == "g"  # expert 0: guessed only
        assert rows[2][1] == "x"  # expert 2: actual only
        assert rows[4][2] == "+" and rows[5][2] == "+"

    def test_speculation_grid_layer_zero_context(self, rng):
        shape = ModelShape(num_layers=3, num_experts=8, top_k=2)
        act = random_activation_trace(rng, shape, tokens=1)
        spec = random_speculation_trace(rng, shape, tokens=1)
        text = text_speculation(spec, 0, activation=act)
        col0 = [row[0] for row in text.splitlines()]
        assert col0.count("x") == 2
