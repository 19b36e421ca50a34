import numpy as np
import pytest

from moesim.traces import ActivationTrace, ModelShape, SpeculationTrace


def single_layer_trace(num_experts: int, rows: list[list[int]]) -> ActivationTrace:
    """Build a 1-layer trace from per-token activated-id lists."""
    top_k = len(rows[0]) if rows else 1
    shape = ModelShape(num_layers=1, num_experts=num_experts, top_k=top_k)
    acts = np.array([[sorted(r)] for r in rows], dtype=np.int64).reshape(len(rows), 1, top_k)
    return ActivationTrace(shape, acts)


def random_activation_trace(rng: np.random.Generator, shape: ModelShape, tokens: int) -> ActivationTrace:
    acts = np.zeros((tokens, shape.num_layers, shape.top_k), dtype=np.int64)
    for t in range(tokens):
        for l in range(shape.num_layers):
            acts[t, l] = np.sort(rng.choice(shape.num_experts, size=shape.top_k, replace=False))
    return ActivationTrace(shape, acts)


def random_speculation_trace(rng: np.random.Generator, shape: ModelShape, tokens: int) -> SpeculationTrace:
    L, K = shape.num_layers, shape.top_k
    guessed = np.zeros((tokens, L - 1, K), dtype=np.int64)
    actual = np.zeros((tokens, L - 1, K), dtype=np.int64)
    for t in range(tokens):
        for j in range(L - 1):
            guessed[t, j] = np.sort(rng.choice(shape.num_experts, size=K, replace=False))
            actual[t, j] = np.sort(rng.choice(shape.num_experts, size=K, replace=False))
    return SpeculationTrace(shape, guessed, actual)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
