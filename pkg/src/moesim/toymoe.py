"""Desk-scale MoE forward model with speculative next-layer gating.

The model keeps the one property the speculation trick depends on: layers
are residual, so the hidden state entering layer l+1 is the state leaving
layer l plus a perturbation. Here the perturbation standing in for
attention is a fixed seeded linear map scaled by ``mixing_scale``; at 0 the
stream is untouched between layers and speculation is exact, and the dial
directly controls how much the guess degrades.

Per layer: mix, gate (linear logits + optional bias, softmax, top-k), then
add the probability-weighted outputs of the selected experts back onto the
stream. Experts are fixed seeded two-layer tanh feed-forward maps. The
speculative guess for layer l+1 applies layer l+1's gate to layer l's
output, before the mixing step runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .traces import ActivationTrace, ModelShape, SpeculationTrace


@dataclass(frozen=True)
class ToyModelConfig:
    shape: ModelShape = ModelShape()
    hidden_dim: int = 16
    mixing_scale: float = 0.1
    skew: float = 1.0
    seed: int = 42
    tokens: int = 64

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.mixing_scale < 0:
            raise ConfigError(f"mixing_scale must be >= 0, got {self.mixing_scale}")
        if self.tokens < 0:
            raise ConfigError(f"tokens must be >= 0, got {self.tokens}")


@dataclass(frozen=True)
class GatingNetwork:
    """Per-layer linear gate; ``bias`` is the expert-imbalance knob."""

    weights: np.ndarray  # (hidden_dim, num_experts)
    bias: Optional[np.ndarray] = None  # (num_experts,)


@dataclass(frozen=True)
class HiddenState:
    values: np.ndarray  # (hidden_dim,)
    layer: int  # layer whose output this is; -1 for the model input


class ToyMoeModel:
    """Immutable seeded weights for all layers.

    Draw order from one Generator: gate weights, gate biases, mixing maps,
    expert first layers, expert second layers, then (in run_model) the token
    inputs. Gate and expert weights are unit-variance scaled by 1/sqrt(d);
    mixing map entries are unit-scale; gate biases are scaled by ``skew``.
    """

    def __init__(self, config: ToyModelConfig, rng: np.random.Generator):
        shape = config.shape
        L, E, d = shape.num_layers, shape.num_experts, config.hidden_dim
        scale = 1.0 / np.sqrt(d)
        self.config = config
        gate_w = rng.standard_normal((L, d, E)) * scale
        gate_b = rng.standard_normal((L, E)) * config.skew
        gate_w.setflags(write=False)
        gate_b.setflags(write=False)
        self.gates = tuple(
            GatingNetwork(weights=gate_w[l], bias=gate_b[l]) for l in range(L)
        )
        self.mixing = rng.standard_normal((L, d, d))
        self.expert_w1 = rng.standard_normal((L, E, d, d)) * scale
        self.expert_w2 = rng.standard_normal((L, E, d, d)) * scale
        for arr in (self.mixing, self.expert_w1, self.expert_w2):
            arr.setflags(write=False)

    @classmethod
    def build(cls, config: ToyModelConfig) -> tuple["ToyMoeModel", np.random.Generator]:
        rng = np.random.default_rng(config.seed)
        return cls(config, rng), rng


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    ez = np.exp(z)
    return ez / ez.sum()


def _gate_topk(values: np.ndarray, gate: GatingNetwork, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k expert ids (descending prob, ties to the lower id) and their probs."""
    if values.shape[0] != gate.weights.shape[0]:
        raise ConfigError(
            f"hidden state of dim {values.shape[0]} does not match gate "
            f"dim {gate.weights.shape[0]}"
        )
    z = values @ gate.weights
    if gate.bias is not None:
        z = z + gate.bias
    if not np.isfinite(z).all():
        raise FloatingPointError("gate logits are not finite")
    E = z.shape[0]
    if not 1 <= k <= E:
        raise ConfigError(f"top_k must be in [1, {E}], got {k}")
    order = np.lexsort((np.arange(E), -z))[:k]
    return order, _softmax(z)


def gate_select(h: HiddenState, gate: GatingNetwork, k: int) -> list[tuple[int, float]]:
    """Select the k most probable experts for a hidden state.

    Returns (expert id, softmax probability) pairs in descending probability
    order; equal logits break toward the lower id. Probabilities are not
    renormalized over the selected k.
    """
    order, probs = _gate_topk(np.asarray(h.values, dtype=np.float64), gate, k)
    return [(int(e), float(probs[e])) for e in order]


def forward_token(model: ToyMoeModel, h_in: HiddenState, layer: int) -> tuple[HiddenState, frozenset[int]]:
    """Run one token through one layer: mix, gate, apply selected experts."""
    L = model.config.shape.num_layers
    if not 0 <= layer < L:
        raise ConfigError(f"layer {layer} out of range [0, {L})")
    h_out, selected, _ = _forward(model, np.asarray(h_in.values, dtype=np.float64), layer)
    return HiddenState(values=h_out, layer=layer), frozenset(int(e) for e in selected)


def _forward(model: ToyMoeModel, values: np.ndarray, layer: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cfg = model.config
    h = values + cfg.mixing_scale * (values @ model.mixing[layer])
    selected, probs = _gate_topk(h, model.gates[layer], cfg.shape.top_k)
    out = h.copy()
    for e in selected:
        inner = np.tanh(h @ model.expert_w1[layer, e])
        out = out + probs[e] * (inner @ model.expert_w2[layer, e])
    return out, selected, probs


def speculate_next(h_out_prev: HiddenState, gate_next: GatingNetwork, k: int) -> frozenset[int]:
    """Guess the next layer's experts from the previous layer's output.

    This is the guess available before the next layer's mixing step runs;
    with mixing_scale == 0 it equals the true selection exactly.
    """
    order, _ = _gate_topk(np.asarray(h_out_prev.values, dtype=np.float64), gate_next, k)
    return frozenset(int(e) for e in order)


def run_model(config: ToyModelConfig) -> tuple[ActivationTrace, SpeculationTrace]:
    """Feed a seeded token stream through all layers.

    Records the true activation per (token, layer) and, for every layer >= 1,
    the guess made from the previous layer's output. Token inputs are drawn
    standard normal after the weights, from the same seeded generator.
    """
    model, rng = ToyMoeModel.build(config)
    shape = config.shape
    T, L, K = config.tokens, shape.num_layers, shape.top_k
    inputs = rng.standard_normal((T, config.hidden_dim))

    acts = np.zeros((T, L, K), dtype=np.int64)
    guessed = np.zeros((T, max(L - 1, 0), K), dtype=np.int64)
    actual = np.zeros((T, max(L - 1, 0), K), dtype=np.int64)

    for t in range(T):
        h = inputs[t]
        for l in range(L):
            if l >= 1:
                g_ids, _ = _gate_topk(h, model.gates[l], K)
                guessed[t, l - 1] = np.sort(g_ids)
            h, selected, _ = _forward(model, h, l)
            sel = np.sort(selected)
            acts[t, l] = sel
            if l >= 1:
                actual[t, l - 1] = sel

    if L < 2 or T == 0:
        guessed = guessed[:0]
        actual = actual[:0]
    return ActivationTrace(shape, acts), SpeculationTrace(shape, guessed, actual)
