"""Synthetic activation-trace generators.

Two workload families cover the two statistical phenomena an expert cache
cares about:

* ``gen_zipf``   -- popularity imbalance: per (token, layer), top_k distinct
  experts drawn without replacement proportional to rank weights
  rank^(-skew), with an independent popularity ranking per layer.
* ``gen_markov`` -- temporal locality: each of the previous token's experts
  is independently re-selected with probability ``repeat_prob``; remaining
  slots fall back to the Zipf draw.

Everything is a pure function of its params. Uniform variates are generated
up front with numpy's Generator and consumed by the sampling kernels, so
traces are bit-identical regardless of the kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError
from .traces import ActivationTrace, ModelShape


@dataclass(frozen=True)
class ZipfParams:
    shape: ModelShape
    num_tokens: int
    skew_exponent: float = 1.0
    per_layer_permutation: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_tokens < 0:
            raise ConfigError(f"num_tokens must be >= 0, got {self.num_tokens}")
        if self.skew_exponent < 0:
            raise ConfigError(f"skew_exponent must be >= 0, got {self.skew_exponent}")


@dataclass(frozen=True)
class MarkovParams:
    shape: ModelShape
    num_tokens: int
    repeat_prob: float = 0.3
    base: ZipfParams = field(default=None)  # type: ignore[assignment]
    seed: int = 0

    def __post_init__(self):
        if self.num_tokens < 0:
            raise ConfigError(f"num_tokens must be >= 0, got {self.num_tokens}")
        if not 0.0 <= self.repeat_prob <= 1.0:
            raise ConfigError(f"repeat_prob must be in [0, 1], got {self.repeat_prob}")
        if self.base is None:
            object.__setattr__(
                self, "base", ZipfParams(self.shape, self.num_tokens, seed=self.seed)
            )
        if self.base.shape != self.shape:
            raise ConfigError("base Zipf params must share the trace shape")


def _layer_weights(params: ZipfParams, rng: np.random.Generator) -> np.ndarray:
    """(L, E) per-expert weights: expert perm[r] gets weight (r + 1)^-skew."""
    E = params.shape.num_experts
    L = params.shape.num_layers
    rank_w = (np.arange(1, E + 1, dtype=np.float64)) ** (-params.skew_exponent)
    weights = np.empty((L, E), dtype=np.float64)
    shared = rng.permutation(E)
    for l in range(L):
        perm = rng.permutation(E) if params.per_layer_permutation else shared
        weights[l, perm] = rank_w
    return weights


def gen_zipf(params: ZipfParams) -> ActivationTrace:
    """Popularity-skewed trace; deterministic in ``params.seed``."""
    shape = params.shape
    T, L, K = params.num_tokens, shape.num_layers, shape.top_k
    rng = np.random.default_rng(params.seed)
    weights = _layer_weights(params, rng)
    acts = np.zeros((T, L, K), dtype=np.int64)
    for l in range(L):
        uniforms = rng.random((T, K))
        out = np.zeros((T, K), dtype=np.int64)
        kernels.sample_zipf_layer(weights[l], T, K, uniforms, out)
        acts[:, l, :] = out
    return ActivationTrace(shape, acts)


def gen_markov(params: MarkovParams) -> ActivationTrace:
    """Temporal-locality trace; deterministic in ``params.seed``.

    ``params.seed`` drives the whole process (layer permutations included);
    the base params supply only the skew and permutation settings.
    """
    shape = params.shape
    T, L, K = params.num_tokens, shape.num_layers, shape.top_k
    rng = np.random.default_rng(params.seed)
    weights = _layer_weights(params.base, rng)
    acts = np.zeros((T, L, K), dtype=np.int64)
    for l in range(L):
        u_retain = rng.random((T, K))
        u_draw = rng.random((T, K))
        out = np.zeros((T, K), dtype=np.int64)
        kernels.sample_markov_layer(
            weights[l], T, K, params.repeat_prob, u_retain, u_draw, out
        )
        acts[:, l, :] = out
    return ActivationTrace(shape, acts)


def repeat_rate(trace: ActivationTrace) -> float:
    """Fraction of (token, layer) expert slots repeated from the previous token.

    Measures temporal locality: for each layer and each token t > 0, the
    share of token t's activated experts that were also activated at t - 1.
    The random baseline for a top-k-of-E gate is K/E.
    """
    acts = trace.activations
    T = acts.shape[0]
    if T < 2:
        return 0.0
    prev = acts[:-1]  # (T-1, L, K)
    curr = acts[1:]
    # curr expert also present in prev token's set for the same layer
    matches = (curr[..., :, None] == prev[..., None, :]).any(axis=-1)
    return float(matches.mean())
