"""Hot inner loops: whole-layer policy replay and trace sampling.

Kernels are written as njit-able scalar loops over integer/boolean arrays,
so the compiled and interpreted paths produce bit-identical results. The
backend is chosen once at import time:

* default       -- numba @njit if importable, plain numpy otherwise;
* MOESIM_BACKEND=numpy  -- force the interpreted numpy path;
* MOESIM_BACKEND=numba  -- require numba (ImportError if missing).

Backend choice never changes any output, only speed; ``benchmarks/``
contains a script comparing the two.
"""

from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("MOESIM_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"MOESIM_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    HAVE_NUMBA = False
else:
    try:
        from numba import njit as _njit

        HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise
        HAVE_NUMBA = False

if not HAVE_NUMBA:

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


BACKEND = "numba" if HAVE_NUMBA else "numpy"

# Policy codes shared with simulate.py.
P_LRU = 0
P_LFU = 1
P_LFU_AGED = 2
P_OPT = 3


@_njit(cache=True)
def replay_policy(acts, num_experts, capacity, policy, decay_factor, decay_period):
    """Replay one layer's token stream through an eviction policy.

    acts: (T, K) int64 activated expert ids per step, rows sorted ascending.
    Returns (resident_before, evicted) as (T, E) uint8 masks. The opt policy
    computes its own next-use table from the stream it is given, which is by
    construction the full remaining future at every step.
    """
    T, K = acts.shape
    E = num_experts

    resident = np.zeros(E, np.uint8)
    in_act = np.zeros(E, np.uint8)
    freq = np.zeros(E, np.float64)
    last_touch = np.full(E, -1, np.int64)
    resident_before = np.zeros((T, E), np.uint8)
    evicted = np.zeros((T, E), np.uint8)

    # next_use[t, e]: first step index > t that activates e; T means never.
    next_use = np.empty((0, 0), np.int64)
    if policy == P_OPT:
        next_use = np.empty((T, E), np.int64)
        upcoming = np.full(E, T, np.int64)
        for t in range(T - 1, -1, -1):
            for e in range(E):
                next_use[t, e] = upcoming[e]
            for j in range(K):
                upcoming[acts[t, j]] = t

    n_res = 0
    for t in range(T):
        if policy == P_LFU_AGED and t > 0 and t % decay_period == 0:
            for e in range(E):
                freq[e] *= decay_factor

        for j in range(K):
            in_act[acts[t, j]] = 1
        for e in range(E):
            resident_before[t, e] = resident[e]

        n_miss = 0
        for j in range(K):
            if resident[acts[t, j]] == 0:
                n_miss += 1

        need = n_res + n_miss - capacity
        for _ in range(max(0, need)):
            victim = -1
            if policy == P_LRU:
                best_touch = np.int64(2**62)
                for e in range(E):
                    if resident[e] == 1 and in_act[e] == 0 and last_touch[e] < best_touch:
                        best_touch = last_touch[e]
                        victim = e
            elif policy == P_OPT:
                best_use = np.int64(-1)
                for e in range(E):
                    if resident[e] == 1 and in_act[e] == 0 and next_use[t, e] > best_use:
                        best_use = next_use[t, e]
                        victim = e
            else:
                best_freq = np.inf
                best_touch = np.int64(2**62)
                for e in range(E):
                    if resident[e] == 1 and in_act[e] == 0:
                        if freq[e] < best_freq or (
                            freq[e] == best_freq and last_touch[e] < best_touch
                        ):
                            best_freq = freq[e]
                            best_touch = last_touch[e]
                            victim = e
            evicted[t, victim] = 1
            resident[victim] = 0
            n_res -= 1

        for j in range(K):
            e = acts[t, j]
            if resident[e] == 0:
                resident[e] = 1
                n_res += 1
            freq[e] += 1.0
            last_touch[e] = t

        for j in range(K):
            in_act[acts[t, j]] = 0

    return resident_before, evicted


@_njit(cache=True)
def sample_zipf_layer(weights, num_tokens, top_k, uniforms, out):
    """Fill out[t] with top_k distinct draws, sequential renormalized sampling.

    weights: (E,) unnormalized per-expert weights for this layer.
    uniforms: (T, K) pre-generated U(0,1) variates, one consumed per draw.
    Rows of out are sorted ascending after filling.
    """
    E = weights.shape[0]
    avail = np.ones(E, np.uint8)
    for t in range(num_tokens):
        for e in range(E):
            avail[e] = 1
        for j in range(top_k):
            total = 0.0
            for e in range(E):
                if avail[e] == 1:
                    total += weights[e]
            x = uniforms[t, j] * total
            acc = 0.0
            chosen = -1
            for e in range(E):
                if avail[e] == 1:
                    acc += weights[e]
                    if x < acc:
                        chosen = e
                        break
            if chosen == -1:  # x == total from rounding: take last available
                for e in range(E - 1, -1, -1):
                    if avail[e] == 1:
                        chosen = e
                        break
            out[t, j] = chosen
            avail[chosen] = 0
        _sort_row(out, t, top_k)


@_njit(cache=True)
def sample_markov_layer(weights, num_tokens, top_k, repeat_prob, u_retain, u_draw, out):
    """Markov locality chain: token 0 from the base draw; afterwards each of
    the previous token's experts is independently retained with repeat_prob
    and the remaining slots are base draws excluding already-chosen experts.

    u_retain: (T, K) retention variates; u_draw: (T, K) fill-draw variates.
    """
    E = weights.shape[0]
    avail = np.ones(E, np.uint8)
    for t in range(num_tokens):
        for e in range(E):
            avail[e] = 1
        filled = 0
        if t > 0:
            for j in range(top_k):
                prev = out[t - 1, j]
                if u_retain[t, j] < repeat_prob:
                    out[t, filled] = prev
                    avail[prev] = 0
                    filled += 1
        draws = 0
        while filled < top_k:
            total = 0.0
            for e in range(E):
                if avail[e] == 1:
                    total += weights[e]
            x = u_draw[t, draws] * total
            acc = 0.0
            chosen = -1
            for e in range(E):
                if avail[e] == 1:
                    acc += weights[e]
                    if x < acc:
                        chosen = e
                        break
            if chosen == -1:
                for e in range(E - 1, -1, -1):
                    if avail[e] == 1:
                        chosen = e
                        break
            out[t, filled] = chosen
            avail[chosen] = 0
            filled += 1
            draws += 1
        _sort_row(out, t, top_k)


@_njit(cache=True)
def _sort_row(out, t, k):
    # Insertion sort; k is tiny.
    for i in range(1, k):
        key = out[t, i]
        j = i - 1
        while j >= 0 and out[t, j] > key:
            out[t, j + 1] = out[t, j]
            j -= 1
        out[t, j + 1] = key


def python_impl(kernel):
    """The uncompiled version of a kernel (the kernel itself on the numpy backend)."""
    return getattr(kernel, "py_func", kernel)
