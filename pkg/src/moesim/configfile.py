"""Flat key-value config files.

One ``key = value`` pair per line; blank lines and ``#`` comments are
ignored. Values stay strings until a consumer types them. Documented keys
for the toy model: layers, experts, top_k, hidden_dim, mixing_scale, skew,
seed, tokens; for cost estimates: expert_bytes, bandwidth_bytes_per_s,
compute_s_per_layer, overlap.
"""

from __future__ import annotations

from .errors import ConfigError


def parse_flat_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {i}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"config line {i}: empty key")
        if key in out:
            raise ConfigError(f"config line {i}: duplicate key {key!r}")
        out[key] = value
    return out


def read_flat_config(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fp:
        return parse_flat_config(fp.read())
