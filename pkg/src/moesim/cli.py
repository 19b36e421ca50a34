"""Command-line entry point.

Subcommands wire the library into one workflow: generate traces
(gen-trace), replay a policy over them (simulate), speculate with the toy
model (speculate), analyze (metrics), estimate costs (cost), draw figures
(render), compare policies (compare), and sweep cache sizes (sweep).

All machine output is JSON (or JSONL files); human tables are a formatting
layer over the same data. Exit codes: 0 success, 1 I/O or data error,
2 usage or validation error. Everything is deterministic given flags,
files, and seeds; the default seed is 42.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .configfile import read_flat_config
from .costmodel import (
    DEFAULT_MEMORY_POINTS,
    CostParams,
    estimate_latency,
    estimate_peak_memory,
    fit_memory_model,
    parse_memory_points,
    speculation_cost,
)
from .errors import ConfigError, TraceError
from .metrics import cache_metrics, expert_histograms, speculation_metrics
from .policies import PolicyKind
from .render import (
    RenderSpec,
    render_cache_trace,
    render_histogram,
    render_speculation,
    text_cache_trace,
    text_speculation,
)
from .simulate import (
    SimConfig,
    load_event_log,
    offloads_to_cache_size,
    save_event_log,
    simulate,
)
from .tracegen import MarkovParams, ZipfParams, gen_markov, gen_zipf
from .toymoe import ToyModelConfig, run_model
from .traces import ActivationTrace, ModelShape, SpeculationTrace, load_trace, save_trace

DEFAULT_SEED = 42


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


def _shape_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, help="number of MoE layers")
    p.add_argument("--experts", type=int, help="experts per layer")
    p.add_argument("--top-k", type=int, help="experts activated per token per layer")


def _config_overlay(args, keymap: dict[str, str]) -> dict[str, str]:
    """Values from --config, for flags the user did not set."""
    if not getattr(args, "config", None):
        return {}
    cfg = read_flat_config(args.config)
    unknown = set(cfg) - set(keymap)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _resolved(args, cfg: dict[str, str], flag: str, key: str, cast, default):
    val = getattr(args, flag)
    if val is not None:
        return val
    if key in cfg:
        try:
            return cast(cfg[key])
        except ValueError as exc:
            raise ConfigError(f"config key {key}: cannot parse {cfg[key]!r}") from exc
    return default


def _shape_from(args, cfg: dict[str, str], layers=32, experts=8, top_k=2) -> ModelShape:
    """Build a ModelShape from flags/config; bad values are usage errors."""
    try:
        return ModelShape(
            num_layers=_resolved(args, cfg, "layers", "layers", int, layers),
            num_experts=_resolved(args, cfg, "experts", "experts", int, experts),
            top_k=_resolved(args, cfg, "top_k", "top_k", int, top_k),
        )
    except TraceError as exc:
        raise ConfigError(str(exc)) from exc


_TOY_KEYS = {
    "layers": "layers",
    "experts": "experts",
    "top_k": "top_k",
    "hidden_dim": "hidden_dim",
    "mixing_scale": "mixing_scale",
    "skew": "skew",
    "seed": "seed",
    "tokens": "tokens",
}

_COST_KEYS = dict(
    _TOY_KEYS,
    expert_bytes="expert_bytes",
    bandwidth_bytes_per_s="bandwidth_bytes_per_s",
    compute_s_per_layer="compute_s_per_layer",
    overlap="overlap",
)


def _toy_config(args, cfg: dict[str, str]) -> ToyModelConfig:
    shape = _shape_from(args, cfg)
    return ToyModelConfig(
        shape=shape,
        hidden_dim=_resolved(args, cfg, "hidden_dim", "hidden_dim", int, 16),
        mixing_scale=_resolved(args, cfg, "mixing_scale", "mixing_scale", float, 0.1),
        skew=_resolved(args, cfg, "skew", "skew", float, 1.0),
        seed=_resolved(args, cfg, "seed", "seed", int, DEFAULT_SEED),
        tokens=_resolved(args, cfg, "tokens", "tokens", int, 64),
    )


def _cost_params(args, cfg: dict[str, str]) -> CostParams:
    return CostParams(
        expert_bytes=_resolved(args, cfg, "expert_bytes", "expert_bytes", float, CostParams().expert_bytes),
        bandwidth_bytes_per_s=_resolved(
            args, cfg, "bandwidth", "bandwidth_bytes_per_s", float, CostParams().bandwidth_bytes_per_s
        ),
        compute_s_per_layer=_resolved(
            args, cfg, "compute", "compute_s_per_layer", float, CostParams().compute_s_per_layer
        ),
        overlap=_resolved(args, cfg, "overlap", "overlap", float, 0.0),
    )


def _parse_range(text: str) -> list[int]:
    """Accept "2..8" (inclusive) or "2,3,4"."""
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError as exc:
            raise ConfigError(f"bad range {text!r}") from exc
        if hi_i < lo_i:
            raise ConfigError(f"empty range {text!r}")
        return list(range(lo_i, hi_i + 1))
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value list {text!r}") from exc
    if not values:
        raise ConfigError(f"empty range {text!r}")
    return values


# --- subcommands -----------------------------------------------------------

def _cmd_gen_trace(args) -> int:
    cfg = _config_overlay(args, _TOY_KEYS)
    if args.model == "toy":
        toy = _toy_config(args, cfg)
        if not args.out_spec:
            raise ConfigError("--model toy writes both traces; --out-spec is required")
        act, spec = run_model(toy)
        save_trace(act, args.out)
        save_trace(spec, args.out_spec)
        print(
            json.dumps(
                {
                    "out": args.out,
                    "out_spec": args.out_spec,
                    "tokens": act.num_tokens,
                    "activation_records": act.num_tokens * toy.shape.num_layers,
                    "speculation_records": spec.num_tokens * max(toy.shape.num_layers - 1, 0),
                }
            )
        )
        return 0

    shape = _shape_from(args, cfg)
    tokens = _resolved(args, cfg, "tokens", "tokens", int, 64)
    seed = _resolved(args, cfg, "seed", "seed", int, DEFAULT_SEED)
    skew = _resolved(args, cfg, "skew", "skew", float, 1.0)
    zipf = ZipfParams(
        shape=shape,
        num_tokens=tokens,
        skew_exponent=skew,
        per_layer_permutation=not args.shared_ranking,
        seed=seed,
    )
    if args.model == "zipf":
        trace = gen_zipf(zipf)
    else:
        trace = gen_markov(
            MarkovParams(
                shape=shape,
                num_tokens=tokens,
                repeat_prob=args.repeat_prob,
                base=zipf,
                seed=seed,
            )
        )
    save_trace(trace, args.out)
    print(
        json.dumps(
            {
                "out": args.out,
                "tokens": trace.num_tokens,
                "records": trace.num_tokens * shape.num_layers,
            }
        )
    )
    return 0


def _sim_config(args, shape: ModelShape) -> SimConfig:
    if (args.cache_size is None) == (args.offloads is None):
        raise ConfigError("exactly one of --cache-size / --offloads is required")
    cache_size = (
        args.cache_size
        if args.cache_size is not None
        else offloads_to_cache_size(args.offloads, shape)
    )
    layers = tuple(_parse_range(args.sim_layers)) if args.sim_layers else None
    return SimConfig(
        policy=PolicyKind.parse(args.policy),
        cache_size=cache_size,
        warmup_tokens=args.warmup,
        layers=layers,
    )


def _cmd_simulate(args) -> int:
    trace = load_trace(args.trace)
    if not isinstance(trace, ActivationTrace):
        raise ConfigError("simulate requires an activation trace")
    config = _sim_config(args, trace.shape)
    log = simulate(trace, config)
    save_event_log(log, args.out)
    _print_json(cache_metrics(log).to_dict())
    return 0


def _cmd_speculate(args) -> int:
    cfg = _config_overlay(args, _TOY_KEYS)
    toy = _toy_config(args, cfg)
    act, spec = run_model(toy)
    if args.out:
        save_trace(spec, args.out)
    if args.out_trace:
        save_trace(act, args.out_trace)
    _print_json(speculation_metrics(spec).to_dict())
    return 0


def _cmd_metrics(args) -> int:
    given = [x is not None for x in (args.events, args.spec, args.trace)]
    if sum(given) != 1:
        raise ConfigError("exactly one of --events / --spec / --trace is required")
    if args.events:
        log = load_event_log(args.events)
        _print_json(cache_metrics(log).to_dict())
    elif args.spec:
        trace = load_trace(args.spec)
        if not isinstance(trace, SpeculationTrace):
            raise ConfigError("--spec requires a speculation trace")
        _print_json(speculation_metrics(trace).to_dict())
    else:
        trace = load_trace(args.trace)
        if not isinstance(trace, ActivationTrace):
            raise ConfigError("--trace requires an activation trace")
        _print_json([h.to_dict() for h in expert_histograms(trace)])
    return 0


def _cmd_cost(args) -> int:
    cfg = _config_overlay(args, _COST_KEYS)
    params = _cost_params(args, cfg)
    doc: dict = {}
    if args.events:
        log = load_event_log(args.events)
        doc = cache_metrics(log).to_dict()
        doc["cost"] = estimate_latency(log, params).to_dict()
    if args.spec:
        trace = load_trace(args.spec)
        if not isinstance(trace, SpeculationTrace):
            raise ConfigError("--spec requires a speculation trace")
        transferred, wasted = speculation_cost(trace, params)
        doc.setdefault("cost", {})["speculation"] = {
            "bytes_transferred": transferred,
            "wasted_bytes": wasted,
        }
    if args.fit_memory:
        model = fit_memory_model(parse_memory_points(args.fit_memory))
        doc["memory_model"] = model.to_dict()
    if not doc:
        raise ConfigError("nothing to do: give --events, --spec, and/or --fit-memory")
    _print_json(doc)
    return 0


def _cmd_render(args) -> int:
    given = [x is not None for x in (args.events, args.spec, args.trace)]
    if sum(given) != 1:
        raise ConfigError("exactly one of --events / --spec / --trace is required")
    spec_opts = RenderSpec(
        mode="cache_trace" if args.events else ("speculation_trace" if args.spec else "histogram"),
        cell_px=args.cell_px,
    )
    if args.events:
        if args.layer is None:
            raise ConfigError("--events rendering requires --layer")
        log = load_event_log(args.events)
        if args.format == "text":
            document = text_cache_trace(log, args.layer)
        else:
            document = render_cache_trace(log, args.layer, spec_opts)
    elif args.spec:
        if args.token is None:
            raise ConfigError("--spec rendering requires --token")
        trace = load_trace(args.spec)
        if not isinstance(trace, SpeculationTrace):
            raise ConfigError("--spec requires a speculation trace")
        activation = None
        if args.with_trace:
            activation = load_trace(args.with_trace)
            if not isinstance(activation, ActivationTrace):
                raise ConfigError("--with-trace requires an activation trace")
        if args.format == "text":
            document = text_speculation(trace, args.token, activation)
        else:
            document = render_speculation(trace, args.token, spec_opts, activation)
    else:
        if args.layer is None:
            raise ConfigError("--trace histogram rendering requires --layer")
        trace = load_trace(args.trace)
        if not isinstance(trace, ActivationTrace):
            raise ConfigError("--trace requires an activation trace")
        hists = expert_histograms(trace)
        if not 0 <= args.layer < len(hists):
            raise ConfigError(f"layer {args.layer} out of range")
        if args.format == "text":
            raise ConfigError("histogram rendering supports --format svg only")
        document = render_histogram(hists[args.layer], spec_opts)

    with open(args.out, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(document)
    print(json.dumps({"out": args.out}))
    return 0


def _compare_traces(args) -> list[ActivationTrace]:
    if args.trace:
        return [load_trace_checked(args.trace)]
    cfg = _config_overlay(args, _TOY_KEYS)
    shape = _shape_from(args, cfg, layers=2)
    tokens = _resolved(args, cfg, "tokens", "tokens", int, 512)
    seed = _resolved(args, cfg, "seed", "seed", int, DEFAULT_SEED)
    skew = _resolved(args, cfg, "skew", "skew", float, 1.0)
    traces = []
    for s in range(args.seeds):
        params = ZipfParams(shape=shape, num_tokens=tokens, skew_exponent=skew, seed=seed + s)
        if args.model == "markov":
            traces.append(
                gen_markov(
                    MarkovParams(
                        shape=shape,
                        num_tokens=tokens,
                        repeat_prob=args.repeat_prob,
                        base=params,
                        seed=seed + s,
                    )
                )
            )
        else:
            traces.append(gen_zipf(params))
    return traces


def load_trace_checked(path) -> ActivationTrace:
    trace = load_trace(path)
    if not isinstance(trace, ActivationTrace):
        raise ConfigError(f"{path} is not an activation trace")
    return trace


def _cmd_compare(args) -> int:
    policies = [PolicyKind.parse(p) for p in args.policies.split(",") if p.strip()]
    if not policies:
        raise ConfigError("--policies must name at least one policy")
    traces = _compare_traces(args)
    shape = traces[0].shape
    if args.cache_size is not None:
        cache_size = args.cache_size
    elif args.offloads is not None:
        cache_size = offloads_to_cache_size(args.offloads, shape)
    else:
        cache_size = 4
    cost = CostParams()

    rows = []
    for kind in policies:
        hit_rates = []
        precisions = []
        recalls = []
        tps = []
        for trace in traces:
            log = simulate(trace, SimConfig(policy=kind, cache_size=cache_size, warmup_tokens=args.warmup))
            m = cache_metrics(log)
            hit_rates.append(m.hit_rate)
            if m.precision is not None:
                precisions.append(m.precision)
            if m.recall is not None:
                recalls.append(m.recall)
            tps.append(estimate_latency(log, cost).tokens_per_second)
        rows.append(
            {
                "policy": str(kind),
                "cache_size": cache_size,
                "runs": len(traces),
                "mean_hit_rate": _mean(hit_rates),
                "mean_precision": _mean(precisions),
                "mean_recall": _mean(recalls),
                "mean_tokens_per_second": _mean(tps),
            }
        )

    if args.json:
        _print_json({"rows": rows})
    else:
        _print_table(rows)
    return 0


def _mean(values) -> Optional[float]:
    return sum(values) / len(values) if values else None


def _print_table(rows: list[dict]) -> None:
    cols = ["policy", "cache_size", "runs", "mean_hit_rate", "mean_precision", "mean_recall", "mean_tokens_per_second"]
    headers = ["policy", "C", "runs", "hit_rate", "precision", "recall", "tokens/s"]

    def fmt(val) -> str:
        if val is None:
            return "-"
        if isinstance(val, float):
            return f"{val:.4f}"
        return str(val)

    table = [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(h), *(len(row[i]) for row in table)) for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))


def _cmd_sweep(args) -> int:
    if (args.cache_sizes is None) == (args.offloads is None):
        raise ConfigError("exactly one of --cache-sizes / --offloads is required")
    trace = load_trace_checked(args.trace)
    shape = trace.shape
    if args.cache_sizes is not None:
        sizes = [(c, shape.num_experts - c) for c in _parse_range(args.cache_sizes)]
    else:
        sizes = [
            (offloads_to_cache_size(o, shape), o) for o in _parse_range(args.offloads)
        ]
    policies = [PolicyKind.parse(p) for p in args.policies.split(",") if p.strip()]
    if not policies:
        raise ConfigError("--policies must name at least one policy")
    memory = fit_memory_model(parse_memory_points(args.fit_memory))

    results = []
    for cache_size, offloads in sizes:
        for kind in policies:
            log = simulate(trace, SimConfig(policy=kind, cache_size=cache_size, warmup_tokens=args.warmup))
            m = cache_metrics(log)
            results.append(
                {
                    "cache_size": cache_size,
                    "offloads": offloads,
                    "policy": str(kind),
                    "hit_rate": m.hit_rate,
                    "precision": m.precision,
                    "recall": m.recall,
                    "est_peak_mb": estimate_peak_memory(memory, offloads),
                }
            )
    _print_json({"memory_model": memory.to_dict(), "results": results})
    return 0


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moesim",
        description="Trace-driven simulator for expert-offloading caches in MoE inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate an activation trace (zipf, markov, or toy model)")
    p.add_argument("--model", choices=["zipf", "markov", "toy"], required=True)
    _shape_args(p)
    p.add_argument("--tokens", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--skew", type=float, help="zipf skew exponent / toy gate-bias scale")
    p.add_argument("--shared-ranking", action="store_true", help="one popularity ranking for all layers")
    p.add_argument("--repeat-prob", type=float, default=0.3, help="markov: per-expert repeat probability")
    p.add_argument("--hidden-dim", type=int, help="toy: hidden dimension")
    p.add_argument("--mixing-scale", type=float, help="toy: inter-layer perturbation scale")
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--out", required=True, help="activation trace output path")
    p.add_argument("--out-spec", help="speculation trace output path (toy model)")
    p.set_defaults(func=_cmd_gen_trace)

    p = sub.add_parser("simulate", help="replay a cache policy over an activation trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--policy", required=True, help="lru | lfu | lfu-aged:<factor>:<period> | opt")
    p.add_argument("--cache-size", type=int)
    p.add_argument("--offloads", type=int, help="experts offloaded per layer (cache size = experts - offloads)")
    p.add_argument("--warmup", type=int, default=0, help="tokens excluded from metrics")
    p.add_argument("--layers", dest="sim_layers", help="layer subset, e.g. 0,3,7 or 0..7")
    p.add_argument("--out", required=True, help="event log output path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("speculate", help="run the toy model and report speculation metrics")
    _shape_args(p)
    p.add_argument("--tokens", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--skew", type=float)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--mixing-scale", type=float)
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--out", help="speculation trace output path")
    p.add_argument("--out-trace", help="activation trace output path")
    p.set_defaults(func=_cmd_speculate)

    p = sub.add_parser("metrics", help="compute metrics from an event log or trace")
    p.add_argument("--events", help="event log (cache metrics)")
    p.add_argument("--spec", help="speculation trace (speculation metrics)")
    p.add_argument("--trace", help="activation trace (per-layer histograms)")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("cost", help="latency/transfer estimates and memory-model fitting")
    p.add_argument("--events")
    p.add_argument("--spec")
    p.add_argument("--expert-bytes", dest="expert_bytes", type=float)
    p.add_argument("--bandwidth", type=float, help="host-to-device bytes per second")
    p.add_argument("--compute", type=float, help="seconds of compute per token per layer")
    p.add_argument("--overlap", type=float)
    p.add_argument("--fit-memory", help='calibration points "4:11148.3,5:9145.8,6:7127.7"')
    p.add_argument("--config", help="flat key-value config file")
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("render", help="render a cache trace, speculation trace, or histogram")
    p.add_argument("--events")
    p.add_argument("--spec")
    p.add_argument("--trace")
    p.add_argument("--layer", type=int)
    p.add_argument("--token", type=int)
    p.add_argument("--with-trace", help="activation trace for layer-0 context in speculation renders")
    p.add_argument("--format", choices=["svg", "text"], default="svg")
    p.add_argument("--cell-px", type=int, default=12)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("compare", help="compare policies on one trace or a seeded batch")
    p.add_argument("--policies", required=True, help="comma list, e.g. lru,lfu,opt")
    p.add_argument("--trace", help="activation trace (otherwise traces are generated)")
    p.add_argument("--model", choices=["zipf", "markov"], default="zipf")
    p.add_argument("--seeds", type=int, default=1, help="number of generated traces")
    _shape_args(p)
    p.add_argument("--tokens", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--skew", type=float)
    p.add_argument("--repeat-prob", type=float, default=0.3)
    p.add_argument("--cache-size", type=int)
    p.add_argument("--offloads", type=int)
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("sweep", help="metrics and memory estimates across cache sizes")
    p.add_argument("--trace", required=True)
    p.add_argument("--policies", required=True)
    p.add_argument("--cache-sizes", help='range "2..8" or list "2,4,8"')
    p.add_argument("--offloads", help='range "0..6" or list')
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument(
        "--fit-memory",
        default=",".join(f"{x}:{y}" for x, y in DEFAULT_MEMORY_POINTS),
        help="memory calibration points",
    )
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
