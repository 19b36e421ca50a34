"""Reproduction harness: named pipeline recipes checked by predicates.

A scenario file is a flat key-value file naming a recipe, its parameters,
and an ``expect`` key holding a JSON array of predicates over the recipe's
report, e.g.::

    name = lfu-beats-lru-on-skew
    recipe = lfu-vs-lru
    seeds = 20
    expect = [{"path": "margin", "op": "gt", "value": 0}]

Predicates support ops eq, ne, lt, le, gt, ge, and approx (with "tol"),
against a literal "value" or another report field via "ref". Seed lists are
fixed in the scenario files so failures reproduce exactly; statistical
claims use one-sided thresholds rather than hypothesis tests.

Run a suite with ``python -m moesim.scenarios scenarios/``: the report is
printed as JSON and the exit status is nonzero if any predicate fails.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import cli
from .configfile import read_flat_config
from .costmodel import estimate_peak_memory, fit_memory_model, parse_memory_points
from .errors import ConfigError
from .metrics import cache_metrics, speculation_accuracy, speculation_metrics
from .policies import PolicyKind, policy_step, warm_state
from .render import count_marks, render_cache_trace, render_speculation
from .simulate import SimConfig, simulate
from .tracegen import ZipfParams, gen_zipf
from .toymoe import ToyModelConfig, run_model
from .traces import (
    ActivationTrace,
    ModelShape,
    SpeculationTrace,
    trace_from_bytes,
    trace_to_bytes,
)


@dataclass(frozen=True)
class Scenario:
    name: str
    recipe: str
    params: dict[str, str]
    expects: tuple[dict, ...]

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ConfigError(f"unknown recipe {self.recipe!r}; known: {sorted(RECIPES)}")
        if not self.expects:
            raise ConfigError(f"scenario {self.name!r} has no expectations")


def load_scenario(path) -> Scenario:
    raw = read_flat_config(path)
    name = raw.pop("name", None)
    recipe = raw.pop("recipe", None)
    expect = raw.pop("expect", None)
    if not name or not recipe or not expect:
        raise ConfigError(f"{path}: scenario needs name, recipe, and expect keys")
    try:
        expects = json.loads(expect)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: expect is not valid JSON: {exc}") from exc
    if not isinstance(expects, list):
        raise ConfigError(f"{path}: expect must be a JSON array")
    return Scenario(name=name, recipe=recipe, params=raw, expects=tuple(expects))


def _int(params, key, default):
    return int(params.get(key, default))


def _float(params, key, default):
    return float(params.get(key, default))


def _shape(params, layers=2, experts=8, top_k=2) -> ModelShape:
    return ModelShape(
        num_layers=_int(params, "layers", layers),
        num_experts=_int(params, "experts", experts),
        top_k=_int(params, "top_k", top_k),
    )


def _random_speculation_trace(rng: np.random.Generator, shape: ModelShape, tokens: int) -> SpeculationTrace:
    L, E, K = shape.num_layers, shape.num_experts, shape.top_k
    guessed = np.zeros((tokens, L - 1, K), dtype=np.int64)
    actual = np.zeros((tokens, L - 1, K), dtype=np.int64)
    for t in range(tokens):
        for j in range(L - 1):
            guessed[t, j] = np.sort(rng.choice(E, size=K, replace=False))
            actual[t, j] = np.sort(rng.choice(E, size=K, replace=False))
    return SpeculationTrace(shape, guessed, actual)


def _random_traces(params, count_key="traces", default_count=100) -> list[ActivationTrace]:
    shape = _shape(params, layers=1)
    tokens = _int(params, "tokens", 64)
    seed = _int(params, "seed", 0)
    skews = [float(s) for s in params.get("skews", "0,0.5,1.0").split(",")]
    traces = []
    for i in range(_int(params, count_key, default_count)):
        traces.append(
            gen_zipf(
                ZipfParams(
                    shape=shape,
                    num_tokens=tokens,
                    skew_exponent=skews[i % len(skews)],
                    seed=seed + i,
                )
            )
        )
    return traces


# --- recipes ---------------------------------------------------------------

def _recipe_spec_identity(params) -> dict:
    rng = np.random.default_rng(_int(params, "seed", 0))
    shape = _shape(params, layers=4)
    max_diff = 0
    pr_equal = True
    trials = _int(params, "trials", 200)
    for _ in range(trials):
        trace = _random_speculation_trace(rng, shape, tokens=int(rng.integers(1, 9)))
        m = speculation_metrics(trace)
        max_diff = max(max_diff, abs(m.fp - m.fn))
        if m.precision != m.recall:
            pr_equal = False
    toy_runs = _int(params, "toy_runs", 3)
    for s in range(toy_runs):
        _, spec = run_model(
            ToyModelConfig(shape=_shape(params, layers=4), tokens=16, seed=1000 + s)
        )
        m = speculation_metrics(spec)
        max_diff = max(max_diff, abs(m.fp - m.fn))
        if m.precision != m.recall:
            pr_equal = False
    return {
        "trials": trials,
        "toy_runs": toy_runs,
        "fp_fn_max_abs_diff": max_diff,
        "precision_recall_equal": pr_equal,
    }


def _recipe_cache_ratio(params) -> dict:
    tokens = _int(params, "tokens", 256)
    seed = _int(params, "seed", 0)
    configs = [tuple(int(v) for v in item.split(":")) for item in params.get("configs", "4:2,6:2,8:2,4:1").split(",")]
    max_rel_err = 0.0
    checked = 0
    for c, k in configs:
        shape = ModelShape(num_layers=2, num_experts=8, top_k=k)
        trace = gen_zipf(ZipfParams(shape=shape, num_tokens=tokens, skew_exponent=1.0, seed=seed))
        for policy in ("lru", "lfu"):
            log = simulate(trace, SimConfig(policy=PolicyKind.parse(policy), cache_size=c))
            m = cache_metrics(log).full_cache
            if m.steps == 0 or m.precision is None or m.precision == 0:
                continue
            expected = (c / k) * m.precision
            max_rel_err = max(max_rel_err, abs(m.recall - expected) / expected)
            checked += 1
    return {"checked": checked, "max_rel_err": max_rel_err}


def _recipe_alpha_sweep(params) -> dict:
    alphas = [float(a) for a in params.get("alphas", "0,0.05,0.1,0.5,1.0").split(",")]
    seeds = _int(params, "seeds", 10)
    shape = _shape(params, layers=6)
    tokens = _int(params, "tokens", 32)
    means = []
    for alpha in alphas:
        accs = []
        for s in range(seeds):
            _, spec = run_model(
                ToyModelConfig(shape=shape, tokens=tokens, mixing_scale=alpha, seed=100 + s)
            )
            accs.append(speculation_accuracy(spec))
        means.append(sum(accs) / len(accs))
    monotone = all(means[i] >= means[i + 1] for i in range(len(means) - 1))
    return {
        "alphas": alphas,
        "mean_accuracies": means,
        "alpha0_accuracy": means[0] if alphas and alphas[0] == 0 else None,
        "monotone_nonincreasing": monotone,
    }


def _recipe_policy_equivalence(params) -> dict:
    """Kernel-backed simulate vs a policy_step replay, step for step."""
    shape = ModelShape(num_layers=1, num_experts=_int(params, "experts", 4), top_k=1)
    tokens = _int(params, "tokens", 6)
    rng = np.random.default_rng(_int(params, "seed", 0))
    instances = 0
    mismatches = 0
    for _ in range(_int(params, "traces", 500)):
        acts = rng.integers(0, shape.num_experts, size=(tokens, 1, 1)).astype(np.int64)
        trace = ActivationTrace(shape, acts)
        for policy in ("lru", "lfu"):
            kind = PolicyKind.parse(policy)
            for cache_size in (1, 2, 3):
                log = simulate(trace, SimConfig(policy=kind, cache_size=cache_size))
                state = warm_state(kind, cache_size)
                ok = True
                for step in log.steps():
                    state, outcome = policy_step(state, kind, set(trace.activations[step.token, 0].tolist()))
                    if outcome != step.outcome:
                        ok = False
                        break
                instances += 1
                if not ok:
                    mismatches += 1
    return {"instances": instances, "mismatches": mismatches}


def _recipe_opt_dominance(params) -> dict:
    traces = _random_traces(params, default_count=100)
    sizes = [int(c) for c in params.get("cache_sizes", "2,3,4").split(",")]
    violations = 0
    instances = 0
    for trace in traces:
        for c in sizes:
            hits = {}
            for policy in ("opt", "lru", "lfu"):
                log = simulate(trace, SimConfig(policy=PolicyKind.parse(policy), cache_size=c))
                hits[policy] = cache_metrics(log).total_hits
            instances += 1
            if hits["opt"] < hits["lru"] or hits["opt"] < hits["lfu"]:
                violations += 1
    return {"instances": instances, "violations": violations}


def _recipe_lfu_vs_lru(params) -> dict:
    seeds = _int(params, "seeds", 20)
    shape = _shape(params, layers=2)
    tokens = _int(params, "tokens", 512)
    skew = _float(params, "skew", 1.0)
    cache_size = _int(params, "cache_size", 4)
    rates = {"lru": [], "lfu": []}
    for s in range(seeds):
        trace = gen_zipf(ZipfParams(shape=shape, num_tokens=tokens, skew_exponent=skew, seed=s))
        for policy in rates:
            log = simulate(trace, SimConfig(policy=PolicyKind.parse(policy), cache_size=cache_size))
            rates[policy].append(cache_metrics(log).hit_rate)
    lru_mean = sum(rates["lru"]) / seeds
    lfu_mean = sum(rates["lfu"]) / seeds
    return {
        "seeds": seeds,
        "lru_mean_hit_rate": lru_mean,
        "lfu_mean_hit_rate": lfu_mean,
        "margin": lfu_mean - lru_mean,
    }


def _recipe_memory_fit(params) -> dict:
    points = parse_memory_points(
        params.get("points", "4:11148.3,5:9145.8,6:7127.7")
    )
    model = fit_memory_model(points)
    # Leave-one-out prediction of the middle point.
    mid = len(points) // 2
    rest = [p for i, p in enumerate(points) if i != mid]
    loo = fit_memory_model(rest)
    pred = estimate_peak_memory(loo, points[mid][0])
    actual = points[mid][1]
    return {
        "slope_mb_per_offload": model.slope_mb_per_offload,
        "intercept_mb": model.intercept_mb,
        "loo_offloads": points[mid][0],
        "loo_predicted_mb": pred,
        "loo_actual_mb": actual,
        "loo_rel_err": abs(pred - actual) / actual,
    }


def _recipe_compulsory_miss(params) -> dict:
    traces = _random_traces(params, default_count=100)
    policies = [PolicyKind.parse(p) for p in params.get("policies", "lru,lfu,lfu-aged:0.5:16,opt").split(",")]
    violations = 0
    instances = 0
    for trace in traces:
        E = trace.shape.num_experts
        for kind in policies:
            log = simulate(trace, SimConfig(policy=kind, cache_size=E))
            for l in log.layers:
                distinct = len(np.unique(trace.activations[:, l, :]))
                misses = int(log.miss_counts(l).sum())
                instances += 1
                if misses != distinct:
                    violations += 1
    return {"instances": instances, "violations": violations}


def _recipe_render_conservation(params) -> dict:
    traces = _random_traces(params, default_count=20)
    rng = np.random.default_rng(_int(params, "seed", 7))
    violations = 0
    instances = 0
    for trace in traces:
        log = simulate(trace, SimConfig(policy=PolicyKind.lru(), cache_size=4))
        layer = log.layers[0]
        marks = count_marks(render_cache_trace(log, layer))
        expected_act = trace.num_tokens * trace.shape.top_k
        expected_cached = int(log.resident_sizes(layer).sum())
        instances += 1
        if marks.get("act", 0) != expected_act or marks.get("cached", 0) != expected_cached:
            violations += 1
    spec_shape = ModelShape(num_layers=6, num_experts=8, top_k=2)
    for _ in range(_int(params, "spec_renders", 20)):
        spec = _random_speculation_trace(rng, spec_shape, tokens=4)
        token = int(rng.integers(0, spec.num_tokens))
        marks = count_marks(render_speculation(spec, token))
        instances += 1
        if marks.get("fp", 0) != marks.get("fn", 0):
            violations += 1
    return {"instances": instances, "violations": violations}


def _recipe_round_trip(params) -> dict:
    rng = np.random.default_rng(_int(params, "seed", 0))
    mismatches = 0
    trials = _int(params, "trials", 200)
    for i in range(trials):
        shape = ModelShape(
            num_layers=int(rng.integers(1, 5)),
            num_experts=int(rng.integers(2, 9)),
            top_k=1,
        )
        shape = ModelShape(shape.num_layers, shape.num_experts, int(rng.integers(1, shape.num_experts + 1)))
        tokens = int(rng.integers(0, 6))
        if i % 2 == 0:
            trace = gen_zipf(ZipfParams(shape=shape, num_tokens=tokens, skew_exponent=0.5, seed=i))
        else:
            if shape.num_layers < 2:
                shape = ModelShape(2, shape.num_experts, shape.top_k)
            trace = _random_speculation_trace(rng, shape, tokens)
        first = trace_to_bytes(trace)
        second = trace_to_bytes(trace_from_bytes(first))
        if first != second:
            mismatches += 1
    return {"trials": trials, "mismatches": mismatches}


def _recipe_pipeline_determinism(params) -> dict:
    import contextlib
    import io

    outputs = []
    for _ in range(2):
        with tempfile.TemporaryDirectory() as tmp:
            trace = os.path.join(tmp, "t.jsonl")
            events = os.path.join(tmp, "e.jsonl")
            svg = os.path.join(tmp, "l0.svg")
            for argv in (
                ["gen-trace", "--model", "zipf", "--layers", "2", "--experts", "8",
                 "--top-k", "2", "--tokens", str(_int(params, "tokens", 64)),
                 "--skew", "1.0", "--seed", str(_int(params, "seed", 42)), "--out", trace],
                ["simulate", "--trace", trace, "--policy", "lru", "--cache-size", "4",
                 "--out", events],
                ["render", "--events", events, "--layer", "0", "--out", svg],
            ):
                with contextlib.redirect_stdout(io.StringIO()):
                    code = cli.main(argv)
                if code != 0:
                    return {"identical": False, "failed_stage": argv[0]}
            blobs = []
            for path in (trace, events, svg):
                with open(path, "rb") as fp:
                    blobs.append(fp.read())
            outputs.append(blobs)
    return {"identical": outputs[0] == outputs[1]}


RECIPES = {
    "spec-identity": _recipe_spec_identity,
    "cache-ratio": _recipe_cache_ratio,
    "alpha-sweep": _recipe_alpha_sweep,
    "policy-equivalence": _recipe_policy_equivalence,
    "opt-dominance": _recipe_opt_dominance,
    "lfu-vs-lru": _recipe_lfu_vs_lru,
    "memory-fit": _recipe_memory_fit,
    "compulsory-miss": _recipe_compulsory_miss,
    "render-conservation": _recipe_render_conservation,
    "round-trip": _recipe_round_trip,
    "pipeline-determinism": _recipe_pipeline_determinism,
}


# --- predicate evaluation ----------------------------------------------------

def _lookup(report: dict, path: str):
    node = report
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict) and part in node:
            node = node[part]
        else:
            raise ConfigError(f"expectation references unknown report field {path!r}")
    return node


def _evaluate(pred: dict, report: dict) -> tuple[bool, object]:
    path = pred.get("path")
    op = pred.get("op")
    if not path or not op:
        raise ConfigError(f"predicate needs path and op: {pred}")
    actual = _lookup(report, path)
    target = _lookup(report, pred["ref"]) if "ref" in pred else pred.get("value")
    if op == "eq":
        return actual == target, actual
    if op == "ne":
        return actual != target, actual
    if op == "lt":
        return actual < target, actual
    if op == "le":
        return actual <= target, actual
    if op == "gt":
        return actual > target, actual
    if op == "ge":
        return actual >= target, actual
    if op == "approx":
        tol = float(pred.get("tol", 1e-9))
        return abs(actual - target) <= tol, actual
    raise ConfigError(f"unknown predicate op {op!r}")


def run_scenario(scenario: Scenario) -> dict:
    """Execute one scenario's pipeline and evaluate its predicates."""
    try:
        report = RECIPES[scenario.recipe](scenario.params)
    except Exception as exc:  # predicate evaluation must see pipeline failures
        return {
            "name": scenario.name,
            "recipe": scenario.recipe,
            "passed": False,
            "failed_stage": f"pipeline: {type(exc).__name__}: {exc}",
            "checks": [],
        }
    checks = []
    passed = True
    for pred in scenario.expects:
        ok, actual = _evaluate(pred, report)
        checks.append({"predicate": pred, "actual": actual, "passed": ok})
        passed = passed and ok
    return {
        "name": scenario.name,
        "recipe": scenario.recipe,
        "passed": passed,
        "report": report,
        "checks": checks,
    }


def _collect(paths: list[str]) -> list[str]:
    files = []
    for path in paths:
        if os.path.isdir(path):
            files.extend(
                os.path.join(path, f) for f in sorted(os.listdir(path)) if f.endswith(".scenario")
            )
        else:
            files.append(path)
    return files


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python -m moesim.scenarios",
        description="Run scenario files and report pass/fail per predicate.",
    )
    parser.add_argument("paths", nargs="+", help="scenario files or directories")
    parser.add_argument("--report", help="write the full JSON report here")
    args = parser.parse_args(argv)

    results = []
    for path in _collect(args.paths):
        scenario = load_scenario(path)
        result = run_scenario(scenario)
        results.append(result)
        status = "PASS" if result["passed"] else "FAIL"
        print(f"{status} {scenario.name}")
    doc = {"passed": all(r["passed"] for r in results), "scenarios": results}
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fp:
            json.dump(doc, fp, indent=2)
    else:
        print(json.dumps(doc, indent=2))
    return 0 if doc["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
