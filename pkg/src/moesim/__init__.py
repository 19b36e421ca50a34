"""Trace-driven simulator and analysis toolkit for expert-offloading caches
in Mixture-of-Experts inference.

Core surface: trace data model and JSONL I/O (traces), eviction policies
(policies), per-layer simulation (simulate), synthetic workload generators
(tracegen), a desk-scale MoE model with speculative next-layer gating
(toymoe), metrics, cost/memory models (costmodel), SVG/text rendering
(render), and a CLI (cli).
"""

from .costmodel import (
    CostParams,
    MemoryModel,
    estimate_latency,
    estimate_peak_memory,
    fit_memory_model,
    speculation_cost,
)
from .errors import ConfigError, MoesimError, TraceError, TraceParseError, TraceValidationError
from .metrics import (
    CacheMetrics,
    ExpertHistogram,
    SpeculationMetrics,
    cache_metrics,
    expert_histograms,
    speculation_metrics,
)
from .policies import CacheState, PolicyKind, StepOutcome, policy_step, warm_state
from .simulate import (
    CacheEventLog,
    SimConfig,
    load_event_log,
    offloads_to_cache_size,
    save_event_log,
    simulate,
)
from .toymoe import (
    GatingNetwork,
    HiddenState,
    ToyModelConfig,
    ToyMoeModel,
    forward_token,
    gate_select,
    run_model,
    speculate_next,
)
from .tracegen import MarkovParams, ZipfParams, gen_markov, gen_zipf
from .traces import (
    ActivationRecord,
    ActivationTrace,
    ExpertId,
    ModelShape,
    SpeculationRecord,
    SpeculationTrace,
    load_trace,
    read_trace,
    save_trace,
    write_trace,
)

__version__ = "0.1.0"
