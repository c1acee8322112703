"""Deterministic discrete-event harness for hybrid speculative-decoding
coordination, validated against its own closed-form throughput model.
"""

from .analytics import (
    ThroughputParams,
    critical_fallback_ratio,
    expected_committed_per_round,
    ordinary_throughput,
    parallel_throughput,
    preferred_mode,
)
from .core import (
    PAD,
    ConfigError,
    Mode,
    SimConfig,
    SpeculativeSegment,
    load_config,
    validate_config,
)
from .draft_engine import DraftLatencyModel, DraftServer, compress_prompt
from .metrics import (
    MetricsReport,
    PricingConfig,
    benefit_efficiency,
    export_report,
    import_report,
    mean_accepted_length,
    write_report,
)
from .oracle import TokenStreamOracle, VerifyOutcome
from .presets import ExperimentPreset, get_preset, preset_names
from .sim import (
    PolicyVariant,
    RunResult,
    SimLivelock,
    Simulation,
    SweepEntry,
    Workload,
    run,
    run_sweep,
)
from .target_engine import CircuitBreakerState, ProtocolViolation

__version__ = "0.1.0"

__all__ = [
    "PAD",
    "CircuitBreakerState",
    "ConfigError",
    "DraftLatencyModel",
    "DraftServer",
    "ExperimentPreset",
    "MetricsReport",
    "Mode",
    "PolicyVariant",
    "PricingConfig",
    "ProtocolViolation",
    "RunResult",
    "SimConfig",
    "SimLivelock",
    "Simulation",
    "SpeculativeSegment",
    "SweepEntry",
    "ThroughputParams",
    "TokenStreamOracle",
    "VerifyOutcome",
    "Workload",
    "benefit_efficiency",
    "compress_prompt",
    "critical_fallback_ratio",
    "expected_committed_per_round",
    "export_report",
    "get_preset",
    "import_report",
    "load_config",
    "mean_accepted_length",
    "ordinary_throughput",
    "parallel_throughput",
    "preferred_mode",
    "preset_names",
    "run",
    "run_sweep",
    "validate_config",
    "write_report",
    "__version__",
]
