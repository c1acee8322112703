"""Shared vocabulary: tokens, segments, modes, and simulation configuration."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

Token = int

# Tokens are opaque 64-bit integers compared only by equality.  PAD is the
# maximum representable value and is never produced by a reference stream.
TOKEN_BITS = 64
TOKEN_MASK = (1 << TOKEN_BITS) - 1
PAD: Token = TOKEN_MASK

RequestId = int
RoundId = int

ENV_PREFIX = "SPECSIM_"


class Mode(Enum):
    ORDINARY = "ordinary"
    PARALLEL = "parallel"


@dataclass(frozen=True)
class SpeculativeSegment:
    """A draft-produced token run anchored at a position of the output stream."""

    tokens: tuple[Token, ...]
    start_position: int
    origin_round: RoundId

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def end_position(self) -> int:
        return self.start_position + len(self.tokens)


class ConfigError(ValueError):
    """Raised when a SimConfig violates a structural invariant."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class SimConfig:
    """Flat knob set shared by every module.

    Latencies are seconds, rates are per second. ``None`` for the derived
    fields means "derive from the base latencies at validation time".
    """

    # Core protocol knobs.
    batch_size: int = 32
    gamma: int = 4
    t_target: float = 0.050
    t_draft: float = 0.005
    alpha: float = 0.8
    qps: float = 8.0
    seed: int = 0

    # Workload shape.
    n_requests: int = 32
    output_len: int = 1024
    prompt_len: int = 128
    max_concurrency: int | None = None

    # Draft-side scheduling and the mixed-latency model.
    fairness_period: int = 10
    draft_capacity: int = 256
    t_draft_slope: float = 0.0
    t_draft_free_batch: int = 0
    background_qps: float = 0.0
    background_requests: int = 0
    background_output_len: int = 128

    # Prompt compression.
    compression_p: float = 1.0
    compression_beta: float = 0.1
    compression_latency_frac: float = 0.5

    # Circuit breaker.
    breaker_threshold: int = 3
    breaker_cooldown: int = 5
    reply_timeout: float | None = None

    # Transport fault knobs.
    delay_dist: str = "constant:0.0005"
    drop_prob: float = 0.0
    reorder_prob: float = 0.0
    reorder_span: float | None = None
    stale_timeout: float | None = None
    channel_capacity: int = 4096
    heartbeat_period: float | None = None
    heartbeat_expiry: float | None = None

    # Mode-threshold estimation.
    ema_decay: float = 0.9
    fixed_threshold_l: float | None = None

    # Optional affine growth of T_T with batch size (off for formula checks).
    t_target_slope: float = 0.0

    # Guard rail: abort if no commit lands for this much sim time.
    livelock_horizon: float = 30.0

    def resolved(self) -> "SimConfig":
        """Fill every derived ``None`` field from the base latencies."""
        cfg = dataclasses.replace(self)
        if cfg.max_concurrency is None:
            cfg.max_concurrency = cfg.batch_size
        if cfg.reply_timeout is None:
            cfg.reply_timeout = 2.0 * cfg.t_target
        if cfg.stale_timeout is None:
            cfg.stale_timeout = 4.0 * cfg.t_target
        if cfg.heartbeat_period is None:
            cfg.heartbeat_period = cfg.t_target
        if cfg.heartbeat_expiry is None:
            cfg.heartbeat_expiry = 3.0 * cfg.heartbeat_period
        if cfg.reorder_span is None:
            cfg.reorder_span = cfg.t_target
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        return cls().with_overrides(parse_config_text(Path(path).read_text()))

    def with_overrides(self, overrides: Mapping[str, Any]) -> "SimConfig":
        known = {f.name: f for f in fields(self)}
        unknown = [k for k in overrides if k not in known]
        if unknown:
            raise ConfigError([f"unknown config key: {k}" for k in sorted(unknown)])
        values = {k: _coerce(known[k], v) for k, v in overrides.items()}
        return dataclasses.replace(self, **values)

    def to_mapping(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(f: dataclasses.Field, value: Any) -> Any:
    if not isinstance(value, str):
        return value
    text = value.strip()
    if text.lower() in ("none", ""):
        return None
    if f.type in ("int", "int | None"):
        return int(text)
    if f.type in ("float", "float | None"):
        return float(text)
    return text


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected 'key = value', got {raw!r}"])
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """Collect SPECSIM_* variables as config overrides (lower-cased keys)."""
    environ = os.environ if environ is None else environ
    out: dict[str, str] = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            out[key[len(ENV_PREFIX):].lower()] = value
    return out


def load_config(
    path: str | Path | None = None,
    flag_overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> "SimConfig":
    """Merge defaults < file < environment < CLI flags."""
    cfg = SimConfig() if path is None else SimConfig.from_file(path)
    cfg = cfg.with_overrides(env_overrides(environ))
    if flag_overrides:
        cfg = cfg.with_overrides(dict(flag_overrides))
    return cfg


def validate_config(config: SimConfig) -> tuple[SimConfig, list[str]]:
    """Return (resolved config, warnings); raise ConfigError naming every violation."""
    cfg = config.resolved()
    errors: list[str] = []
    if cfg.gamma < 1:
        errors.append(f"gamma must be >= 1, got {cfg.gamma}")
    if cfg.batch_size < 1:
        errors.append(f"batch_size must be >= 1, got {cfg.batch_size}")
    for name in ("t_target", "t_draft"):
        value = getattr(cfg, name)
        if value <= 0:
            errors.append(f"{name} must be strictly positive, got {value}")
    for name in ("alpha", "drop_prob", "reorder_prob", "compression_p", "compression_beta",
                 "compression_latency_frac"):
        value = getattr(cfg, name)
        if not 0.0 <= value <= 1.0:
            errors.append(f"{name} must be in [0, 1], got {value}")
    if not 0.0 < cfg.ema_decay < 1.0:
        errors.append(f"ema_decay must be in (0, 1), got {cfg.ema_decay}")
    if cfg.qps <= 0:
        errors.append(f"qps must be positive, got {cfg.qps}")
    if cfg.n_requests < 0:
        errors.append(f"n_requests must be >= 0, got {cfg.n_requests}")
    if cfg.output_len < 1:
        errors.append(f"output_len must be >= 1, got {cfg.output_len}")
    if cfg.max_concurrency < 1:
        errors.append(f"max_concurrency must be >= 1, got {cfg.max_concurrency}")
    if cfg.fairness_period < 1:
        errors.append(f"fairness_period must be >= 1, got {cfg.fairness_period}")
    if cfg.draft_capacity < 1:
        errors.append(f"draft_capacity must be >= 1, got {cfg.draft_capacity}")
    if cfg.channel_capacity < 1:
        errors.append(f"channel_capacity must be >= 1, got {cfg.channel_capacity}")
    if cfg.breaker_threshold < 1:
        errors.append(f"breaker_threshold must be >= 1, got {cfg.breaker_threshold}")
    if cfg.breaker_cooldown < 1:
        errors.append(f"breaker_cooldown must be >= 1, got {cfg.breaker_cooldown}")
    if cfg.reply_timeout <= 0:
        errors.append(f"reply_timeout must be positive, got {cfg.reply_timeout}")
    if cfg.stale_timeout <= 0:
        errors.append(f"stale_timeout must be positive, got {cfg.stale_timeout}")
    if cfg.background_qps < 0:
        errors.append(f"background_qps must be >= 0, got {cfg.background_qps}")
    if cfg.t_draft_slope < 0:
        errors.append(f"t_draft_slope must be >= 0, got {cfg.t_draft_slope}")
    if cfg.fixed_threshold_l is not None and cfg.fixed_threshold_l <= 1.0:
        errors.append(f"fixed_threshold_l must exceed 1, got {cfg.fixed_threshold_l}")
    try:
        parse_delay_spec(cfg.delay_dist)
    except ValueError as exc:
        errors.append(str(exc))
    if errors:
        raise ConfigError(errors)

    warnings: list[str] = []
    if cfg.gamma * cfg.t_draft >= cfg.t_target:
        warnings.append(
            "overlap assumption violated: gamma*t_draft = "
            f"{cfg.gamma * cfg.t_draft:.6f}s >= t_target = {cfg.t_target:.6f}s"
        )
    return cfg, warnings


def parse_delay_spec(spec: str) -> tuple[str, tuple[float, ...]]:
    """Parse 'constant:x', 'uniform:a:b', or 'exponential:mean'."""
    parts = spec.split(":")
    kind, args = parts[0].strip().lower(), parts[1:]
    try:
        values = tuple(float(a) for a in args)
    except ValueError:
        raise ValueError(f"delay_dist has non-numeric parameter: {spec!r}")
    if kind == "constant" and len(values) == 1 and values[0] >= 0:
        return kind, values
    if kind == "uniform" and len(values) == 2 and 0 <= values[0] <= values[1]:
        return kind, values
    if kind == "exponential" and len(values) == 1 and values[0] > 0:
        return kind, values
    raise ValueError(f"delay_dist not understood: {spec!r}")


def format_config(cfg: SimConfig) -> str:
    """Render a config as the same flat key=value text from_file accepts."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"
