"""Run measurement: throughput, accepted length, rollback series, mode
occupancy, transport counters, and dollar-benefit accounting, with lossless
CSV/JSON round-trips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence


def mean_accepted_length(per_round_commits: Sequence[float]) -> float:
    """Arithmetic mean of per-round committed deltas (bonus counted the
    round it was produced; fallback rounds contribute 1)."""
    if not per_round_commits:
        raise ValueError("mean_accepted_length: empty commit list")
    return sum(per_round_commits) / len(per_round_commits)


@dataclass(frozen=True)
class PricingConfig:
    price_target_per_mtok: float
    price_draft_per_mtok: float
    gpu_count_target: int = 1
    gpu_count_draft: int = 1
    include_draft_revenue: bool = True

    def __post_init__(self):
        errors = []
        if self.price_target_per_mtok < 0:
            errors.append(f"price_target_per_mtok must be >= 0, got {self.price_target_per_mtok}")
        if self.price_draft_per_mtok < 0:
            errors.append(f"price_draft_per_mtok must be >= 0, got {self.price_draft_per_mtok}")
        if self.gpu_count_target < 1:
            errors.append(f"gpu_count_target must be >= 1, got {self.gpu_count_target}")
        if self.gpu_count_draft < 1:
            errors.append(f"gpu_count_draft must be >= 1, got {self.gpu_count_draft}")
        if errors:
            raise ValueError("; ".join(errors))


def benefit_efficiency(
    target_thr: float, draft_thr: float, pricing: PricingConfig
) -> float:
    """Revenue rate in dollars per 1000 seconds, normalized per GPU.

    Draft-side revenue is included only when the pricing config says so
    (the conservative accounting excludes it)."""
    if target_thr < 0 or draft_thr < 0:
        raise ValueError("throughputs must be >= 0")
    revenue_per_s = target_thr * pricing.price_target_per_mtok
    if pricing.include_draft_revenue:
        revenue_per_s += draft_thr * pricing.price_draft_per_mtok
    revenue_per_s /= 1e6
    gpus = pricing.gpu_count_target + pricing.gpu_count_draft
    return revenue_per_s * 1000.0 / gpus


@dataclass(frozen=True)
class MetricsReport:
    """Immutable per-run measurement record.

    mode_timeline is one character per verification round: 'O' ordinary,
    'P' parallel, 'F' no-speculation (autoregressive fallback) round.
    """

    variant: str
    seed: int
    axis: str = ""
    axis_value: str = ""
    target_throughput: float = 0.0
    draft_throughput: float = 0.0
    mean_accepted_length: float = 0.0
    content_mean_accepted_length: float = 0.0
    mean_rollback_ratio: float = 0.0
    rollback_ratio_series: tuple[float, ...] = ()
    mode_timeline: str = ""
    steady_rounds: int = 0
    steady_target_throughput: float = 0.0
    steady_mean_accepted_length: float = 0.0
    steady_content_mean_accepted_length: float = 0.0
    steady_mean_rollback_ratio: float = 0.0
    sim_duration: float = 0.0
    total_committed: int = 0
    total_rounds: int = 0
    requests_completed: int = 0
    breaker_activations: int = 0
    fallback_rounds: int = 0
    timeout_rounds: int = 0
    conservative_rounds: int = 0
    transport_sent: int = 0
    transport_delivered: int = 0
    transport_dropped: int = 0
    transport_stale: int = 0
    transport_rejected: int = 0
    stale_replies: int = 0
    draft_tokens_generated: int = 0
    background_tokens: int = 0
    background_completed: int = 0


REPORT_COLUMNS: tuple[str, ...] = tuple(f.name for f in fields(MetricsReport))

_SERIES_SEP = ";"


def _encode_value(value) -> str:
    if isinstance(value, tuple):
        return _SERIES_SEP.join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode_value(name: str, text: str):
    type_map = {f.name: f.type for f in fields(MetricsReport)}
    ftype = type_map[name]
    if ftype == "int":
        return int(text)
    if ftype == "float":
        return float(text)
    if ftype.startswith("tuple"):
        if not text:
            return ()
        return tuple(float(v) for v in text.split(_SERIES_SEP))
    return text


def export_report(report: MetricsReport, format: str = "csv") -> str:
    """Serialize one report; `import_report` reverses losslessly."""
    fmt = format.lower()
    if fmt == "csv":
        header = ",".join(REPORT_COLUMNS)
        row = ",".join(_encode_value(getattr(report, c)) for c in REPORT_COLUMNS)
        return header + "\n" + row + "\n"
    if fmt == "json":
        payload = {c: getattr(report, c) for c in REPORT_COLUMNS}
        payload = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in payload.items()
        }
        return json.dumps(payload, indent=2) + "\n"
    raise ValueError(f"unknown report format: {format!r}")


def import_report(text: str, format: str = "csv") -> MetricsReport:
    fmt = format.lower()
    if fmt == "csv":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) != 2:
            raise ValueError(f"expected header + one row, got {len(lines)} lines")
        names = lines[0].split(",")
        if tuple(names) != REPORT_COLUMNS:
            raise ValueError("CSV header does not match the report schema")
        values = lines[1].split(",")
        if len(values) != len(names):
            raise ValueError("CSV row width does not match header")
        kwargs = {n: _decode_value(n, v) for n, v in zip(names, values)}
        return MetricsReport(**kwargs)
    if fmt == "json":
        payload = json.loads(text)
        kwargs = {}
        for f in fields(MetricsReport):
            value = payload[f.name]
            if f.type.startswith("tuple"):
                value = tuple(value)
            kwargs[f.name] = value
        return MetricsReport(**kwargs)
    raise ValueError(f"unknown report format: {format!r}")


def report_filename(report: MetricsReport, format: str = "csv") -> str:
    axis = report.axis or "single"
    value = report.axis_value or "run"
    safe_value = str(value).replace("/", "-").replace(" ", "")
    return f"{report.variant}_{axis}_{safe_value}_{report.seed}.{format.lower()}"


def write_report(report: MetricsReport, out_dir: str | Path, format: str = "csv") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / report_filename(report, format)
    path.write_text(export_report(report, format))
    return path
