"""Named experiment presets: self-describing sweep definitions at desk scale.

A preset plus a seed reproduces a full sweep with no hidden state; every
point is a label plus config overrides applied on top of the preset base.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .core import SimConfig


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    description: str
    base: dict = field(default_factory=dict)
    axis: str = "single"
    points: tuple[tuple[str, dict], ...] = (("run", {}),)
    variants: tuple[str, ...] = ("ar", "ordinary", "parallel", "hybrid")
    replicates: int = 1

    def base_config(self, config: SimConfig | None = None) -> SimConfig:
        cfg = config if config is not None else SimConfig()
        return cfg.with_overrides(dict(self.base))


def _alpha_for_target_ratio(r_hat: float, gamma: int = 4) -> float:
    """Invert the zero-reuse rollback estimate 1 - alpha^gamma = r_hat to
    pick sweep alphas whose measured ratios land near the requested spots."""
    return (1.0 - r_hat) ** (1.0 / gamma)


_CROSSOVER_TARGETS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 0.95)


def _crossover_points() -> tuple[tuple[str, dict], ...]:
    points = []
    for r_hat in _CROSSOVER_TARGETS:
        alpha = round(_alpha_for_target_ratio(r_hat), 5)
        points.append((f"{alpha:.5f}", {"alpha": alpha}))
    return tuple(points)


def _chaos_points() -> tuple[tuple[str, dict], ...]:
    points = []
    for delay_ms in (0.1, 5.0, 50.0):
        for reorder in (0.0, 0.2):
            for drop in (0.0, 0.05):
                label = f"d{delay_ms:g}ms-r{reorder:g}-p{drop:g}"
                points.append(
                    (
                        label,
                        {
                            "delay_dist": f"constant:{delay_ms / 1000.0}",
                            "reorder_prob": reorder,
                            "drop_prob": drop,
                        },
                    )
                )
    return tuple(points)


PRESETS: dict[str, ExperimentPreset] = {
    "crossover": ExperimentPreset(
        name="crossover",
        description=(
            "Token-agreement sweep across the mode-switching boundary: "
            "measured rollback ratios span ~0.05 to ~0.95."
        ),
        base={
            "batch_size": 32,
            "n_requests": 32,
            "output_len": 256,
            "qps": 1e6,
            "gamma": 4,
        },
        axis="alpha",
        points=_crossover_points(),
        variants=("ar", "ordinary", "parallel", "hybrid"),
        replicates=5,
    ),
    "batch-scaling": ExperimentPreset(
        name="batch-scaling",
        description=(
            "Deterministic (alpha=1) batch-size scaling for formula-vs-sim "
            "agreement checks."
        ),
        base={
            "alpha": 1.0,
            "output_len": 256,
            "qps": 1e6,
            "delay_dist": "constant:0",
        },
        axis="batch_size",
        points=tuple(
            (str(b), {"batch_size": b, "n_requests": b}) for b in (1, 16, 32, 64, 128)
        ),
        variants=("ar", "ordinary", "parallel", "hybrid"),
        replicates=1,
    ),
    "mixed-traffic": ExperimentPreset(
        name="mixed-traffic",
        description=(
            "Background regular tenants share the draft server; sweeps the "
            "background request rate against foreground throughput."
        ),
        base={
            "batch_size": 32,
            "n_requests": 32,
            "output_len": 256,
            "qps": 1e6,
            "alpha": 0.8,
            "background_requests": 64,
            "background_output_len": 128,
            "t_draft_slope": 2e-5,
            "t_draft_free_batch": 32,
            "fairness_period": 10,
        },
        axis="background_qps",
        points=tuple(
            (str(q), {"background_qps": float(q)}) for q in (0, 1, 2, 4, 8)
        ),
        variants=("hybrid",),
        replicates=3,
    ),
    "tp-imbalance": ExperimentPreset(
        name="tp-imbalance",
        description=(
            "Fast target (T_T shrunk 4x) so draft latency dominates; prompt "
            "compression trades acceptance for overlap."
        ),
        base={
            "batch_size": 32,
            "n_requests": 32,
            "output_len": 256,
            "qps": 1e6,
            "alpha": 0.9,
            "t_target": 0.0125,
        },
        axis="compression_p",
        points=(("0.1", {"compression_p": 0.1}), ("1.0", {"compression_p": 1.0})),
        variants=("parallel",),
        replicates=3,
    ),
    "chaos": ExperimentPreset(
        name="chaos",
        description=(
            "Fault-injection grid (delay x reorder x drop) exercising "
            "losslessness under both forced modes and hybrid."
        ),
        base={
            "batch_size": 16,
            "n_requests": 16,
            "output_len": 128,
            "qps": 1e6,
            "alpha": 0.8,
        },
        axis="fault",
        points=_chaos_points(),
        variants=("ordinary", "parallel", "hybrid"),
        replicates=1,
    ),
}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r}; available: {known}")


def preset_names() -> Sequence[str]:
    return sorted(PRESETS)
