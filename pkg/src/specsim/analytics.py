"""Closed-form throughput model for both coordination modes.

Every function here is pure arithmetic on ThroughputParams; the simulator
measures the same quantities empirically and the acceptance suite holds the
two against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Mode


@dataclass(frozen=True)
class ThroughputParams:
    """Inputs of the analytic model.

    L is the mean accepted length (tokens per round) of non-fallback
    requests and is real-valued; r is the fallback ratio and only affects
    the parallel formula.
    """

    batch_size: int
    accepted_len: float
    gamma: int
    t_target: float
    t_draft: float
    fallback_ratio: float = 0.0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.t_target <= 0 or self.t_draft <= 0:
            raise ValueError("latencies must be strictly positive")
        if self.accepted_len < 1:
            raise ValueError(f"accepted_len must be >= 1, got {self.accepted_len}")
        if not 0.0 <= self.fallback_ratio <= 1.0:
            raise ValueError(f"fallback_ratio must be in [0, 1], got {self.fallback_ratio}")


def ordinary_throughput(params: ThroughputParams) -> float:
    """Tokens/s with serialized rounds: B*L / (T_T + (gamma-1)*T_D)."""
    round_latency = params.t_target + (params.gamma - 1) * params.t_draft
    return params.batch_size * params.accepted_len / round_latency


def parallel_throughput(params: ThroughputParams) -> float:
    """Tokens/s with overlapped rounds: B*[r + (1-r)*L] / T_T."""
    r = params.fallback_ratio
    per_round = r + (1.0 - r) * params.accepted_len
    return params.batch_size * per_round / params.t_target


def critical_fallback_ratio(params: ThroughputParams) -> float:
    """The fallback ratio at which both modes tie.

    r* = (gamma-1)*L*T_D / [(T_T + (gamma-1)*T_D) * (L - 1)].  Requires
    L > 1; the result is deliberately not clamped to [0, 1] — values >= 1
    mean parallel is preferable at every feasible ratio.
    """
    if params.accepted_len <= 1.0:
        raise ValueError("critical_fallback_ratio requires accepted_len > 1")
    numerator = (params.gamma - 1) * params.accepted_len * params.t_draft
    denominator = (params.t_target + (params.gamma - 1) * params.t_draft) * (
        params.accepted_len - 1.0
    )
    return numerator / denominator


def preferred_mode(r_hat: float, r_star: float) -> Mode:
    """PARALLEL iff the observed ratio does not exceed the threshold (ties parallel)."""
    return Mode.PARALLEL if r_hat <= r_star else Mode.ORDINARY


def expected_committed_per_round(alpha: float, gamma: int) -> float:
    """Mean of (accepted prefix + bonus) for a fresh gamma-token proposal.

    Sum over k of P(accepted >= k) for k in [0, gamma] gives
    (1 - alpha^(gamma+1)) / (1 - alpha), degenerating to gamma+1 at alpha=1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if alpha == 1.0:
        return float(gamma + 1)
    return (1.0 - alpha ** (gamma + 1)) / (1.0 - alpha)
