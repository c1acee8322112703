"""Acceptance checks: executable statements of the package's correctness
contract, shared by `specsim verify` and the test suite.

Each check returns a CriterionResult with a human-readable detail line;
tolerances are pinned here and nowhere else.
"""

from __future__ import annotations

import functools
import random
from dataclasses import dataclass

from . import analytics
from .core import SimConfig
from .draft_engine import DraftServer, DraftLatencyModel, compress_prompt
from .metrics import PricingConfig, benefit_efficiency
from .oracle import TokenStreamOracle
from .presets import get_preset
from .sim import PolicyVariant, Workload, run, run_sweep


@dataclass(frozen=True)
class CriterionResult:
    cid: int
    name: str
    passed: bool
    detail: str


def _rel_err(value: float, expected: float) -> float:
    if expected == 0:
        return abs(value)
    return abs(value - expected) / abs(expected)


# -- 1: formula fidelity -------------------------------------------------------


def criterion_1_formula_fidelity() -> CriterionResult:
    params = analytics.ThroughputParams(
        batch_size=32, accepted_len=3.0, gamma=4, t_target=0.050, t_draft=0.005
    )
    thr_ord = analytics.ordinary_throughput(params)
    thr_par = analytics.parallel_throughput(
        analytics.ThroughputParams(
            batch_size=32,
            accepted_len=3.0,
            gamma=4,
            t_target=0.050,
            t_draft=0.005,
            fallback_ratio=0.2,
        )
    )
    r_star = analytics.critical_fallback_ratio(params)
    checks = [
        _rel_err(thr_ord, 96.0 / 0.065) <= 1e-6 and round(thr_ord, 2) == 1476.92,
        _rel_err(thr_par, 1664.0) <= 1e-6,
        _rel_err(r_star, 0.045 / 0.13) <= 1e-6 and round(r_star, 5) == 0.34615,
    ]
    detail = (
        f"thr_ord={thr_ord:.6f} (expect 1476.92...), thr_par={thr_par:.6f} "
        f"(expect 1664.0), r*={r_star:.6f} (expect 0.34615...)"
    )
    return CriterionResult(1, "formula-fidelity", all(checks), detail)


# -- 2: crossover identity -----------------------------------------------------


def criterion_2_crossover_identity() -> CriterionResult:
    rng = random.Random(20240817)
    worst_gap = 0.0
    flips_ok = True
    draws = 0
    attempts = 0
    while draws < 1000 and attempts < 100_000:
        attempts += 1
        batch = rng.randint(1, 256)
        accepted = rng.uniform(1.01, 8.0)
        gamma = rng.randint(2, 8)
        t_target = rng.uniform(0.001, 0.2)
        t_draft = rng.uniform(1e-5, t_target)
        params = analytics.ThroughputParams(
            batch_size=batch,
            accepted_len=accepted,
            gamma=gamma,
            t_target=t_target,
            t_draft=t_draft,
        )
        r_star = analytics.critical_fallback_ratio(params)
        if not 1e-9 < r_star < 0.999:
            continue
        draws += 1
        thr_ord = analytics.ordinary_throughput(params)

        def par_at(r: float) -> float:
            return analytics.parallel_throughput(
                analytics.ThroughputParams(
                    batch_size=batch,
                    accepted_len=accepted,
                    gamma=gamma,
                    t_target=t_target,
                    t_draft=t_draft,
                    fallback_ratio=r,
                )
            )

        worst_gap = max(worst_gap, _rel_err(par_at(r_star), thr_ord))
        lo = r_star * (1.0 - 1e-3)
        hi = r_star + (1.0 - r_star) * 1e-3
        if not (par_at(lo) > thr_ord and par_at(hi) < thr_ord):
            flips_ok = False
    passed = draws == 1000 and worst_gap <= 1e-9 and flips_ok
    detail = (
        f"{draws} draws, worst |thr_par(r*) - thr_ord| relative gap "
        f"{worst_gap:.3e} (<= 1e-9), sign flip at r*: {flips_ok}"
    )
    return CriterionResult(2, "crossover-identity", passed, detail)


# -- 3: sim-model agreement ----------------------------------------------------


def _deterministic_config(batch: int, **overrides) -> SimConfig:
    base = dict(
        batch_size=batch,
        n_requests=batch,
        alpha=1.0,
        output_len=256,
        qps=1e6,
        delay_dist="constant:0",
        seed=0,
    )
    base.update(overrides)
    return SimConfig(**base)


def criterion_3_sim_model_agreement() -> CriterionResult:
    batches = (1, 16, 32, 64, 128)
    lines = []
    ok = True
    for batch in batches:
        cfg = _deterministic_config(batch)
        workload = Workload((0.0,) * batch, output_len=cfg.output_len)

        res_o = run(cfg, PolicyVariant.ORDINARY, workload=workload)
        rep_o = res_o.report
        model_o = analytics.ordinary_throughput(
            analytics.ThroughputParams(
                batch_size=batch,
                accepted_len=rep_o.steady_content_mean_accepted_length,
                gamma=cfg.gamma,
                t_target=cfg.t_target,
                t_draft=cfg.t_draft,
            )
        )
        err_o = _rel_err(rep_o.steady_target_throughput, model_o)

        res_p = run(cfg, PolicyVariant.PARALLEL, workload=workload)
        rep_p = res_p.report
        model_p = analytics.parallel_throughput(
            analytics.ThroughputParams(
                batch_size=batch,
                accepted_len=rep_p.steady_content_mean_accepted_length,
                gamma=cfg.gamma,
                t_target=cfg.t_target,
                t_draft=cfg.t_draft,
                fallback_ratio=min(1.0, rep_p.steady_mean_rollback_ratio),
            )
        )
        err_p = _rel_err(rep_p.steady_target_throughput, model_p)
        ok = ok and err_o <= 0.02 and err_p <= 0.05
        lines.append(f"B={batch}: ord err {err_o:.4f} (<=0.02), par err {err_p:.4f} (<=0.05)")
    return CriterionResult(3, "sim-model-agreement", ok, "; ".join(lines))


# -- 4 and 5: crossover sweep ----------------------------------------------------


@functools.lru_cache(maxsize=1)
def _crossover_entries():
    preset = get_preset("crossover")
    cfg = preset.base_config()
    return run_sweep(
        cfg,
        [PolicyVariant.parse(v) for v in preset.variants],
        preset.axis,
        list(preset.points),
        replicates=preset.replicates,
    )


def _by_point(entries, metric: str) -> dict[str, dict[str, float]]:
    sums: dict[str, dict[str, list[float]]] = {}
    for e in entries:
        sums.setdefault(e.axis_value, {}).setdefault(e.variant, []).append(
            getattr(e.report, metric)
        )
    return {
        label: {v: sum(xs) / len(xs) for v, xs in per.items()}
        for label, per in sums.items()
    }


def criterion_4_hybrid_dominance() -> CriterionResult:
    per_point = _by_point(_crossover_entries(), "target_throughput")
    ok = True
    lines = []
    for label, means in per_point.items():
        best = max(means["ordinary"], means["parallel"])
        ratio = means["hybrid"] / best
        ok = ok and ratio >= 0.97
        lines.append(f"alpha={label}: hybrid/max={ratio:.4f}")
    detail = "; ".join(lines) + " (threshold 0.97, 5 replicates)"
    return CriterionResult(4, "hybrid-dominance", ok, detail)


def criterion_5_accepted_length_ordering() -> CriterionResult:
    per_point = _by_point(_crossover_entries(), "mean_accepted_length")
    ok = True
    strict = False
    lines = []
    for label, means in per_point.items():
        o, h, p = means["ordinary"], means["hybrid"], means["parallel"]
        ok = ok and o >= h - 1e-9 and h >= p - 1e-9
        strict = strict or o > h + 1e-6 or h > p + 1e-6
        lines.append(f"alpha={label}: O={o:.3f} H={h:.3f} P={p:.3f}")
    passed = ok and strict
    return CriterionResult(
        5, "accepted-length-ordering", passed, "; ".join(lines)
    )


# -- 6: losslessness under chaos -------------------------------------------------


def criterion_6_losslessness_chaos() -> CriterionResult:
    preset = get_preset("chaos")
    cfg = preset.base_config()
    runs = 0
    conserved = True
    try:
        for label, overrides in preset.points:
            point_cfg = cfg.with_overrides(overrides)
            for variant in preset.variants:
                result = run(point_cfg, variant)
                runs += 1
                if not result.lossless:
                    return CriterionResult(
                        6,
                        "losslessness-chaos",
                        False,
                        f"divergence at point {label} variant {variant}",
                    )
                for name, ctr in result.channel_counters.items():
                    if ctr["sent"] < ctr["delivered"] + ctr["dropped"] + ctr["stale"]:
                        conserved = False
    except Exception as exc:  # a raised losslessness violation is a failure, not a crash
        return CriterionResult(6, "losslessness-chaos", False, f"{type(exc).__name__}: {exc}")
    detail = f"{runs} fault-grid runs, all committed sequences equal reference prefixes"
    if not conserved:
        detail += "; WARNING: channel conservation violated"
    return CriterionResult(6, "losslessness-chaos", conserved, detail)


# -- 7: scheduler fairness -------------------------------------------------------


def criterion_7_scheduler_fairness() -> CriterionResult:
    t_target = 0.050
    t_draft = 0.005
    gamma = 4
    n_spec = 32
    oracle = TokenStreamOracle(seed=7)
    # Capacity equal to the speculative fan-out and a query cadence matching
    # the speculative round duration keep the speculative queue saturated, so
    # regular work is served only when the fairness counter forces it.
    server = DraftServer(
        oracle=oracle,
        alpha=0.8,
        gamma=gamma,
        latency=DraftLatencyModel(base=t_draft),
        capacity=n_spec,
        fairness_period=10,
        rng=random.Random(7),
    )
    for i in range(20):
        server.add_regular(1_000_000 + i, 10**9, 0.0)

    interval = gamma * t_draft
    now = 0.0
    next_batch = 0.0
    serial = 0
    enqueued: dict[int, float] = {}
    latencies: list[float] = []
    rounds = 0
    while rounds < 10_000:
        while next_batch <= now:
            for req in range(n_spec):
                server.on_sync(req, 0, ())
                serial += 1
                server.on_query(req, gamma, rounds, serial, next_batch)
                enqueued[req] = next_batch
            next_batch += interval
        duration = server.start_round(now)
        if duration is None:
            now = next_batch
            continue
        now += duration
        for proto in server.finish_round(now):
            latencies.append(now - enqueued[proto["request"]])
        rounds += 1

    worst_streak = streak = 0
    forced = 0
    for rec in server.records:
        if rec.forced_regular:
            forced += 1
        if rec.n_speculative > 0 and rec.n_regular == 0 and rec.regular_pending_at_start > 0:
            streak += 1
            worst_streak = max(worst_streak, streak)
        else:
            streak = 0
    max_latency = max(latencies) if latencies else float("inf")
    deadline_ok = gamma * t_draft <= t_target and max_latency <= t_target
    passed = worst_streak <= 10 and forced > 0 and deadline_ok
    detail = (
        f"{rounds} scheduler rounds under speculative saturation: worst "
        f"speculative streak with regular pending {worst_streak} (<=10), "
        f"{forced} forced regular rounds, max query latency "
        f"{max_latency * 1000:.1f}ms (<= {t_target * 1000:.0f}ms)"
    )
    return CriterionResult(7, "scheduler-fairness", passed, detail)


# -- 8: circuit breaker timing ----------------------------------------------------


def _breaker_run(**overrides):
    base = dict(
        batch_size=8,
        n_requests=8,
        output_len=48,
        alpha=0.8,
        seed=0,
        breaker_threshold=3,
        breaker_cooldown=5,
    )
    base.update(overrides)
    cfg = SimConfig(**base)
    workload = Workload((0.0,) * cfg.n_requests, output_len=cfg.output_len)
    return cfg, run(cfg, PolicyVariant.PARALLEL, workload=workload)


def _check_windows(cfg: SimConfig, result, h: int, c_max: int) -> list[str]:
    problems = []
    if not result.breaker_windows:
        problems.append("no breaker windows recorded")
    by_round = {t.round: t for t in result.round_trace}
    for start, end in result.breaker_windows:
        if end - start + 1 != h:
            problems.append(f"window ({start},{end}) spans {end - start + 1} != H={h}")
        for r in range(start - c_max, start):
            t = by_round.get(r)
            if t is None or not t.timeout:
                problems.append(f"round {r} before window {start} not a timeout round")
        for r in range(start, end + 1):
            t = by_round.get(r)
            if t is None:
                continue  # run ended inside the final window
            if t.speculation_on or t.mode != "F":
                problems.append(f"round {r} inside window not all-fallback")
            if t.committed_delta != t.participants:
                problems.append(f"round {r} committed {t.committed_delta} != {t.participants}")
            duration = t.committed_at - t.started_at
            if _rel_err(duration, cfg.t_target) > 0.01:
                problems.append(f"round {r} duration {duration:.4f}s != T_T +-1%")
    return problems


def criterion_8_breaker_timing() -> CriterionResult:
    # Scenario A: total message loss (liveness gate held open so the breaker
    # is what reacts).  Scenario B: draft too slow for the reply deadline.
    cfg_a, res_a = _breaker_run(drop_prob=1.0, heartbeat_expiry=1e6)
    cfg_b, res_b = _breaker_run(t_draft=0.030)
    problems = _check_windows(cfg_a, res_a, 5, 3) + _check_windows(cfg_b, res_b, 5, 3)
    detail = (
        f"loss scenario windows {res_a.breaker_windows}; "
        f"slow-draft windows {res_b.breaker_windows}"
    )
    if problems:
        detail += "; " + "; ".join(problems[:4])
    return CriterionResult(8, "breaker-timing", not problems, detail)


# -- 9: compression contract -------------------------------------------------------


def criterion_9_compression_contract() -> CriterionResult:
    rng = random.Random(99)
    failures = 0
    for _ in range(10_000):
        size = rng.randint(0, 300)
        p = rng.random()
        tokens = list(range(size))
        out = compress_prompt(tokens, p)
        keep = int((p / 2.0) * size)
        expected_len = min(size, 2 * keep)
        if 2 * keep >= size:
            good = out == tokens
        else:
            good = out == tokens[:keep] + tokens[size - keep:]
        if len(out) != expected_len or not good:
            failures += 1
    spot = compress_prompt(list(range(100)), 0.1)
    spot_ok = len(spot) == 10 and spot == list(range(5)) + list(range(95, 100))
    passed = failures == 0 and spot_ok
    detail = (
        f"10000 randomized cases, {failures} failures; "
        f"p=0.1,S=100 -> {len(spot)} tokens (expect 10)"
    )
    return CriterionResult(9, "compression-contract", passed, detail)


# -- 10: mixed-traffic degradation shape --------------------------------------------


def criterion_10_mixed_traffic_shape() -> CriterionResult:
    preset = get_preset("mixed-traffic")
    cfg = preset.base_config()
    entries = run_sweep(
        cfg,
        [PolicyVariant.parse(v) for v in preset.variants],
        preset.axis,
        list(preset.points),
        replicates=preset.replicates,
    )
    per_point = _by_point(entries, "target_throughput")
    labels = [label for label, _ in preset.points]
    means = [per_point[label]["hybrid"] for label in labels]
    monotone = all(
        means[i + 1] <= means[i] * (1.0 + 1e-3) for i in range(len(means) - 1)
    )
    degradation = (means[0] - means[1]) / means[0]
    passed = monotone and degradation < 0.05
    pairs = ", ".join(f"qps={l}: {m:.1f}" for l, m in zip(labels, means))
    detail = (
        f"{pairs}; monotone={monotone}, degradation at qps=1: "
        f"{degradation * 100:.2f}% (< 5%)"
    )
    return CriterionResult(10, "mixed-traffic-shape", passed, detail)


# -- 11: benefit formula -------------------------------------------------------------


def criterion_11_benefit_formula() -> CriterionResult:
    include = PricingConfig(
        price_target_per_mtok=3.0,
        price_draft_per_mtok=0.45,
        gpu_count_target=1,
        gpu_count_draft=1,
        include_draft_revenue=True,
    )
    exclude = PricingConfig(
        price_target_per_mtok=3.0,
        price_draft_per_mtok=0.45,
        gpu_count_target=1,
        gpu_count_draft=1,
        include_draft_revenue=False,
    )
    with_draft = benefit_efficiency(2000.0, 500.0, include)
    without_draft = benefit_efficiency(2000.0, 500.0, exclude)
    zero = benefit_efficiency(0.0, 0.0, include)
    passed = (
        _rel_err(with_draft, 3.1125) <= 1e-12
        and _rel_err(without_draft, 3.0) <= 1e-12
        and zero == 0.0
    )
    detail = (
        f"include-draft {with_draft:.6f} (expect 3.1125), "
        f"exclude-draft {without_draft:.6f} (expect 3.0), zero -> {zero}"
    )
    return CriterionResult(11, "benefit-formula", passed, detail)


ALL_CRITERIA = (
    criterion_1_formula_fidelity,
    criterion_2_crossover_identity,
    criterion_3_sim_model_agreement,
    criterion_4_hybrid_dominance,
    criterion_5_accepted_length_ordering,
    criterion_6_losslessness_chaos,
    criterion_7_scheduler_fairness,
    criterion_8_breaker_timing,
    criterion_9_compression_contract,
    criterion_10_mixed_traffic_shape,
    criterion_11_benefit_formula,
)


def run_all() -> list[CriterionResult]:
    return [check() for check in ALL_CRITERIA]
