"""Deterministic discrete-event simulation of the two-endpoint coordination
protocol: a batched verifying target, a multi-tenant draft server, and two
faulty one-way channels between them.

Time is simulated seconds.  All randomness derives from named child streams
of the config seed, so a (config, variant) pair fully determines every byte
of output.
"""

from __future__ import annotations

import dataclasses
import heapq
import random
from dataclasses import dataclass
from enum import Enum, auto
from pathlib import Path
from typing import Sequence

from . import analytics
from .core import Mode, RequestId, SimConfig, SpeculativeSegment, Token, validate_config
from .draft_engine import DraftLatencyModel, DraftServer, mixed_step_latency
from .metrics import MetricsReport
from .oracle import TokenStreamOracle
from .target_engine import (
    AcceptedLengthEstimator,
    CandidateKind,
    CircuitBreakerState,
    ProtocolViolation,
    RequestState,
    VerificationBatch,
    assemble_ordinary,
    assemble_parallel,
    chain_tokens,
    circuit_breaker_step,
    commit_round,
    compute_rollback_set,
    fallback_candidate,
    handle_draft_reply,
    init_request,
    observe_rollback_ratio,
    reuse_or_discard_suffix,
    speculation_allowed,
    to_verification_chain,
)
from .transport import (
    BoundedChannel,
    Envelope,
    EnvelopeKind,
    LivenessRegistry,
    SendStatus,
)


class PolicyVariant(Enum):
    AR = "ar"
    ORDINARY = "ordinary"
    PARALLEL = "parallel"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, name: str) -> "PolicyVariant":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown variant {name!r}; expected one of: {valid}")


class SimLivelock(RuntimeError):
    """No commit progress within the configured horizon."""


def generate_arrivals(qps: float, n: int, rng: random.Random) -> list[float]:
    """Poisson arrival times: n exponential inter-arrival gaps at rate qps."""
    if qps <= 0:
        raise ValueError(f"qps must be > 0, got {qps}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    times: list[float] = []
    t = 0.0
    for _ in range(n):
        t += rng.expovariate(qps)
        times.append(t)
    return times


@dataclass(frozen=True)
class Workload:
    """Arrival schedule plus per-request shape for one tenant."""

    arrival_times: tuple[float, ...]
    output_len: int
    prompt_len: int = 0
    label: str = "foreground"

    def __post_init__(self):
        if self.output_len < 1:
            raise ValueError(f"output_len must be >= 1, got {self.output_len}")
        if any(t < 0 for t in self.arrival_times):
            raise ValueError("arrival times must be >= 0")
        if list(self.arrival_times) != sorted(self.arrival_times):
            raise ValueError("arrival times must be non-decreasing")

    @classmethod
    def from_config(cls, config: SimConfig, rng: random.Random) -> "Workload":
        times = generate_arrivals(config.qps, config.n_requests, rng)
        return cls(
            arrival_times=tuple(times),
            output_len=config.output_len,
            prompt_len=config.prompt_len,
        )

    @classmethod
    def background_from_config(
        cls, config: SimConfig, rng: random.Random
    ) -> "Workload | None":
        """Background tenant arrivals, coupled across load levels: a unit-rate
        Poisson skeleton scaled by 1/qps so that raising qps only compresses
        the same arrival sequence (monotone load coupling)."""
        if config.background_qps <= 0 or config.background_requests <= 0:
            return None
        skeleton = generate_arrivals(1.0, config.background_requests, rng)
        times = tuple(t / config.background_qps for t in skeleton)
        return cls(
            arrival_times=times,
            output_len=config.background_output_len,
            prompt_len=0,
            label="background",
        )

    @classmethod
    def from_file(cls, path: str | Path, output_len: int, prompt_len: int = 0) -> "Workload":
        times = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            times.append(float(line))
        return cls(tuple(sorted(times)), output_len, prompt_len)


def conservative_mode_check(gamma: int, t_d_mix: float, t_t: float) -> bool:
    """True when draft generation cannot fit inside one verification pass
    (strict: gamma * t_d_mix > t_t); the round must then wait for the draft."""
    return gamma * t_d_mix > t_t


class EventKind(Enum):
    ARRIVAL = auto()
    BG_ARRIVAL = auto()
    TARGET_VERIFY_DONE = auto()
    DRAFT_ROUND_DONE = auto()
    DELIVERY = auto()
    HEARTBEAT = auto()
    DEADLINE = auto()
    REQUEST_DONE = auto()


class _Phase(Enum):
    IDLE = auto()
    ASSEMBLING = auto()
    VERIFYING = auto()


@dataclass(frozen=True)
class RoundTrace:
    round: int
    started_at: float
    committed_at: float
    mode: str                  # 'O', 'P', or 'F'
    participants: int
    committed_delta: int
    r_hat: float
    speculation_on: bool
    timeout: bool
    conservative: bool
    breaker_streak: int
    disabled_until: int


@dataclass
class RunResult:
    report: MetricsReport
    config: SimConfig
    variant: PolicyVariant
    round_trace: list[RoundTrace]
    draft_records: list
    finished: dict[RequestId, RequestState]
    breaker_windows: list[tuple[int, int]]
    channel_counters: dict[str, dict[str, int]]
    lossless: bool


_BG_BASE = 1_000_000  # background request ids live in their own id space

# Relative margin the smoothed rollback ratio must exceed r* by before the
# controller abandons the pipelined mode (see _choose_mode).
_EXIT_PARALLEL_MARGIN = 1.10


class Simulation:
    def __init__(
        self,
        config: SimConfig,
        variant: PolicyVariant,
        workload: Workload | None = None,
        background: Workload | None = None,
    ):
        config, _ = validate_config(config)
        self.config = config
        self.variant = variant
        self.oracle = TokenStreamOracle(seed=config.seed)
        if workload is None:
            workload = Workload.from_config(
                config, random.Random(f"{config.seed}:workload")
            )
        if background is None:
            background = Workload.background_from_config(
                config, random.Random(f"{config.seed}:background")
            )
        self.workload = workload
        self.background = background

        fault_rng = random.Random(f"{config.seed}:transport")
        self._fault_rng = fault_rng
        common = dict(
            delay_dist=config.delay_dist,
            drop_prob=config.drop_prob,
            reorder_prob=config.reorder_prob,
            reorder_span=config.reorder_span,
            stale_timeout=config.stale_timeout,
            capacity=config.channel_capacity,
        )
        self.to_draft = BoundedChannel(name="to_draft", **common)
        self.to_target = BoundedChannel(name="to_target", **common)
        self.registry = LivenessRegistry(expiry=config.heartbeat_expiry)

        self.draft = DraftServer(
            oracle=self.oracle,
            alpha=config.alpha,
            gamma=config.gamma,
            latency=DraftLatencyModel(
                base=config.t_draft,
                slope=config.t_draft_slope,
                free_batch=config.t_draft_free_batch,
            ),
            capacity=config.draft_capacity,
            fairness_period=config.fairness_period,
            rng=random.Random(f"{config.seed}:draft"),
            compression_p=config.compression_p,
            compression_beta=config.compression_beta,
            compression_latency_frac=config.compression_latency_frac,
        )

        # Event queue.
        self.now = 0.0
        self._events: list[tuple[float, int, EventKind, object]] = []
        self._seq = 0

        # Target-side protocol state.
        self.phase = _Phase.IDLE
        self.round_id = 0
        self.active: list[RequestState] = []
        self.pending: list[tuple[RequestId, float]] = []
        self.states: dict[RequestId, RequestState] = {}
        self.finished: dict[RequestId, RequestState] = {}
        # Every sent query stays tracked by serial until a reply settles it or
        # it ages past the reply timeout; _latest marks the one reply per
        # request the protocol still wants (older serials are stale context).
        self.outstanding: dict[int, tuple[RequestId, RoundId, float]] = {}
        self._latest: dict[RequestId, int] = {}
        self.prepared: dict[RequestId, SpeculativeSegment] = {}
        self.breaker = CircuitBreakerState(
            threshold=config.breaker_threshold, cooldown=config.breaker_cooldown
        )
        self.estimator = AcceptedLengthEstimator(
            decay=config.ema_decay, fixed=config.fixed_threshold_l
        )
        self.r_hat_ema: float | None = None
        self._mode: Mode | None = None
        self._serial = 0
        self._last_t_d_mix = mixed_step_latency(
            1,
            DraftLatencyModel(
                config.t_draft, config.t_draft_slope, config.t_draft_free_batch
            ),
        )

        # Per-round-in-flight bookkeeping.
        self._batch: VerificationBatch | None = None
        self._batch_symbol = "F"
        self._batch_started = 0.0
        self._batch_speculation = False
        self._batch_conservative = False
        self._batch_timeout = False
        self._verify_done = False
        self._wait_expected: set[RequestId] = set()
        self._wait_deadline = 0.0
        self._awaiting: set[RequestId] = set()
        self._assembly_repairs: dict[RequestId, SpeculativeSegment] = {}
        self._assembly_id = 0
        self._assembly_started = 0.0

        # Accounting.
        self.round_trace: list[RoundTrace] = []
        self.breaker_windows: list[tuple[int, int]] = []
        self._deltas: list[int] = []
        self._content_deltas: list[int] = []
        self._steady: list[tuple[int, float, float, list[int], list[int], float]] = []
        self.rollback_series: list[float] = []
        self.mode_timeline: list[str] = []
        self.timeout_rounds = 0
        self.fallback_rounds = 0
        self.conservative_rounds = 0
        self.stale_replies = 0
        self.draft_tokens = 0
        self._last_progress = 0.0
        self._last_finish = 0.0
        self._bg_remaining = len(background.arrival_times) if background else 0
        self._target_remaining = len(workload.arrival_times)
        self._bg_next_id = _BG_BASE
        self._heartbeat_live = False

    # -- event plumbing ------------------------------------------------------

    def _push(self, at: float, kind: EventKind, data: object = None) -> None:
        self._seq += 1
        heapq.heappush(self._events, (at, self._seq, kind, data))

    def _send(self, channel: BoundedChannel, envelope: Envelope) -> None:
        outcome = channel.send(envelope, self.now, self._fault_rng)
        if outcome.status is SendStatus.ENQUEUED:
            self._push(outcome.deliver_at, EventKind.DELIVERY, channel.name)

    # -- main loop -----------------------------------------------------------

    def run(self) -> RunResult:
        for i, at in enumerate(self.workload.arrival_times):
            self._push(at, EventKind.ARRIVAL, i)
        if self.background:
            for i, at in enumerate(self.background.arrival_times):
                self._push(at, EventKind.BG_ARRIVAL, i)
        # Liveness handshake: both endpoints observed once at t=0, then the
        # draft heartbeats through the faulty fabric.
        self.registry.heartbeat_tick("target", 0.0)
        self.registry.heartbeat_tick("draft", 0.0)
        self._heartbeat_live = True
        self._push(self.config.heartbeat_period, EventKind.HEARTBEAT, None)

        while self._events:
            if self._target_remaining == 0 and self._bg_remaining == 0:
                break
            at, _, kind, data = heapq.heappop(self._events)
            if (
                (self.active or self.pending)
                and at - self._last_progress > self.config.livelock_horizon
            ):
                raise SimLivelock(
                    f"no commit for {at - self._last_progress:.3f}s simulated "
                    f"(round {self.round_id}, phase {self.phase.name}, "
                    f"{len(self.active)} active)"
                )
            self.now = at
            self._dispatch_event(kind, data)

        if self._target_remaining:
            raise SimLivelock(
                f"event queue drained with {self._target_remaining} requests unfinished"
            )
        return self._build_result()

    def _dispatch_event(self, kind: EventKind, data: object) -> None:
        if kind is EventKind.ARRIVAL:
            self._on_arrival(int(data))
        elif kind is EventKind.BG_ARRIVAL:
            self._on_bg_arrival(int(data))
        elif kind is EventKind.DELIVERY:
            self._on_delivery(str(data))
        elif kind is EventKind.TARGET_VERIFY_DONE:
            self._on_verify_done(data)
        elif kind is EventKind.DRAFT_ROUND_DONE:
            self._on_draft_round_done()
        elif kind is EventKind.HEARTBEAT:
            self._on_heartbeat()
        elif kind is EventKind.DEADLINE:
            self._on_deadline(data)
        elif kind is EventKind.REQUEST_DONE:
            pass  # bookkeeping marker; completion handled at commit time

    # -- arrivals and admission ----------------------------------------------

    def _on_arrival(self, index: int) -> None:
        request = RequestId(index)
        self.pending.append((request, self.now))
        self._maybe_start_round()

    def _on_bg_arrival(self, index: int) -> None:
        assert self.background is not None
        request = RequestId(self._bg_next_id)
        self._bg_next_id += 1
        self.draft.add_regular(request, self.background.output_len, self.now)
        self._kick_draft()

    def _admit(self) -> None:
        cap = self.config.max_concurrency
        while self.pending and len(self.active) < cap:
            request, arrived = self.pending.pop(0)
            state = init_request(
                request=request,
                first_token=self.oracle.reference_token(request, 0),
                output_len=self.workload.output_len,
                prompt_len=self.workload.prompt_len,
                arrived_at=arrived,
            )
            state.admitted_at = self.now
            self.states[request] = state
            if state.done:
                self._finish_request(state)
                continue
            self.active.append(state)
            if self.variant is not PolicyVariant.AR:
                # Request intake is out of band: both endpoints receive the
                # prompt from the frontend, so only coordination messages
                # traverse the faulty channels.
                prompt = self.oracle.prompt_tokens(request, self.workload.prompt_len)
                self.draft.open_session(request, prompt)

    # -- round lifecycle -------------------------------------------------------

    def _current_r_star(self) -> float:
        if self.config.fixed_threshold_l is not None:
            current = self.config.fixed_threshold_l
        else:
            current = self.estimator.current()
        if current is None or current <= 1.0 + 1e-9:
            return float("inf")
        params = analytics.ThroughputParams(
            batch_size=max(1, len(self.active)),
            accepted_len=current,
            gamma=self.config.gamma,
            t_target=self.config.t_target,
            t_draft=self._last_t_d_mix,
        )
        return analytics.critical_fallback_ratio(params)

    def _choose_mode(self) -> Mode:
        if self.variant is PolicyVariant.ORDINARY:
            return Mode.ORDINARY
        if self.variant is PolicyVariant.PARALLEL:
            return Mode.PARALLEL
        r_hat = self.r_hat_ema if self.r_hat_ema is not None else 0.0
        r_star = self._current_r_star()
        if self._mode is Mode.PARALLEL:
            # Rollback measured in repair windows runs systematically higher
            # than in pipelined windows at the same acceptance rate, and a
            # return trip costs a padded warm-up round, so leaving the
            # pipelined mode demands a margin beyond the tie point.
            mode = (
                Mode.ORDINARY
                if r_hat > r_star * _EXIT_PARALLEL_MARGIN
                else Mode.PARALLEL
            )
        else:
            mode = analytics.preferred_mode(r_hat, r_star)
        self._mode = mode
        return mode

    def _next_serial(self) -> int:
        self._serial += 1
        return self._serial

    def _sync_payload(self, state: RequestState) -> tuple[int, tuple[Token, ...]]:
        start = state.synced_pos
        tokens = tuple(state.committed_tokens[start:])
        state.synced_pos = state.committed_pos
        return start, tokens

    def _send_query(
        self,
        state: RequestState,
        count: int,
        round_tag: int,
        anchor: int | None = None,
    ) -> None:
        serial = self._next_serial()
        start, tokens = self._sync_payload(state)
        self._send(
            self.to_draft,
            Envelope(
                request=state.request,
                round=round_tag,
                kind=EnvelopeKind.SYNC_PREFIX,
                payload=tokens,
                sent_at=self.now,
                start_position=start,
            ),
        )
        self._send(
            self.to_draft,
            Envelope(
                request=state.request,
                round=round_tag,
                kind=EnvelopeKind.DRAFT_QUERY,
                sent_at=self.now,
                start_position=anchor,
                count=count,
                serial=serial,
            ),
        )
        self.outstanding[serial] = (state.request, round_tag, self.now)
        self._latest[state.request] = serial

    def _maybe_start_round(self) -> None:
        if self.phase is not _Phase.IDLE:
            return
        self._admit()
        if not self.active:
            return
        self.round_id += 1
        speculation = (
            self.variant is not PolicyVariant.AR
            and speculation_allowed(self.breaker, self.round_id)
            and self.registry.is_alive("draft", self.now)
        )
        self._batch_speculation = speculation
        self._batch_timeout = False
        self._assembly_started = self.now
        if not speculation:
            candidates = tuple(fallback_candidate(s) for s in self.active)
            batch = VerificationBatch(
                round=self.round_id, mode=Mode.PARALLEL, candidates=candidates
            )
            self._dispatch_batch(batch, symbol="F")
            return
        mode = self._choose_mode()
        if mode is Mode.ORDINARY:
            self._start_ordinary_round()
        else:
            self._start_parallel_round()

    def _start_ordinary_round(self) -> None:
        gamma = self.config.gamma
        self._awaiting = set()
        self._assembly_repairs = {}
        for state in self.active:
            if state.cached_segment is None:
                # Repairs must anchor at the committed position; the explicit
                # anchor supersedes any optimistic tail the draft still holds.
                self._send_query(
                    state,
                    count=gamma - 1,
                    round_tag=state.round,
                    anchor=state.committed_pos,
                )
                self._awaiting.add(state.request)
        if not self._awaiting:
            self._dispatch_ordinary()
            return
        self.phase = _Phase.ASSEMBLING
        self._assembly_id += 1
        self._push(
            self.now + self.config.reply_timeout,
            EventKind.DEADLINE,
            ("assembly", self._assembly_id),
        )

    def _dispatch_ordinary(self) -> None:
        gamma = self.config.gamma
        ready = [
            s
            for s in self.active
            if s.cached_segment is not None or s.request in self._assembly_repairs
        ]
        batch = assemble_ordinary(ready, self._assembly_repairs, gamma, self.round_id)
        candidates = {c.request: c for c in batch.candidates}
        ordered = []
        for state in self.active:
            cand = candidates.get(state.request)
            if cand is None:
                cand = fallback_candidate(state)
            ordered.append(cand)
        self._assembly_repairs = {}
        self._awaiting = set()
        self._dispatch_batch(
            VerificationBatch(
                round=self.round_id, mode=Mode.ORDINARY, candidates=tuple(ordered)
            ),
            symbol="O",
        )

    def _start_parallel_round(self) -> None:
        gamma = self.config.gamma
        batch = assemble_parallel(self.active, gamma, self.round_id)
        queried: set[RequestId] = set()
        for state in self.active:
            self._send_query(state, count=gamma, round_tag=state.round + 1)
            queried.add(state.request)
        conservative = conservative_mode_check(
            gamma, self._last_t_d_mix, self.config.t_target
        )
        self._dispatch_batch(batch, symbol="P", conservative=conservative)
        if conservative:
            self._wait_expected = queried
            self._wait_deadline = self.now + self.config.reply_timeout
            self._push(self._wait_deadline, EventKind.DEADLINE, ("wait", self.round_id))

    def _dispatch_batch(
        self, batch: VerificationBatch, symbol: str, conservative: bool = False
    ) -> None:
        self.phase = _Phase.VERIFYING
        self._batch = batch
        self._batch_symbol = symbol
        self._batch_started = self._assembly_started
        self._batch_conservative = conservative
        self._verify_done = False
        if not conservative:
            self._wait_expected = set()
        t_t = self.config.t_target + self.config.t_target_slope * (
            batch.participants - 1
        )
        self._push(self.now + t_t, EventKind.TARGET_VERIFY_DONE, self.round_id)

    def _on_verify_done(self, round_id: object) -> None:
        if self.phase is not _Phase.VERIFYING or round_id != self.round_id:
            return
        self._verify_done = True
        self._try_commit()

    def _try_commit(self, deadline_fired: bool = False) -> None:
        if self.phase is not _Phase.VERIFYING or not self._verify_done:
            return
        if (
            self._batch_conservative
            and self._wait_expected
            and not deadline_fired
            and self.now < self._wait_deadline
        ):
            return
        self._commit_round()

    # -- commit ---------------------------------------------------------------

    def _commit_round(self) -> None:
        assert self._batch is not None
        batch = self._batch
        candidates = {c.request: c for c in batch.candidates}
        outcomes = {}
        for cand in batch.candidates:
            tokens = chain_tokens(to_verification_chain(cand))
            outcomes[cand.request] = self.oracle.verify(cand.request, cand.start, tokens)

        # Reply-timeout scan: abandon queries older than the timeout so a
        # late reply cannot match, and flag the round for the breaker.
        expired = [
            serial
            for serial, (_, _, sent_at) in self.outstanding.items()
            if self.now - sent_at >= self.config.reply_timeout - 1e-12
        ]
        for serial in expired:
            req, _, _ = self.outstanding.pop(serial)
            if self._latest.get(req) == serial:
                del self._latest[req]
        if expired:
            self._batch_timeout = True

        prepared_snapshot = {
            req: self.prepared.get(req) for req in candidates
        }
        rollback = compute_rollback_set(outcomes, candidates, prepared_snapshot)
        r_hat = observe_rollback_ratio(rollback, batch.participants)
        self.rollback_series.append(r_hat)
        if self._batch_speculation:
            if self.r_hat_ema is None:
                self.r_hat_ema = r_hat
            else:
                d = self.config.ema_decay
                self.r_hat_ema = d * self.r_hat_ema + (1.0 - d) * r_hat

        round_delta = 0
        content_this_round: list[int] = []
        deltas_this_round: list[int] = []
        finished_now: list[RequestState] = []
        for cand in batch.candidates:
            state = self.states[cand.request]
            outcome = outcomes[cand.request]
            before = state.committed_pos
            commit_round(state, outcome)
            delta = state.committed_pos - before
            round_delta += delta
            deltas_this_round.append(delta)
            self._deltas.append(delta)
            if cand.kind in (CandidateKind.CACHED, CandidateKind.REPAIRED):
                self._content_deltas.append(delta)
                content_this_round.append(delta)
            self.estimator.observe(delta, cand.kind)
            reuse_or_discard_suffix(state, outcome, self.prepared.pop(cand.request, None))
            if state.done:
                finished_now.append(state)

        self._last_progress = self.now

        if self._batch_speculation:
            was_disabled_until = self.breaker.disabled_until_round
            self.breaker, _ = circuit_breaker_step(
                self.breaker, not self._batch_timeout, self.round_id
            )
            if self.breaker.disabled_until_round != was_disabled_until:
                self.breaker_windows.append(
                    (self.round_id + 1, self.breaker.disabled_until_round - 1)
                )
                # The window invalidates all in-flight speculation.
                self.outstanding.clear()
                self._latest.clear()
                self.prepared.clear()
                for state in self.active:
                    state.cached_segment = None
                    state.in_rollback = True

        if self._batch_timeout:
            self.timeout_rounds += 1
        if self._batch_symbol == "F":
            self.fallback_rounds += 1
        if self._batch_conservative:
            self.conservative_rounds += 1

        self.mode_timeline.append(self._batch_symbol)
        self.round_trace.append(
            RoundTrace(
                round=self.round_id,
                started_at=self._batch_started,
                committed_at=self.now,
                mode=self._batch_symbol,
                participants=batch.participants,
                committed_delta=round_delta,
                r_hat=r_hat,
                speculation_on=self._batch_speculation,
                timeout=self._batch_timeout,
                conservative=self._batch_conservative,
                breaker_streak=self.breaker.consecutive_timeouts,
                disabled_until=self.breaker.disabled_until_round,
            )
        )
        self._steady.append(
            (
                batch.participants,
                self._batch_started,
                self.now,
                deltas_this_round,
                content_this_round,
                r_hat,
            )
        )

        for state in finished_now:
            self._finish_request(state)
        self._batch = None
        self._wait_expected = set()
        self.phase = _Phase.IDLE
        self._maybe_start_round()

    def _finish_request(self, state: RequestState) -> None:
        state.finished_at = self.now
        self._last_finish = self.now
        if state in self.active:
            self.active.remove(state)
        self._latest.pop(state.request, None)
        for serial in [s for s, e in self.outstanding.items() if e[0] == state.request]:
            del self.outstanding[serial]
        self.prepared.pop(state.request, None)
        self.finished[state.request] = state
        self._target_remaining -= 1
        self._push(self.now, EventKind.REQUEST_DONE, state.request)
        if self.variant is not PolicyVariant.AR:
            self._send(
                self.to_draft,
                Envelope(
                    request=state.request,
                    round=state.round,
                    kind=EnvelopeKind.SYNC_PREFIX,
                    sent_at=self.now,
                    start_position=state.committed_pos,
                    closes_session=True,
                ),
            )

    # -- deliveries ------------------------------------------------------------

    def _on_delivery(self, channel_name: str) -> None:
        if channel_name == "to_draft":
            for env in self.to_draft.poll(self.now):
                self._draft_receive(env)
            self._kick_draft()
        else:
            for env in self.to_target.poll(self.now):
                self._target_receive(env)

    def _draft_receive(self, env: Envelope) -> None:
        if env.kind is EnvelopeKind.SYNC_PREFIX:
            self.draft.on_sync(
                env.request,
                env.start_position or 0,
                env.payload,
                closes=env.closes_session,
            )
        elif env.kind is EnvelopeKind.DRAFT_QUERY:
            self.draft.on_query(
                env.request,
                env.count or 0,
                env.round,
                env.serial,
                self.now,
                anchor=env.start_position,
            )

    def _target_receive(self, env: Envelope) -> None:
        if env.kind is EnvelopeKind.HEARTBEAT:
            self.registry.heartbeat_tick("draft", self.now)
            return
        if env.kind is not EnvelopeKind.DRAFT_REPLY:
            return
        # Any reply settles its query; only the latest serial per request is
        # still wanted — superseded replies are stale context, not timeouts.
        entry = self.outstanding.pop(env.serial, None)
        expected = None
        if entry is not None and self._latest.get(env.request) == env.serial:
            expected = (entry[1], env.serial)
            del self._latest[env.request]
        segment = handle_draft_reply(env, expected)
        if segment is None:
            self.stale_replies += 1
            return
        if env.t_d_mix is not None:
            self._last_t_d_mix = env.t_d_mix
        if self.phase is _Phase.ASSEMBLING and env.request in self._awaiting:
            self._assembly_repairs[env.request] = segment
            self._awaiting.discard(env.request)
            if not self._awaiting:
                self._dispatch_ordinary()
            return
        self.prepared[env.request] = segment
        self._wait_expected.discard(env.request)
        if self._batch_conservative and not self._wait_expected:
            self._try_commit()

    # -- draft server driving ----------------------------------------------------

    def _kick_draft(self) -> None:
        if self.draft.busy_until is None and self.draft.has_work():
            duration = self.draft.start_round(self.now)
            if duration is not None:
                self._push(self.now + duration, EventKind.DRAFT_ROUND_DONE, None)

    def _on_draft_round_done(self) -> None:
        replies = self.draft.finish_round(self.now)
        if self.background:
            self._bg_remaining = (
                len(self.background.arrival_times) - self.draft.regular_completed
            )
        for proto in replies:
            self.draft_tokens += len(proto["tokens"])
            self._send(
                self.to_target,
                Envelope(
                    request=proto["request"],
                    round=proto["round"],
                    kind=EnvelopeKind.DRAFT_REPLY,
                    payload=tuple(proto["tokens"]),
                    sent_at=self.now,
                    start_position=proto["start"],
                    serial=proto["serial"],
                    t_d_mix=proto["t_d_mix"],
                ),
            )
        self._kick_draft()

    # -- heartbeats and deadlines --------------------------------------------------

    def _on_heartbeat(self) -> None:
        if self._target_remaining == 0 and self._bg_remaining == 0:
            return
        self._send(
            self.to_target,
            Envelope(
                request=RequestId(-1),
                round=0,
                kind=EnvelopeKind.HEARTBEAT,
                sent_at=self.now,
            ),
        )
        self._push(self.now + self.config.heartbeat_period, EventKind.HEARTBEAT, None)

    def _on_deadline(self, tag: object) -> None:
        kind, ident = tag  # type: ignore[misc]
        if kind == "assembly":
            if self.phase is _Phase.ASSEMBLING and ident == self._assembly_id:
                self._batch_timeout = True
                for req in list(self._awaiting):
                    serial = self._latest.pop(req, None)
                    if serial is not None:
                        self.outstanding.pop(serial, None)
                self._awaiting = set()
                self._dispatch_ordinary()
        elif kind == "wait":
            if (
                self.phase is _Phase.VERIFYING
                and ident == self.round_id
                and self._batch_conservative
            ):
                self._try_commit(deadline_fired=True)

    # -- results ---------------------------------------------------------------

    def _build_result(self) -> RunResult:
        cfg = self.config
        duration = self._last_finish if self._last_finish > 0 else self.now
        total_committed = sum(s.committed_pos for s in self.finished.values())
        lossless = all(
            list(s.committed_tokens)
            == self.oracle.reference_prefix(s.request, s.committed_pos)
            for s in self.finished.values()
        )
        max_participants = max((p for p, *_ in self._steady), default=0)
        steady = [row for row in self._steady if row[0] == max_participants]
        steady_committed = sum(sum(row[3]) for row in steady)
        steady_time = sum(row[2] - row[1] for row in steady)
        steady_deltas = [d for row in steady for d in row[3]]
        steady_content = [d for row in steady for d in row[4]]
        steady_r = [row[5] for row in steady]

        def _mean(xs: Sequence[float]) -> float:
            return sum(xs) / len(xs) if xs else 0.0

        bg_tokens = self.draft.regular_tokens_done
        report = MetricsReport(
            variant=self.variant.value,
            seed=cfg.seed,
            target_throughput=(total_committed / duration) if duration > 0 else 0.0,
            draft_throughput=(bg_tokens / duration) if duration > 0 else 0.0,
            mean_accepted_length=_mean(self._deltas),
            content_mean_accepted_length=_mean(self._content_deltas),
            mean_rollback_ratio=_mean(self.rollback_series),
            rollback_ratio_series=tuple(self.rollback_series),
            mode_timeline="".join(self.mode_timeline),
            steady_rounds=len(steady),
            steady_target_throughput=(
                steady_committed / steady_time if steady_time > 0 else 0.0
            ),
            steady_mean_accepted_length=_mean(steady_deltas),
            steady_content_mean_accepted_length=_mean(steady_content),
            steady_mean_rollback_ratio=_mean(steady_r),
            sim_duration=duration,
            total_committed=total_committed,
            total_rounds=self.round_id,
            requests_completed=len(self.finished),
            breaker_activations=self.breaker.activations,
            fallback_rounds=self.fallback_rounds,
            timeout_rounds=self.timeout_rounds,
            conservative_rounds=self.conservative_rounds,
            transport_sent=self.to_draft.counters.sent + self.to_target.counters.sent,
            transport_delivered=self.to_draft.counters.delivered
            + self.to_target.counters.delivered,
            transport_dropped=self.to_draft.counters.dropped
            + self.to_target.counters.dropped,
            transport_stale=self.to_draft.counters.stale + self.to_target.counters.stale,
            transport_rejected=self.to_draft.counters.rejected
            + self.to_target.counters.rejected,
            stale_replies=self.stale_replies,
            draft_tokens_generated=self.draft_tokens,
            background_tokens=bg_tokens,
            background_completed=self.draft.regular_completed,
        )
        counters = {
            ch.name: vars(ch.counters).copy() for ch in (self.to_draft, self.to_target)
        }
        return RunResult(
            report=report,
            config=cfg,
            variant=self.variant,
            round_trace=self.round_trace,
            draft_records=self.draft.records,
            finished=self.finished,
            breaker_windows=self.breaker_windows,
            channel_counters=counters,
            lossless=lossless,
        )


def run(
    config: SimConfig,
    variant: PolicyVariant | str,
    workload: Workload | None = None,
    background: Workload | None = None,
) -> RunResult:
    """Simulate one (config, variant) pair to completion."""
    if isinstance(variant, str):
        variant = PolicyVariant.parse(variant)
    sim = Simulation(config, variant, workload, background)
    result = sim.run()
    if not result.lossless:
        raise ProtocolViolation(
            f"losslessness violated: a committed sequence diverged from the "
            f"reference stream (variant={variant.value}, seed={config.seed})"
        )
    return result


@dataclass(frozen=True)
class SweepEntry:
    variant: str
    axis: str
    axis_value: str
    replicate: int
    report: MetricsReport


def run_sweep(
    config: SimConfig,
    variants: Sequence[PolicyVariant | str],
    axis: str,
    points: Sequence[tuple[str, dict]],
    replicates: int = 1,
) -> list[SweepEntry]:
    """Run every (point, variant, replicate) combination with matched seeds:
    replicate k of every variant at a point shares one workload seed, so
    speedup ratios compare like with like."""
    entries: list[SweepEntry] = []
    for label, overrides in points:
        for rep in range(replicates):
            point_cfg = config.with_overrides({**overrides, "seed": config.seed + rep})
            for variant in variants:
                v = PolicyVariant.parse(variant) if isinstance(variant, str) else variant
                result = run(point_cfg, v)
                report = dataclasses.replace(
                    result.report, axis=axis, axis_value=label
                )
                entries.append(
                    SweepEntry(
                        variant=v.value,
                        axis=axis,
                        axis_value=label,
                        replicate=rep,
                        report=report,
                    )
                )
    return entries
