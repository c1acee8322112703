"""Draft-server side: persistent per-request speculative sessions with
divergence reconciliation, speculative generation, prompt compression, and
a speculative-priority fair scheduler for mixed tenant traffic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Iterable, Sequence

from .core import RequestId, RoundId, SpeculativeSegment, Token
from .oracle import TokenStreamOracle


class QueueClass(Enum):
    SPECULATIVE = auto()
    REGULAR = auto()


@dataclass
class DraftSessionState:
    """Local decode state for one speculative request.

    `history` holds every locally decoded output token (verified prefix plus
    the speculative tail); `segment` is the most recent speculative run, whose
    tokens also sit at the tail of history.  cache_cost is the abstract
    cache-size proxy |history| + |segment|.
    """

    request: RequestId
    history: list[Token] = field(default_factory=list)
    segment: SpeculativeSegment | None = None
    paused: bool = False
    prompt_context: tuple[Token, ...] = ()
    freed_total: int = 0

    @property
    def cache_cost(self) -> int:
        return len(self.history) + (len(self.segment) if self.segment else 0)


@dataclass
class DraftQueueItem:
    queue_class: QueueClass
    request: RequestId
    enqueued_at: float
    count: int = 0
    round: RoundId = -1
    serial: int = -1
    # Explicit generation anchor.  None means "continue from local history"
    # (the pipelined, optimistic semantics); an integer pins the generation
    # to a verified position, superseding any speculative tail.
    anchor: int | None = None
    remaining: int = 0


@dataclass(frozen=True)
class FairnessCounter:
    consecutive_speculative: int = 0
    period: int = 10


@dataclass(frozen=True)
class DraftLatencyModel:
    base: float
    slope: float = 0.0
    free_batch: int = 0


def reconcile(state: DraftSessionState, verified_prefix: Sequence[Token]) -> int:
    """First 0-based index where the verified prefix and local history
    disagree; equals the overlap length when they agree throughout."""
    overlap = min(len(verified_prefix), len(state.history))
    for i in range(overlap):
        if verified_prefix[i] != state.history[i]:
            return i
    return overlap


def apply_recovery(
    state: DraftSessionState, delta_index: int, verified_prefix: Sequence[Token]
) -> DraftSessionState:
    """Truncate the diverged suffix, free its cache share, and re-extend the
    history with the verified remainder.  A fully agreeing overlap with no
    remainder leaves the state untouched."""
    overlap = min(len(verified_prefix), len(state.history))
    if delta_index < overlap:
        freed = (len(state.history) - delta_index) + (
            len(state.segment) if state.segment else 0
        )
        state.freed_total += freed
        del state.history[delta_index:]
        state.history.extend(verified_prefix[delta_index:])
        state.segment = None
    elif len(verified_prefix) > len(state.history):
        state.history.extend(verified_prefix[len(state.history):])
    return state


def generate_speculative(
    state: DraftSessionState,
    count: int,
    alpha: float,
    rng: random.Random,
    oracle: TokenStreamOracle,
    origin_round: RoundId = -1,
) -> SpeculativeSegment:
    """Decode `count` speculative tokens from the end of local history, then
    pause the session until the next synchronization message."""
    if state.paused:
        raise RuntimeError(f"session {state.request} is paused; sync required first")
    segment = oracle.draft_propose(
        state.request, len(state.history), count, alpha, rng, origin_round
    )
    state.history.extend(segment.tokens)
    state.segment = segment
    state.paused = True
    return segment


def compress_prompt(tokens: Sequence[Token], p: float) -> list[Token]:
    """Keep the first and last floor(p*S/2) tokens; shorter inputs pass through."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    size = len(tokens)
    keep = int((p / 2.0) * size)
    if 2 * keep >= size:
        return list(tokens)
    return list(tokens[:keep]) + list(tokens[size - keep:])


def schedule_round(
    items: Sequence[DraftQueueItem], counter: FairnessCounter, capacity: int
) -> tuple[list[DraftQueueItem], FairnessCounter, bool]:
    """Pick this generation round's batch: speculative first (FIFO within
    class), with a forced regular round once `period` consecutive
    speculative rounds have run while regular work waited.

    Returns (scheduled, updated counter, forced_regular flag).
    """
    if capacity < 1:
        raise ValueError(f"capacity must be >= 1, got {capacity}")
    speculative = [it for it in items if it.queue_class is QueueClass.SPECULATIVE]
    regular = [it for it in items if it.queue_class is QueueClass.REGULAR]
    if counter.consecutive_speculative >= counter.period and regular:
        return regular[:capacity], FairnessCounter(0, counter.period), True
    scheduled = speculative[:capacity]
    scheduled += regular[: capacity - len(scheduled)]
    if any(it.queue_class is QueueClass.SPECULATIVE for it in scheduled):
        advanced = min(counter.consecutive_speculative + 1, counter.period)
    else:
        advanced = 0
    return scheduled, FairnessCounter(advanced, counter.period), False


def mixed_step_latency(scheduled_size: int, model: DraftLatencyModel) -> float:
    """Per-token draft step latency under contention: affine in batch size
    beyond the contention-free allowance; slope 0 recovers constant T_D."""
    if scheduled_size < 1:
        raise ValueError(f"scheduled_size must be >= 1, got {scheduled_size}")
    over = max(0, scheduled_size - model.free_batch)
    return model.base + model.slope * over


@dataclass
class DraftRoundRecord:
    """One scheduler round, for fairness and utilization audits."""

    started_at: float
    finished_at: float
    n_speculative: int
    n_regular: int
    regular_pending_at_start: int
    forced_regular: bool
    t_d_mix: float
    steps: int
    counter_after: int


class DraftServer:
    """Event-driven multi-tenant draft endpoint.

    The simulator delivers envelopes via `on_sync`/`on_query`/`add_regular`,
    then drives non-preemptive generation rounds with
    `start_round`/`finish_round`.
    """

    def __init__(
        self,
        oracle: TokenStreamOracle,
        alpha: float,
        gamma: int,
        latency: DraftLatencyModel,
        capacity: int,
        fairness_period: int,
        rng: random.Random,
        compression_p: float = 1.0,
        compression_beta: float = 0.1,
        compression_latency_frac: float = 0.5,
    ):
        self.oracle = oracle
        self.gamma = gamma
        self.latency = latency
        self.capacity = capacity
        self.rng = rng
        self.compression_p = compression_p
        if compression_p < 1.0:
            self.effective_alpha = alpha * (1.0 - compression_beta * (1.0 - compression_p))
            self.spec_latency_factor = (
                compression_latency_frac + (1.0 - compression_latency_frac) * compression_p
            )
        else:
            self.effective_alpha = alpha
            self.spec_latency_factor = 1.0
        self.sessions: dict[RequestId, DraftSessionState] = {}
        self.spec_items: dict[RequestId, DraftQueueItem] = {}
        self.regular_items: list[DraftQueueItem] = []
        self.counter = FairnessCounter(0, fairness_period)
        self.busy_until: float | None = None
        self._running: list[DraftQueueItem] = []
        self._running_t_d_mix = 0.0
        self._running_steps = 0
        self._running_forced = False
        self._running_started = 0.0
        self._running_reg_pending = 0
        self.records: list[DraftRoundRecord] = []
        self.regular_tokens_done = 0
        self.regular_completed = 0
        self.last_t_d_mix = mixed_step_latency(1, latency)

    # -- session and queue intake ------------------------------------------

    def _session(self, request: RequestId) -> DraftSessionState:
        session = self.sessions.get(request)
        if session is None:
            session = DraftSessionState(request=request)
            self.sessions[request] = session
        return session

    def open_session(self, request: RequestId, prompt_tokens: Sequence[Token]) -> None:
        session = self._session(request)
        session.prompt_context = tuple(compress_prompt(prompt_tokens, self.compression_p))

    def on_sync(
        self, request: RequestId, start: int, tokens: Sequence[Token], closes: bool = False
    ) -> None:
        """Apply a committed-prefix delta: reconcile, recover, unpause."""
        if closes:
            self.sessions.pop(request, None)
            self.spec_items.pop(request, None)
            return
        session = self._session(request)
        if start > len(session.history):
            # A gap means an earlier sync was lost; rebase bluntly on what the
            # target asserts (positions before `start` were already verified).
            freed = len(session.history) + (len(session.segment) if session.segment else 0)
            session.freed_total += freed
            # Positions before `start` were verified by the target, so their
            # values provably equal the reference stream; rebuilding them
            # locally stands in for a full-prefix resend round trip.
            session.history = [
                self.oracle.reference_token(request, i) for i in range(start)
            ] + list(tokens)
            session.segment = None
        else:
            overlap = min(len(tokens), len(session.history) - start)
            diverged = overlap
            for i in range(overlap):
                if tokens[i] != session.history[start + i]:
                    diverged = i
                    break
            if diverged < overlap or (start + len(tokens)) > len(session.history):
                apply_recovery(
                    session,
                    start + diverged,
                    _PrefixView(session.history, start, tokens),
                )
        session.paused = False

    def on_query(
        self,
        request: RequestId,
        count: int,
        round_tag: RoundId,
        serial: int,
        now: float,
        anchor: int | None = None,
    ) -> None:
        """Register (or supersede) the speculative work item for a request."""
        self.spec_items[request] = DraftQueueItem(
            queue_class=QueueClass.SPECULATIVE,
            request=request,
            enqueued_at=now,
            count=count,
            round=round_tag,
            serial=serial,
            anchor=anchor,
        )

    def add_regular(self, request: RequestId, n_tokens: int, now: float) -> None:
        self.regular_items.append(
            DraftQueueItem(
                queue_class=QueueClass.REGULAR,
                request=request,
                enqueued_at=now,
                remaining=n_tokens,
            )
        )

    # -- generation rounds --------------------------------------------------

    def _ready_items(self) -> list[DraftQueueItem]:
        spec = [
            item
            for item in self.spec_items.values()
            if not self._session(item.request).paused
        ]
        spec.sort(key=lambda it: it.enqueued_at)
        return spec + self.regular_items

    def start_round(self, now: float) -> float | None:
        """Begin one non-preemptive generation round; returns its duration."""
        if self.busy_until is not None:
            return None
        ready = self._ready_items()
        if not ready:
            return None
        reg_pending = len(self.regular_items)
        scheduled, self.counter, forced = schedule_round(ready, self.counter, self.capacity)
        spec_scheduled = [
            it for it in scheduled if it.queue_class is QueueClass.SPECULATIVE
        ]
        steps = max((it.count for it in spec_scheduled), default=1)
        base = self.latency.base
        if spec_scheduled and len(spec_scheduled) == len(scheduled):
            base *= self.spec_latency_factor
        t_d_mix = mixed_step_latency(
            len(scheduled), DraftLatencyModel(base, self.latency.slope, self.latency.free_batch)
        )
        for item in spec_scheduled:
            self.spec_items.pop(item.request, None)
        duration = steps * t_d_mix
        self._running = scheduled
        self._running_t_d_mix = t_d_mix
        self._running_steps = steps
        self._running_forced = forced
        self._running_started = now
        self._running_reg_pending = reg_pending
        self.busy_until = now + duration
        self.last_t_d_mix = t_d_mix
        return duration

    def finish_round(self, now: float) -> list[dict]:
        """Complete the running round; returns reply protos for the simulator
        to wrap in envelopes."""
        if self.busy_until is None:
            raise RuntimeError("finish_round without a running round")
        replies: list[dict] = []
        n_spec = n_reg = 0
        for item in self._running:
            if item.queue_class is QueueClass.SPECULATIVE:
                n_spec += 1
                session = self._session(item.request)
                if session.paused:
                    # Query raced ahead of its sync (reorder); reply from the
                    # stale state anyway — the target's validity filter and
                    # the verifier make this safe.
                    session.paused = False
                if item.anchor is not None:
                    self._rebase(session, item.anchor)
                segment = generate_speculative(
                    session, item.count, self.effective_alpha, self.rng,
                    self.oracle, item.round,
                )
                replies.append(
                    {
                        "request": item.request,
                        "round": item.round,
                        "serial": item.serial,
                        "tokens": segment.tokens,
                        "start": segment.start_position,
                        "t_d_mix": self._running_t_d_mix,
                    }
                )
            else:
                n_reg += 1
                emitted = min(item.remaining, self._running_steps)
                item.remaining -= emitted
                self.regular_tokens_done += emitted
                if item.remaining <= 0:
                    self.regular_items.remove(item)
                    self.regular_completed += 1
        self.records.append(
            DraftRoundRecord(
                started_at=self._running_started,
                finished_at=now,
                n_speculative=n_spec,
                n_regular=n_reg,
                regular_pending_at_start=self._running_reg_pending,
                forced_regular=self._running_forced,
                t_d_mix=self._running_t_d_mix,
                steps=self._running_steps,
                counter_after=self.counter.consecutive_speculative,
            )
        )
        self.busy_until = None
        self._running = []
        return replies

    def _rebase(self, session: DraftSessionState, anchor: int) -> None:
        """Pin local history at a target-verified position before generating.

        Repair queries anchor at the committed position: any speculative tail
        beyond it is superseded, and a shortfall (the covering sync was lost)
        is rebuilt from the reference stream, which the verified positions
        provably equal — standing in for a resend round trip.
        """
        if anchor < len(session.history):
            freed = (len(session.history) - anchor) + (
                len(session.segment) if session.segment else 0
            )
            session.freed_total += freed
            del session.history[anchor:]
            session.segment = None
        elif anchor > len(session.history):
            session.history.extend(
                self.oracle.reference_token(session.request, i)
                for i in range(len(session.history), anchor)
            )

    def has_work(self) -> bool:
        return bool(self._ready_items())


class _PrefixView(Sequence):
    """Sequence adapter presenting (history[:start] + delta) as one prefix."""

    def __init__(self, history: list[Token], start: int, tokens: Sequence[Token]):
        self._history = history
        self._start = start
        self._tokens = tokens

    def __len__(self) -> int:
        return self._start + len(self._tokens)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if i < self._start:
            return self._history[i]
        return self._tokens[i - self._start]
