"""Target-side protocol state and pure round operations.

The target owns request lifecycles: assembling verification candidates
(cached, repaired, padded, or bare-fallback), committing verifier outcomes,
deciding suffix reuse after each commit, validating asynchronous draft
replies, and tripping the circuit breaker on reply starvation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, auto
from typing import Mapping, Sequence

from .core import PAD, Mode, RequestId, RoundId, SpeculativeSegment, Token
from .oracle import VerifyOutcome


class ProtocolViolation(RuntimeError):
    """An internal invariant of the coordination protocol was broken."""


class CandidateKind(Enum):
    CACHED = auto()     # reused speculative suffix, anchored at committed_pos
    REPAIRED = auto()   # bonus seed + freshly repaired draft tokens
    PADDED = auto()     # bonus seed + inert padding (parallel rollback slot)
    FALLBACK = auto()   # bonus seed only (no draft assistance)


@dataclass(frozen=True)
class CandidateSequence:
    request: RequestId
    kind: CandidateKind
    tokens: tuple[Token, ...]
    start: int                  # verification anchor position
    seed_count: int             # leading already-committed tokens

    def __post_init__(self):
        if not self.tokens:
            raise ProtocolViolation(f"empty candidate for request {self.request}")
        if self.start < 0:
            raise ProtocolViolation(f"negative candidate start for {self.request}")

    @property
    def real_token_length(self) -> int:
        return sum(1 for t in self.tokens if t != PAD)


@dataclass(frozen=True)
class VerificationBatch:
    round: RoundId
    mode: Mode
    candidates: tuple[CandidateSequence, ...]

    @property
    def participants(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class ChainNode:
    """Singly linked verification-chain node (one token slot)."""

    token: Token
    child: "ChainNode | None" = None


def to_verification_chain(candidate: CandidateSequence) -> ChainNode:
    head: ChainNode | None = None
    for token in reversed(candidate.tokens):
        head = ChainNode(token, head)
    assert head is not None
    return head


def chain_tokens(head: ChainNode | None) -> tuple[Token, ...]:
    out: list[Token] = []
    node = head
    while node is not None:
        out.append(node.token)
        node = node.child
    return tuple(out)


@dataclass
class RequestState:
    """One in-flight request at the target."""

    request: RequestId
    output_len: int
    round: RoundId = 0
    committed_pos: int = 0
    committed_tokens: list[Token] = field(default_factory=list)
    pending_bonus: Token | None = None
    cached_segment: SpeculativeSegment | None = None
    in_rollback: bool = True
    done: bool = False
    synced_pos: int = 0
    prompt_len: int = 0
    arrived_at: float = 0.0
    admitted_at: float = 0.0
    finished_at: float = 0.0


def init_request(
    request: RequestId,
    first_token: Token,
    output_len: int,
    prompt_len: int = 0,
    arrived_at: float = 0.0,
) -> RequestState:
    """Prefill commits the first output token directly; the request enters
    round accounting already holding one committed token and its bonus."""
    if output_len < 1:
        raise ProtocolViolation(f"output_len must be >= 1, got {output_len}")
    state = RequestState(
        request=request,
        output_len=output_len,
        committed_pos=1,
        committed_tokens=[first_token],
        pending_bonus=first_token,
        prompt_len=prompt_len,
        arrived_at=arrived_at,
    )
    state.done = state.committed_pos >= output_len
    return state


# -- candidate assembly ------------------------------------------------------


def fallback_candidate(state: RequestState) -> CandidateSequence:
    if state.pending_bonus is None:
        raise ProtocolViolation(f"request {state.request} has no pending bonus")
    return CandidateSequence(
        request=state.request,
        kind=CandidateKind.FALLBACK,
        tokens=(state.pending_bonus,),
        start=state.committed_pos - 1,
        seed_count=1,
    )


def _cached_candidate(state: RequestState, gamma: int) -> CandidateSequence:
    seg = state.cached_segment
    assert seg is not None
    if seg.start_position != state.committed_pos:
        raise ProtocolViolation(
            f"cached segment for {state.request} anchored at {seg.start_position}, "
            f"expected {state.committed_pos}"
        )
    tokens = seg.tokens + (PAD,) * max(0, gamma - len(seg.tokens))
    return CandidateSequence(
        request=state.request,
        kind=CandidateKind.CACHED,
        tokens=tokens,
        start=state.committed_pos,
        seed_count=0,
    )


def assemble_ordinary(
    requests: Sequence[RequestState],
    repaired: Mapping[RequestId, SpeculativeSegment],
    gamma: int,
    round_id: RoundId,
) -> VerificationBatch:
    """Ordinary-mode batch: every rollback request must carry a repaired
    segment (synchronous repair completed before assembly)."""
    candidates = []
    for state in requests:
        if state.cached_segment is not None and not state.in_rollback:
            candidates.append(_cached_candidate(state, gamma))
            continue
        seg = repaired.get(state.request)
        if seg is None:
            raise ProtocolViolation(
                f"ordinary assembly: request {state.request} in rollback "
                f"without a repaired segment"
            )
        if seg.start_position != state.committed_pos:
            raise ProtocolViolation(
                f"repair for {state.request} anchored at {seg.start_position}, "
                f"expected {state.committed_pos}"
            )
        if state.pending_bonus is None:
            raise ProtocolViolation(f"request {state.request} has no pending bonus")
        candidates.append(
            CandidateSequence(
                request=state.request,
                kind=CandidateKind.REPAIRED,
                tokens=(state.pending_bonus,) + seg.tokens,
                start=state.committed_pos - 1,
                seed_count=1,
            )
        )
    return VerificationBatch(round=round_id, mode=Mode.ORDINARY, candidates=tuple(candidates))


def assemble_parallel(
    requests: Sequence[RequestState], gamma: int, round_id: RoundId
) -> VerificationBatch:
    """Parallel-mode batch: cached suffixes verify as-is; rollback requests
    get an inert padded slot so the round never waits on the draft."""
    candidates = []
    for state in requests:
        if state.cached_segment is not None and not state.in_rollback:
            candidates.append(_cached_candidate(state, gamma))
            continue
        if state.pending_bonus is None:
            raise ProtocolViolation(f"request {state.request} has no pending bonus")
        candidates.append(
            CandidateSequence(
                request=state.request,
                kind=CandidateKind.PADDED,
                tokens=(state.pending_bonus,) + (PAD,) * (gamma - 1),
                start=state.committed_pos - 1,
                seed_count=1,
            )
        )
    return VerificationBatch(round=round_id, mode=Mode.PARALLEL, candidates=tuple(candidates))


# -- commit and suffix reuse -------------------------------------------------


def commit_round(state: RequestState, outcome: VerifyOutcome) -> RequestState:
    """Fold one verifier outcome into the request: extend the committed
    prefix (capped at output_len), refresh the bonus, advance the round."""
    start = outcome.new_position - outcome.accepted_count - 1
    if start > state.committed_pos:
        raise ProtocolViolation(
            f"commit gap for {state.request}: outcome starts at {start}, "
            f"committed_pos is {state.committed_pos}"
        )
    if outcome.new_position <= state.committed_pos:
        raise ProtocolViolation(
            f"position regression for {state.request}: "
            f"{outcome.new_position} <= {state.committed_pos}"
        )
    fresh = outcome.committed[state.committed_pos - start:]
    room = state.output_len - state.committed_pos
    fresh = fresh[:room]
    state.committed_tokens.extend(fresh)
    state.committed_pos += len(fresh)
    state.pending_bonus = state.committed_tokens[-1]
    state.done = state.committed_pos >= state.output_len
    state.round += 1
    return state


def reuse_or_discard_suffix(
    state: RequestState,
    outcome: VerifyOutcome,
    prepared_next: SpeculativeSegment | None,
) -> RequestState:
    """Keep the prepared segment's suffix beyond the new committed position
    iff its overlap with the committed prefix matches token for token;
    otherwise (or with nothing prepared) the request enters rollback."""
    state.cached_segment = None
    state.in_rollback = True
    if prepared_next is None or state.done:
        return state
    seg = prepared_next
    pos = state.committed_pos
    if seg.start_position > pos:
        return state
    overlap_end = min(seg.end_position, pos)
    for p in range(seg.start_position, overlap_end):
        if seg.tokens[p - seg.start_position] != state.committed_tokens[p]:
            return state
    suffix = seg.tokens[pos - seg.start_position:]
    if not suffix:
        return state
    state.cached_segment = SpeculativeSegment(
        tokens=suffix, start_position=pos, origin_round=seg.origin_round
    )
    state.in_rollback = False
    return state


# -- rollback statistics -----------------------------------------------------


def compute_rollback_set(
    outcomes: Mapping[RequestId, VerifyOutcome],
    candidates: Mapping[RequestId, CandidateSequence],
    prepared_segments: Mapping[RequestId, SpeculativeSegment | None],
) -> set[RequestId]:
    """Requests needing draft-state regeneration after this round: any
    candidate not accepted in full, or a prepared next segment whose head
    token disagrees with the committed bonus."""
    rolled: set[RequestId] = set()
    for request, outcome in outcomes.items():
        candidate = candidates[request]
        if outcome.accepted_count < candidate.real_token_length:
            rolled.add(request)
            continue
        prepared = prepared_segments.get(request)
        if prepared is not None and prepared.tokens[0] != outcome.bonus:
            rolled.add(request)
    return rolled


def observe_rollback_ratio(rollback_set: set[RequestId], participants: int) -> float:
    if participants < 1:
        raise ValueError(f"participants must be >= 1, got {participants}")
    return len(rollback_set) / participants


# -- draft reply validation --------------------------------------------------


def handle_draft_reply(
    envelope, active: tuple[RoundId, int] | None
) -> SpeculativeSegment | None:
    """Validate an asynchronous DRAFT_REPLY against the request's outstanding
    query; stale, superseded, or unsolicited replies yield None."""
    if active is None:
        return None
    expected_round, expected_serial = active
    if envelope.round != expected_round or envelope.serial != expected_serial:
        return None
    if not envelope.payload:
        return None
    start = envelope.start_position
    if start is None or start < 0:
        return None
    return SpeculativeSegment(
        tokens=tuple(envelope.payload), start_position=start, origin_round=envelope.round
    )


# -- circuit breaker ---------------------------------------------------------


@dataclass(frozen=True)
class CircuitBreakerState:
    threshold: int = 3
    cooldown: int = 5
    consecutive_timeouts: int = 0
    disabled_until_round: RoundId = 0
    activations: int = 0

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        if self.cooldown < 1:
            raise ValueError(f"cooldown must be >= 1, got {self.cooldown}")


def speculation_allowed(cb: CircuitBreakerState, round_id: RoundId) -> bool:
    return round_id >= cb.disabled_until_round


def circuit_breaker_step(
    cb: CircuitBreakerState, reply_timely: bool, current_round: RoundId
) -> tuple[CircuitBreakerState, bool]:
    """Advance the breaker after a round that used the draft: timely replies
    reset the timeout streak; a streak reaching the threshold disables
    speculation for the next `cooldown` rounds.

    Returns the new state and whether speculation is enabled for the round
    after `current_round`.
    """
    if not speculation_allowed(cb, current_round):
        return cb, speculation_allowed(cb, current_round + 1)
    if reply_timely:
        streak = 0
    else:
        streak = cb.consecutive_timeouts + 1
    if streak >= cb.threshold:
        tripped = replace(
            cb,
            consecutive_timeouts=0,
            disabled_until_round=current_round + cb.cooldown + 1,
            activations=cb.activations + 1,
        )
        return tripped, False
    return replace(cb, consecutive_timeouts=streak), True


# -- accepted-length tracking -------------------------------------------------


@dataclass
class AcceptedLengthEstimator:
    """EMA over per-round committed deltas of content-bearing rounds
    (cached or repaired candidates); fallback and padded rounds carry no
    information about draft quality and are excluded."""

    decay: float = 0.9
    fixed: float | None = None
    value: float | None = None

    def observe(self, delta: float, kind: CandidateKind) -> None:
        if kind not in (CandidateKind.CACHED, CandidateKind.REPAIRED):
            return
        if self.value is None:
            self.value = float(delta)
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * float(delta)

    def current(self) -> float | None:
        if self.fixed is not None:
            return self.fixed
        return self.value
