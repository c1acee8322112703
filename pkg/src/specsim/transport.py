"""Simulated asynchronous messaging: version-tagged envelopes, bounded
channels with injected delay/reorder/drop faults, stale discard, and
heartbeat liveness.  Channels never invent or duplicate envelopes, so
sent = delivered + dropped + stale + queued holds exactly at every event
boundary (backpressure rejections never enter the channel and are counted
separately).
"""

from __future__ import annotations

import dataclasses
import heapq
import random
from dataclasses import dataclass
from enum import Enum, auto

from .core import RequestId, RoundId, Token, parse_delay_spec


class EnvelopeKind(Enum):
    DRAFT_QUERY = auto()
    DRAFT_REPLY = auto()
    SYNC_PREFIX = auto()
    HEARTBEAT = auto()


@dataclass(frozen=True)
class Envelope:
    request: RequestId
    round: RoundId
    kind: EnvelopeKind
    payload: tuple[Token, ...] = ()
    sent_at: float = 0.0
    deliver_at: float = 0.0
    # Optional protocol metadata.
    start_position: int | None = None
    count: int | None = None
    serial: int = -1
    t_d_mix: float | None = None
    closes_session: bool = False


class SendStatus(Enum):
    ENQUEUED = auto()
    DROPPED = auto()
    BACKPRESSURE = auto()


@dataclass(frozen=True)
class SendOutcome:
    status: SendStatus
    deliver_at: float | None


@dataclass
class ChannelCounters:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    stale: int = 0
    rejected: int = 0


class BoundedChannel:
    """One-direction faulty message queue owned by the simulator loop."""

    def __init__(
        self,
        name: str,
        capacity: int,
        delay_dist: str = "constant:0.0005",
        drop_prob: float = 0.0,
        reorder_prob: float = 0.0,
        reorder_span: float = 0.05,
        stale_timeout: float = 1.0,
        keep_trace: bool = True,
    ):
        self.name = name
        self.capacity = capacity
        self.delay_kind, self.delay_args = parse_delay_spec(delay_dist)
        self.drop_prob = drop_prob
        self.reorder_prob = reorder_prob
        self.reorder_span = reorder_span
        self.stale_timeout = stale_timeout
        self.counters = ChannelCounters()
        self.keep_trace = keep_trace
        self.trace: list[tuple[float, str, str, int, int]] = []
        self._heap: list[tuple[float, int, Envelope]] = []
        self._seq = 0

    def __len__(self) -> int:
        return len(self._heap)

    def _sample_delay(self, rng: random.Random) -> float:
        if self.delay_kind == "constant":
            return self.delay_args[0]
        if self.delay_kind == "uniform":
            return rng.uniform(*self.delay_args)
        return rng.expovariate(1.0 / self.delay_args[0])

    def _record(self, now: float, event: str, envelope: Envelope) -> None:
        if self.keep_trace:
            self.trace.append(
                (now, event, envelope.kind.name, envelope.request, envelope.round)
            )

    def send(self, envelope: Envelope, now: float, rng: random.Random) -> SendOutcome:
        """Inject faults and enqueue; full queue rejects with backpressure."""
        if len(self._heap) >= self.capacity:
            self.counters.rejected += 1
            self._record(now, "REJECTED", envelope)
            return SendOutcome(SendStatus.BACKPRESSURE, None)
        self.counters.sent += 1
        if self.drop_prob > 0.0 and rng.random() < self.drop_prob:
            self.counters.dropped += 1
            self._record(now, "DROPPED", envelope)
            return SendOutcome(SendStatus.DROPPED, None)
        delay = self._sample_delay(rng)
        if self.reorder_prob > 0.0 and rng.random() < self.reorder_prob:
            delay += rng.uniform(0.0, self.reorder_span)
        if delay > self.stale_timeout:
            # Guaranteed to age out before it could ever be delivered.
            self.counters.stale += 1
            self._record(now, "STALE", envelope)
            return SendOutcome(SendStatus.DROPPED, None)
        stamped = dataclasses.replace(envelope, sent_at=now, deliver_at=now + delay)
        heapq.heappush(self._heap, (stamped.deliver_at, self._seq, stamped))
        self._seq += 1
        self._record(now, "SENT", stamped)
        return SendOutcome(SendStatus.ENQUEUED, stamped.deliver_at)

    def poll(self, now: float) -> list[Envelope]:
        """Pop every envelope due by `now`, discarding any that aged out."""
        out: list[Envelope] = []
        while self._heap and self._heap[0][0] <= now:
            _, _, envelope = heapq.heappop(self._heap)
            if now - envelope.sent_at > self.stale_timeout:
                self.counters.stale += 1
                self._record(now, "STALE", envelope)
                continue
            self.counters.delivered += 1
            self._record(now, "DELIVERED", envelope)
            out.append(envelope)
        return out

    def conservation_ok(self) -> bool:
        c = self.counters
        return c.sent == c.delivered + c.dropped + c.stale + len(self._heap)

    def format_trace(self) -> str:
        """Line-delimited lifecycle records for post-hoc audits."""
        lines = [
            f"{at:.6f}\t{self.name}\t{event}\t{kind}\treq={req}\tround={rnd}"
            for at, event, kind, req, rnd in self.trace
        ]
        return "\n".join(lines) + ("\n" if lines else "")


class LivenessRegistry:
    """Last-heartbeat bookkeeping with a fixed expiry window."""

    def __init__(self, expiry: float):
        if expiry <= 0:
            raise ValueError(f"expiry must be positive, got {expiry}")
        self.expiry = expiry
        self._last: dict[str, float] = {}

    def heartbeat_tick(self, endpoint: str, now: float) -> None:
        self._last[endpoint] = now

    def is_alive(self, endpoint: str, now: float) -> bool:
        last = self._last.get(endpoint)
        return last is not None and now - last <= self.expiry
