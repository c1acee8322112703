"""Faulty transport: delivery timing, fault injection, conservation, the
lifecycle trace, and heartbeat liveness.
"""

import random

import pytest

from specsim.transport import (
    BoundedChannel,
    Envelope,
    EnvelopeKind,
    LivenessRegistry,
    SendStatus,
)


def envelope(**overrides) -> Envelope:
    fields = dict(request=1, round=2, kind=EnvelopeKind.DRAFT_QUERY)
    fields.update(overrides)
    return Envelope(**fields)


def channel(**overrides) -> BoundedChannel:
    kwargs = dict(name="test", capacity=64, delay_dist="constant:0.001",
                  stale_timeout=1.0)
    kwargs.update(overrides)
    return BoundedChannel(**kwargs)


class TestDelivery:
    def test_constant_delay_stamps_both_timestamps(self):
        ch = channel()
        outcome = ch.send(envelope(), now=5.0, rng=random.Random(0))
        assert outcome.status is SendStatus.ENQUEUED
        assert outcome.deliver_at == pytest.approx(5.001)
        assert ch.poll(5.0005) == []
        delivered = ch.poll(5.001)
        assert len(delivered) == 1
        assert delivered[0].sent_at == 5.0
        assert delivered[0].deliver_at == pytest.approx(5.001)
        assert len(ch) == 0

    def test_metadata_survives_the_channel(self):
        # Regression: re-stamping the envelope must preserve every field,
        # including ones added after the channel was first written.
        ch = channel()
        sent = envelope(
            kind=EnvelopeKind.DRAFT_REPLY, payload=(7, 8), start_position=3,
            count=2, serial=99, t_d_mix=0.0042, closes_session=True,
        )
        ch.send(sent, now=0.0, rng=random.Random(0))
        got = ch.poll(1.0)[0]
        assert got.payload == (7, 8)
        assert got.start_position == 3
        assert got.count == 2
        assert got.serial == 99
        assert got.t_d_mix == 0.0042
        assert got.closes_session is True

    def test_poll_order_follows_deliver_time(self):
        ch = channel(delay_dist="uniform:0.001:0.01")
        rng = random.Random(3)
        for serial in range(20):
            ch.send(envelope(serial=serial), now=0.0, rng=rng)
        got = ch.poll(1.0)
        times = [e.deliver_at for e in got]
        assert times == sorted(times)


class TestFaults:
    def test_drop_rate_calibrated(self):
        ch = channel(capacity=100_000, drop_prob=0.3)
        rng = random.Random(11)
        n = 10_000
        dropped = 0
        for _ in range(n):
            if ch.send(envelope(), 0.0, rng).status is SendStatus.DROPPED:
                dropped += 1
        assert dropped / n == pytest.approx(0.3, abs=0.02)
        assert ch.counters.dropped == dropped
        assert ch.counters.sent == n

    def test_backpressure_rejects_when_full(self):
        ch = channel(capacity=2)
        rng = random.Random(0)
        assert ch.send(envelope(), 0.0, rng).status is SendStatus.ENQUEUED
        assert ch.send(envelope(), 0.0, rng).status is SendStatus.ENQUEUED
        outcome = ch.send(envelope(), 0.0, rng)
        assert outcome.status is SendStatus.BACKPRESSURE
        assert outcome.deliver_at is None
        assert ch.counters.rejected == 1
        assert ch.counters.sent == 2  # rejected sends never count as sent

    def test_delay_beyond_stale_timeout_discarded_at_send(self):
        ch = channel(delay_dist="constant:2.0", stale_timeout=1.0)
        outcome = ch.send(envelope(), 0.0, random.Random(0))
        assert outcome.status is SendStatus.DROPPED
        assert ch.counters.stale == 1
        assert len(ch) == 0

    def test_unpolled_messages_age_out(self):
        ch = channel(delay_dist="constant:0.01", stale_timeout=0.05)
        ch.send(envelope(), 0.0, random.Random(0))
        assert ch.poll(0.2) == []  # due at 0.01, but 0.2 - 0.0 > stale_timeout
        assert ch.counters.stale == 1
        assert ch.counters.delivered == 0

    def test_reorder_adds_bounded_extra_delay(self):
        ch = channel(capacity=500, delay_dist="constant:0.001",
                     reorder_prob=1.0, reorder_span=0.05)
        rng = random.Random(5)
        deliver_ats = [
            ch.send(envelope(), 0.0, rng).deliver_at for _ in range(200)
        ]
        assert all(0.001 <= at <= 0.051 for at in deliver_ats)
        assert max(deliver_ats) > 0.01  # the jitter actually spreads things

    def test_conservation_under_mixed_faults(self):
        ch = channel(capacity=50, drop_prob=0.2, delay_dist="uniform:0:0.2",
                     stale_timeout=0.1)
        rng = random.Random(9)
        now = 0.0
        for i in range(500):
            ch.send(envelope(serial=i), now, rng)
            if i % 7 == 0:
                now += 0.03
                ch.poll(now)
        ch.poll(now + 10.0)
        assert ch.conservation_ok()
        c = ch.counters
        assert c.sent == c.delivered + c.dropped + c.stale
        assert c.delivered > 0 and c.dropped > 0 and c.stale > 0


class TestTrace:
    def test_lifecycle_lines(self):
        ch = channel()
        ch.send(envelope(request=4, round=9), 0.0, random.Random(0))
        ch.poll(1.0)
        text = ch.format_trace()
        lines = text.splitlines()
        assert len(lines) == 2
        assert lines[0].split("\t") == [
            "0.000000", "test", "SENT", "DRAFT_QUERY", "req=4", "round=9"
        ]
        assert "DELIVERED" in lines[1]
        assert text.endswith("\n")

    def test_trace_can_be_disabled(self):
        ch = channel(keep_trace=False)
        ch.send(envelope(), 0.0, random.Random(0))
        ch.poll(1.0)
        assert ch.trace == []
        assert ch.format_trace() == ""


class TestLiveness:
    def test_never_ticked_is_dead(self):
        reg = LivenessRegistry(expiry=0.15)
        assert not reg.is_alive("draft", 0.0)

    def test_alive_within_expiry_then_dead(self):
        reg = LivenessRegistry(expiry=0.15)
        reg.heartbeat_tick("draft", 1.0)
        assert reg.is_alive("draft", 1.15)
        assert not reg.is_alive("draft", 1.16)
        reg.heartbeat_tick("draft", 1.2)
        assert reg.is_alive("draft", 1.3)

    def test_endpoints_tracked_independently(self):
        reg = LivenessRegistry(expiry=0.1)
        reg.heartbeat_tick("draft", 0.0)
        assert not reg.is_alive("target", 0.0)

    def test_expiry_validated(self):
        with pytest.raises(ValueError):
            LivenessRegistry(expiry=0.0)
