"""Synthetic token oracle: stream determinism, proposer calibration, and
greedy-verification semantics.
"""

import random

import pytest
import scipy.stats

from specsim.core import PAD
from specsim.oracle import TokenStreamOracle, VerifyOutcome


class TestReferenceStreams:
    def test_frozen_values(self):
        # Pinned outputs: any change to the mixing scheme is a breaking
        # change to every recorded run and must show up here.
        assert TokenStreamOracle(seed=0).reference_prefix(0, 5) == [
            10749833864783185041,
            6642847197101178724,
            7036274279819827101,
            16062445039872724754,
            3348389343249159457,
        ]
        assert TokenStreamOracle(seed=7).reference_prefix(0, 3) == [
            4115426874723844861,
            1025521192397269246,
            773058809683055316,
        ]
        assert TokenStreamOracle(seed=0).prompt_tokens(0, 3) == [
            7741979081032095418,
            5817724158014739623,
            2388804026663013211,
        ]

    def test_deterministic_and_stateless(self):
        oracle = TokenStreamOracle(seed=3)
        first = oracle.reference_prefix(12, 64)
        assert oracle.reference_prefix(12, 64) == first
        assert TokenStreamOracle(seed=3).reference_prefix(12, 64) == first
        assert [oracle.reference_token(12, i) for i in range(64)] == first

    def test_streams_differ_by_seed_request_and_kind(self):
        a = TokenStreamOracle(seed=0)
        b = TokenStreamOracle(seed=1)
        assert a.reference_prefix(0, 16) != b.reference_prefix(0, 16)
        assert a.reference_prefix(0, 16) != a.reference_prefix(1, 16)
        assert a.reference_prefix(0, 16) != a.prompt_tokens(0, 16)

    def test_pad_never_emitted(self):
        oracle = TokenStreamOracle(seed=0)
        for request in range(8):
            assert PAD not in oracle.reference_prefix(request, 512)
            assert PAD not in oracle.prompt_tokens(request, 512)

    def test_negative_position_rejected(self):
        with pytest.raises(ValueError):
            TokenStreamOracle(seed=0).reference_token(0, -1)


class TestDraftProposer:
    def test_match_rate_calibrated(self):
        oracle = TokenStreamOracle(seed=0)
        rng = random.Random(42)
        n = 100_000
        segment = oracle.draft_propose(5, 0, n, 0.8, rng)
        reference = oracle.reference_prefix(5, n)
        matches = sum(1 for a, b in zip(segment.tokens, reference) if a == b)
        assert matches / n == pytest.approx(0.8, abs=0.005)

    def test_proposals_never_contain_pad(self):
        # A proposer miss must be a definite disagreement, never the PAD
        # sentinel (PAD in a candidate means "inert slot", not "wrong guess").
        oracle = TokenStreamOracle(seed=0)
        segment = oracle.draft_propose(2, 0, 2000, 0.5, random.Random(9))
        assert all(t != PAD for t in segment.tokens)

    def test_alpha_extremes(self):
        oracle = TokenStreamOracle(seed=0)
        rng = random.Random(1)
        always = oracle.draft_propose(4, 10, 256, 1.0, rng)
        assert list(always.tokens) == [
            oracle.reference_token(4, 10 + i) for i in range(256)
        ]
        never = oracle.draft_propose(4, 10, 256, 0.0, rng)
        assert all(
            t != oracle.reference_token(4, 10 + i) for i, t in enumerate(never.tokens)
        )

    def test_segment_anchoring(self):
        oracle = TokenStreamOracle(seed=0)
        segment = oracle.draft_propose(3, 17, 4, 1.0, random.Random(0), origin_round=9)
        assert segment.start_position == 17
        assert segment.end_position == 21
        assert segment.origin_round == 9
        assert len(segment) == 4

    def test_count_validation(self):
        with pytest.raises(ValueError):
            TokenStreamOracle(seed=0).draft_propose(0, 0, -1, 0.8, random.Random(0))

    def test_accepted_length_is_truncated_geometric(self):
        """Accepted-count frequencies over fresh gamma-token proposals follow
        P(k) = alpha^k (1-alpha) for k < gamma and P(gamma) = alpha^gamma."""
        oracle = TokenStreamOracle(seed=0)
        rng = random.Random(1)
        alpha, gamma, n = 0.8, 4, 100_000
        observed = [0] * (gamma + 1)
        for _ in range(n):
            segment = oracle.draft_propose(9, 0, gamma, alpha, rng)
            outcome = oracle.verify(9, 0, segment.tokens)
            observed[outcome.accepted_count] += 1
        expected = [n * (alpha**k) * (1 - alpha) for k in range(gamma)]
        expected.append(n * alpha**gamma)
        stat = scipy.stats.chisquare(observed, expected)
        assert stat.pvalue > 0.01


class TestVerify:
    def test_full_acceptance_with_bonus(self):
        oracle = TokenStreamOracle(seed=0)
        candidate = [oracle.reference_token(1, i) for i in range(4)]
        outcome = oracle.verify(1, 0, candidate)
        assert outcome == VerifyOutcome(
            accepted_count=4,
            committed=tuple(oracle.reference_prefix(1, 5)),
            bonus=oracle.reference_token(1, 4),
            new_position=5,
        )

    def test_prefix_acceptance_stops_at_first_miss(self):
        oracle = TokenStreamOracle(seed=0)
        candidate = [
            oracle.reference_token(1, 0),
            oracle.reference_token(1, 1) ^ 1,  # corrupted
            oracle.reference_token(1, 2),      # correct but unreachable
        ]
        outcome = oracle.verify(1, 0, candidate)
        assert outcome.accepted_count == 1
        assert outcome.bonus == oracle.reference_token(1, 1)
        assert outcome.new_position == 2
        assert list(outcome.committed) == oracle.reference_prefix(1, 2)

    def test_all_rejected_still_commits_bonus(self):
        oracle = TokenStreamOracle(seed=0)
        outcome = oracle.verify(6, 0, (12345,))
        assert outcome.accepted_count == 0
        assert outcome.committed == (oracle.reference_token(6, 0),)
        assert outcome.new_position == 1

    def test_pad_never_matches(self):
        oracle = TokenStreamOracle(seed=0)
        outcome = oracle.verify(0, 0, (PAD, PAD, PAD))
        assert outcome.accepted_count == 0

    def test_offset_anchor(self):
        oracle = TokenStreamOracle(seed=0)
        candidate = [oracle.reference_token(2, 10 + i) for i in range(3)]
        outcome = oracle.verify(2, 10, candidate)
        assert outcome.accepted_count == 3
        assert outcome.new_position == 14
        assert list(outcome.committed) == [
            oracle.reference_token(2, 10 + i) for i in range(4)
        ]

    def test_committed_is_contiguous_reference_slice(self):
        oracle = TokenStreamOracle(seed=5)
        rng = random.Random(8)
        for _ in range(200):
            start = rng.randrange(0, 50)
            segment = oracle.draft_propose(7, start, rng.randrange(1, 6), 0.6, rng)
            outcome = oracle.verify(7, start, segment.tokens)
            expected = [
                oracle.reference_token(7, start + i)
                for i in range(outcome.accepted_count + 1)
            ]
            assert list(outcome.committed) == expected
            assert outcome.new_position == start + len(outcome.committed)
