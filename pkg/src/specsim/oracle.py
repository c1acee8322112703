"""Synthetic ground truth: reference token streams, a stochastic draft
proposer with per-token agreement probability alpha, and greedy
exact-prefix verification with one bonus token per round.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .core import PAD, TOKEN_MASK, RequestId, SpeculativeSegment, Token

# A proposer miss replaces the reference token with ref XOR this constant,
# guaranteeing a mismatch without disturbing the alpha calibration.
_DISAGREE = 0x5BD1E995

# Stream salts keep output and prompt tokens on independent streams.
_OUTPUT_STREAM = 0
_PROMPT_STREAM = 1


def _mix(seed: int, stream: int, request: int, position: int) -> int:
    """64-bit finalizer over a linear combination of the coordinates."""
    x = (
        seed * 0x9E3779B97F4A7C15
        + stream * 0xD6E8FEB86659FD93
        + request * 0xC2B2AE3D27D4EB4F
        + position * 0x165667B19E3779F9
        + 0x2545F4914F6CDD1D
    ) & TOKEN_MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & TOKEN_MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & TOKEN_MASK
    x ^= x >> 31
    return x


@dataclass(frozen=True)
class VerifyOutcome:
    accepted_count: int
    committed: tuple[Token, ...]
    bonus: Token
    new_position: int


@dataclass(frozen=True)
class TokenStreamOracle:
    """Deterministic per-request reference streams derived from one seed."""

    seed: int = 0

    def reference_token(self, request: RequestId, position: int) -> Token:
        if position < 0:
            raise ValueError(f"position must be >= 0, got {position}")
        token = _mix(self.seed, _OUTPUT_STREAM, request, position)
        return token if token != PAD else 0

    def reference_prefix(self, request: RequestId, length: int) -> list[Token]:
        return [self.reference_token(request, i) for i in range(length)]

    def prompt_token(self, request: RequestId, index: int) -> Token:
        token = _mix(self.seed, _PROMPT_STREAM, request, index)
        return token if token != PAD else 0

    def prompt_tokens(self, request: RequestId, length: int) -> list[Token]:
        return [self.prompt_token(request, i) for i in range(length)]

    def draft_propose(
        self,
        request: RequestId,
        start: int,
        count: int,
        alpha: float,
        rng: random.Random,
        origin_round: int = -1,
    ) -> SpeculativeSegment:
        """Propose `count` tokens from `start`; each matches the reference
        with probability alpha, otherwise is deliberately different."""
        if count < 0:
            raise ValueError(f"count must be >= 0, got {count}")
        tokens = []
        for j in range(count):
            ref = self.reference_token(request, start + j)
            tokens.append(ref if rng.random() < alpha else ref ^ _DISAGREE)
        return SpeculativeSegment(
            tokens=tuple(tokens), start_position=start, origin_round=origin_round
        )

    def verify(
        self, request: RequestId, start: int, candidate: tuple[Token, ...] | list[Token]
    ) -> VerifyOutcome:
        """Greedy verification: longest exact-match prefix plus one bonus.

        PAD never matches because the reference never emits it; the bonus is
        the reference token at the first unverified position, so the
        committed run is always a contiguous reference slice from `start`.
        """
        accepted = 0
        for token in candidate:
            if token != self.reference_token(request, start + accepted):
                break
            accepted += 1
        bonus = self.reference_token(request, start + accepted)
        committed = tuple(
            self.reference_token(request, start + i) for i in range(accepted)
        ) + (bonus,)
        return VerifyOutcome(
            accepted_count=accepted,
            committed=committed,
            bonus=bonus,
            new_position=start + accepted + 1,
        )
