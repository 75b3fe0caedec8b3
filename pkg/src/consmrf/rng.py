"""Deterministic 64-bit random streams.

Training draws come from explicit splitmix64 states rather than global RNGs so
that every relation worker owns an independent stream: results are then
identical no matter how relations are scheduled across threads. The jitted
stepper in :mod:`consmrf.kernels` uses the exact same recurrence; parity
between the two is covered by tests.
"""
from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Stream tags: one namespace per consumer of randomness, so adding a consumer
# never perturbs the draws of another.
STREAM_TRAIN = 1      # per-relation SGD sampling
STREAM_LOSS = 2       # per-relation loss estimation
STREAM_EVAL = 3       # per-(relation, subject) evaluation negatives
STREAM_PICK = 4       # relation interleaving for the shared/decoupled baselines
STREAM_FOLD = 5       # cross-validation resplits
STREAM_CURVE = 6      # optional per-round validation metrics


def _mix(x: int) -> int:
    x &= _MASK
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Stable seed derivation: fold integer keys into a base seed.

    Unlike ``hash()``, the result does not depend on interpreter state, so
    derived streams are reproducible across runs and machines.
    """
    state = _mix((seed + _GOLDEN) & _MASK)
    for k in keys:
        state = _mix(state ^ _mix((k + _GOLDEN) & _MASK))
    return state


class SplitMix64:
    """Minimal splitmix64 stream with the same semantics as the jitted kernels."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK

    @property
    def state(self) -> int:
        return self._state

    @state.setter
    def state(self, value: int) -> None:
        self._state = value & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return _mix(self._state)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo bias is negligible for n << 2^64."""
        return self.next_u64() % n
