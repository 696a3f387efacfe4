"""Shared types, seeded random streams, prime helpers and the bin ordering."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

STRATEGIES = ("single", "random", "double", "modified")

UINT64_MAX = (1 << 64) - 1

# Tie-break keys are drawn from [0, TIE_KEY_HIGH) so they fit a signed int64.
TIE_KEY_HIGH = (1 << 63) - 1

# Deterministic Miller-Rabin witnesses, valid for every n < 3.3e24.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


class ConfigError(ValueError):
    """Invalid user-supplied configuration (non-prime n, d > n, ...)."""


class ConsistencyError(RuntimeError):
    """An internal invariant that should be impossible to break was broken."""


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime_at_least(n: int) -> int:
    """Smallest prime >= n; raises OverflowError past the 64-bit range."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if n > UINT64_MAX:
        raise OverflowError(f"{n} does not fit in 64 bits")
    c = n
    while not is_prime(c):
        c += 1
        if c > UINT64_MAX:
            raise OverflowError(f"no 64-bit prime >= {n}")
    return c


def _as_fraction(T) -> Fraction:
    if isinstance(T, Fraction):
        return T
    if isinstance(T, float):
        # str() keeps the decimal the user typed: 0.1 -> 1/10, not the binary value
        return Fraction(str(T))
    return Fraction(T)


@dataclass(frozen=True)
class SimConfig:
    n: int
    d: int = 2
    T: float = 1.0
    seed: int = 0
    strategy: str = "random"

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if self.n > 1 and not is_prime(int(self.n)):
            hint = next_prime_at_least(int(self.n))
            raise ConfigError(f"n={self.n} is not prime; try n={hint}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.d > self.n:
            raise ConfigError(f"d={self.d} exceeds n={self.n}")
        if _as_fraction(self.T) < 0:
            raise ConfigError(f"T must be non-negative, got {self.T}")
        if not 0 <= self.seed <= UINT64_MAX:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; pick one of {', '.join(STRATEGIES)}")

    @property
    def m(self) -> int:
        """Number of balls, floor(T * n)."""
        return math.floor(_as_fraction(self.T) * self.n)

    def with_(self, **changes) -> "SimConfig":
        kw = dict(n=self.n, d=self.d, T=self.T, seed=self.seed, strategy=self.strategy)
        kw.update(changes)
        return SimConfig(**kw)

    def to_dict(self) -> dict:
        return {"n": int(self.n), "d": int(self.d), "T": float(self.T), "m": self.m,
                "seed": int(self.seed), "strategy": self.strategy}


@dataclass
class TableState:
    loads: np.ndarray
    balls_placed: int = 0

    @classmethod
    def empty(cls, n: int) -> "TableState":
        return cls(np.zeros(n, dtype=np.int64), 0)

    @classmethod
    def from_loads(cls, loads) -> "TableState":
        arr = np.array(loads, dtype=np.int64)
        if (arr < 0).any():
            raise ValueError("loads must be non-negative")
        return cls(arr, int(arr.sum()))

    @property
    def n(self) -> int:
        return len(self.loads)

    def place(self, b: int) -> None:
        self.loads[b] += 1
        self.balls_placed += 1

    def copy(self) -> "TableState":
        return TableState(self.loads.copy(), self.balls_placed)

    def check(self) -> None:
        if int(self.loads.sum()) != self.balls_placed:
            raise ConsistencyError("sum(loads) != balls_placed")


@dataclass(frozen=True)
class HashPair:
    f: int
    g: int

    def validate(self, n: int) -> None:
        if not (0 <= self.f < n and 1 <= self.g < n):
            raise ValueError(f"hash pair {self} out of range for n={n}")


@dataclass
class OrderedView:
    """Total order of bins at one step.

    ``rank[b]`` is the tie-break priority of bin ``b`` (higher wins ties).
    ``order[j - 1]`` is the bin at ordered position ``j``; position 1 is the
    heaviest bin with the lowest priority, position n the lightest with the
    highest priority.
    """

    rank: np.ndarray
    order: np.ndarray
    position: np.ndarray = field(init=False)

    def __post_init__(self):
        pos = np.empty(len(self.order), dtype=np.int64)
        pos[self.order] = np.arange(1, len(self.order) + 1)
        self.position = pos

    def bin_at(self, j: int) -> int:
        return int(self.order[j - 1])


def _label_words(label: str) -> list[int]:
    digest = hashlib.blake2b(label.encode(), digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def _seed_words(seed: int) -> list[int]:
    return [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]


def derive_seed(seed: int, index: int) -> int:
    """64-bit seed for trial ``index`` of a batch seeded with ``seed``."""
    h = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


class RngStream:
    """Deterministic generator keyed by (seed, label).

    Backed by numpy's PCG64, whose output is specified bit-for-bit across
    platforms. Different labels give statistically independent streams.
    """

    def __init__(self, seed: int, label: str):
        self.seed = int(seed)
        self.label = label
        ss = np.random.SeedSequence(_seed_words(self.seed) + _label_words(label))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={self.label!r})"

    def integer(self, low: int, high: int) -> int:
        return int(self.gen.integers(low, high))

    def uniform(self) -> float:
        return float(self.gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def tie_keys(self, size) -> np.ndarray:
        return self.gen.integers(0, TIE_KEY_HIGH, size=size, dtype=np.int64)


@dataclass
class Streams:
    """The labelled streams a run draws from.

    Keeping them separate means switching a feature on (say, the coupling
    branch coin) does not shift the draws seen by the others.
    """

    choices: RngStream
    tiebreak: RngStream
    branch: RngStream
    correction: RngStream

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        return cls(*(RngStream(seed, lab) for lab in ("choices", "tiebreak", "branch", "correction")))


def ordered_view(state: TableState, rng: RngStream) -> OrderedView:
    """Order bins by load (descending), breaking ties with a fresh uniform rank."""
    rank = rng.permutation(state.n)
    return ordered_view_from_rank(state, rank)


def ordered_view_from_rank(state: TableState, rank) -> OrderedView:
    rank = np.asarray(rank, dtype=np.int64)
    # lexsort: last key is primary -> load descending, then rank ascending
    order = np.lexsort((rank, -state.loads))
    return OrderedView(rank=rank, order=order)


def winner_index(loads: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    """Index along the last axis of the least-loaded candidate.

    Ties on load go to the candidate with the larger rank. This is the one
    comparison used everywhere a ball picks among its choices, both when it
    is placed and when hash pairs are enumerated.
    """
    loads = np.asarray(loads)
    if loads.ndim == 1:
        # scalar loop beats three ufunc calls for a handful of candidates
        ll, rr = loads.tolist(), np.asarray(ranks).tolist()
        best = 0
        for k in range(1, len(ll)):
            if ll[k] < ll[best] or (ll[k] == ll[best] and rr[k] > rr[best]):
                best = k
        return best
    ranks = np.asarray(ranks, dtype=np.int64)
    lo = loads.min(axis=-1, keepdims=True)
    masked = np.where(loads == lo, ranks, np.int64(-1))
    return masked.argmax(axis=-1)


def dominates(b: TableState, a: TableState) -> bool:
    if b.n != a.n:
        raise ValueError(f"cannot compare tables of size {b.n} and {a.n}")
    return bool((b.loads >= a.loads).all())
