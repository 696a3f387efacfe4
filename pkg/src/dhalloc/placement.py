"""Placement strategies and the ordered-position distribution of modified random hashing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import (HashPair, OrderedView, RngStream, SimConfig, Streams, TableState,
                   winner_index)

# Draws are made in fixed-size chunks; the chunk size is part of the
# reproducibility contract, do not change it without bumping schema_version.
CHUNK = 1 << 16


@dataclass(frozen=True)
class ChoiceSet:
    bins: tuple

    def __post_init__(self):
        if len(set(self.bins)) != len(self.bins):
            raise ValueError(f"choices must be distinct, got {self.bins}")

    def __len__(self):
        return len(self.bins)

    def __iter__(self):
        return iter(self.bins)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bins, dtype=np.int64)


@dataclass(frozen=True)
class PlacementOutcome:
    bin: int
    branch: str  # "d-choice" or "uniform-single"
    choices: Optional[ChoiceSet] = None


@dataclass(frozen=True)
class OrderedDistribution:
    p: np.ndarray

    def __getitem__(self, j: int) -> float:
        """p_j for 1-based ordered position j."""
        return float(self.p[j - 1])

    def __len__(self):
        return len(self.p)


def uniform_branch_prob(n: int) -> float:
    return float(n) ** -0.4


def double_hash_choices(pair: HashPair, d: int, n: int) -> ChoiceSet:
    return ChoiceSet(tuple((pair.f + k * pair.g) % n for k in range(d)))


def place_least_loaded(state: TableState, choices: ChoiceSet, tiebreak: RngStream,
                       ranks=None) -> int:
    """Put one ball in the least loaded of ``choices`` and return its bin.

    Without ``ranks`` the tie-break priorities of the candidates are fresh
    i.i.d. keys from ``tiebreak`` (same law as a uniform permutation
    restricted to the candidates). Pass ``ranks`` (one per choice) to reuse
    the priorities of a full ordering instead.
    """
    cand = choices.as_array()
    if ranks is None:
        ranks = tiebreak.tie_keys(len(cand))
    b = int(cand[winner_index(state.loads[cand], ranks)])
    state.place(b)
    return b


def place_with_view(state: TableState, choices: ChoiceSet, view: OrderedView) -> int:
    """Full-permutation path: ties resolved by the ranks in ``view``."""
    cand = choices.as_array()
    return place_least_loaded(state, choices, None, ranks=view.rank[cand])


def sample_distinct(n: int, d: int, rng: RngStream) -> ChoiceSet:
    """d distinct bins, uniform over ordered d-tuples (sparse partial Fisher-Yates)."""
    swapped: dict[int, int] = {}
    out = []
    for k in range(d):
        j = rng.integer(k, n)
        vj = swapped.get(j, j)
        swapped[j] = swapped.get(k, k)
        out.append(vj)
    return ChoiceSet(tuple(out))


def _place(state, choices, rng: Streams, view):
    if view is None:
        return place_least_loaded(state, choices, rng.tiebreak)
    return place_with_view(state, choices, view)


# The single-ball placers below break ties with lazily drawn keys unless a
# full OrderedView is passed, in which case its ranks are used.

def place_random_d(state: TableState, cfg: SimConfig, rng: Streams,
                   view: Optional[OrderedView] = None) -> PlacementOutcome:
    choices = sample_distinct(state.n, cfg.d, rng.choices)
    return PlacementOutcome(_place(state, choices, rng, view), "d-choice", choices)


def draw_hash_pair(n: int, rng: RngStream) -> HashPair:
    f = rng.integer(0, n)
    g = rng.integer(1, n) if n > 1 else 1
    return HashPair(f, g)


def place_double(state: TableState, cfg: SimConfig, rng: Streams,
                 view: Optional[OrderedView] = None,
                 pair: Optional[HashPair] = None) -> PlacementOutcome:
    if pair is None:
        pair = draw_hash_pair(state.n, rng.choices)
    pair.validate(state.n)
    choices = double_hash_choices(pair, cfg.d, state.n)
    return PlacementOutcome(_place(state, choices, rng, view), "d-choice", choices)


def place_modified(state: TableState, cfg: SimConfig, rng: Streams,
                   view: Optional[OrderedView] = None) -> PlacementOutcome:
    if rng.branch.uniform() < uniform_branch_prob(state.n):
        b = rng.choices.integer(0, state.n)
        state.place(b)
        return PlacementOutcome(b, "uniform-single")
    return place_random_d(state, cfg, rng, view)


def place_single(state: TableState, cfg: SimConfig, rng: Streams,
                 view: Optional[OrderedView] = None) -> PlacementOutcome:
    b = rng.choices.integer(0, state.n)
    state.place(b)
    return PlacementOutcome(b, "uniform-single")


PLACERS = {
    "single": place_single,
    "random": place_random_d,
    "double": place_double,
    "modified": place_modified,
}


def random_d_position_probs(n: int, d: int) -> np.ndarray:
    """Probability that ordered position j (1..n) wins under plain d-choice hashing."""
    j = np.arange(1, n + 1, dtype=np.float64)
    ratio = np.ones(n)
    for k in range(1, d):
        ratio *= (j - k) / (n - k)
    return np.maximum(ratio, 0.0) * (d / n)


def ordered_distribution(n: int, d: int) -> OrderedDistribution:
    if d > n:
        raise ValueError(f"d={d} exceeds n={n}")
    eps = uniform_branch_prob(n)
    p = (1.0 - eps) * random_d_position_probs(n, d) + float(n) ** -1.4
    return OrderedDistribution(p)


def run_process(cfg: SimConfig) -> TableState:
    """Throw floor(T*n) balls with the configured strategy into an empty table."""
    n, d, m = cfg.n, cfg.d, cfg.m
    streams = Streams.from_seed(cfg.seed)
    loads = np.zeros(n, dtype=np.int64)
    perm = np.arange(n, dtype=np.int64)
    highs = n - np.arange(d, dtype=np.int64)
    eps = uniform_branch_prob(n)
    done = 0
    while done < m:
        b = min(CHUNK, m - done)
        if cfg.strategy == "single":
            bins = streams.choices.gen.integers(0, n, size=b)
            loads += np.bincount(bins, minlength=n)
        elif cfg.strategy == "double":
            f = streams.choices.gen.integers(0, n, size=b)
            g = streams.choices.gen.integers(1, n, size=b) if n > 1 else np.ones(b, dtype=np.int64)
            keys = streams.tiebreak.tie_keys((b, d))
            _kernels.place_double_batch(loads, f, g, keys)
        else:
            offsets = streams.choices.gen.integers(0, highs, size=(b, d))
            keys = streams.tiebreak.tie_keys((b, d))
            if cfg.strategy == "random":
                _kernels.place_random_batch(loads, perm, offsets, keys)
            else:
                single = streams.choices.gen.integers(0, n, size=b)
                coin = streams.branch.gen.random(b) < eps
                _kernels.place_modified_batch(loads, perm, offsets, keys, coin, single)
        done += b
    state = TableState(loads, m)
    state.check()
    return state


__all__ = [
    "ChoiceSet", "PlacementOutcome", "OrderedDistribution", "double_hash_choices",
    "place_least_loaded", "place_with_view", "place_random_d", "place_double",
    "place_modified", "place_single", "ordered_distribution", "random_d_position_probs",
    "run_process", "sample_distinct", "draw_hash_pair", "uniform_branch_prob",
]
