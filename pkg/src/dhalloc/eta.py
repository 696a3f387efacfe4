"""Exact hash-pair enumeration: how many (f, g) pairs send the next ball to each bin."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import (ConsistencyError, RngStream, SimConfig, Streams, TableState, derive_seed,
                   ordered_view, winner_index)
from .placement import ordered_distribution, place_modified, random_d_position_probs

# Relative slack when testing eta > (1 + delta) * p_j in floating point.
COMPARE_RTOL = 1e-15


@dataclass(frozen=True)
class EtaVector:
    counts: np.ndarray
    n_pairs: int

    @property
    def eta(self) -> np.ndarray:
        return self.counts / self.n_pairs

    def at_positions(self, view) -> np.ndarray:
        """Counts reindexed by ordered position (entry j-1 is position j)."""
        return self.counts[view.order]

    def digest(self) -> str:
        return hashlib.blake2b(np.ascontiguousarray(self.counts, dtype="<i8").tobytes(),
                               digest_size=8).hexdigest()


def _pair_choices(n: int, d: int) -> np.ndarray:
    f = np.arange(n, dtype=np.int64)[:, None, None]
    g = np.arange(1, n, dtype=np.int64)[None, :, None]
    k = np.arange(d, dtype=np.int64)[None, None, :]
    return (f + k * g) % n


def eta_exact(state: TableState, view, d: int) -> EtaVector:
    """Winner counts over all n(n-1) hash pairs; O(n^2 d), meant for n up to ~1000."""
    n = state.n
    if n < 2:
        raise ValueError("need at least two bins to form a hash pair")
    if d > n:
        raise ValueError(f"d={d} exceeds n={n}")
    counts = _kernels.eta_counts(state.loads, np.asarray(view.rank, dtype=np.int64), d)
    total = n * (n - 1)
    if int(counts.sum()) != total:
        raise ConsistencyError(f"eta counts sum to {counts.sum()}, expected {total}")
    return EtaVector(counts, total)


def eta_exact_numpy(state: TableState, view, d: int) -> EtaVector:
    """Vectorised variant of eta_exact built on ``winner_index``; slower, kept as a cross-check."""
    n = state.n
    ch = _pair_choices(n, d)
    idx = winner_index(state.loads[ch], view.rank[ch])
    winners = np.take_along_axis(ch, idx[..., None], axis=-1).ravel()
    return EtaVector(np.bincount(winners, minlength=n).astype(np.int64), n * (n - 1))


def expected_eta_counts(n: int, d: int) -> np.ndarray:
    """E[eta_hat] at each ordered position when the ordering is a uniform permutation."""
    return random_d_position_probs(n, d) * n * (n - 1)


@dataclass
class EtaAudit:
    n: int
    d: int
    samples: int
    formula_mean: np.ndarray
    empirical_mean: np.ndarray
    stderr: np.ndarray

    def within(self, k: float = 3.0, atol: float = 1e-9) -> np.ndarray:
        return np.abs(self.empirical_mean - self.formula_mean) <= k * self.stderr + atol

    def rows(self):
        for j in range(self.n):
            yield (j + 1, float(self.formula_mean[j]), float(self.empirical_mean[j]),
                   float(self.stderr[j]))

    def to_dict(self) -> dict:
        return {
            "n": self.n, "d": self.d, "samples": self.samples,
            "columns": ["j", "formula_mean", "empirical_mean", "stderr"],
            "rows": [list(r) for r in self.rows()],
        }


def eta_expectation_audit(n: int, d: int, samples: int, rng: RngStream) -> EtaAudit:
    """Average eta_hat by ordered position over fresh rankings of an all-tied table."""
    state = TableState.empty(n)
    acc = np.zeros(n)
    acc2 = np.zeros(n)
    for _ in range(samples):
        view = ordered_view(state, rng)
        c = eta_exact(state, view, d).at_positions(view).astype(np.float64)
        acc += c
        acc2 += c * c
    mean = acc / samples
    if samples > 1:
        var = np.maximum(acc2 / samples - mean * mean, 0.0) * samples / (samples - 1)
        se = np.sqrt(var / samples)
    else:
        se = np.full(n, np.inf)
    return EtaAudit(n, d, samples, expected_eta_counts(n, d), mean, se)


def exceeds(counts_by_pos: np.ndarray, n_pairs: int, p: np.ndarray, delta: float) -> np.ndarray:
    """Boolean mask of ordered positions where eta > (1 + delta) * p_j."""
    return counts_by_pos > (1.0 + delta) * p * n_pairs * (1.0 + COMPARE_RTOL)


@dataclass
class FailureScan:
    n: int
    d: int
    delta: float
    trials: int
    cadence: int
    checkpoints: int = 0
    failed_checkpoints: int = 0
    # balls placed -> [checkpoints, checkpoints with a flagged bin]
    by_fill: dict = field(default_factory=dict)
    by_position: np.ndarray = None
    max_ratio: float = 0.0

    @property
    def failure_rate(self) -> float:
        return self.failed_checkpoints / self.checkpoints if self.checkpoints else 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.n, "d": self.d, "delta": self.delta, "trials": self.trials,
            "checkpoint_every": self.cadence, "checkpoints": self.checkpoints,
            "failed_checkpoints": self.failed_checkpoints, "failure_rate": self.failure_rate,
            "max_eta_over_p": self.max_ratio,
            "by_fill": [[k, v[0], v[1]] for k, v in sorted(self.by_fill.items())],
            "flags_by_position": [int(x) for x in self.by_position],
        }


def lemma4_failure_scan(cfg: SimConfig, delta: float, trials: int) -> FailureScan:
    """Measure how often some bin has eta(z) > (1 + delta) p_j along modified-random runs.

    A measurement only: nothing is asserted about the rate.
    """
    n, d = cfg.n, cfg.d
    cadence = 1 if n <= 211 else 10
    p = ordered_distribution(n, d).p
    n_pairs = n * (n - 1)
    scan = FailureScan(n, d, float(delta), trials, cadence, by_position=np.zeros(n, dtype=np.int64))
    for t in range(trials):
        seed = derive_seed(cfg.seed, t)
        streams = Streams.from_seed(seed)
        audit_rng = RngStream(seed, "audit")
        state = TableState.empty(n)
        for k in range(cfg.m + 1):
            if k % cadence == 0 or k == cfg.m:
                view = ordered_view(state, audit_rng)
                c = eta_exact(state, view, d).at_positions(view)
                bad = exceeds(c, n_pairs, p, delta)
                scan.checkpoints += 1
                slot = scan.by_fill.setdefault(k, [0, 0])
                slot[0] += 1
                if bad.any():
                    scan.failed_checkpoints += 1
                    slot[1] += 1
                    scan.by_position += bad
                scan.max_ratio = max(scan.max_ratio, float(np.max(c / (p * n_pairs))))
            if k < cfg.m:
                place_modified(state, cfg, streams)
    return scan
