"""Coupling of double hashing with modified random hashing.

Each step either throws a double-hashing ball into both the main table and
a shadow table (probability 1/(1+delta)), or throws a correction ball into
the main table alone, chosen so that the main table's next ball lands in
ordered position j with probability exactly p_j. The shadow table then holds
a pure double-hashing run that the main table dominates.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import (ConsistencyError, SimConfig, Streams, TableState, dominates,
                   ordered_view, winner_index)
from .eta import EtaVector, eta_exact, exceeds
from .placement import (ChoiceSet, OrderedDistribution, double_hash_choices, draw_hash_pair,
                        ordered_distribution)

MIXTURE_TOL = 1e-12
Q_NEG_TOL = 1e-12
Q_SUM_TOL = 1e-9


def default_delta(n: int) -> float:
    return float(n) ** -0.01


@dataclass
class CouplingConfig:
    base: SimConfig
    delta: Optional[float] = None
    total_balls: Optional[int] = None
    # Keep going past a bound violation instead of stopping (limit experiments only).
    force_pass: bool = False
    keep_trace: bool = True

    def __post_init__(self):
        if self.delta is None:
            self.delta = default_delta(self.base.n)
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.total_balls is None:
            self.total_balls = math.floor((1 + 2 * self.delta) * self.base.m)
        if self.total_balls < 1:
            raise ValueError("total_balls must be at least 1")


@dataclass
class CouplingStep:
    step_index: int
    branch: Optional[str]  # "double", "correction", or None on failure
    failed: bool
    chosen_bin: Optional[int]
    eta_snapshot_hash: str
    pair: Optional[tuple] = None  # (f, g) drawn at this step


@dataclass
class CouplingResult:
    main_table: TableState
    shadow_table: TableState
    double_count: int = 0
    extra_count: int = 0
    failed_at: Optional[int] = None
    trace: list = field(default_factory=list)
    bound_violations: int = 0
    max_mixture_error: float = 0.0
    min_q: float = math.inf
    max_q_sum_error: float = 0.0
    dominance_held: bool = True

    @property
    def steps_completed(self) -> int:
        return self.double_count + self.extra_count

    def summary(self) -> dict:
        return {
            "double_count": self.double_count,
            "extra_count": self.extra_count,
            "steps_completed": self.steps_completed,
            "failed_at": self.failed_at,
            "bound_violations": self.bound_violations,
            "max_mixture_error": self.max_mixture_error,
            "min_q": None if math.isinf(self.min_q) else self.min_q,
            "max_q_sum_error": self.max_q_sum_error,
            "dominance_held": self.dominance_held,
            "main_max_load": int(self.main_table.loads.max()),
            "shadow_max_load": int(self.shadow_table.loads.max()),
        }

    def write_trace(self, fh) -> None:
        for st in self.trace:
            fh.write(json.dumps(asdict(st), sort_keys=True) + "\n")


def correction_distribution(p: OrderedDistribution, eta: EtaVector, view, delta: float,
                            check: bool = True) -> np.ndarray:
    """q_j = ((1 + delta) p_j - eta(order[j])) / delta over ordered positions."""
    eta_pos = eta.at_positions(view) / eta.n_pairs
    q = ((1.0 + delta) * p.p - eta_pos) / delta
    if check:
        if exceeds(eta.at_positions(view), eta.n_pairs, p.p, delta).any():
            raise ValueError("eta exceeds (1 + delta) p_j somewhere; no valid correction exists")
        if q.min() < -Q_NEG_TOL or abs(q.sum() - 1.0) > Q_SUM_TOL:
            raise ConsistencyError(f"bad correction distribution: min {q.min()}, sum {q.sum()}")
    return q


def mixture_error(p: OrderedDistribution, eta: EtaVector, view, q: np.ndarray, delta: float) -> float:
    eta_pos = eta.at_positions(view) / eta.n_pairs
    mix = eta_pos / (1.0 + delta) + q * delta / (1.0 + delta)
    return float(np.abs(mix - p.p).max())


def sample_position(q: np.ndarray, u: float) -> int:
    """Inverse-CDF draw of a 0-based ordered position from weights ``q``.

    A draw landing exactly on a boundary goes to the upper interval, so
    zero-weight positions are never returned.
    """
    cdf = np.cumsum(np.maximum(q, 0.0))
    j = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(j, len(q) - 1)


def run_coupling(cc: CouplingConfig, on_step=None) -> CouplingResult:
    """Run the coupled process for ``cc.total_balls`` steps or until the bound check fails.

    ``on_step(step, view, eta, q, main, shadow)`` is called after every
    completed step; tests use it to re-verify invariants independently.
    """
    cfg = cc.base
    n, d, delta = cfg.n, cfg.d, cc.delta
    streams = Streams.from_seed(cfg.seed)
    p = ordered_distribution(n, d)
    res = CouplingResult(TableState.empty(n), TableState.empty(n))
    main, shadow = res.main_table, res.shadow_table
    p_double = 1.0 / (1.0 + delta)

    for step in range(cc.total_balls):
        view = ordered_view(main, streams.tiebreak)
        eta = eta_exact(main, view, d)
        bad = exceeds(eta.at_positions(view), eta.n_pairs, p.p, delta)
        if bad.any():
            res.bound_violations += 1
            if not cc.force_pass:
                res.failed_at = step
                if cc.keep_trace:
                    res.trace.append(CouplingStep(step, None, True, None, eta.digest()))
                break
            q = correction_distribution(p, eta, view, delta, check=False)
            q = np.maximum(q, 0.0)
            q /= q.sum()
        else:
            q = correction_distribution(p, eta, view, delta, check=False)
            res.min_q = min(res.min_q, float(q.min()))
            res.max_q_sum_error = max(res.max_q_sum_error, abs(float(q.sum()) - 1.0))
            if q.min() < -Q_NEG_TOL or abs(q.sum() - 1.0) > Q_SUM_TOL:
                raise ConsistencyError(f"step {step}: correction distribution invalid "
                                       f"(min {q.min()}, sum {q.sum()})")
            err = mixture_error(p, eta, view, q, delta)
            res.max_mixture_error = max(res.max_mixture_error, err)
            if err > MIXTURE_TOL:
                raise ConsistencyError(f"step {step}: mixture identity off by {err}")

        # pair first, coin second: accepted pairs stay i.i.d. uniform
        pair = draw_hash_pair(n, streams.choices)
        if streams.branch.uniform() < p_double:
            choices = double_hash_choices(pair, d, n).as_array()
            ranks = view.rank[choices]
            b = int(choices[winner_index(main.loads[choices], ranks)])
            s = int(choices[winner_index(shadow.loads[choices], ranks)])
            main.place(b)
            shadow.place(s)
            res.double_count += 1
            branch = "double"
        else:
            j = sample_position(q, streams.correction.uniform())
            b = view.bin_at(j + 1)
            main.place(b)
            res.extra_count += 1
            branch = "correction"

        if not dominates(main, shadow):
            res.dominance_held = False
            raise ConsistencyError(f"step {step}: main table no longer dominates shadow")
        if cc.keep_trace:
            res.trace.append(CouplingStep(step, branch, False, b, eta.digest(), (pair.f, pair.g)))
        if on_step is not None:
            on_step(step, view, eta, q, main, shadow)
    return res


def domination_step_property(b: TableState, a: TableState, choices: ChoiceSet, ranks) -> bool:
    """Insert one ball with the same choices and ranks into copies of b and a.

    ``ranks`` holds a tie-break priority per bin. Returns whether the copy of
    b still dominates the copy of a; the inputs are left untouched.
    """
    if not dominates(b, a):
        raise ValueError("precondition failed: b does not dominate a")
    cand = choices.as_array()
    r = np.asarray(ranks)[cand]
    b2, a2 = b.loads.copy(), a.loads.copy()
    b2[cand[winner_index(b2[cand], r)]] += 1
    a2[cand[winner_index(a2[cand], r)]] += 1
    return bool((b2 >= a2).all())


def extra_ball_tally(result: CouplingResult, m: int, delta: float) -> dict:
    if result.failed_at is not None:
        raise ValueError("run failed; no tally for an incomplete run")
    steps = result.steps_completed
    return {
        "double_count": result.double_count,
        "extra_count": result.extra_count,
        "steps": steps,
        "m": m,
        "double_at_least_m": result.double_count >= m,
        "extra_fraction": result.extra_count / steps if steps else 0.0,
        "expected_extra_fraction": delta / (1.0 + delta),
    }
