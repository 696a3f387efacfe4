"""Batch trials: load-level fractions vs the fluid limit, strategy comparisons, max load."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, SimConfig, derive_seed
from .fluid import max_load_reference, reference_fractions
from .placement import run_process

log = logging.getLogger(__name__)


@dataclass
class LoadHistogram:
    counts_at_least: np.ndarray  # entry i = number of bins with load >= i
    max_load: int

    @classmethod
    def from_loads(cls, loads) -> "LoadHistogram":
        loads = np.asarray(loads)
        top = int(loads.max()) if len(loads) else 0
        exact = np.bincount(loads, minlength=top + 2)
        at_least = np.cumsum(exact[::-1])[::-1]
        return cls(at_least.astype(np.int64), top)

    def level(self, i: int) -> int:
        return int(self.counts_at_least[i]) if i < len(self.counts_at_least) else 0

    def padded(self, levels: int) -> np.ndarray:
        out = np.zeros(levels + 1, dtype=np.int64)
        k = min(levels + 1, len(self.counts_at_least))
        out[:k] = self.counts_at_least[:k]
        return out


def effective_d(cfg: SimConfig) -> int:
    return 1 if cfg.strategy == "single" else cfg.d


def _one_trial(cfg: SimConfig) -> LoadHistogram:
    return LoadHistogram.from_loads(run_process(cfg).loads)


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class TrialBatchReport:
    config: SimConfig
    trials: int
    seeds: list
    histograms: list
    levels: int
    mean_frac: np.ndarray
    std_frac: np.ndarray
    fluid: np.ndarray

    @property
    def max_loads(self) -> list:
        return [h.max_load for h in self.histograms]

    def stderr(self) -> np.ndarray:
        return self.std_frac / math.sqrt(self.trials)

    def fluid_gap(self) -> np.ndarray:
        """|mean X_i/n - x_i(T)| per level."""
        return np.abs(self.mean_frac - self.fluid)

    def rows(self):
        se = self.stderr()
        for i in range(self.levels + 1):
            yield [i, float(self.mean_frac[i]), float(self.std_frac[i]), float(se[i]),
                   float(self.fluid[i])]

    row_header = ["i", "mean_frac", "std_frac", "stderr", "fluid"]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "trials": self.trials,
            "trial_seeds": self.seeds,
            "levels": self.levels,
            "mean_frac": self.mean_frac.tolist(),
            "std_frac": self.std_frac.tolist(),
            "fluid": self.fluid.tolist(),
            "max_loads": self.max_loads,
            "counts_at_least": [h.counts_at_least.tolist() for h in self.histograms],
        }


def run_trials(cfg: SimConfig, trials: int, threads: int = 1,
               fluid_dt: float = 1e-4) -> TrialBatchReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seeds = [derive_seed(cfg.seed, t) for t in range(trials)]
    cfgs = [cfg.with_(seed=s) for s in seeds]
    log.info("running %d trials of %s", trials, cfg)
    hists = _map(_one_trial, cfgs, threads)
    levels = max(h.max_load for h in hists) + 1
    fr = np.array([h.padded(levels) for h in hists], dtype=np.float64) / cfg.n
    mean = fr.mean(axis=0)
    std = fr.std(axis=0, ddof=1) if trials > 1 else np.zeros(levels + 1)
    fluid = reference_fractions(effective_d(cfg), float(cfg.m) / cfg.n, levels, dt=fluid_dt)
    return TrialBatchReport(cfg, trials, seeds, hists, levels, mean, std, fluid)


@dataclass
class StrategyComparison:
    a: TrialBatchReport
    b: TrialBatchReport
    diff: np.ndarray
    stderr: np.ndarray

    row_header = ["i", "mean_frac_a", "mean_frac_b", "diff", "stderr"]

    def rows(self):
        for i in range(len(self.diff)):
            yield [i, float(self.a.mean_frac[i]) if i <= self.a.levels else 0.0,
                   float(self.b.mean_frac[i]) if i <= self.b.levels else 0.0,
                   float(self.diff[i]), float(self.stderr[i])]

    def median_max_loads(self) -> tuple:
        return float(np.median(self.a.max_loads)), float(np.median(self.b.max_loads))

    def to_dict(self) -> dict:
        ma, mb = self.median_max_loads()
        return {
            "a": self.a.to_dict(), "b": self.b.to_dict(),
            "diff": self.diff.tolist(), "stderr": self.stderr.tolist(),
            "max_load_median_a": ma, "max_load_median_b": mb,
        }


def _pad(x: np.ndarray, levels: int) -> np.ndarray:
    out = np.zeros(levels + 1)
    out[: len(x)] = x[: levels + 1]
    return out


def compare_strategies(cfg_a: SimConfig, cfg_b: SimConfig, trials: int,
                       threads: int = 1) -> StrategyComparison:
    if (cfg_a.n, cfg_a.d, cfg_a.m) != (cfg_b.n, cfg_b.d, cfg_b.m):
        raise ConfigError("compared configurations must share n, d and T")
    ra = run_trials(cfg_a, trials, threads)
    rb = run_trials(cfg_b, trials, threads)
    levels = max(ra.levels, rb.levels)
    diff = _pad(ra.mean_frac, levels) - _pad(rb.mean_frac, levels)
    se = np.sqrt(_pad(ra.stderr(), levels) ** 2 + _pad(rb.stderr(), levels) ** 2)
    return StrategyComparison(ra, rb, diff, se)


def log_beta_bound(i: int, d: int, n: int) -> float:
    if d < 2:
        raise ValueError("beta_bound needs d >= 2")
    if i < 6:
        raise ValueError("beta_bound is defined for i >= 6")
    p = float(d) ** (i - 6)
    return math.log(n) + (p - 1) / (d - 1) - p * math.log(2 * math.e)


def beta_bound(i: int, d: int, n: int) -> float:
    """Layered-induction ceiling on the number of bins with load >= i (i >= 6, d >= 2).

    Evaluated in log space; underflows to 0.0 for large i.
    """
    return math.exp(log_beta_bound(i, d, n))


@dataclass
class MaxLoadStudy:
    d: int
    T: float
    trials: int
    strategy: str
    cells: list  # one dict per n

    row_header = ["n", "reference", "median_max_load", "min_max_load", "max_max_load", "offset"]

    def rows(self):
        for c in self.cells:
            yield [c["n"], c["reference"], c["median_max_load"], min(c["max_loads"]),
                   max(c["max_loads"]), c["offset"]]

    def to_dict(self) -> dict:
        return {"d": self.d, "T": self.T, "trials": self.trials, "strategy": self.strategy,
                "cells": self.cells}


def max_load_study(n_list, d: int, T: float, trials: int, strategy: str = "double",
                   seed: int = 0, threads: int = 1) -> MaxLoadStudy:
    cells = []
    for n in n_list:
        cfg = SimConfig(n=n, d=d, T=T, seed=seed, strategy=strategy)
        rep = run_trials(cfg, trials, threads)
        ref = max_load_reference(n, effective_d(cfg))
        med = float(np.median(rep.max_loads))
        beta = []
        if effective_d(cfg) >= 2:
            mean_counts = rep.mean_frac * n
            for i in range(6, max(rep.levels, 6) + 1):
                obs = float(mean_counts[i]) if i <= rep.levels else 0.0
                beta.append({"i": i, "beta": beta_bound(i, d, n), "observed_mean_X": obs})
        cells.append({
            "n": n, "reference": ref, "max_loads": rep.max_loads,
            "median_max_load": med, "offset": med - ref,
            "offsets": [ml - ref for ml in rep.max_loads],
            "beta_overlay": beta, "trial_seeds": rep.seeds,
        })
    return MaxLoadStudy(d, T, trials, strategy, cells)
