import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from dhalloc.core import ConsistencyError, SimConfig, TableState, dominates, ordered_view_from_rank
from dhalloc.coupling import (CouplingConfig, correction_distribution, default_delta,
                              domination_step_property, extra_ball_tally, mixture_error,
                              run_coupling, sample_position)
from dhalloc.eta import EtaVector, eta_exact
from dhalloc.placement import ChoiceSet, OrderedDistribution, ordered_distribution

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden.json").read_text())


def test_config_defaults():
    cc = CouplingConfig(SimConfig(n=499, d=2, T=1))
    assert cc.delta == pytest.approx(499 ** -0.01)
    assert cc.total_balls == math.floor((1 + 2 * cc.delta) * 499)
    assert CouplingConfig(SimConfig(n=499), delta=0.05).total_balls == 548
    with pytest.raises(ValueError):
        CouplingConfig(SimConfig(n=7), delta=0)


@pytest.mark.parametrize("key", ["eta_n7_d2", "eta_n7_d3"])
def test_correction_golden(key):
    case = GOLDEN["eta"][key]
    s = TableState.from_loads(case["loads"])
    view = ordered_view_from_rank(s, case["rank"])
    p = ordered_distribution(7, case["d"])
    eta = eta_exact(s, view, case["d"])
    q = correction_distribution(p, eta, view, case["delta"])
    assert np.allclose(q, case["q"], rtol=0, atol=1e-14)
    assert abs(q.sum() - 1) <= 1e-9
    assert mixture_error(p, eta, view, q, case["delta"]) <= 1e-12


def test_correction_d1():
    n, delta = 11, 0.3
    s = TableState.from_loads([0, 2, 1, 0, 0, 3, 1, 0, 0, 0, 1])
    view = ordered_view_from_rank(s, np.arange(n)[::-1])
    p = ordered_distribution(n, 1)
    q = correction_distribution(p, eta_exact(s, view, 1), view, delta)
    assert np.allclose(q, ((1 + delta) * p.p - 1 / n) / delta, atol=1e-15)
    assert abs(q.sum() - 1) <= 1e-9


def test_correction_equals_p_when_eta_equals_p():
    n = 7
    p = ordered_distribution(n, 2)
    view = ordered_view_from_rank(TableState.empty(n), np.arange(n))
    fake = EtaVector(p.p * n * (n - 1), n * (n - 1))  # counts aligned with order == identity
    q = correction_distribution(p, fake, view, 0.25)
    assert np.allclose(q, p.p, atol=1e-15)


def test_correction_precondition():
    n = 11
    s = TableState.empty(n)
    view = ordered_view_from_rank(s, np.arange(n))
    with pytest.raises(ValueError):
        # d = 2 at n = 11 needs delta >= ~0.24 for the top position
        correction_distribution(ordered_distribution(n, 2), eta_exact(s, view, 2), view, 0.01)


def test_sample_position_inverse_cdf():
    q = np.array([0.0, 0.5, 0.0, 0.5])
    assert sample_position(q, 0.0) == 1
    assert sample_position(q, 0.49) == 1
    assert sample_position(q, 0.5) == 3
    assert sample_position(q, 0.999999) == 3


def test_huge_delta_never_fails():
    n = 13
    res = run_coupling(CouplingConfig(SimConfig(n=n, d=3, T=2, seed=1),
                                      delta=n ** 1.4 + 1, total_balls=60))
    assert res.failed_at is None
    assert res.steps_completed == 60


def test_coupling_invariants_checked_independently():
    checked = []

    def hook(step, view, eta, q, main, shadow):
        p = ordered_distribution(main.n, 3)
        eta_pos = eta.at_positions(view) / eta.n_pairs
        assert np.abs(eta_pos / 1.5 + q * 0.5 / 1.5 - p.p).max() <= 1e-12
        assert q.min() >= -1e-12 and abs(q.sum() - 1) <= 1e-9
        assert (main.loads >= shadow.loads).all()
        checked.append(step)

    cc = CouplingConfig(SimConfig(n=31, d=3, T=3, seed=9), delta=0.5)
    res = run_coupling(cc, on_step=hook)
    assert len(checked) == res.steps_completed
    assert res.double_count + res.extra_count == res.steps_completed
    assert res.shadow_table.balls_placed == res.double_count
    assert res.main_table.balls_placed == res.steps_completed
    assert dominates(res.main_table, res.shadow_table)


def test_failure_is_recorded_not_raised():
    res = run_coupling(CouplingConfig(SimConfig(n=11, d=2, T=1, seed=0), delta=0.01))
    assert res.failed_at == 0
    assert res.trace[-1].failed and res.trace[-1].chosen_bin is None
    with pytest.raises(ValueError):
        extra_ball_tally(res, 11, 0.01)


def test_trace_jsonl(tmp_path):
    res = run_coupling(CouplingConfig(SimConfig(n=13, d=2, T=1, seed=2), delta=0.5))
    path = tmp_path / "t.jsonl"
    with open(path, "w") as fh:
        res.write_trace(fh)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert len(lines) == res.steps_completed
    assert {x["branch"] for x in lines} <= {"double", "correction"}
    assert set(lines[0]) >= {"step_index", "branch", "failed", "chosen_bin", "eta_snapshot_hash"}


def test_tally_conservation():
    cc = CouplingConfig(SimConfig(n=31, d=2, T=1, seed=3), delta=0.5)
    res = run_coupling(cc)
    t = extra_ball_tally(res, 31, 0.5)
    assert t["double_count"] + t["extra_count"] == cc.total_balls == t["steps"]
    assert t["expected_extra_fraction"] == pytest.approx(1 / 3)


def test_tiny_delta_forced_pass_has_no_extras():
    cc = CouplingConfig(SimConfig(n=101, d=2, T=1, seed=4), delta=1e-9, force_pass=True)
    res = run_coupling(cc)
    assert res.failed_at is None
    assert res.extra_count == 0
    assert res.double_count == cc.total_balls
    assert (res.main_table.loads == res.shadow_table.loads).all()


def test_domination_examples():
    a = TableState.from_loads([0, 0])
    b = TableState.from_loads([1, 0])
    ch = ChoiceSet((0, 1))
    for ranks in ([0, 1], [1, 0]):
        assert domination_step_property(b, a, ch, ranks)
        assert domination_step_property(a, a, ch, ranks)
    assert b.loads.tolist() == [1, 0]  # inputs untouched
    with pytest.raises(ValueError):
        domination_step_property(a, b, ch, [0, 1])


def test_domination_property_randomized():
    gen = np.random.default_rng(77)
    for _ in range(5000):
        n = int(gen.integers(2, 10))
        a = gen.integers(0, 5, n)
        b = a + gen.integers(0, 3, n)
        d = int(gen.integers(1, n + 1))
        ch = ChoiceSet(tuple(gen.choice(n, d, replace=False).tolist()))
        assert domination_step_property(TableState.from_loads(b), TableState.from_loads(a),
                                        ch, gen.permutation(n))


def test_shadow_pairs_uniform():
    n = 11
    cc = CouplingConfig(SimConfig(n=n, d=2, T=1, seed=5), delta=0.5, total_balls=100_000)
    res = run_coupling(cc)
    assert res.failed_at is None
    cells = np.zeros((n, n - 1))
    for st in res.trace:
        if st.branch == "double":
            f, g = st.pair
            cells[f, g - 1] += 1
    assert cells.sum() == res.double_count >= 60_000
    assert stats.chisquare(cells.ravel()).pvalue > 0.001
    k = res.steps_completed
    assert abs(res.double_count / k - 1 / 1.5) <= 3 * math.sqrt((2 / 9) / k)


@pytest.mark.slow
def test_double_count_reaches_m_over_100_seeds():
    ok = 0
    for seed in range(100):
        cc = CouplingConfig(SimConfig(n=499, d=2, T=1, seed=seed), delta=0.05, keep_trace=False)
        res = run_coupling(cc)
        assert res.failed_at is None
        ok += extra_ball_tally(res, 499, 0.05)["double_at_least_m"]
    assert ok / 100 >= 0.99
