import json

import numpy as np
import pytest

from backupsched import evaluation, oracle, schemes
from backupsched.errors import InvalidArgument


def test_canonical_sequences_k3():
    assert list(oracle.canonical_sequences(3, 3)) == [
        (0,), (1,), (0, 1), (0, 0, 1), (0, 1, 1),
    ]


def test_primitive():
    assert oracle.is_primitive((0, 1))
    assert not oracle.is_primitive((0, 1, 0, 1))
    assert not oracle.is_primitive((2, 2))


def test_config_validation():
    for kw in (dict(k=1), dict(k=3, max_period=0), dict(k=3, objective="median"), dict(k=3, grid=0.0)):
        with pytest.raises(InvalidArgument):
            oracle.SearchConfig(**kw)


def test_k2_closed_form():
    # steady state (1/D, 1 - 1/D): max is minimized at D = 2
    steps, value = oracle.optimize_steps(2, (0,))
    assert steps[0] == pytest.approx(2.0, abs=0.01)
    assert value == pytest.approx(1.5, abs=0.005)


def test_k3_golden_ratio():
    steps, _ = oracle.optimize_steps(3, (0,))
    assert steps[0] == pytest.approx(schemes.GOLDEN_RATIO, abs=0.005)


def test_optimize_rejects_bad_devices():
    with pytest.raises(InvalidArgument):
        oracle.optimize_steps(3, (2,))
    with pytest.raises(InvalidArgument):
        oracle.optimize_steps(3, ())


def test_objective_never_beats_floor():
    for k in (2, 3, 4, 5):
        res = oracle.search(oracle.SearchConfig(k, 2, grid=0.1, refine_rounds=1))
        assert res.value >= (k + 1) / k - 1e-9


def test_claimed_objective_replays_through_eval():
    res = oracle.search(oracle.SearchConfig(4, 2, oracle.MAX_Q))
    rep = evaluation.evaluate(schemes.PeriodicPolicy(res.best), 4)
    assert rep.max_q == pytest.approx(res.value, abs=0.002)
    top = res.leaderboard[0]
    assert rep.mean_q_steady == pytest.approx(top.mean_q, abs=0.002)


def test_larger_period_never_worse():
    small = oracle.search(oracle.SearchConfig(4, 1))
    big = oracle.search(oracle.SearchConfig(4, 2))
    assert big.value <= small.value + 1e-12


def test_finer_grid_never_worse():
    coarse = oracle.search(oracle.SearchConfig(3, 1, refine_rounds=0, grid=0.1))
    fine = oracle.search(oracle.SearchConfig(3, 1, refine_rounds=3, grid=0.1))
    assert fine.value <= coarse.value + 1e-12


def test_ties_prefer_short_then_lexicographic():
    # (0) and (0, 1) share the golden-ratio optimum for k=3
    cfg = oracle.SearchConfig(3, 2)
    res = oracle.search(cfg)
    assert res.best.devices == (0,)
    rest = [c.objective for c in res.leaderboard[1:]]
    assert rest == sorted(rest)
    assert res.value <= min(rest) + cfg.resolution


def test_k4_max_q_prefers_alternating():
    res = oracle.search(oracle.SearchConfig(4, 2, oracle.MAX_Q))
    assert res.best.devices == (0, 2)


def test_json_leaderboard():
    res = oracle.search(oracle.SearchConfig(3, 1))
    data = json.loads(res.to_json())
    assert data["best"]["devices"] == [0]
    assert {"devices", "steps", "objective", "mean_q", "max_q"} <= set(data["leaderboard"][0])


def test_cycle_metrics_golden():
    mean_q, max_q = oracle.cycle_metrics(3, (0,), (schemes.GOLDEN_RATIO,))
    assert mean_q == pytest.approx(4 / schemes.GOLDEN_RATIO**2, abs=1e-9)
    assert max_q == mean_q


def test_search_is_deterministic():
    a = oracle.search(oracle.SearchConfig(4, 2)).to_json()
    b = oracle.search(oracle.SearchConfig(4, 2)).to_json()
    assert a == b
    assert np.isfinite(json.loads(a)["best"]["value"])
