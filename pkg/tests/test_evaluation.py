import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backupsched import env, evaluation, oracle, schemes
from backupsched.errors import InvalidArgument


def absolute_time_run(k, step, n):
    """Round-robin by hand on absolute times; returns per-step (reward, q)."""
    times = [(i + 1) / k for i in range(k)]
    out = []
    for _ in range(n):
        t = times[-1] * step
        times = times[1:] + [t]
        gaps = [b - a for a, b in zip([0.0] + times[:-1], times)]
        m = max(gaps) / t
        out.append((-5 + 10 / (k - 1) * (1 / m - 1), (k + 1) * m))
    return out


# Golden-ratio k=3 means over 250 steps from the uniform start, computed by
# absolute_time_run and frozen here.
GOLDEN_MEAN_REWARD = 3.0863502836369734
GOLDEN_MEAN_Q = 1.5283449513670844


def test_golden_oracle_values_are_frozen():
    rows = absolute_time_run(3, schemes.GOLDEN_RATIO, 250)
    assert np.mean([r for r, _ in rows]) == pytest.approx(GOLDEN_MEAN_REWARD, abs=1e-12)
    assert np.mean([q for _, q in rows]) == pytest.approx(GOLDEN_MEAN_Q, abs=1e-12)


def test_golden_report():
    rep = evaluation.evaluate(schemes.PeriodicPolicy(schemes.golden()), 3)
    assert rep.mean_reward == pytest.approx(GOLDEN_MEAN_REWARD, abs=1e-9)
    assert rep.mean_q == pytest.approx(GOLDEN_MEAN_Q, abs=1e-9)
    assert rep.max_q == pytest.approx(4 / schemes.GOLDEN_RATIO**2, abs=1e-9)
    assert rep.mean_step == pytest.approx(schemes.GOLDEN_RATIO, abs=1e-12)
    assert rep.period == 1 and rep.sequence == [0]


def test_k2_round_robin_report():
    rep = evaluation.evaluate(schemes.PeriodicPolicy(schemes.round_robin(2, 2.0)), 2)
    assert (rep.mean_reward, rep.mean_q, rep.max_q, rep.mean_step) == pytest.approx((5.0, 1.5, 1.5, 2.0), abs=1e-12)


def test_means_include_warmup_but_max_does_not():
    rep = evaluation.evaluate(schemes.PeriodicPolicy(schemes.golden()), 3)
    trace = evaluation.rollout(schemes.PeriodicPolicy(schemes.golden()), 3)
    q = trace.q_reporting()
    assert q[0] > rep.max_q  # the first-step spike
    assert rep.max_q == pytest.approx(q[50:].max())
    assert rep.mean_q == pytest.approx(q.mean())
    assert rep.max_q >= rep.mean_q_steady


def test_mean_q_matches_env_discrepancy():
    trace = evaluation.rollout(schemes.RandomPolicy(5, np.random.default_rng(0)), 5, 120)
    direct = [env.discrepancy(env.Snapshot(r.post_state)) for r in trace.records]
    assert np.allclose(trace.q_reporting(), direct)


def test_trace_chains_states_and_times():
    trace = evaluation.rollout(schemes.RandomPolicy(4, np.random.default_rng(1)), 4, 100)
    for a, b in zip(trace.records, trace.records[1:]):
        assert np.array_equal(a.post_state, b.pre_state)
        assert b.update_time > a.update_time
    for times in trace.backup_times:
        assert np.all(np.diff(times) > 0)
    # normalized post-state equals the absolute gaps over elapsed time
    for n, rec in enumerate(trace.records):
        times = trace.backup_times[n + 1]
        gaps = np.diff(np.concatenate([[0.0], times])) / times[-1]
        assert np.allclose(gaps, rec.post_state, atol=1e-12)


def test_evaluate_rejects_bad_window():
    pol = schemes.PeriodicPolicy(schemes.golden())
    with pytest.raises(InvalidArgument):
        evaluation.evaluate(pol, 3, n_steps=50, warmup=50)
    with pytest.raises(InvalidArgument):
        evaluation.evaluate(pol, 3, n_steps=60, warmup=-1)


def test_evaluate_is_reproducible():
    a = evaluation.evaluate(schemes.PeriodicPolicy(schemes.SchemeSpec(4, (0, 2), (1.25, 1.44))), 4)
    b = evaluation.evaluate(schemes.PeriodicPolicy(schemes.SchemeSpec(4, (0, 2), (1.25, 1.44))), 4)
    assert a.to_json() == b.to_json()


def test_random_policy_is_worse_than_oracle():
    rep = evaluation.evaluate(schemes.RandomPolicy(4, np.random.default_rng(2)), 4)
    best = oracle.search(oracle.SearchConfig(4, 2))
    assert rep.mean_q > best.value


def test_detect_period_examples():
    assert evaluation.detect_period([0, 2] * 30) == 2
    assert evaluation.detect_period([0] * 60) == 1
    # binary de Bruijn sequence of order 6: no period up to 25 in its last 50 entries
    db = [int(c) for c in "0000001000011000101000111001001011001101001111010101110110111111"]
    assert evaluation.detect_period(db) is None
    with pytest.raises(InvalidArgument):
        evaluation.detect_period([0] * 10)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=8))
def test_detected_period_divides_scheme_period(devices):
    spec = schemes.SchemeSpec(5, tuple(devices), tuple([1.3] * len(devices)))
    trace = evaluation.rollout(schemes.PeriodicPolicy(spec), 5, 100)
    p = evaluation.detect_period(trace.devices())
    assert p is not None and len(devices) % p == 0


def test_canonical_rotation():
    assert evaluation.canonical_rotation([2, 0, 1]) == (0, 1, 2)
    assert evaluation.canonical_rotation([2, 0]) == (0, 2)


def test_trace_csv_round_trip(tmp_path):
    spec = schemes.SchemeSpec(4, (0, 2), (1.25, 1.44))
    trace = evaluation.rollout(schemes.PeriodicPolicy(spec), 4, 40)
    path = tmp_path / "t.csv"
    trace.write_csv(path)
    back = evaluation.load_trace_csv(path)
    assert back.to_csv() == trace.to_csv()
    assert path.read_text().splitlines()[0] == ",".join(evaluation.TRACE_COLUMNS)


def test_backups_at():
    trace = evaluation.rollout(schemes.PeriodicPolicy(schemes.round_robin(2, 2.0)), 2, 3)
    assert trace.backups_at(1.5).tolist() == [0.5, 1.0]
    assert trace.backups_at(2.0).tolist() == [1.0, 2.0]
    assert trace.backups_at(5.0).tolist() == [2.0, 4.0]
    assert trace.backups_at(8.0).tolist() == [4.0, 8.0]
