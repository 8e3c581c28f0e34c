import math

import numpy as np
import pytest

from smadp.errors import ParameterError, StateError, StructuralError
from smadp.memory import (
    ReleaseHistory,
    ReleaseRecord,
    alignment_gate,
    build_memory_state,
    effective_depth,
    ema_update,
    kernel_weights,
    memory_decompose,
    memory_vector,
    norm_scale,
    warmup,
)


def _record(step, query, noise, gid=0):
    query = np.asarray(query, dtype=float)
    noise = np.asarray(noise, dtype=float)
    return ReleaseRecord(step=step, group_id=gid, query=query, noise=noise,
                         release=query + noise)


def _history(records, capacity=8, gid=0):
    history = ReleaseHistory(gid, capacity=capacity, ema_coef=0.9)
    for record in records:
        history.append(record)
    return history


def test_kernel_uniform_when_alpha_one_lambda_zero():
    weights = kernel_weights(1.0, 0.0, 4)
    assert np.array_equal(weights.hat, np.full(4, 0.25))
    assert np.array_equal(weights.raw, np.ones(4))


def test_kernel_closed_form_values():
    weights = kernel_weights(0.7, 0.0, 2)
    assert weights.raw[0] == pytest.approx(2.0 ** -0.3, abs=1e-12)
    assert weights.raw[1] == pytest.approx(3.0 ** -0.3, abs=1e-12)
    total = 2.0 ** -0.3 + 3.0 ** -0.3
    assert weights.hat[0] == pytest.approx(2.0 ** -0.3 / total, abs=1e-12)
    assert weights.hat[1] == pytest.approx(3.0 ** -0.3 / total, abs=1e-12)
    # to five-ish figures: {0.53037, 0.46963}
    assert weights.hat[0] == pytest.approx(0.53036, abs=5e-5)
    assert weights.hat[1] == pytest.approx(0.46964, abs=5e-5)


def test_kernel_empty_when_no_lags():
    weights = kernel_weights(0.5, 0.3, 0)
    assert weights.raw.size == 0 and weights.hat.size == 0


def test_kernel_rejects_bad_alpha():
    with pytest.raises(ParameterError):
        kernel_weights(0.0, 0.0, 3)
    with pytest.raises(ParameterError):
        kernel_weights(1.5, 0.0, 3)


def test_kernel_lambda_zero_gives_raw_power_law():
    weights = kernel_weights(0.6, 0.0, 5)
    lags = np.arange(1, 6, dtype=float)
    assert np.array_equal(weights.raw, (lags + 1.0) ** (0.6 - 1.0))


def test_kernel_alpha_one_gives_pure_exponential():
    weights = kernel_weights(1.0, 0.25, 5)
    lags = np.arange(1, 6, dtype=float)
    assert np.array_equal(weights.raw, np.exp(-0.25 * lags))


def test_kernel_lag_suppression_is_strict():
    rng = np.random.default_rng(33)
    for _ in range(300):
        alpha = rng.uniform(0.05, 1.0)
        lam1, lam2 = np.sort(rng.uniform(0.0, 1.0, size=2))
        if lam2 - lam1 < 1e-9:
            continue
        k, j = np.sort(rng.integers(1, 20, size=2))
        if j == k:
            j = k + 1
        m = int(j)
        w1 = kernel_weights(alpha, lam1, m)
        w2 = kernel_weights(alpha, lam2, m)
        assert w2.hat[j - 1] / w2.hat[k - 1] < w1.hat[j - 1] / w1.hat[k - 1]


def test_effective_depth_monotone_in_tempering():
    depths = [effective_depth(kernel_weights(0.7, lam, 6).hat)
              for lam in np.linspace(0.0, 1.0, 11)]
    assert all(b <= a + 1e-12 for a, b in zip(depths, depths[1:]))


def test_effective_depth_uniform_three_lags():
    assert effective_depth(np.full(3, 1.0 / 3.0)) == pytest.approx(2.0, abs=1e-12)


def test_effective_depth_from_kernel_example():
    weights = kernel_weights(0.7, 0.0, 2)
    exact = 1.0 * weights.hat[0] + 2.0 * weights.hat[1]
    assert effective_depth(weights.hat) == pytest.approx(exact, abs=1e-12)
    assert effective_depth(weights.hat) == pytest.approx(1.46964, abs=5e-5)


def test_effective_depth_degenerate():
    assert effective_depth(np.array([1.0])) == 1.0
    assert effective_depth(np.zeros(0)) == 0.0


def test_memory_vector_singleton():
    v = np.array([1.0, -2.0, 3.0])
    history = _history([_record(0, v, np.zeros(3))])
    assert np.array_equal(memory_vector(history, np.array([1.0])), v)


def test_memory_vector_identical_records():
    v = np.array([2.0, 2.0])
    history = _history([_record(0, v, np.zeros(2)), _record(1, v, np.zeros(2))])
    out = memory_vector(history, np.array([0.5, 0.5]))
    assert np.allclose(out, v)


def test_memory_vector_matches_bruteforce():
    rng = np.random.default_rng(4)
    records = [_record(t, rng.normal(size=6), rng.normal(size=6)) for t in range(3)]
    history = _history(records)
    hat = kernel_weights(0.8, 0.1, 3).hat
    got = memory_vector(history, hat)
    # newest-first: lag 1 is the latest record
    expected = np.zeros(6)
    for lag, record in enumerate([records[2], records[1], records[0]], start=1):
        expected += hat[lag - 1] * record.release
    assert np.allclose(got, expected, atol=1e-15)


def test_memory_vector_requires_enough_records():
    history = _history([_record(0, np.ones(2), np.zeros(2))])
    with pytest.raises(StateError):
        memory_vector(history, np.array([0.6, 0.4]))


def test_memory_decompose_identity():
    rng = np.random.default_rng(10)
    records = [_record(t, rng.normal(size=5), rng.normal(size=5)) for t in range(4)]
    history = _history(records)
    hat = kernel_weights(0.5, 0.2, 4).hat
    rec, noise = memory_decompose(history, hat)
    total = memory_vector(history, hat)
    assert np.allclose(rec + noise, total, rtol=1e-12, atol=1e-14)


def test_memory_decompose_pure_cases():
    records = [_record(t, np.array([1.0, 1.0]), np.zeros(2)) for t in range(2)]
    rec, noise = memory_decompose(_history(records), np.array([0.5, 0.5]))
    assert not noise.any() and np.allclose(rec, [1.0, 1.0])
    records = [_record(t, np.zeros(2), np.array([1.0, -1.0])) for t in range(2)]
    rec, noise = memory_decompose(_history(records), np.array([0.5, 0.5]))
    assert not rec.any()


def test_ema_update_first_release_seeds_trend():
    v = np.array([3.0, -1.0])
    assert np.array_equal(ema_update(None, v, 0.9, is_first=True), v)


def test_ema_update_full_recency():
    prev = np.array([5.0, 5.0])
    release = np.array([1.0, 2.0])
    assert np.array_equal(ema_update(prev, release, 1.0, is_first=False), release)


def test_ema_update_midpoint():
    out = ema_update(np.array([2.0, 0.0]), np.array([0.0, 2.0]), 0.5, is_first=False)
    assert np.array_equal(out, np.array([1.0, 1.0]))


def test_ema_update_requires_prev():
    with pytest.raises(StateError):
        ema_update(None, np.ones(2), 0.5, is_first=False)


def test_alignment_gate_perfect_and_opposed():
    mu = np.array([1.0, 0.0])
    assert alignment_gate(mu, mu, 1e-12) == pytest.approx(1.0, abs=1e-9)
    assert alignment_gate(mu, -mu, 1e-12) == 0.0
    assert alignment_gate(mu, np.zeros(2), 1e-12) == 0.0


def test_alignment_gate_bounded_on_random_pairs():
    rng = np.random.default_rng(50)
    for _ in range(1000):
        mu = rng.normal(size=4) * rng.uniform(0, 100)
        nu = rng.normal(size=4) * rng.uniform(0, 100)
        gate = alignment_gate(mu, nu, 1e-12)
        assert 0.0 <= gate <= 1.0


def test_norm_scale_ratio_and_cap():
    mu2 = np.array([2.0, 0.0])
    nu1 = np.array([0.0, 1.0])
    assert norm_scale(mu2, nu1, 3.0, 1e-15) == pytest.approx(2.0, abs=1e-12)
    mu10 = np.array([10.0, 0.0])
    assert norm_scale(mu10, nu1, 3.0, 1e-15) == 3.0
    assert norm_scale(np.zeros(2), nu1, 3.0, 1e-15) == 0.0


def test_warmup_boundary_values():
    assert warmup(0, 5.0) == 0.0
    assert warmup(5, 5.0) == pytest.approx(1.0 - math.exp(-1.0), abs=1e-12)
    assert warmup(5, 5.0) == pytest.approx(0.632121, abs=1e-6)


def test_warmup_strictly_below_one_even_at_huge_t():
    value = warmup(10_000, 5.0)
    assert value < 1.0
    assert value == math.nextafter(1.0, 0.0)


def test_warmup_strictly_increasing():
    values = [warmup(t, 3.0) for t in range(0, 30)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_history_ring_buffer_evicts_oldest():
    history = ReleaseHistory(0, capacity=2, ema_coef=0.9)
    for t in range(4):
        history.append(_record(t, np.full(2, float(t)), np.zeros(2)))
    assert len(history.records) == 2
    assert [r.step for r in history.records] == [3, 2]


def test_history_requires_consecutive_steps():
    history = _history([_record(0, np.ones(2), np.zeros(2))])
    with pytest.raises(StateError):
        history.append(_record(5, np.ones(2), np.zeros(2)))


def test_history_trend_matches_manual_ema():
    history = ReleaseHistory(0, capacity=3, ema_coef=0.5)
    releases = [np.array([4.0, 0.0]), np.array([0.0, 4.0]), np.array([2.0, 2.0])]
    for t, release in enumerate(releases):
        history.append(_record(t, release, np.zeros(2)))
    expected = releases[0]
    for release in releases[1:]:
        expected = 0.5 * release + 0.5 * expected
    assert np.allclose(history.trend, expected)


def test_build_memory_state_zero_when_no_lags():
    history = ReleaseHistory(0, capacity=0, ema_coef=0.9)
    state = build_memory_state(history, dim=3, available=0, tempering=0.0,
                               alpha=0.7, beta=0.5, warmup_value=0.4,
                               scale_cap=3.0, eps=1e-12)
    assert not state.branch.any()
    assert state.depth == 0.0 and state.gate == 0.0 and state.scale == 0.0
    assert state.warmup == 0.4


def test_build_memory_state_branch_bound():
    rng = np.random.default_rng(74)
    for _ in range(200):
        dim = int(rng.integers(2, 8))
        lags = int(rng.integers(1, 5))
        history = _history(
            [_record(t, rng.normal(size=dim), rng.normal(size=dim)) for t in range(lags)],
            capacity=lags,
        )
        beta = rng.uniform(0.1, 1.0)
        omega = rng.uniform(0.0, 1.0)
        state = build_memory_state(history, dim=dim, available=lags,
                                   tempering=rng.uniform(0.0, 1.0),
                                   alpha=rng.uniform(0.1, 1.0), beta=beta,
                                   warmup_value=omega, scale_cap=3.0, eps=1e-12)
        bound = (1.0 - beta) * omega * np.linalg.norm(history.trend)
        assert np.linalg.norm(state.branch) <= bound * (1 + 1e-9) + 1e-12
        assert 1.0 <= state.depth <= lags or lags == 0


def test_build_memory_state_reads_history_only():
    # identical histories => identical state, no matter what else changes
    rng = np.random.default_rng(81)
    records = [_record(t, rng.normal(size=4), rng.normal(size=4)) for t in range(3)]
    state_a = build_memory_state(_history(records), 4, 3, 0.2, 0.7, 0.5, 0.6, 3.0, 1e-12)
    state_b = build_memory_state(_history(records), 4, 3, 0.2, 0.7, 0.5, 0.6, 3.0, 1e-12)
    assert np.array_equal(state_a.branch, state_b.branch)
    assert np.array_equal(state_a.vector, state_b.vector)
