import numpy as np
import pytest

from smadp.errors import ParameterError, StructuralError
from smadp.numerics import RandomStream, bernoulli_mask, gaussian_vector, sym_eig, sym_eigvals


def test_gaussian_zero_std_is_zero_vector():
    v = gaussian_vector(RandomStream(1), 5, 0.0)
    assert np.array_equal(v, np.zeros(5))


def test_gaussian_moments_large_sample():
    # oracle: standard-error bounds 3/sqrt(n) comfortably inside +-0.02
    v = gaussian_vector(RandomStream(7), 100_000, 1.0)
    assert -0.02 <= v.mean() <= 0.02
    assert 0.99 <= v.std(ddof=1) <= 1.01


def test_gaussian_deterministic_per_stream():
    s = RandomStream(42, step_index=3, group_index=1, purpose="noise")
    assert np.array_equal(gaussian_vector(s, 10, 1.0), gaussian_vector(s, 10, 1.0))


def test_gaussian_scales_linearly_with_std():
    s = RandomStream(5)
    assert np.allclose(gaussian_vector(s, 16, 2.5), 2.5 * gaussian_vector(s, 16, 1.0))


@pytest.mark.parametrize("std", [float("nan"), float("inf"), -1.0])
def test_gaussian_rejects_bad_std(std):
    with pytest.raises(ParameterError):
        gaussian_vector(RandomStream(1), 4, std)


def test_gaussian_rejects_bad_dim():
    with pytest.raises(ParameterError):
        gaussian_vector(RandomStream(1), 0, 1.0)


def test_streams_differing_in_any_coordinate_are_uncorrelated():
    base = RandomStream(11, step_index=2, group_index=3, purpose="noise")
    n = 20_000
    reference = gaussian_vector(base, n, 1.0)
    variants = [
        RandomStream(12, step_index=2, group_index=3, purpose="noise"),
        base.at(step_index=4),
        base.at(group_index=9),
        base.at(purpose="init"),
    ]
    for other in variants:
        sample = gaussian_vector(other, n, 1.0)
        corr = np.corrcoef(reference, sample)[0, 1]
        assert abs(corr) < 0.05
        assert not np.array_equal(reference, sample)


def test_stream_rejects_unknown_purpose():
    with pytest.raises(ParameterError):
        RandomStream(1, purpose="banana")


def test_bernoulli_mask_probabilities():
    assert not bernoulli_mask(RandomStream(1), 100, 0.0).any()
    assert bernoulli_mask(RandomStream(1), 100, 1.0).all()
    count = bernoulli_mask(RandomStream(9), 10_000, 0.3).sum()
    assert abs(count - 3000) < 3 * np.sqrt(10_000 * 0.3 * 0.7)


def test_sym_eigvals_identity():
    assert np.array_equal(sym_eigvals(np.eye(3)), np.ones(3))


def test_sym_eigvals_diagonal():
    assert np.array_equal(sym_eigvals(np.diag([9.0, 4.0, 1.0])), [9.0, 4.0, 1.0])


def _charpoly_roots(m: np.ndarray) -> np.ndarray:
    """Independent oracle: interpolate det(m - x I) and take its roots."""
    n = m.shape[0]
    xs = np.linspace(-2 * np.abs(m).sum(), 2 * np.abs(m).sum(), n + 1)
    ys = [np.linalg.det(m - x * np.eye(n)) for x in xs]
    coeffs = np.polyfit(xs, ys, n)
    roots = np.roots(coeffs)
    return np.sort(roots.real)[::-1]


def test_sym_eigvals_match_characteristic_polynomial():
    rng = np.random.default_rng(2024)
    m = rng.normal(size=(4, 4))
    m = m + m.T
    expected = _charpoly_roots(m)
    assert np.allclose(sym_eigvals(m), expected, atol=1e-8)


def test_sym_eig_reconstruction_and_trace():
    rng = np.random.default_rng(77)
    for n in (2, 5, 12):
        m = rng.normal(size=(n, n))
        m = m + m.T
        values, vectors = sym_eig(m)
        resid = np.linalg.norm(m - vectors @ np.diag(values) @ vectors.T)
        assert resid <= 1e-8 * np.linalg.norm(m)
        assert abs(values.sum() - np.trace(m)) <= 1e-8 * max(1.0, abs(np.trace(m)))


def test_sym_eig_rejects_nonsquare_and_asymmetric():
    with pytest.raises(StructuralError):
        sym_eigvals(np.ones((2, 3)))
    bad = np.array([[1.0, 2.0], [0.5, 1.0]])
    with pytest.raises(StructuralError):
        sym_eigvals(bad)
