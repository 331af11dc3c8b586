import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mftensor import gp
from mftensor.exceptions import DimensionError, FactorizationError
from mftensor.gp import GPHyperparams


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        GPHyperparams(0.0, (1.0,))
    with pytest.raises(ValueError):
        GPHyperparams(1.0, (1.0, -2.0))
    assert GPHyperparams(4.0, 2.0).variance == 0.25


def test_kernel_examples():
    h = GPHyperparams(4.0, (2.0,))
    assert gp.kernel([0.0], [1.0], h) == pytest.approx(0.25 * np.exp(-0.5), rel=1e-15)
    assert gp.kernel([0.3], [0.3], h) == 0.25
    flat = GPHyperparams(2.0, (1e12, 1e12))
    assert gp.kernel([0.0, 0.0], [1.0, 1.0], flat) == pytest.approx(0.5, rel=1e-10)
    with pytest.raises(DimensionError):
        gp.kernel([0.0, 1.0], [1.0], h)


def test_kernel_anisotropic_l1_form():
    h = GPHyperparams(1.0, (0.5, 2.0))
    assert gp.kernel([0.1, 0.2], [0.4, 0.9], h) == pytest.approx(np.exp(-(0.3 / 0.5 + 0.7 / 2.0)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3),
       st.floats(0.1, 10), st.lists(st.floats(0.05, 20), min_size=3, max_size=3))
def test_kernel_symmetry_and_bounds(x, y, tau, ls):
    h = GPHyperparams(tau, ls)
    k = gp.kernel(x, y, h)
    assert k == gp.kernel(y, x, h)
    assert 0 < k <= 1 / tau
    if x != y and np.sum(np.abs(np.subtract(x, y)) / ls) > 1e-12:
        assert k < 1 / tau


def test_cov_matrix_loop_oracle(rng):
    a = rng.random((3, 2))
    h = GPHyperparams(2.0, (0.3, 0.7))
    k = gp.cov_matrix(a, h=h)
    for i in range(3):
        for j in range(3):
            expected = gp.kernel(a[i], a[j], h) + (gp.JITTER / 2.0 if i == j else 0.0)
            assert k[i, j] == pytest.approx(expected, rel=1e-14)
    np.testing.assert_allclose(np.diag(k), 0.5 + gp.JITTER / 2.0)
    assert gp.cov_matrix(a[:1], h=h).shape == (1, 1)
    b = rng.random((4, 2))
    cross = gp.cov_matrix(a, b, h)
    assert cross.shape == (3, 4)
    assert cross[1, 2] == pytest.approx(gp.kernel(a[1], b[2], h), rel=1e-14)


def test_cov_matrix_is_psd(rng):
    a = rng.random((20, 3))
    k = gp.cov_matrix(a, h=GPHyperparams(1.0, (0.5, 1.0, 2.0)))
    np.testing.assert_array_equal(k, k.T)
    assert np.linalg.eigvalsh(k).min() > 0


def test_distance_stack_matches_cov_matrix(rng):
    a, b = rng.random((5, 3)), rng.random((2, 3))
    h = GPHyperparams(3.0, (0.4, 1.1, 0.2))
    np.testing.assert_allclose(gp.DistanceStack(a).cov(3.0, h.length_scales), gp.cov_matrix(a, h=h),
                               rtol=1e-13)
    np.testing.assert_allclose(gp.DistanceStack(a, b).cov(3.0, h.length_scales),
                               gp.cov_matrix(a, b, h), rtol=1e-13)


def test_block_diag(rng):
    np.testing.assert_array_equal(gp.block_diag([np.eye(2)]), np.eye(2))
    np.testing.assert_array_equal(gp.block_diag([[[2.0]], [[3.0]]]), np.diag([2.0, 3.0]))
    blocks = []
    for n in (2, 3, 1):
        m = rng.normal(size=(n, n))
        blocks.append(m @ m.T + n * np.eye(n))
    full = gp.block_diag(blocks)
    assert np.linalg.det(full) == pytest.approx(np.prod([np.linalg.det(b) for b in blocks]), rel=1e-10)
    assert full[0, 2] == 0 and full[4, 5] == 0
    with pytest.raises(DimensionError):
        gp.block_diag([np.ones((2, 3))])


def test_mvn_logpdf_examples(rng):
    assert gp.mvn_logpdf([0.0], [0.0], [[1.0]]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)
    d = rng.uniform(0.5, 2.0, size=4)
    y = rng.normal(size=4)
    uni = np.sum(-0.5 * np.log(2 * np.pi * d) - 0.5 * y ** 2 / d)
    assert gp.mvn_logpdf(y, 0.0, np.diag(d)) == pytest.approx(uni, abs=1e-10)


def test_mvn_logpdf_dense_oracle(rng):
    m = rng.normal(size=(5, 5))
    cov = m @ m.T + 0.5 * np.eye(5)
    y, mu = rng.normal(size=5), rng.normal(size=5)
    r = y - mu
    direct = -0.5 * (r @ np.linalg.inv(cov) @ r + np.log(np.linalg.det(cov)) + 5 * np.log(2 * np.pi))
    assert gp.mvn_logpdf(y, mu, cov) == pytest.approx(direct, abs=1e-8)
    perm = rng.permutation(5)
    assert gp.mvn_logpdf(y[perm], mu[perm], cov[np.ix_(perm, perm)]) == pytest.approx(
        gp.mvn_logpdf(y, mu, cov), abs=1e-8)


def test_mvn_logpdf_errors():
    with pytest.raises(FactorizationError):
        gp.mvn_logpdf([0.0, 0.0], 0.0, [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(DimensionError):
        gp.mvn_logpdf([0.0, 0.0], 0.0, np.eye(3))


def test_cholesky_escalates_once():
    singular = np.ones((3, 3))
    chol = gp.cholesky(singular)
    assert np.allclose(chol @ chol.T, singular, atol=1e-6)


def test_condition_examples(rng):
    s_pp = np.array([[2.0, 0.3], [0.3, 1.0]])
    mean, cov = gp.condition(np.eye(3), np.zeros((3, 2)), s_pp, rng.normal(size=3))
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_allclose(cov, s_pp)
    mean, cov = gp.mvn_condition(np.ones((2, 2)), [0.7])
    assert mean[0] == pytest.approx(0.7, abs=1e-6)
    assert cov[0, 0] == pytest.approx(0.0, abs=1e-6)


def test_condition_dense_oracle(rng):
    m = rng.normal(size=(6, 6))
    joint = m @ m.T + np.eye(6)
    y = rng.normal(size=4)
    mean, cov = gp.mvn_condition(joint, y)
    inv = np.linalg.inv(joint[:4, :4])
    np.testing.assert_allclose(mean, joint[4:, :4] @ inv @ y, atol=1e-8)
    np.testing.assert_allclose(cov, joint[4:, 4:] - joint[4:, :4] @ inv @ joint[:4, 4:], atol=1e-8)
    assert np.all(np.diag(cov) <= np.diag(joint[4:, 4:]) + 1e-10)


def test_psd_clean_rejects_clearly_negative():
    with pytest.raises(FactorizationError):
        gp.psd_clean(np.diag([1.0, -1e-3]))
    out = gp.psd_clean(np.diag([1.0, -1e-12]))
    assert np.linalg.eigvalsh(out).min() >= 0


def test_as_design():
    assert gp.as_design([0.1, 0.2]).shape == (1, 2)
    with pytest.raises(ValueError):
        gp.as_design([[np.nan, 1.0]])
    with pytest.raises(DimensionError):
        gp.as_design(np.zeros((2, 2, 2)))
