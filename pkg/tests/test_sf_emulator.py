import math
from dataclasses import replace

import numpy as np
import pytest

from mftensor.exceptions import ContractError, DimensionError, NotFittedError
from mftensor.gp import mvn_logpdf
from mftensor.mcmc import MCMCConfig, folded_normal_logpdf, gamma_logpdf, lognormal_logpdf
from mftensor.sf_emulator import (
    build_sf,
    conditional_weights,
    effective_weights,
    fit_sf,
    full_weights,
    gls_weights,
    load_sf,
    predict_sf,
    project_data,
    reduced_gram,
    reduced_hyperparams,
    save_sf,
)
from mftensor.tensor import DenseTensor
from mftensor.tucker import TuckerModel, reconstruct


def orth(rng, n, r):
    q, _ = np.linalg.qr(rng.normal(size=(n, r)))
    return q


def random_model(rng, dims, ranks):
    core = rng.normal(size=ranks)
    return TuckerModel(DenseTensor(core), tuple(orth(rng, n, r) for n, r in zip(dims, ranks)))


def dense_c(m: TuckerModel) -> np.ndarray:
    """Materialize C column by column: column (i, j) is the field of unit weight gamma_ij."""
    n_x, r_x = m.dims[3], m.ranks[3]
    a, b, c = m.factors[:3]
    basis = np.einsum("abcj,sa,mb,yc->smyj", m.core.data, a, b, c)
    cols = []
    for j in range(r_x):
        for i in range(n_x):
            z = np.zeros(m.dims[:3] + (n_x,))
            z[..., i] = basis[..., j]
            cols.append(z.ravel(order="F"))
    return np.array(cols).T


# effective and full weights

def test_full_weights_match_direct_sum(rng):
    worst = 0.0
    for _ in range(20):
        dims = tuple(rng.integers(2, 5, size=4))
        ranks = tuple(int(rng.integers(1, d + 1)) for d in dims)
        m = random_model(rng, dims, ranks)
        gamma = rng.normal(size=(dims[3], ranks[3]))
        w = full_weights(m, gamma)
        direct = np.zeros((dims[3],) + ranks[:3])
        for i in range(dims[3]):
            for idx in np.ndindex(*ranks[:3]):
                direct[(i,) + idx] = sum(gamma[i, j] * m.core.data[idx + (j,)] for j in range(ranks[3]))
        worst = max(worst, np.max(np.abs(w - direct.reshape(dims[3], -1, order="F"))))
    assert worst <= 1e-10


def test_identity_core_permutes_weights(rng):
    r = 2
    core = np.zeros((r,) * 4)
    for i in range(r):
        core[i, i, i, i] = 1.0
    m = TuckerModel(DenseTensor(core), tuple(orth(rng, 3, r) for _ in range(4)))
    gamma = rng.normal(size=(3, r))
    w = full_weights(m, gamma)
    assert sorted(w[w != 0]) == sorted(gamma.ravel())


def test_effective_weights_single_column(rng):
    m = random_model(rng, (3, 3, 2, 4), (2, 2, 1, 1))
    ux = effective_weights(m)
    assert ux.shape == (4, 1)
    np.testing.assert_array_equal(ux, m.factors[3])


# structured Gram

def test_reduced_gram_dense_oracle(rng):
    m = random_model(rng, (4, 3, 2, 5), (2, 2, 1, 3))
    c = dense_c(m)
    np.testing.assert_allclose(reduced_gram(m), c.T @ c, atol=1e-10)


def test_reduced_gram_rank_one_and_diagonal(rng):
    m = random_model(rng, (4, 3, 2, 5), (2, 2, 1, 1))
    g = reduced_gram(m)
    np.testing.assert_allclose(g, np.sum(m.core.data ** 2) * np.eye(5), atol=1e-12)
    core = np.zeros((2, 2, 1, 2))
    core[0, 0, 0, 0], core[1, 1, 0, 1] = 3.0, 0.5
    m2 = TuckerModel(DenseTensor(core), tuple(orth(rng, n, r) for n, r in zip((4, 3, 2, 5), (2, 2, 1, 2))))
    g2 = reduced_gram(m2)
    np.testing.assert_allclose(g2, np.diag(np.diag(g2)), atol=1e-12)


def test_reduced_gram_rejects_non_orthonormal(rng):
    m = random_model(rng, (4, 3, 2, 5), (2, 2, 1, 3))
    bad = TuckerModel(m.core, (m.factors[0] * 2,) + m.factors[1:])
    with pytest.raises(ContractError):
        reduced_gram(bad)


def test_project_data_oracles(rng):
    m = random_model(rng, (4, 3, 2, 5), (2, 2, 1, 3))
    c = dense_c(m)
    z = rng.normal(size=m.dims)
    np.testing.assert_allclose(project_data(DenseTensor(z), m), c.T @ z.ravel(order="F"), atol=1e-10)
    recon = reconstruct(m)
    gamma = m.factors[3].ravel(order="F")
    np.testing.assert_allclose(project_data(recon, m), reduced_gram(m) @ gamma, atol=1e-9)
    assert not np.any(project_data(DenseTensor(np.zeros(m.dims)), m))
    with pytest.raises(DimensionError):
        project_data(DenseTensor(np.zeros((4, 3, 2, 4))), m)


def test_gls_weights_at_fixpoint(rng):
    m = random_model(rng, (4, 3, 2, 5), (2, 2, 1, 3))
    np.testing.assert_allclose(gls_weights(reconstruct(m), m), m.factors[3], atol=1e-10)


def test_reduced_hyperparams(rng):
    m = random_model(rng, (4, 3, 2, 5), (2, 2, 1, 3))
    n = 4 * 3 * 2
    a2, b2 = reduced_hyperparams(reconstruct(m), m, 1.0, 0.5)
    assert a2 == 1.0 + 5 * (n - 3) / 2
    assert b2 == pytest.approx(0.5, rel=1e-6)
    # spatial pattern orthogonal to the spatial basis
    q, _ = np.linalg.qr(np.hstack([m.factors[0], rng.normal(size=(4, 1))]))
    z = np.einsum("s,m,y,x->smyx", q[:, -1], rng.normal(size=3), rng.normal(size=2), rng.normal(size=5))
    _, b3 = reduced_hyperparams(DenseTensor(z), m, 1.0, 0.5)
    assert b3 == pytest.approx(0.5 + np.sum(z ** 2) / 2, abs=1e-9)
    zr = rng.normal(size=m.dims)
    c = dense_c(m)
    v = zr.ravel(order="F")
    resid = v @ v - v @ c @ np.linalg.solve(c.T @ c, c.T @ v)
    _, b4 = reduced_hyperparams(DenseTensor(zr), m, 1.0, 0.5)
    assert b4 == pytest.approx(0.5 + resid / 2, abs=1e-8)


# reduction equivalence

def _dense_log_target(target, c, z, theta, a, b):
    cov_w = np.zeros((c.shape[1], c.shape[1]))
    for j in range(target.r):
        s = slice(j * target.n_x, (j + 1) * target.n_x)
        cov_w[s, s] = target.weight_cov(j, theta)
    lam = theta[-1]
    cov = c @ cov_w @ c.T + np.eye(c.shape[0]) / lam
    lp = mvn_logpdf(z, np.zeros_like(z), cov) + gamma_logpdf(lam, a, b)
    for j in range(target.r):
        blk = theta[target.block(j)]
        lp += folded_normal_logpdf(blk[0]) + sum(lognormal_logpdf(v) for v in blk[1:])
    return lp


@pytest.mark.parametrize("ranks", [(2, 2, 1, 3), (2, 2, 2, 2)])
def test_reduction_equivalence(rng, ranks):
    dims = (4, 3, 2, 5)
    m = random_model(rng, dims, ranks)
    z = reconstruct(m).data + 0.1 * rng.normal(size=dims)
    design = rng.uniform(size=(5, 2))
    model = build_sf(DenseTensor(z), design, m)
    target = model.target()
    c = dense_c(m)
    diffs = []
    for _ in range(4):
        theta = np.exp(rng.normal(scale=0.7, size=target.n_params))
        diffs.append(target(theta) - _dense_log_target(target, c, z.ravel(order="F"), theta, 1.0, 0.5))
    assert np.ptp(diffs) <= 1e-6


# fitting and prediction

@pytest.fixture(scope="module")
def toy_fit():
    rng = np.random.default_rng(7)
    dims, ranks = (5, 4, 3, 8), (2, 2, 2, 2)
    design = np.linspace(0, 1, 8)[:, None] * np.array([1.0, 0.5]) + np.array([0, 0.2])
    wx = np.column_stack([np.sin(3 * design[:, 0]) + 1.5, np.cos(2 * design[:, 1])])
    core = rng.normal(size=ranks)
    factors = [orth(rng, n, r) for n, r in zip(dims[:3], ranks[:3])]
    # large signal so the Gamma(1, 1/2) prior on the noise precision is negligible
    z = 100.0 * np.einsum("abcj,sa,mb,yc,xj->smyx", core, *factors, wx)
    z = z + 1e-6 * rng.normal(size=z.shape)
    cfg = MCMCConfig(n_chains=2, n_iter=800, burn_in=400, seed=1)
    model = fit_sf(DenseTensor(z), design, ranks, cfg)
    return model, z, design


def test_predict_at_training_input(toy_fit):
    model, z, design = toy_fit
    for i in (0, 4, 7):
        pred = predict_sf(model, design[i], n_draws=100, seed=2)
        err = np.linalg.norm(pred.mean.data - z[..., i]) / np.linalg.norm(z[..., i])
        assert err < 0.01


def test_prediction_mean_matches_dense_conditioning(toy_fit):
    model, _, design = toy_fit
    target = model.target()
    theta = model.samples.natural.reshape(-1, target.n_params)[-1]
    x_star = np.array([[0.33, 0.41]])
    means, _ = conditional_weights(model, x_star, theta)
    # dense oracle: explicit inverse over the stacked observed weights
    s_oo = target.joint_cov(theta)
    cross = []
    for j in range(target.r):
        blk = theta[target.block(j)]
        d = np.sum(np.abs(design - x_star) / blk[1:], axis=1)
        cross.append(np.exp(-d) / (blk[0] * target.n_x))
    s_po = np.zeros((target.r, s_oo.shape[0]))
    for j in range(target.r):
        s_po[j, j * target.n_x:(j + 1) * target.n_x] = cross[j]
    expect = s_po @ np.linalg.inv(s_oo) @ model.observed.ravel(order="F")
    np.testing.assert_allclose(means[0], expect, atol=1e-6)


def test_far_input_reverts_to_prior(toy_fit):
    model, _, _ = toy_fit
    target = model.target()
    theta = model.samples.natural.reshape(-1, target.n_params)[0]
    means, covs = conditional_weights(model, np.array([[1e6, -1e6]]), theta)
    np.testing.assert_allclose(means, 0.0, atol=1e-12)
    prior = [1.0 / (theta[target.block(j)][0] * target.n_x) for j in range(target.r)]
    np.testing.assert_allclose(np.diag(covs[0]), prior, rtol=1e-10)


def test_design_permutation_invariance(toy_fit):
    model, z, design = toy_fit
    perm = np.array([3, 0, 7, 1, 6, 2, 5, 4])
    t = model.tucker
    tp = TuckerModel(t.core, t.factors[:3] + (t.factors[3][perm],))
    permuted = replace(build_sf(DenseTensor(z[..., perm]), design[perm], tp), samples=model.samples)
    x = np.array([[0.6, 0.3]])
    a = predict_sf(model, x, n_draws=50, seed=4)
    b = predict_sf(permuted, x, n_draws=50, seed=4)
    np.testing.assert_allclose(a.mean.data, b.mean.data, atol=1e-8)


def test_sd_shrinks_when_point_added():
    rng = np.random.default_rng(3)
    dims, ranks = (3, 2, 2, 5), (1, 1, 1, 1)
    m = random_model(rng, dims[:3] + (6,), ranks)
    x_all = np.linspace(0, 1, 6)[:, None]
    theta = np.array([1.0, 0.5, 50.0])
    z = reconstruct(m).data + 0.01 * rng.normal(size=m.dims)
    x_star = x_all[5:6]

    def sd_at(idx):
        sub = TuckerModel(m.core, m.factors[:3] + (np.linalg.qr(m.factors[3][idx])[0] * np.sign(m.factors[3][idx][0]),))
        mod = build_sf(DenseTensor(z[..., idx]), x_all[idx], sub)
        return conditional_weights(mod, x_star, theta)[1][0, 0, 0] * sub.dims[3]

    # precision scales with n_x, so compare on the rescaled weights
    assert sd_at(np.arange(6)) <= sd_at(np.arange(5)) + 1e-12


def test_unfitted_and_save_load(toy_fit, tmp_path):
    model, z, design = toy_fit
    with pytest.raises(NotFittedError):
        predict_sf(replace(model, samples=None), design[0])
    save_sf(model, tmp_path / "m")
    back = load_sf(tmp_path / "m")
    assert back.ranks == model.ranks
    np.testing.assert_allclose(back.samples.draws, model.samples.draws, rtol=1e-12, atol=1e-14)
    a = predict_sf(model, design[2], n_draws=20, seed=1)
    b = predict_sf(back, design[2], n_draws=20, seed=1)
    np.testing.assert_allclose(a.mean.data, b.mean.data, rtol=1e-10, atol=1e-12)


def test_single_design_point():
    rng = np.random.default_rng(5)
    m = random_model(rng, (4, 3, 2, 1), (2, 1, 1, 1))
    z = 100.0 * reconstruct(m).data + 1e-8 * rng.normal(size=m.dims)
    model = fit_sf(DenseTensor(z), np.array([[0.5]]), (2, 1, 1, 1),
                   MCMCConfig(n_chains=2, n_iter=300, burn_in=150))
    pred = predict_sf(model, [[0.5]], n_draws=50)
    assert np.linalg.norm(pred.mean.data - z[..., 0]) / np.linalg.norm(z) < 0.01
    assert math.isfinite(float(pred.sd.data.max()))
