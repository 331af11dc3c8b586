import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mftensor.exceptions import DegenerateInputError, DimensionError, NumericError
from mftensor.tensor import DenseTensor, outer3, unfold
from mftensor.tucker import (TuckerModel, basis_contribution, basis_contributions,
                             explained_variance, hooi, hosvd, load_tucker, reconstruct,
                             save_tucker, select_ranks)


def hosvd_oracle_error(arr, ranks):
    """Relative error of the truncated HOSVD computed with full SVDs."""
    factors = []
    for k, r in enumerate(ranks):
        m = np.moveaxis(arr, k, 0).reshape(arr.shape[k], -1)
        factors.append(np.linalg.svd(m, full_matrices=False)[0][:, :r])
    core = arr
    for k, u in enumerate(factors):
        core = np.moveaxis(np.tensordot(u.T, core, axes=(1, k)), 0, k)
    approx = core
    for k, u in enumerate(factors):
        approx = np.moveaxis(np.tensordot(u, approx, axes=(1, k)), 0, k)
    return np.linalg.norm(arr - approx) / np.linalg.norm(arr)


def rel_err(t, m):
    return np.linalg.norm(t.data - reconstruct(m).data) / t.norm()


def test_select_ranks_rank_one():
    t = outer3([1.0, 2.0, -1.0], [0.5, 1.0], [3.0, 1.0, 1.0, 2.0])
    assert select_ranks(t, 0.99) == [1, 1, 1]


def test_select_ranks_full_target(rng):
    t = DenseTensor(rng.normal(size=(3, 4, 2)))
    assert select_ranks(t, 1.0) == [3, 4, 2]
    t = DenseTensor(rng.normal(size=(6, 2, 2)))
    assert select_ranks(t, 1.0) == [4, 2, 2]


def test_select_ranks_threshold_rule(rng):
    # diagonal core with known spectrum per mode
    core = np.zeros((3, 3, 3))
    core[0, 0, 0], core[1, 1, 1], core[2, 2, 2] = np.sqrt(0.7), np.sqrt(0.2), np.sqrt(0.1)
    qs = [np.linalg.qr(rng.normal(size=(5, 3)))[0] for _ in range(3)]
    t = reconstruct(TuckerModel(DenseTensor(core), tuple(qs)))
    assert select_ranks(t, 0.7 - 1e-9) == [1, 1, 1]
    assert select_ranks(t, 0.85) == [2, 2, 2]
    assert select_ranks(t, 0.95) == [3, 3, 3]
    assert select_ranks(t, [0.5, 0.85, 0.95]) == [1, 2, 3]


def test_select_ranks_monotone_in_target(rng):
    t = DenseTensor(rng.normal(size=(5, 4, 3)))
    prev = [0, 0, 0]
    for target in np.linspace(0.1, 1.0, 10):
        r = select_ranks(t, target)
        assert all(a >= b for a, b in zip(r, prev))
        prev = r


def test_select_ranks_errors():
    with pytest.raises(DegenerateInputError):
        select_ranks(DenseTensor(np.zeros((2, 2))), 0.9)
    with pytest.raises(ValueError):
        select_ranks(DenseTensor(np.ones((2, 2))), 0.0)


def test_hooi_full_rank_lossless(rng):
    t = DenseTensor(rng.normal(size=(4, 3, 2, 3)))
    m = hooi(t, t.dims)
    assert rel_err(t, m) <= 1e-8
    assert explained_variance(t, m) == pytest.approx(1.0, abs=1e-12)


def test_hooi_exact_rank_one(rng):
    t = outer3(rng.normal(size=4), rng.normal(size=3), rng.normal(size=5))
    m = hooi(t, (1, 1, 1))
    assert rel_err(t, m) <= 1e-10


def test_hooi_beats_truncated_hosvd_on_random_tensors():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        dims = tuple(rng.integers(3, 7, size=3))
        ranks = tuple(int(rng.integers(1, d)) for d in dims)
        arr = rng.normal(size=dims)
        m = hooi(DenseTensor(arr), ranks)
        assert m.orthonormality_error() <= 1e-10
        assert rel_err(DenseTensor(arr), m) <= hosvd_oracle_error(arr, ranks) + 1e-12


def test_hooi_specific_instance(rng):
    arr = rng.normal(size=(6, 5, 4))
    m = hooi(DenseTensor(arr), (3, 3, 2))
    assert rel_err(DenseTensor(arr), m) <= hosvd_oracle_error(arr, (3, 3, 2)) + 1e-12


def test_hooi_errors_never_increase(rng):
    t = DenseTensor(rng.normal(size=(7, 6, 5)))
    m = hooi(t, (2, 3, 2))
    assert all(b <= a + 1e-15 for a, b in zip(m.errors, m.errors[1:]))
    assert m.errors[-1] == pytest.approx(rel_err(t, m), abs=1e-10)


def test_hooi_nested_ranks_monotone(rng):
    t = DenseTensor(rng.normal(size=(6, 5, 4)))
    small = rel_err(t, hooi(t, (2, 2, 2)))
    large = rel_err(t, hooi(t, (3, 2, 3)))
    assert large <= small + 1e-9


def test_hooi_core_recovery(rng):
    t = DenseTensor(rng.normal(size=(5, 4, 3)))
    m = hooi(t, (2, 2, 2))
    core = t.data
    for k, u in enumerate(m.factors):
        core = np.moveaxis(np.tensordot(u.T, core, axes=(1, k)), 0, k)
    assert np.linalg.norm(core - m.core.data) <= 1e-10 * np.linalg.norm(core)


def test_hooi_errors_on_bad_input(rng):
    with pytest.raises(DimensionError):
        hooi(DenseTensor(rng.normal(size=(3, 3))), (4, 1))
    bad = rng.normal(size=(3, 3))
    bad[0, 0] = np.nan
    with pytest.raises(NumericError):
        hooi(DenseTensor(bad), (1, 1))


def test_hosvd_factors_orthonormal(rng):
    m = hosvd(DenseTensor(rng.normal(size=(5, 4, 3))), (2, 3, 1))
    assert m.orthonormality_error() <= 1e-10
    assert m.ranks == (2, 3, 1)


def test_reconstruct_matches_nested_sums(rng):
    core = rng.normal(size=(2, 3, 2, 2))
    factors = [rng.normal(size=(3, r)) for r in core.shape]
    m = TuckerModel(DenseTensor(core), tuple(factors))
    expected = np.zeros((3, 3, 3, 3))
    for i in itertools.product(range(3), repeat=4):
        s = 0.0
        for j in itertools.product(*[range(r) for r in core.shape]):
            s += core[j] * np.prod([factors[k][i[k], j[k]] for k in range(4)])
        expected[i] = s
    np.testing.assert_allclose(reconstruct(m).data, expected, atol=1e-12)


def test_zero_core_model(rng):
    t = DenseTensor(rng.normal(size=(3, 3)))
    qs = tuple(np.linalg.qr(rng.normal(size=(3, 2)))[0] for _ in range(2))
    m = TuckerModel(DenseTensor(np.zeros((2, 2))), qs)
    assert not reconstruct(m).data.any()
    assert explained_variance(t, m) == pytest.approx(0.0, abs=1e-12)


def test_explained_variance_norm_oracle(rng):
    t = DenseTensor(rng.normal(size=(5, 4, 3)))
    m = hooi(t, (2, 2, 2))
    direct = 1 - np.sum((t.data - reconstruct(m).data) ** 2) / np.sum(t.data ** 2)
    assert explained_variance(t, m) == pytest.approx(direct, abs=1e-12)
    assert 0.0 <= explained_variance(t, m) <= 1.0
    with pytest.raises(DegenerateInputError):
        explained_variance(DenseTensor(np.zeros((5, 4, 3))), m)


def test_basis_contribution_examples(rng):
    m = TuckerModel(DenseTensor(np.array([[2.0, 0.0], [0.0, 1.0]])), (np.eye(2), np.eye(2)))
    np.testing.assert_allclose(basis_contributions(m, 0), [0.8, 0.2], atol=1e-15)
    one = TuckerModel(DenseTensor(np.ones((1, 1, 1))), (np.ones((1, 1)),) * 3)
    assert basis_contribution(one, 2, 0) == 1.0
    rand = hooi(DenseTensor(rng.normal(size=(4, 4, 4))), (2, 3, 2))
    for k in range(3):
        assert basis_contributions(rand, k).sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(IndexError):
        basis_contribution(rand, 0, 2)


def test_tucker_model_validates_shapes():
    with pytest.raises(DimensionError):
        TuckerModel(DenseTensor(np.ones((2, 2))), (np.ones((3, 2)),))
    with pytest.raises(DimensionError):
        TuckerModel(DenseTensor(np.ones((3, 1))), (np.ones((2, 3)), np.ones((2, 1))))


def test_save_load_round_trip(tmp_path, rng):
    t = DenseTensor(rng.normal(size=(4, 3, 5)))
    m = hooi(t, (2, 2, 3))
    save_tucker(m, tmp_path / "tk", explained=explained_variance(t, m))
    back = load_tucker(tmp_path / "tk")
    assert back.ranks == m.ranks
    np.testing.assert_array_equal(back.core.data, m.core.data)
    for a, b in zip(back.factors, m.factors):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(2, 5)), st.integers(0, 10**6))
def test_hooi_orthonormal_property(dims, seed):
    rng = np.random.default_rng(seed)
    ranks = tuple(int(rng.integers(1, d + 1)) for d in dims)
    m = hooi(DenseTensor(rng.normal(size=dims)), ranks)
    assert m.orthonormality_error() <= 1e-10


def test_synthetic_ensemble_ranks_near_reference():
    from mftensor.synth import SynthConfig, generate
    d = generate(SynthConfig())
    ranks = select_ranks(d.z_lf, 0.99)
    # reference configuration (4, 3, 2, 4); treated as a sanity band
    assert all(abs(a - b) <= 2 for a, b in zip(ranks, (4, 3, 2, 4)))


def test_unfold_used_by_rank_selection_matches(rng):
    t = DenseTensor(rng.normal(size=(3, 4, 5)))
    for k in range(3):
        m = unfold(t, k)
        ev = np.linalg.svd(m, compute_uv=False) ** 2
        r = select_ranks(t, 0.8)[k]
        assert ev[:r].sum() >= 0.8 * ev.sum() - 1e-12
        assert r == 1 or ev[:r - 1].sum() < 0.8 * ev.sum()
