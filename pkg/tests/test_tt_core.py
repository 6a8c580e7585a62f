import functools
import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import loop_dense, random_cores, random_tt, rel
from ttot.tt_core import (
    MAX_DENSE_ENTRIES,
    ContractionSpec,
    DimensionError,
    RankDeficiencyWarning,
    RankError,
    TTTensor,
    contract,
    fold,
    left_fold,
    left_orthogonalize,
    left_unfold,
    orthogonality_error,
    random_tt_unit,
    restricted_frobenius_norm,
    tt_spectrum,
    tt_svd,
    tt_to_dense,
    unfold,
    unfolding_ranks,
    validate_ranks,
)


# tt_to_dense

def test_scalar_chain_product():
    tt = TTTensor([np.full((1, 1, 1), v) for v in (2.0, 3.0, 5.0)])
    assert tt_to_dense(tt).ravel().tolist() == [30.0]


def test_two_factor_outer_product():
    tt = TTTensor([np.array([1.0, 2.0]).reshape(1, 2, 1), np.array([3.0, 4.0]).reshape(1, 2, 1)])
    np.testing.assert_array_equal(tt_to_dense(tt), [[3.0, 4.0], [6.0, 8.0]])


@pytest.mark.parametrize("seed", range(5))
def test_dense_matches_slice_loop(seed):
    rng = np.random.default_rng(seed)
    cores = random_cores(rng, (2, 2, 2), (2, 2))
    np.testing.assert_allclose(tt_to_dense(TTTensor(cores)), loop_dense(cores), rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("dims,ranks", [((3, 4, 2, 3), (2, 3, 2)), ((5,), ()), ((2, 3), (2,))])
def test_dense_matches_slice_loop_shapes(rng, dims, ranks):
    cores = random_cores(rng, dims, ranks)
    np.testing.assert_allclose(tt_to_dense(TTTensor(cores)), loop_dense(cores), rtol=1e-12, atol=1e-13)


def test_chain_mismatch_rejected(rng):
    with pytest.raises(DimensionError):
        TTTensor([rng.standard_normal((1, 2, 2)), rng.standard_normal((3, 2, 1))])
    with pytest.raises(DimensionError):
        TTTensor([rng.standard_normal((2, 2, 1))])
    with pytest.raises(DimensionError):
        TTTensor([rng.standard_normal((2, 2))])


def test_tt_is_immutable(rng):
    cores = random_cores(rng, (2, 3), (2,))
    tt = TTTensor(cores)
    cores[0][0, 0, 0] = 99.0
    assert tt.factors[0][0, 0, 0] != 99.0
    with pytest.raises(ValueError):
        tt.factors[0][0, 0, 0] = 1.0


def test_norm_without_dense(rng):
    tt = random_tt(rng, (3, 4, 2, 3), (2, 3, 2))
    assert tt.norm() == pytest.approx(np.linalg.norm(tt.dense()), rel=1e-12)


def test_dense_cap():
    tt = TTTensor([np.ones((1, 2**10, 1))] * 3)
    assert 2**30 > MAX_DENSE_ENTRIES
    with pytest.raises(MemoryError):
        tt_to_dense(tt)


def test_false_orthogonal_flag_rejected(rng):
    with pytest.raises(ValueError):
        TTTensor(random_cores(rng, (3, 3), (2,)), left_orthogonal=True)


# contract

def test_contract_matrix_product(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 2))
    np.testing.assert_allclose(contract(a, b, ContractionSpec((1,), (0,))), a @ b, rtol=1e-14)


def test_contract_full_is_frobenius_sq(rng):
    a = rng.standard_normal((2, 3, 4))
    out = contract(a, a, ((0, 1, 2), (0, 1, 2)))
    assert out.shape == ()
    assert float(out) == pytest.approx(np.sum(a**2), rel=1e-14)


def test_contract_two_pairs_loop_oracle(rng):
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((4, 3, 2))
    # a mode 1 with b mode 1, a mode 2 with b mode 0 -> (2, 2)
    got = contract(a, b, ((1, 2), (1, 0)))
    want = np.zeros((2, 2))
    for i in range(2):
        for p in range(2):
            for j in range(3):
                for k in range(4):
                    want[i, p] += a[i, j, k] * b[k, j, p]
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_contract_surviving_mode_order(rng):
    a = rng.standard_normal((2, 5, 3))
    b = rng.standard_normal((4, 5, 6))
    assert contract(a, b, ((1,), (1,))).shape == (2, 3, 4, 6)


def test_contract_rejects_bad_spec(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 2))
    with pytest.raises(DimensionError):
        contract(a, b, ((1,), (0,)))
    with pytest.raises(DimensionError):
        ContractionSpec((0, 0), (0, 1))
    with pytest.raises(DimensionError):
        ContractionSpec((0,), (0, 1))
    with pytest.raises(DimensionError):
        contract(a, b, ((2,), (0,)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_contract_bilinear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    a, a2 = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((4, 2, 5))
    spec = ((0, 2), (1, 0))
    lhs = contract(alpha * a + beta * a2, b, spec)
    rhs = alpha * contract(a, b, spec) + beta * contract(a2, b, spec)
    scale = abs(alpha) * np.linalg.norm(contract(a, b, spec)) + abs(beta) * np.linalg.norm(contract(a2, b, spec))
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(scale, 1e-300)


# unfold

def test_unfold_matrix_is_identity(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(unfold(x, 1), x)


def test_unfold_index_arithmetic():
    x = np.arange(1.0, 9.0).reshape(2, 2, 2)
    mat = unfold(x, 2)
    assert mat.shape == (4, 2)
    for s1, s2, s3 in itertools.product(range(1, 3), repeat=3):
        assert mat[s1 + 2 * (s2 - 1) - 1, s3 - 1] == x[s1 - 1, s2 - 1, s3 - 1]


def test_unfold_general_index_arithmetic(rng):
    dims = (2, 3, 4, 2)
    x = rng.standard_normal(dims)
    for i in range(1, 4):
        mat = unfold(x, i)
        for idx in itertools.product(*(range(d) for d in dims)):
            row = sum(idx[j] * int(np.prod(dims[:j])) for j in range(i))
            col = sum(idx[j] * int(np.prod(dims[i:j])) for j in range(i, 4))
            assert mat[row, col] == x[idx]
        np.testing.assert_array_equal(fold(mat, dims), x)


def test_unfold_bad_index(rng):
    with pytest.raises(ValueError):
        unfold(rng.standard_normal((2, 2, 2)), 3)
    with pytest.raises(ValueError):
        unfold(rng.standard_normal((2, 2, 2)), 0)


@pytest.mark.parametrize("seed", range(100))
def test_unfolding_rank_equals_tt_rank(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(3, 6))
    dims = tuple(int(d) for d in rng.integers(2, 5, size=k))
    ranks = tuple(min(int(rng.integers(1, 4)), int(np.prod(dims[:i])), int(np.prod(dims[i:]))) for i in range(1, k))
    try:
        ranks = validate_ranks(dims, ranks)
    except RankError:
        ranks = (1,) * (k - 1)
    x = random_tt(rng, dims, ranks).dense()
    assert unfolding_ranks(x) == ranks


# left unfolding

def test_left_unfold_column():
    f = np.arange(4.0).reshape(1, 4, 1)
    np.testing.assert_array_equal(left_unfold(f), [[0.0], [1.0], [2.0], [3.0]])


def test_left_unfold_stacks_slices(rng):
    f = rng.standard_normal((2, 3, 4))
    np.testing.assert_array_equal(left_unfold(f), np.vstack([f[:, s, :] for s in range(3)]))
    assert np.array_equal(left_fold(left_unfold(f), f.shape), f)


def test_left_fold_shape_check(rng):
    with pytest.raises(DimensionError):
        left_fold(rng.standard_normal((5, 4)), (2, 3, 4))
    with pytest.raises(DimensionError):
        left_unfold(rng.standard_normal((3, 4)))


# tt_svd

def test_tt_svd_rank_one_exact(rng):
    vecs = [rng.standard_normal(d) for d in (3, 4, 2, 3)]
    x = np.einsum("a,b,c,d->abcd", *vecs)
    tt = tt_svd(x, (1, 1, 1))
    assert rel(tt.dense(), x) <= 1e-12


def test_tt_svd_exact_rank_two(rng):
    x = random_tt(rng, (3, 4, 3), (2, 2)).dense()
    tt = tt_svd(x, (2, 2))
    assert rel(tt.dense(), x) <= 1e-10
    assert orthogonality_error(tt) <= 1e-10
    assert tt.left_orthogonal


@pytest.mark.parametrize("seed", range(100))
def test_tt_svd_reconstruction(seed):
    rng = np.random.default_rng(1000 + seed)
    k = int(rng.integers(2, 7))
    dims = tuple(int(d) for d in rng.integers(2, 5, size=k))
    want = []
    for i in range(1, k):
        want.append(min(int(rng.integers(1, 4)), int(np.prod(dims[:i])), int(np.prod(dims[i:]))))
    try:
        ranks = validate_ranks(dims, want)
    except RankError:
        ranks = (1,) * (k - 1)
    x = random_tt(rng, dims, ranks).dense()
    # request at least the true ranks, sometimes more
    bigger = tuple(min(r + int(rng.integers(0, 2)), int(np.prod(dims[:i + 1])), int(np.prod(dims[i + 1:])))
                   for i, r in enumerate(ranks))
    try:
        validate_ranks(dims, bigger)
    except RankError:
        bigger = ranks
    tt = tt_svd(x, bigger)
    assert tt.ranks == bigger
    assert rel(tt.dense(), x) <= 1e-10
    assert orthogonality_error(tt) <= 1e-10


def test_tt_svd_pads_with_orthonormal_basis(rng):
    x = random_tt(rng, (3, 3, 3), (1, 1)).dense()
    tt = tt_svd(x, (2, 2))
    assert tt.ranks == (2, 2)
    assert orthogonality_error(tt) <= 1e-10
    assert rel(tt.dense(), x) <= 1e-12


def test_tt_svd_rank_too_large(rng):
    with pytest.raises(RankError):
        tt_svd(rng.standard_normal((2, 3, 2)), (3, 2))
    with pytest.raises(RankError):
        tt_svd(rng.standard_normal((2, 3, 2)), (2,))


def test_tt_svd_sign_convention(rng):
    tt = tt_svd(rng.standard_normal((3, 4, 3)), (2, 2))
    for f in tt.factors[:-1]:
        lu = left_unfold(f) if f.shape[0] == 1 else f.reshape(-1, f.shape[2])
        idx = np.argmax(np.abs(lu), axis=0)
        assert np.all(lu[idx, np.arange(lu.shape[1])] > 0)


@pytest.mark.parametrize("seed", range(20))
def test_difference_rank_doubling(seed):
    rng = np.random.default_rng(2000 + seed)
    dims, ranks = (4, 4, 4, 4), (2, 2, 2)
    x1 = random_tt(rng, dims, ranks).dense()
    x2 = random_tt(rng, dims, ranks).dense()
    d = x1 - x2
    tt = tt_svd(d, tuple(2 * r for r in ranks))
    assert rel(tt.dense(), d) <= 1e-9


@functools.lru_cache(maxsize=None)
def perturbation_instances(n, seed):
    """Pairs (X*, D) meeting 500 K ||D|| <= sigma_min(X*)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        k = int(rng.integers(3, 5))
        dims = (3,) * k
        ranks = (2,) * (k - 1)
        xs = random_tt_unit(dims, ranks, int(rng.integers(2**31)))
        smin = tt_spectrum(xs).sigma_min
        c = 500.0 * k
        noise = rng.standard_normal(dims)
        scale = float(rng.uniform(0.05, 1.0)) * smin / (c * np.linalg.norm(noise))
        out.append((xs, noise * scale, smin, k))
    return out


@pytest.mark.parametrize("case", range(50))
def test_tt_svd_perturbation_bound(case):
    xs, d, smin, k = perturbation_instances(50, 7)[case]
    assert 500.0 * k * np.linalg.norm(d) <= smin * (1 + 1e-12)
    out = tt_svd(xs.dense() + d, xs.ranks)
    lhs = np.sum((out.dense() - xs.dense()) ** 2)
    dn = np.linalg.norm(d)
    assert lhs <= dn**2 + 600.0 * k * dn**3 / smin


# left_orthogonalize

def test_left_orthogonalize_idempotent_on_orthogonal(rng):
    tt = tt_svd(rng.standard_normal((3, 4, 3)), (2, 2))
    out = left_orthogonalize(tt)
    assert rel(out.dense(), tt.dense()) <= 1e-12
    for a, b in zip(out.factors[:-1], tt.factors[:-1]):
        ga = left_unfold(a)
        gb = left_unfold(b)
        np.testing.assert_allclose(np.abs(ga.T @ gb), np.eye(ga.shape[1]), atol=1e-10)


@pytest.mark.parametrize("t", [1e-3, 0.1, 10.0, 1e3])
def test_left_orthogonalize_unbalanced(rng, t):
    cores = random_cores(rng, (3, 4, 4, 3), (2, 3, 2))
    cores[0] = cores[0] * t
    cores[1] = cores[1] / t
    cores[2] = cores[2] * t
    tt = TTTensor(cores)
    out = left_orthogonalize(tt)
    assert rel(out.dense(), tt.dense()) <= 1e-10
    assert orthogonality_error(out) <= 1e-10
    assert np.linalg.norm(left_unfold(out.factors[-1])) == pytest.approx(np.linalg.norm(tt.dense()), rel=1e-10)


def test_left_orthogonalize_warns_on_rank_deficiency(rng):
    cores = random_cores(rng, (3, 3, 3), (2, 2))
    cores[0][:, :, 1] = cores[0][:, :, 0]
    with pytest.warns(RankDeficiencyWarning):
        left_orthogonalize(TTTensor(cores))


def test_left_orthogonalize_clean_input_does_not_warn(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        left_orthogonalize(random_tt(rng, (3, 3, 3), (2, 2)))


# spectrum

def test_spectrum_rank_one(rng):
    vecs = [rng.standard_normal(d) for d in (3, 2, 4)]
    x = np.einsum("a,b,c->abc", *vecs)
    c = np.linalg.norm(x)
    for route in ("dense", "tt"):
        spec = tt_spectrum(tt_svd(x, (1, 1)), route=route)
        assert spec.sigma_min == pytest.approx(c, rel=1e-12)
        assert spec.sigma_max == pytest.approx(c, rel=1e-12)
        assert spec.kappa == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_footnote_identity(seed):
    rng = np.random.default_rng(seed)
    tt = left_orthogonalize(random_tt(rng, (3, 4, 3, 2), (2, 3, 2)))
    x = tt.dense()
    for i in range(1, tt.order):
        right = tt.factors[i].reshape(tt.factors[i].shape[0], -1)
        for f in tt.factors[i + 1:]:
            right = (right.reshape(-1, f.shape[0]) @ f.reshape(f.shape[0], -1)).reshape(right.shape[0], -1)
        s_right = np.linalg.svd(right, compute_uv=False)
        s_unf = np.linalg.svd(unfold(x, i), compute_uv=False)[: s_right.size]
        np.testing.assert_allclose(s_right, s_unf, atol=1e-10 * s_unf[0])


@pytest.mark.parametrize("seed", range(10))
def test_spectrum_two_routes(seed):
    rng = np.random.default_rng(seed)
    tt = random_tt(rng, (3, 4, 3, 3), (2, 3, 2))
    a = tt_spectrum(tt, route="dense")
    b = tt_spectrum(tt, route="tt")
    np.testing.assert_allclose(a.per_unfolding_sigma_min, b.per_unfolding_sigma_min, rtol=1e-9)
    np.testing.assert_allclose(a.per_unfolding_sigma_max, b.per_unfolding_sigma_max, rtol=1e-9)


# random_tt_unit

def test_random_tt_unit_norm_and_ranks():
    dims, ranks = (4, 4, 4, 4), (2, 3, 2)
    tt = random_tt_unit(dims, ranks, 3)
    assert abs(np.linalg.norm(tt.dense()) - 1.0) <= 1e-12
    assert unfolding_ranks(tt.dense()) == ranks
    assert tt.left_orthogonal


def test_random_tt_unit_deterministic():
    a = random_tt_unit((3, 4, 3), (2, 2), 11)
    b = random_tt_unit((3, 4, 3), (2, 2), 11)
    for fa, fb in zip(a.factors, b.factors):
        assert fa.tobytes() == fb.tobytes()
    c = random_tt_unit((3, 4, 3), (2, 2), 12)
    assert not np.array_equal(a.factors[-1], c.factors[-1])


# restricted Frobenius norm

def test_restricted_norm_full_ranks(rng):
    h = rng.standard_normal((2, 3, 2))
    assert restricted_frobenius_norm(h, (2, 2)) == pytest.approx(np.linalg.norm(h), rel=1e-12)


def test_restricted_norm_rank_one_tensor(rng):
    h = np.einsum("a,b,c->abc", *(rng.standard_normal(d) for d in (3, 2, 4)))
    assert restricted_frobenius_norm(h, (1, 1)) == pytest.approx(np.linalg.norm(h), rel=1e-12)


def test_restricted_norm_top_singular(rng):
    h = rng.standard_normal((3, 2, 4, 2))
    want = max(np.linalg.svd(h.reshape(3, -1, order="F") if i == 1 else unfold(h, i), compute_uv=False)[0]
               for i in (1, 2, 3))
    assert restricted_frobenius_norm(h, (1, 1, 1)) == pytest.approx(want, rel=1e-12)
