import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayestucker.tensor_core import (
    DenseTensor,
    TuckerModel,
    hosvd,
    matricize,
    mode_product,
    multilinear_rank,
    refold,
    tucker_product,
)
from bayestucker.random_kernels import sample_stiefel_uniform
from conftest import kron_reversed


def index_oracle_matricize(T, k):
    # explicit enumeration of the mode-k unfolding, remaining modes lowest-first
    dims = T.shape
    rest = [d for j, d in enumerate(dims) if j != k]
    out = np.zeros((dims[k], int(np.prod(rest))))
    for idx in itertools.product(*[range(n) for n in dims]):
        others = [idx[j] for j in range(len(dims)) if j != k]
        col, stride = 0, 1
        for i, n in zip(others, rest):
            col += i * stride
            stride *= n
        out[idx[k], col] = T[idx]
    return out


def test_vectorization_order():
    T = DenseTensor.from_vec(np.arange(1, 9), (2, 2, 2))
    assert T.values[1, 0, 0] == 2 and T.values[0, 1, 0] == 3 and T.values[0, 0, 1] == 5
    np.testing.assert_array_equal(T.vec(), np.arange(1, 9))


def test_matricize_small_example():
    T = DenseTensor.from_vec(np.arange(1, 9), (2, 2, 2))
    np.testing.assert_array_equal(matricize(T, 0), [[1, 3, 5, 7], [2, 4, 6, 8]])
    np.testing.assert_array_equal(matricize(T, 0), index_oracle_matricize(T.values, 0))


def test_matricize_matrix_identity(rng):
    M = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(matricize(M, 0), M)
    np.testing.assert_array_equal(refold(M, 0, M.shape), M)


@pytest.mark.parametrize("dims", [(3, 4), (2, 3, 4), (2, 3, 2, 3)])
def test_matricize_matches_index_oracle(dims, rng):
    T = rng.normal(size=dims)
    for k in range(len(dims)):
        np.testing.assert_array_equal(matricize(T, k), index_oracle_matricize(T, k))


def test_refold_inverts_small_example():
    M = np.array([[1, 3, 5, 7], [2, 4, 6, 8]], dtype=float)
    np.testing.assert_array_equal(refold(M, 0, (2, 2, 2)).ravel(order="F"), np.arange(1, 9))
    np.testing.assert_array_equal(refold(np.zeros((2, 4)), 1, (2, 2, 2)), np.zeros((2, 2, 2)))


def test_mode_errors(rng):
    T = rng.normal(size=(2, 3, 4))
    with pytest.raises(IndexError):
        matricize(T, 3)
    with pytest.raises(ValueError):
        refold(np.zeros((3, 5)), 1, (2, 3, 4))
    with pytest.raises(ValueError):
        tucker_product(T, [np.eye(2), np.eye(2), np.eye(4)])


@settings(max_examples=30, deadline=None)
@given(dims=st.lists(st.integers(1, 4), min_size=2, max_size=4), seed=st.integers(0, 2**31))
def test_round_trip(dims, seed):
    T = np.random.default_rng(seed).normal(size=dims)
    for k in range(len(dims)):
        np.testing.assert_array_equal(refold(matricize(T, k), k, dims), T)
        Mk = matricize(T, k)
        np.testing.assert_array_equal(matricize(refold(Mk, k, dims), k), Mk)
        assert np.isclose(np.sum(Mk ** 2), np.sum(T ** 2))


def test_identity_factors_leave_core(rng):
    S = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(tucker_product(S, [np.eye(n) for n in S.shape]), S)


def test_matrix_case_is_usvt(rng):
    S = rng.normal(size=(2, 3))
    U1, U2 = rng.normal(size=(5, 2)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(tucker_product(S, [U1, U2]), U1 @ S @ U2.T, rtol=1e-12)


@pytest.mark.parametrize("core_dims,out_dims", [((2, 2, 2), (3, 3, 3)), ((2, 3, 4), (4, 4, 4)), ((1, 2, 2, 1), (2, 3, 2, 2))])
def test_tucker_kronecker_equivalence(core_dims, out_dims, rng):
    S = rng.normal(size=core_dims)
    C = [rng.normal(size=(n, r)) for n, r in zip(out_dims, core_dims)]
    lhs = tucker_product(S, C).ravel(order="F")
    rhs = kron_reversed(C) @ S.ravel(order="F")
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_matricized_tucker_identity(rng):
    dims, ranks = (4, 3, 4), (2, 3, 2)
    S = rng.normal(size=ranks)
    U = [sample_stiefel_uniform(n, r, rng) for n, r in zip(dims, ranks)]
    M = tucker_product(S, U)
    for k in range(3):
        others = [U[j] for j in range(3) if j != k]
        rhs = U[k] @ matricize(S, k) @ kron_reversed(others).T
        np.testing.assert_allclose(matricize(M, k), rhs, atol=1e-10)


def test_norm_invariance_under_square_orthogonal(rng):
    T = rng.normal(size=(3, 4, 2))
    W = [sample_stiefel_uniform(n, n, rng) for n in T.shape]
    assert np.isclose(np.sum(tucker_product(T, W) ** 2), np.sum(T ** 2), rtol=1e-12)


def test_mode_product_shape(rng):
    T = rng.normal(size=(2, 3, 4))
    assert mode_product(T, rng.normal(size=(5, 3)), 1).shape == (2, 5, 4)


def test_hosvd_full_rank_exact(rng):
    T = rng.normal(size=(3, 4, 5))
    fit = hosvd(T, T.shape)
    np.testing.assert_allclose(fit.full(), T, atol=1e-12)
    assert fit.orthonormality_error() < 1e-10


def test_hosvd_recovers_planted_rank(rng):
    dims, r0 = (8, 7, 6), (3, 2, 2)
    U = [sample_stiefel_uniform(n, r, rng) for n, r in zip(dims, r0)]
    T = tucker_product(rng.normal(size=r0), U)
    oracle = tuple(np.linalg.matrix_rank(matricize(T, k), tol=1e-8 * np.linalg.norm(matricize(T, k), 2)) for k in range(3))
    assert oracle == r0
    assert multilinear_rank(T) == r0
    fit = hosvd(T, r0)
    assert np.linalg.norm(fit.full() - T) <= 1e-8 * np.linalg.norm(T)


def test_rank_one_tensor(rng):
    a, b, c = rng.normal(size=4), rng.normal(size=3), rng.normal(size=2)
    T = np.einsum("i,j,k->ijk", a, b, c)
    assert multilinear_rank(T) == (1, 1, 1)
    fit = hosvd(T, (1, 1, 1))
    assert fit.core.shape == (1, 1, 1)
    np.testing.assert_allclose(fit.full(), T, atol=1e-12)


def test_multilinear_rank_cases(rng):
    assert multilinear_rank(np.zeros((3, 2, 2))) == (0, 0, 0)
    dims, r0 = (5, 4, 3), (2, 2, 1)
    U = [sample_stiefel_uniform(n, r, rng) for n, r in zip(dims, r0)]
    T = tucker_product(rng.normal(size=r0), U)
    svd_oracle = tuple(int(np.sum(np.linalg.svd(matricize(T, k), compute_uv=False) > 1e-8 * np.linalg.norm(T))) for k in range(3))
    assert multilinear_rank(T) == svd_oracle == (2, 2, 1)
    A = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 5))
    assert multilinear_rank(A)[0] == np.linalg.matrix_rank(A)
    with pytest.raises(ValueError):
        multilinear_rank(A, tol=0)


def test_tucker_model_validation(rng):
    with pytest.raises(ValueError):
        TuckerModel(np.zeros((3, 2)), [np.eye(2)[:, :1], np.eye(2)])
    m = TuckerModel(np.ones((1, 1)), [np.eye(2)[:, :1], np.eye(3)[:, :1]], sigma=2.0)
    assert m.dims == (2, 3) and m.full()[0, 0] == 2.0


def test_dense_tensor_mask():
    T = DenseTensor(np.arange(4.0).reshape(2, 2), np.array([[True, False], [True, True]]))
    assert np.isnan(T.values[0, 1]) and not T.fully_observed
    with pytest.raises(ValueError):
        T.values[0, 0] = 1.0
