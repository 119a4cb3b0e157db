import numpy as np
import pytest
from scipy.linalg import subspace_angles

from bayestucker.diagnostics import (
    DegenerateTraceWarning,
    center_all_modes,
    ess_report,
    effective_sample_size,
    mode_singular_vectors,
    normalized_eigenspectrum,
    relative_squared_error,
)
from bayestucker.random_kernels import sample_stiefel_uniform
from bayestucker.tensor_core import matricize, tucker_product


def white_noise_ess(seeds=200):
    return np.array([effective_sample_size(np.random.default_rng(s).normal(size=1000)) for s in range(seeds)])


@pytest.mark.xfail(strict=True, reason="initial-positive-sequence truncation adds chance-positive "
                   "autocorrelation pairs; about 9% of white-noise traces of length 1000 land below 800")
def test_white_noise_ess_tight_band():
    values = white_noise_ess()
    assert np.mean((values >= 800) & (values <= 1000)) >= 0.99


def test_white_noise_ess_near_length():
    values = white_noise_ess()
    assert np.all(values <= 1000) and 900 <= np.median(values) <= 1000
    assert np.mean(values >= 800) >= 0.85 and values.min() >= 500


def test_ar1_ess():
    g = np.random.default_rng(0)
    n, rho = 10_000, 0.5
    x = np.empty(n)
    x[0] = g.normal()
    for t in range(1, n):
        x[t] = rho * x[t - 1] + np.sqrt(1 - rho**2) * g.normal()
    assert abs(effective_sample_size(x) / (n / 3) - 1) < 0.15


def test_ess_cap_and_errors():
    x = np.array([1.0, -1.0] * 50)  # negatively correlated: raw estimate exceeds N
    assert effective_sample_size(x) <= 100
    with pytest.warns(DegenerateTraceWarning):
        assert effective_sample_size(np.ones(20)) == 20
    with pytest.raises(ValueError):
        effective_sample_size(np.arange(5.0))


def test_ess_report_flags_low(rng):
    rows = ess_report({"a": rng.normal(size=500), "b": np.cumsum(rng.normal(size=500))})
    assert [r["low"] for r in rows] == [False, True]


def test_relative_squared_error(rng):
    M = rng.normal(size=(3, 4, 2))
    assert relative_squared_error(M, M) == 0.0
    assert relative_squared_error(M, np.zeros_like(M)) == 1.0
    H = M + 0.1 * rng.normal(size=M.shape)
    W = [sample_stiefel_uniform(n, n, rng) for n in M.shape]
    assert abs(relative_squared_error(tucker_product(M, W), tucker_product(H, W)) - relative_squared_error(M, H)) < 1e-12
    with pytest.raises(ValueError):
        relative_squared_error(np.zeros(3), np.ones(3))


def test_eigenspectrum(rng):
    a, b, c = rng.normal(size=4), rng.normal(size=3), rng.normal(size=2)
    np.testing.assert_allclose(normalized_eigenspectrum(np.einsum("i,j,k->ijk", a, b, c), 0), [1, 0, 0, 0], atol=1e-12)
    U = [sample_stiefel_uniform(n, r, rng) for n, r in zip((5, 4, 3), (2, 2, 2))]
    M = tucker_product(rng.normal(size=(2, 2, 2)), U)
    spec = normalized_eigenspectrum(M, 1)
    assert abs(spec.sum() - 1) < 1e-12
    gram = matricize(M, 1) @ matricize(M, 1).T
    oracle = np.sort(np.linalg.eigvalsh(gram))[::-1]
    np.testing.assert_allclose(spec, oracle / oracle.sum(), atol=1e-12)
    np.testing.assert_allclose(normalized_eigenspectrum(M.transpose(2, 1, 0), 1), spec, atol=1e-12)
    with pytest.raises(ValueError):
        normalized_eigenspectrum(np.zeros((2, 2)), 0)


def test_centering(rng):
    dims = (3, 4, 2, 5)
    effects = [rng.normal(size=n) for n in dims]
    M = sum(np.reshape(e, [-1 if i == k else 1 for i in range(4)]) for k, e in enumerate(effects))
    M = np.broadcast_to(M, dims)
    assert np.linalg.norm(center_all_modes(M)) <= 1e-10 * np.linalg.norm(M)
    X = rng.normal(size=dims)
    C = center_all_modes(X)
    np.testing.assert_allclose(center_all_modes(C), C, atol=1e-12)
    for k in range(4):
        np.testing.assert_allclose(C.mean(axis=k), 0, atol=1e-12)
    # mode order does not matter
    perm = (2, 0, 3, 1)
    np.testing.assert_allclose(center_all_modes(X.transpose(perm)), C.transpose(perm), atol=1e-12)


def test_mode_singular_vectors(rng):
    A = rng.normal(size=(5, 4))
    V = mode_singular_vectors(A, 0, 2)
    U = np.linalg.svd(A)[0][:, :2]
    np.testing.assert_allclose(np.abs(V), np.abs(U), atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(2), atol=1e-10)
    assert np.all(V[np.argmax(np.abs(V), axis=0), [0, 1]] > 0)
    factors = [sample_stiefel_uniform(n, 2, rng) for n in (6, 5, 4)]
    M = tucker_product(rng.normal(size=(2, 2, 2)), factors)
    assert subspace_angles(mode_singular_vectors(M, 2, 2), factors[2]).max() < 1e-6
    with pytest.raises(ValueError):
        mode_singular_vectors(A, 0, 6)
