import numpy as np
import pytest
from scipy import stats
from scipy.special import i0, iv

from bayestucker.random_kernels import (
    RngStream,
    dirichlet_logpdf,
    sample_inverse_gamma,
    sample_simplex_proposal,
    sample_stiefel_uniform,
    sample_truncated_normal,
    sample_vmf_matrix,
    truncated_normal,
)


def test_stream_determinism_and_spawn():
    a, b = RngStream(7), RngStream(7)
    np.testing.assert_array_equal(a.generator.random(5), b.generator.random(5))
    kids1 = [k.generator.random() for k in RngStream(7).spawn(3)]
    kids2 = [k.generator.random() for k in RngStream(7).spawn(3)]
    assert kids1 == kids2 and len(set(kids1)) == 3


def test_stream_state_replay():
    s = RngStream(3)
    s.generator.random(10)
    saved = s.state
    x = s.generator.random(4)
    s.state = saved
    np.testing.assert_array_equal(s.generator.random(4), x)


def test_stiefel_orthonormal_and_uniform():
    g = RngStream(1).generator
    U = sample_stiefel_uniform(6, 3, g)
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)
    # first coordinate of a uniform unit vector in R^3 is uniform on (-1, 1)
    x = np.array([sample_stiefel_uniform(3, 1, g)[0, 0] for _ in range(4000)])
    assert stats.kstest(x, stats.uniform(-1, 2).cdf).pvalue > 1e-3
    with pytest.raises(ValueError):
        sample_stiefel_uniform(2, 3, g)


def test_vmf_circle_matches_von_mises():
    g = RngStream(11).generator
    kappa, phi = 2.5, 0.8
    H = kappa * np.array([[np.cos(phi)], [np.sin(phi)]])
    draws = np.empty(100_000)
    for i in range(draws.size):
        u = sample_vmf_matrix(H, g)
        draws[i] = np.arctan2(u[1, 0], u[0, 0])
    offset = (draws - phi + np.pi) % (2 * np.pi) - np.pi
    # von Mises CDF by numerical integration of exp(kappa cos t)
    grid = np.linspace(-np.pi, np.pi, 20_001)
    dens = np.exp(kappa * np.cos(grid))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    assert stats.kstest(offset, lambda t: np.interp(t, grid, cdf)).pvalue > 1e-3


@pytest.mark.parametrize("n,kappa", [(3, 0.5), (5, 3.0), (8, 20.0)])
def test_vmf_mean_resultant_length(n, kappa):
    g = RngStream(n).generator
    mu = np.zeros(n)
    mu[0] = 1.0
    x = np.array([sample_vmf_matrix(kappa * mu[:, None], g)[0, 0] for _ in range(20_000)])
    expected = iv(n / 2, kappa) / iv(n / 2 - 1, kappa)
    assert abs(x.mean() - expected) < 4 * x.std() / np.sqrt(x.size)


def test_vmf_square_case_mixes_over_o2():
    # etr(kappa U) on O(2): rotations have angle ~ vonMises(2 kappa), reflections are flat
    g = RngStream(5).generator
    kappa = 0.7
    H = kappa * np.eye(2)
    U = np.eye(2)
    dets, angles = [], []
    for _ in range(40_000):
        U = sample_vmf_matrix(H, g, sweeps=1, start=U)
        if np.linalg.det(U) > 0:
            dets.append(1)
            angles.append(np.arctan2(U[1, 0], U[0, 0]))
        else:
            dets.append(0)
    p = i0(2 * kappa) / (i0(2 * kappa) + 1)
    assert abs(np.mean(dets) - p) < 4 * np.sqrt(p * (1 - p) / len(dets))
    assert stats.kstest(angles, stats.vonmises(2 * kappa).cdf).pvalue > 1e-3


def test_vmf_output_orthonormal_and_concentrated():
    g = RngStream(2).generator
    M = sample_stiefel_uniform(7, 3, g)
    for n, r in [(7, 3), (4, 4), (5, 4)]:
        U = sample_vmf_matrix(g.normal(size=(n, r)), g)
        np.testing.assert_allclose(U.T @ U, np.eye(r), atol=1e-10)
    U = sample_vmf_matrix(1e6 * M, g, start=M)
    assert np.linalg.norm(U - M) < 1e-2


def test_vmf_zero_parameter_is_uniform():
    g = RngStream(4).generator
    x = np.array([sample_vmf_matrix(np.zeros((3, 2)), g)[2, 1] for _ in range(4000)])
    assert stats.kstest(x, stats.uniform(-1, 2).cdf).pvalue > 1e-3


def test_vmf_rejects_nonfinite():
    with pytest.raises(ValueError):
        sample_vmf_matrix(np.array([[np.nan], [1.0]]), RngStream(0))


def test_vmf_deterministic():
    H = RngStream(9).generator.normal(size=(6, 3))
    np.testing.assert_array_equal(sample_vmf_matrix(H, RngStream(1)), sample_vmf_matrix(H, RngStream(1)))


@pytest.mark.parametrize("mean,lo,hi", [
    (0.0, -np.inf, np.inf),
    (0.0, 0.0, np.inf),
    (1.0, -0.5, 0.9),
    (0.0, 8.0, np.inf),
    (0.0, -np.inf, -7.0),
    (-3.0, 4.0, 4.3),
])
def test_truncated_normal_moments(mean, lo, hi):
    x = truncated_normal(np.full(20_000, mean), lo, hi, RngStream(0))
    assert np.all((x > lo) & (x < hi))
    a, b = lo - mean, hi - mean
    ref = stats.truncnorm(a, b, loc=mean)
    m, sd = ref.mean(), ref.std()
    assert abs(x.mean() - m) < 4 * sd / np.sqrt(x.size)
    # variance via the fourth central moment bound
    var_se = np.sqrt((ref.moment(4) - 4 * m * ref.moment(3) + 6 * m**2 * ref.moment(2) - 3 * m**4 - sd**4) / x.size)
    assert abs(x.var() - sd**2) < 4 * var_se + 1e-12


def test_truncated_normal_scalar_and_errors():
    v = sample_truncated_normal(0.0, 1.0, 1.5, RngStream(0))
    assert 1.0 < v < 1.5
    with pytest.raises(ValueError):
        sample_truncated_normal(0.0, 1.0, 1.0, RngStream(0))


def test_inverse_gamma():
    x = sample_inverse_gamma(3.0, 2.0, RngStream(0), size=50_000)
    prec = 1 / x
    assert abs(prec.mean() - 1.5) < 4 * np.sqrt(3.0) / 2.0 / np.sqrt(x.size)
    assert stats.kstest(x, stats.invgamma(3.0, scale=2.0).cdf).pvalue > 1e-3
    with pytest.raises(ValueError):
        sample_inverse_gamma(0.0, 1.0, RngStream(0))


def test_dirichlet_logpdf_matches_scipy():
    x, alpha = np.array([0.2, 0.3, 0.5]), np.array([1.5, 0.7, 4.0])
    assert np.isclose(dirichlet_logpdf(x, alpha), stats.dirichlet(alpha).logpdf(x))


def test_simplex_proposal():
    cur = np.array([0.5, 0.3, 0.2])
    prop, fwd, rev = sample_simplex_proposal(cur, 300.0, RngStream(0))
    assert np.isclose(prop.sum(), 1.0) and np.all(prop > 0)
    assert np.isclose(fwd, stats.dirichlet(300 * cur + 0.5).logpdf(prop))
    assert np.isclose(rev, stats.dirichlet(300 * prop + 0.5).logpdf(cur))
    one, f1, r1 = sample_simplex_proposal(np.ones(1), 100.0, RngStream(0))
    assert one[0] == 1.0 and f1 == r1 == 0.0
    with pytest.raises(ValueError):
        sample_simplex_proposal(np.array([0.5, 0.6]), 10.0, RngStream(0))
