"""Seeded sampling primitives for the Gibbs samplers.

All randomness flows from :class:`RngStream`, a thin wrapper around numpy's
PCG64 bit generator seeded through ``SeedSequence``. Independent streams for
parallel chains or replicates come from :meth:`RngStream.spawn`.
"""

from __future__ import annotations

import numba
import numpy as np
from scipy.special import gammaln, ndtr, ndtri

_TAIL_SD = 5.0
DEFAULT_VMF_SWEEPS = 5
SIMPLEX_FLOOR = 0.5


class RngStream:
    """A reproducible random stream: PCG64 seeded from ``SeedSequence(seed)``."""

    def __init__(self, seed=0):
        if isinstance(seed, np.random.SeedSequence):
            self.seed_sequence = seed
        else:
            self.seed_sequence = np.random.SeedSequence(int(seed))
        self.seed = self.seed_sequence.entropy
        self.generator = np.random.Generator(np.random.PCG64(self.seed_sequence))

    def spawn(self, count: int) -> list["RngStream"]:
        """Child streams, deterministic in (seed, spawn order)."""
        return [RngStream(ss) for ss in self.seed_sequence.spawn(count)]

    @property
    def state(self) -> dict:
        """Bit-generator state; restoring it replays the stream from this point."""
        return self.generator.bit_generator.state

    @state.setter
    def state(self, value: dict) -> None:
        self.generator.bit_generator.state = value

    def __repr__(self):
        return f"RngStream(seed={self.seed})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(0 if rng is None else rng).generator


def sample_stiefel_uniform(n: int, r: int, rng) -> np.ndarray:
    """Uniform draw from the ``n x r`` Stiefel manifold (sign-corrected QR of a Gaussian)."""
    if r > n or r < 0:
        raise ValueError(f"need 0 <= r <= n, got n={n}, r={r}")
    gen = as_generator(rng)
    G = gen.standard_normal((n, r))
    Q, R = np.linalg.qr(G)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


@numba.njit(cache=True)
def _wood_cosine(kappa, d, gen):
    # cosine of the angle to the mean direction for vMF on the unit sphere in R^d
    m1 = d - 1.0
    b = m1 / (2.0 * kappa + np.sqrt(4.0 * kappa * kappa + m1 * m1))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m1 * np.log(1.0 - x0 * x0)
    while True:
        z = gen.beta(m1 / 2.0, m1 / 2.0)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        if kappa * w + m1 * np.log(1.0 - x0 * w) - c >= np.log(gen.random()):
            return w


@numba.njit(cache=True)
def _dot(a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        acc += a[i] * b[i]
    return acc


@numba.njit(cache=True)
def _project_out_others(v, Ut, j):
    # explicit loops: BLAS call overhead dominates at these sizes
    r, n = Ut.shape
    for l in range(r):
        if l != j:
            c = _dot(Ut[l], v)
            for i in range(n):
                v[i] -= c * Ut[l, i]


@numba.njit(cache=True)
def _log_i0(x):
    # log of the modified Bessel function I_0
    if x > 30.0:
        t = 1.0 / (8.0 * x)
        series = 1.0 + t * (1.0 + t * (4.5 + t * (37.5 + t * (459.375 + t * 7441.875))))
        return x - 0.5 * np.log(2.0 * np.pi * x) + np.log(series)
    q = 0.25 * x * x
    term = 1.0
    acc = 1.0
    k = 1
    while term > 1e-17 * acc:
        term *= q / (k * k)
        acc += term
        k += 1
    return np.log(acc)


@numba.njit(cache=True)
def _circle_angle(kappa, phi, gen):
    # von Mises angle with mean phi and concentration kappa
    if kappa < 1e-300:
        return 2.0 * np.pi * gen.random()
    w = min(1.0, max(-1.0, _wood_cosine(kappa, 2.0, gen)))
    delta = np.arccos(w)
    return phi + delta if gen.random() < 0.5 else phi - delta


@numba.njit(cache=True)
def _vmf_pair_gibbs(Ht, Ut, gen, sweeps):
    # square case: each column is pinned by the others up to sign, so move
    # pairs of columns by an O(2) element drawn from its exact conditional
    r, n = Ht.shape
    for _ in range(sweeps):
        for i in range(r - 1):
            for j in range(i + 1, r):
                a11 = _dot(Ut[i], Ht[i])
                a12 = _dot(Ut[i], Ht[j])
                a21 = _dot(Ut[j], Ht[i])
                a22 = _dot(Ut[j], Ht[j])
                k_rot = np.hypot(a11 + a22, a21 - a12)
                k_ref = np.hypot(a11 - a22, a12 + a21)
                lr = _log_i0(k_rot)
                lf = _log_i0(k_ref)
                p_rot = 1.0 / (1.0 + np.exp(lf - lr))
                if gen.random() < p_rot:
                    th = _circle_angle(k_rot, np.arctan2(a21 - a12, a11 + a22), gen)
                    c, s = np.cos(th), np.sin(th)
                    q00, q01, q10, q11 = c, -s, s, c
                else:
                    th = _circle_angle(k_ref, np.arctan2(a12 + a21, a11 - a22), gen)
                    c, s = np.cos(th), np.sin(th)
                    q00, q01, q10, q11 = c, s, s, -c
                for m in range(n):
                    ui = Ut[i, m]
                    uj = Ut[j, m]
                    Ut[i, m] = q00 * ui + q10 * uj
                    Ut[j, m] = q01 * ui + q11 * uj
    return Ut


@numba.njit(cache=True)
def _vmf_column_gibbs(Ht, Ut, gen, sweeps):
    # works on transposes so that columns are contiguous rows
    r, n = Ht.shape
    d = n - r + 1
    for _ in range(sweeps):
        for j in range(r):
            ph = Ht[j].copy()
            _project_out_others(ph, Ut, j)
            kappa = np.sqrt(_dot(ph, ph))
            if d == 1:
                if kappa > 1e-300:
                    direction = ph / kappa
                else:
                    direction = Ut[j].copy()
                p_plus = 1.0 / (1.0 + np.exp(-2.0 * kappa))
                col = direction if gen.random() < p_plus else -direction
            else:
                g = np.empty(n)
                for i in range(n):
                    g[i] = gen.standard_normal()
                _project_out_others(g, Ut, j)
                if kappa > 1e-300:
                    mu = ph / kappa
                    g -= _dot(mu, g) * mu
                    v = g / np.sqrt(_dot(g, g))
                    w = _wood_cosine(kappa, d, gen)
                    col = w * mu + np.sqrt(max(0.0, 1.0 - w * w)) * v
                else:
                    col = g
            _project_out_others(col, Ut, j)
            Ut[j] = col / np.sqrt(_dot(col, col))
    return Ut


def sample_vmf_matrix(H, rng, sweeps: int = DEFAULT_VMF_SWEEPS, start=None) -> np.ndarray:
    """Draw from the matrix von Mises-Fisher density ``etr(U^T H)`` on the Stiefel manifold.

    Column-wise Gibbs: each column is redrawn from a vector vMF restricted to
    the orthogonal complement of the other columns (Wood's rejection sampler
    for the angle). When ``H`` is square each column is fixed up to sign by
    the others, so pairs of columns are instead rotated or reflected by an
    exact draw from their two-dimensional conditional. ``start`` is the current value when used inside a larger
    Gibbs sampler; otherwise the sweep starts from a uniform draw. With a
    single column every draw is exact, so one pass is made.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise ValueError("H must be a matrix")
    if not np.all(np.isfinite(H)):
        raise ValueError("H has non-finite entries")
    n, r = H.shape
    gen = as_generator(rng)
    if start is None:
        U = sample_stiefel_uniform(n, r, gen)
    else:
        U = np.array(start, dtype=float)
        if U.shape != H.shape:
            raise ValueError(f"start shape {U.shape} != H shape {H.shape}")
    if r == 0:
        return U
    Ht, Ut = np.ascontiguousarray(H.T), np.ascontiguousarray(U.T)
    if r == n and r > 1:
        Ut = _vmf_pair_gibbs(Ht, Ut, gen, int(sweeps))
    else:
        Ut = _vmf_column_gibbs(Ht, Ut, gen, 1 if r == 1 else int(sweeps))
    return Ut.T.copy()


def _robert_tail(alpha, beta, gen):
    """Standard normal restricted to ``[alpha, beta]`` with ``alpha > 0`` (vectorized)."""
    out = np.empty_like(alpha)
    pending = np.arange(alpha.size)
    while pending.size:
        a = alpha[pending]
        b = beta[pending]
        narrow = (b - a) <= 1.0 / a
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        e = gen.standard_exponential(pending.size)
        u = gen.random(pending.size)
        v = gen.random(pending.size)
        z_exp = a + e / lam
        z_uni = a + v * np.where(np.isfinite(b), b - a, 0.0)
        z = np.where(narrow, z_uni, z_exp)
        log_acc = np.where(narrow, -0.5 * (z * z - a * a), -0.5 * (z - lam) ** 2)
        ok = (np.log(u) <= log_acc) & (z <= b)
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
    return out


def truncated_normal(mean, lower, upper, rng) -> np.ndarray:
    """Vectorized unit-variance normal draws restricted to ``(lower, upper)``.

    Inverse-CDF on the side of the distribution where it is accurate; regions
    more than five standard deviations into a tail use exponential (or, for
    narrow intervals, uniform) rejection.
    """
    gen = as_generator(rng)
    mean, lower, upper = np.broadcast_arrays(
        np.asarray(mean, float), np.asarray(lower, float), np.asarray(upper, float))
    shape = mean.shape
    mean, lower, upper = mean.ravel(), lower.ravel(), upper.ravel()
    if np.any(~(lower < upper)):
        raise ValueError("truncation bounds need lower < upper")
    a = lower - mean
    b = upper - mean
    flip = a > 0
    sign = np.where(flip, -1.0, 1.0)
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    # now a <= 0 or the whole interval lies below zero
    u = gen.random(mean.size)
    x = np.empty(mean.size)
    tail = b < -_TAIL_SD
    body = ~tail
    if body.any():
        pa, pb = ndtr(a[body]), ndtr(b[body])
        xb = ndtri(pa + u[body] * (pb - pa))
        lo = np.nextafter(a[body], np.inf)
        hi = np.nextafter(b[body], -np.inf)
        x[body] = np.minimum(np.maximum(xb, lo), hi)
    if tail.any():
        x[tail] = -_robert_tail(-b[tail], -a[tail], gen)
    return (mean + sign * x).reshape(shape)


def sample_truncated_normal(mean: float, lower: float, upper: float, rng) -> float:
    """One draw from ``N(mean, 1)`` conditioned on ``(lower, upper)``; infinite bounds allowed."""
    if not lower < upper:
        raise ValueError(f"need lower < upper, got ({lower}, {upper})")
    return float(truncated_normal(mean, lower, upper, rng)[()])


def sample_inverse_gamma(shape: float, rate: float, rng, size=None):
    """``X`` with ``1/X ~ gamma(shape, rate)``, i.e. ``E[1/X] = shape/rate``."""
    if not (shape > 0 and rate > 0):
        raise ValueError(f"inverse-gamma needs positive parameters, got shape={shape}, rate={rate}")
    return 1.0 / as_generator(rng).gamma(shape, 1.0 / rate, size=size)


def dirichlet_logpdf(x, alpha) -> float:
    x = np.asarray(x, float)
    alpha = np.asarray(alpha, float)
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1.0) * np.log(x)))


def _check_simplex(p: np.ndarray) -> None:
    if p.ndim != 1 or p.size == 0 or np.any(~(p > 0)) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("expected a strictly positive vector summing to 1")


def sample_simplex_proposal(current, concentration: float, rng):
    """Dirichlet random-walk proposal ``Dirichlet(concentration * current + 0.5)``.

    Returns ``(proposal, log_forward, log_reverse)`` where ``log_forward`` is
    the proposal density of the move and ``log_reverse`` that of the move back.
    """
    current = np.asarray(current, float)
    _check_simplex(current)
    if not concentration > 0:
        raise ValueError("concentration must be positive")
    if current.size == 1:
        return np.ones(1), 0.0, 0.0
    gen = as_generator(rng)
    alpha_fwd = concentration * current + SIMPLEX_FLOOR
    proposal = gen.dirichlet(alpha_fwd)
    proposal = np.maximum(proposal, np.finfo(float).tiny)
    proposal /= proposal.sum()
    alpha_rev = concentration * proposal + SIMPLEX_FLOOR
    return proposal, dirichlet_logpdf(proposal, alpha_fwd), dirichlet_logpdf(current, alpha_rev)
