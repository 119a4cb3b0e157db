"""Gibbs sampler for the normal Tucker decomposition model.

``Y = sigma * S x {U_1, ..., U_K} + sigma * E`` with the invariant prior
(``1/sigma`` on the scale, uniform Stiefel factors) and a zero-mean normal
prior on ``vec(S)`` with diagonal covariance ``Psi``. ``Psi`` is
``tau^2 I`` (homoscedastic), ``tau^2 (Lambda_K kron ... kron Lambda_1)``
(heteroscedastic, each ``Lambda_k`` a diagonal simplex) or user supplied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .random_kernels import (
    DEFAULT_VMF_SWEEPS,
    RngStream,
    as_generator,
    sample_inverse_gamma,
    sample_simplex_proposal,
    sample_vmf_matrix,
)
from .tensor_core import DenseTensor, TuckerModel, hosvd, matricize, tucker_product

FAMILIES = ("homoscedastic", "heteroscedastic", "fixed_psi")
SIGMA_PRIORS = ("improper_reciprocal", "proper_gamma")
LAMBDA_FLOOR = 1e-12
ORTHO_DRIFT_TOL = 1e-8


class DegenerateEigenvalueError(FloatingPointError):
    """Core covariance entries underflowed or overflowed."""


@dataclass
class PriorSpec:
    """Prior for the core covariance and the error scale.

    ``tau0_sq=None`` picks the default that matches the expected prior size of
    the mean array to that of the noise: ``prod(n_k / r_k)`` for the
    homoscedastic family and ``prod(n_k)`` for the heteroscedastic one.
    ``sigma_gamma=(a, b)`` is a gamma(shape a, rate b) prior on ``1/sigma^2``
    used when ``sigma_prior='proper_gamma'``. ``mh_concentration=None`` means
    ``100 * r_k`` for mode ``k``. ``psi`` is the core variance array (shape of
    the core) for ``family='fixed_psi'``.
    """

    family: str = "homoscedastic"
    nu0: float = 1.0
    tau0_sq: float | None = None
    sigma_prior: str = "improper_reciprocal"
    sigma_gamma: tuple[float, float] = (0.5, 0.5)
    mh_concentration: float | None = None
    psi: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}; choose from {FAMILIES}")
        if self.sigma_prior not in SIGMA_PRIORS:
            raise ValueError(f"unknown sigma prior {self.sigma_prior!r}; choose from {SIGMA_PRIORS}")
        if not self.nu0 > 0:
            raise ValueError("nu0 must be positive")
        if self.tau0_sq is not None and not self.tau0_sq > 0:
            raise ValueError("tau0_sq must be positive")
        a, b = self.sigma_gamma
        if not (a > 0 and b > 0):
            raise ValueError("sigma_gamma parameters must be positive")
        if self.family == "fixed_psi":
            if self.psi is None:
                raise ValueError("family 'fixed_psi' needs psi")
            self.psi = np.asarray(self.psi, dtype=float)
            if np.any(~(self.psi > 0)) or not np.all(np.isfinite(self.psi)):
                raise ValueError("psi entries must be positive and finite")

    def resolved_tau0_sq(self, dims: Sequence[int], ranks: Sequence[int]) -> float:
        if self.tau0_sq is not None:
            return float(self.tau0_sq)
        if self.family == "heteroscedastic":
            return float(np.prod(dims, dtype=float))
        return float(np.prod(np.asarray(dims, float) / np.asarray(ranks, float)))

    def concentration(self, r_k: int) -> float:
        return 100.0 * r_k if self.mh_concentration is None else float(self.mh_concentration)

    def for_full_rank(self) -> "PriorSpec":
        """Same prior but with the proper gamma(1/2, 1/2) prior on the precision."""
        return PriorSpec(self.family, self.nu0, self.tau0_sq, "proper_gamma", (0.5, 0.5),
                         self.mh_concentration, self.psi)


@dataclass
class ChainState:
    sigma_sq: float
    tau_sq: float
    lambdas: list[np.ndarray]
    core: np.ndarray
    factors: list[np.ndarray]
    rng: RngStream

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma_sq))

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.shape

    @property
    def model(self) -> TuckerModel:
        return TuckerModel(self.core, self.factors, self.sigma)

    def mean_array(self) -> np.ndarray:
        return self.sigma * tucker_product(self.core, self.factors)


@dataclass
class ChainConfig:
    n_iter: int = 11_000
    burn_in: int = 1_000
    thin: int = 10
    seed: int = 0
    vmf_sweeps: int = DEFAULT_VMF_SWEEPS
    save_draws: bool = False

    def __post_init__(self):
        if self.n_iter < 1 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("need n_iter >= 1, burn_in >= 0, thin >= 1")
        if self.burn_in >= self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")

    @property
    def n_saved(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass
class McmcSamples:
    """Thinned draws plus the running posterior mean of the mean array."""

    iterations: np.ndarray
    sigma_sq: np.ndarray
    tau_sq: np.ndarray
    lambdas: list[np.ndarray]
    mean_M: np.ndarray
    acceptance: np.ndarray
    n_iter: int
    burn_in: int
    thin: int
    cores: list[np.ndarray] = field(default_factory=list)
    factors: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def n_saved(self) -> int:
        return len(self.iterations)

    def scalar_traces(self) -> dict[str, np.ndarray]:
        """Named scalar traces, ``lambda_{k}_{i}`` 1-based like the CSV headers."""
        out = {"sigma_sq": self.sigma_sq, "tau_sq": self.tau_sq}
        for k, lam in enumerate(self.lambdas):
            for i in range(lam.shape[1]):
                out[f"lambda_{k + 1}_{i + 1}"] = lam[:, i]
        return out


def _values(Y) -> np.ndarray:
    if isinstance(Y, DenseTensor):
        if not Y.fully_observed:
            raise ValueError("the normal sampler needs a fully observed array")
        return Y.values
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise ValueError("the normal sampler needs a fully observed, finite array")
    return Y


def kron_diagonal(diagonals: Sequence[np.ndarray]) -> np.ndarray:
    """Diagonal of ``D_K kron ... kron D_1`` arranged as a core-shaped array."""
    out = np.ones(())
    for d in reversed(diagonals):
        out = np.multiply.outer(out, d)
    # outer products above put mode K first; reverse the axes back
    return out.transpose(tuple(range(out.ndim))[::-1])


def core_variance(state: ChainState, prior: PriorSpec) -> np.ndarray:
    """Diagonal of ``Psi`` as a core-shaped array."""
    if prior.family == "fixed_psi":
        return np.broadcast_to(prior.psi, state.ranks)
    if prior.family == "homoscedastic":
        return np.full(state.ranks, state.tau_sq)
    lams = [np.maximum(lam, LAMBDA_FLOOR) for lam in state.lambdas]
    return state.tau_sq * kron_diagonal(lams)


def project_onto_factors(Y: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """``U^T y`` as a core-shaped array, by successive mode products with ``U_k^T``."""
    return tucker_product(Y, [u.T for u in factors])


def marginal_quadratic_form(Y: np.ndarray, z: np.ndarray, psi: np.ndarray) -> float:
    """``y^T (U Psi U^T + I)^{-1} y`` from ``z = U^T y`` and the diagonal of ``Psi``."""
    outside = max(float(np.sum(Y * Y) - np.sum(z * z)), 0.0)
    return outside + float(np.sum(z * z / (1.0 + psi)))


def sample_from_model(sigma: float, tau_sq: float, lambdas: Sequence[np.ndarray],
                      factors: Sequence[np.ndarray], rng) -> tuple[np.ndarray, np.ndarray]:
    """One draw of ``(M, Y)``: ``s ~ N(0, tau^2 kron(Lambda))``, ``M = sigma U s``, ``Y = M + sigma E``."""
    gen = as_generator(rng)
    psi = tau_sq * kron_diagonal(lambdas)
    core = np.sqrt(psi) * gen.standard_normal(psi.shape)
    M = sigma * tucker_product(core, factors)
    return M, M + sigma * gen.standard_normal(M.shape)


def update_sigma_and_core(Y, state: ChainState, prior: PriorSpec, fix_sigma: bool = False):
    """Draw ``sigma^2`` marginally over the core, then the core given ``sigma^2``.

    The quadratic form ``y^T (U Psi U^T + I)^{-1} y`` uses orthonormality:
    it equals ``|y|^2 - |U^T y|^2 + sum((U^T y)^2 / (1 + psi))``.
    With ``fix_sigma`` the scale stays at its current value.
    """
    Y = np.asarray(Y, dtype=float)
    gen = as_generator(state.rng)
    psi = core_variance(state, prior)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        shrink = psi / (1.0 + psi)
        if not np.all(np.isfinite(shrink)) or np.any(shrink <= 0):
            raise DegenerateEigenvalueError("core covariance has degenerate entries")
    z = project_onto_factors(Y, state.factors)
    if not fix_sigma:
        quad = marginal_quadratic_form(Y, z, psi)
        shape, rate = Y.size / 2.0, quad / 2.0
        if prior.sigma_prior == "proper_gamma":
            shape += prior.sigma_gamma[0]
            rate += prior.sigma_gamma[1]
        state.sigma_sq = float(sample_inverse_gamma(shape, rate, gen))
    sigma = state.sigma
    state.core = shrink * z / sigma + np.sqrt(shrink) * gen.standard_normal(z.shape)
    return state.sigma_sq, state.core


def factor_conditional_parameter(Y, state: ChainState, k: int) -> np.ndarray:
    """``H_k = Y_(k) U_{-k} S_(k)^T / sigma`` with ``U_{-k}`` applied via mode products."""
    partial = tucker_product(Y, [u.T for u in state.factors], skip=k)
    return matricize(partial, k) @ matricize(state.core, k).T / state.sigma


def _repair_orthonormality(U: np.ndarray) -> np.ndarray:
    if np.abs(U.T @ U - np.eye(U.shape[1])).max() <= ORTHO_DRIFT_TOL:
        return U
    Q, R = np.linalg.qr(U)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def update_factor(Y, state: ChainState, k: int, vmf_sweeps: int = DEFAULT_VMF_SWEEPS) -> np.ndarray:
    H = factor_conditional_parameter(np.asarray(Y, float), state, k)
    if not np.all(np.isfinite(H)):
        raise FloatingPointError(f"non-finite vMF parameter for mode {k}")
    U = sample_vmf_matrix(H, state.rng, sweeps=vmf_sweeps, start=state.factors[k])
    state.factors[k] = _repair_orthonormality(U)
    return state.factors[k]


def _core_weights(state: ChainState, prior: PriorSpec) -> np.ndarray:
    if prior.family == "homoscedastic":
        return np.ones(state.ranks)
    return kron_diagonal([np.maximum(lam, LAMBDA_FLOOR) for lam in state.lambdas])


def update_tau_sq(state: ChainState, prior: PriorSpec, dims: Sequence[int]) -> float:
    """Conjugate inverse-gamma((nu0 + r)/2, (tau0^2 + s^T Lambda^{-1} s)/2) draw."""
    if prior.family == "fixed_psi":
        return state.tau_sq
    weights = _core_weights(state, prior)
    quad = float(np.sum(state.core ** 2 / weights))
    if not np.isfinite(quad):
        raise DegenerateEigenvalueError("eigenvalue weights underflowed")
    r = state.core.size
    tau0_sq = prior.resolved_tau0_sq(dims, state.ranks)
    state.tau_sq = float(sample_inverse_gamma((prior.nu0 + r) / 2.0, (tau0_sq + quad) / 2.0, state.rng))
    return state.tau_sq


def lambda_sufficient_statistic(core: np.ndarray, lambdas: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Per-index sums of ``s^2`` weighted by the other modes' eigenvalues."""
    lams = [np.maximum(lam, LAMBDA_FLOOR) for lam in lambdas]
    lams[k] = np.ones_like(lams[k])
    return matricize(core ** 2 / kron_diagonal(lams), k).sum(axis=1)


def lambda_log_target(core: np.ndarray, tau_sq: float, lambdas: Sequence[np.ndarray], k: int,
                      candidate: np.ndarray, stat: np.ndarray | None = None) -> float:
    """Log density of ``vec(core)`` under ``N(0, tau^2 kron(Lambda))`` as a function of ``lambda_k``."""
    if stat is None:
        stat = lambda_sufficient_statistic(core, lambdas, k)
    cand = np.maximum(candidate, LAMBDA_FLOOR)
    multiplicity = core.size / core.shape[k]
    return float(-0.5 * multiplicity * np.sum(np.log(cand)) - 0.5 * np.sum(stat / cand) / tau_sq)


def update_lambdas(state: ChainState, prior: PriorSpec) -> np.ndarray:
    """One Metropolis-Hastings step per mode with a Dirichlet random-walk proposal.

    Returns the per-mode acceptance indicators.
    """
    accepted = np.ones(len(state.lambdas), dtype=bool)
    if prior.family != "heteroscedastic":
        return accepted
    gen = as_generator(state.rng)
    for k, lam in enumerate(state.lambdas):
        if lam.size == 1:
            continue
        prop, log_fwd, log_rev = sample_simplex_proposal(lam, prior.concentration(lam.size), gen)
        stat = lambda_sufficient_statistic(state.core, state.lambdas, k)
        with np.errstate(all="ignore"):
            log_ratio = (lambda_log_target(state.core, state.tau_sq, state.lambdas, k, prop, stat)
                         - lambda_log_target(state.core, state.tau_sq, state.lambdas, k, lam, stat)
                         + log_rev - log_fwd)
        u = gen.random()
        if np.isfinite(log_ratio) and np.log(u) < log_ratio:
            state.lambdas[k] = prop
        else:
            accepted[k] = False
    return accepted


def _eigen_block_log_target(phi, stat, m, nu0, tau0_sq):
    # density of phi = tau^2 lambda_k: likelihood factors times the induced prior on sum(phi)
    t = phi.sum()
    return float(np.sum(-0.5 * m * np.log(phi) - 0.5 * stat / phi)
                 - (0.5 * nu0 + phi.size) * np.log(t) - 0.5 * tau0_sq / t)


def update_scale_and_eigenvalues(state: ChainState, prior: PriorSpec, dims: Sequence[int]) -> np.ndarray:
    """Joint Metropolis move on ``(tau^2, lambda_k)`` for each mode, via ``phi = tau^2 lambda_k``.

    Each ``phi_i`` is proposed independently from the inverse-gamma factor of
    the core likelihood that involves it, so only the prior term in
    ``sum(phi)`` enters the acceptance ratio. Random-walk moves on the simplex
    alone become very slow when ``r_k`` is large; this move lets the
    eigenvalues travel far from the simplex centre in a few steps.
    Returns per-mode acceptance indicators.
    """
    accepted = np.ones(len(state.lambdas), dtype=bool)
    if prior.family != "heteroscedastic":
        return accepted
    gen = as_generator(state.rng)
    tau0_sq = prior.resolved_tau0_sq(dims, state.ranks)
    for k, lam in enumerate(state.lambdas):
        if lam.size == 1:
            continue
        stat = np.maximum(lambda_sufficient_statistic(state.core, state.lambdas, k), np.finfo(float).tiny)
        m = state.core.size / lam.size
        shape = 0.5 * m - 1.0 if m > 4 else 0.5 * m + 0.5
        phi_new = 0.5 * stat / gen.gamma(shape, 1.0, size=lam.size)
        phi_cur = state.tau_sq * np.maximum(lam, LAMBDA_FLOOR)

        def log_q(phi):
            return float(np.sum(-(shape + 1.0) * np.log(phi) - 0.5 * stat / phi))

        with np.errstate(all="ignore"):
            log_ratio = (_eigen_block_log_target(phi_new, stat, m, prior.nu0, tau0_sq)
                         - _eigen_block_log_target(phi_cur, stat, m, prior.nu0, tau0_sq)
                         + log_q(phi_cur) - log_q(phi_new))
        if np.isfinite(log_ratio) and np.log(gen.random()) < log_ratio:
            total = float(phi_new.sum())
            state.tau_sq = total
            state.lambdas[k] = phi_new / total
        else:
            accepted[k] = False
    return accepted


def initialize_chain(Y, ranks: Sequence[int], prior: PriorSpec, rng: RngStream,
                     sigma_sq: float | None = None) -> ChainState:
    """Start at the truncated HOSVD of ``Y``.

    ``sigma^2`` starts at the residual mean square (or the mean square of ``Y``
    when the fit is saturated), the core at ``U^T y / sigma``, ``tau^2`` at the
    matching moment estimate and every ``lambda_k`` at the simplex centre.
    """
    Y = np.asarray(Y, dtype=float)
    fit = hosvd(Y, ranks)
    factors = fit.factors
    z = fit.core
    if sigma_sq is None:
        total = float(np.sum(Y * Y))
        resid = max(total - float(np.sum(z * z)), 0.0)
        sigma_sq = resid / Y.size if resid > 1e-8 * total else total / Y.size
        sigma_sq = max(sigma_sq, np.finfo(float).tiny)
    core = z / np.sqrt(sigma_sq)
    lambdas = [np.full(r, 1.0 / r) for r in ranks]
    tau_sq = float(np.sum(core ** 2))
    if prior.family == "homoscedastic":
        tau_sq /= core.size
    tau_sq = max(tau_sq, 1e-12)
    return ChainState(float(sigma_sq), tau_sq, lambdas, core, factors, rng)


def gibbs_sweep(Y, state: ChainState, prior: PriorSpec, vmf_sweeps: int = DEFAULT_VMF_SWEEPS,
                fix_sigma: bool = False) -> np.ndarray:
    """One full scan: (sigma^2, core), each factor, tau^2, the lambdas, then the joint scale move.

    Returns the acceptance indicators of the simplex random-walk step.
    """
    update_sigma_and_core(Y, state, prior, fix_sigma=fix_sigma)
    for k in range(len(state.factors)):
        update_factor(Y, state, k, vmf_sweeps)
    update_tau_sq(state, prior, np.shape(Y))
    accepted = update_lambdas(state, prior)
    update_scale_and_eigenvalues(state, prior, np.shape(Y))
    return accepted


class _Recorder:
    def __init__(self, dims, ranks, config: ChainConfig):
        m = config.n_saved
        self.config = config
        self.iterations = np.zeros(m, dtype=int)
        self.sigma_sq = np.zeros(m)
        self.tau_sq = np.zeros(m)
        self.lambdas = [np.zeros((m, r)) for r in ranks]
        self.sum_M = np.zeros(dims)
        self.accept = np.zeros(len(ranks))
        self.cores: list[np.ndarray] = []
        self.factors: list[list[np.ndarray]] = []
        self.count = 0

    def is_saved(self, it: int) -> bool:
        c = self.config
        return it > c.burn_in and (it - c.burn_in) % c.thin == 0 and self.count < c.n_saved

    def record(self, it: int, state: ChainState):
        i = self.count
        self.iterations[i] = it
        self.sigma_sq[i] = state.sigma_sq
        self.tau_sq[i] = state.tau_sq
        for k, lam in enumerate(state.lambdas):
            self.lambdas[k][i] = lam
        self.sum_M += state.mean_array()
        if self.config.save_draws:
            self.cores.append(state.core.copy())
            self.factors.append([u.copy() for u in state.factors])
        self.count += 1

    def finish(self) -> McmcSamples:
        c = self.config
        return McmcSamples(self.iterations, self.sigma_sq, self.tau_sq, self.lambdas,
                           self.sum_M / max(self.count, 1), self.accept / c.n_iter,
                           c.n_iter, c.burn_in, c.thin, self.cores, self.factors)


def check_propriety(dims: Sequence[int], ranks: Sequence[int], prior: PriorSpec) -> None:
    if tuple(dims) == tuple(ranks) and prior.sigma_prior == "improper_reciprocal":
        raise ValueError("fitted rank equals the array dimensions: the posterior under the "
                         "improper 1/sigma prior is not proper; use sigma_prior='proper_gamma'")


def _check_ranks(dims, ranks) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims):
        raise ValueError(f"rank vector {ranks} does not match a {len(dims)}-way array")
    for k, (r, n) in enumerate(zip(ranks, dims)):
        if not 1 <= r <= n:
            raise ValueError(f"mode {k}: rank {r} not in [1, {n}]")
    return ranks


def run_chain(Y, ranks: Sequence[int], prior: PriorSpec | None = None,
              config: ChainConfig | None = None) -> McmcSamples:
    """Run the Gibbs sampler and return thinned traces and the posterior mean array."""
    prior = prior or PriorSpec()
    config = config or ChainConfig()
    Y = _values(Y)
    ranks = _check_ranks(Y.shape, ranks)
    check_propriety(Y.shape, ranks, prior)
    state = initialize_chain(Y, ranks, prior, RngStream(config.seed))
    rec = _Recorder(Y.shape, ranks, config)
    for it in range(1, config.n_iter + 1):
        rec.accept += gibbs_sweep(Y, state, prior, config.vmf_sweeps)
        if rec.is_saved(it):
            rec.record(it, state)
    return rec.finish()
