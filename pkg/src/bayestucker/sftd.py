"""Scale-free Tucker decomposition through the extended rank likelihood.

The observed array is modelled as ``y[i, j] = g_j(z[i, j])`` for unknown
non-decreasing ``g_j``, one per index ``j`` of the variable mode, with the
latent ``Z`` following the normal Tucker model at ``sigma = 1``. Only the
within-variable ordering of ``Y`` enters the sampler, so every output is
invariant to strictly increasing transforms of each variable.

Latent update order. Within a variable, observed cells are grouped into tie
levels (distinct values of ``y``, ranked). Given the ordering constraint, the
bounds for a cell depend only on the neighbouring levels, so all cells on
even-ranked levels are conditionally independent given the odd-ranked ones
and vice versa. Each latent update therefore redraws, in this order: every
even-level cell, every odd-level cell, then every missing cell (unconstrained).
Within each block cells are taken in vectorization order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import ndtri

from .normal_tdm import (
    ChainConfig,
    ChainState,
    McmcSamples,
    PriorSpec,
    _check_ranks,
    _Recorder,
    gibbs_sweep,
    initialize_chain,
)
from .random_kernels import RngStream, as_generator, truncated_normal
from .tensor_core import DenseTensor, tucker_product


class OrderingViolation(RuntimeError):
    """The latent array left the set of values consistent with the data."""


def _split(Y, mask=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(Y, DenseTensor):
        return Y.values, Y.observed if mask is None else np.asarray(mask, bool)
    values = np.asarray(Y, dtype=float)
    return values, (np.isfinite(values) if mask is None else np.asarray(mask, bool))


def compute_bounds(y_slice, z_slice, index: int) -> tuple[float, float]:
    """Interval for ``z[index]`` implied by the other cells of one variable.

    Missing ``y`` entries (NaN) impose no constraint; ties impose none either.
    """
    y = np.asarray(y_slice, dtype=float)
    z = np.asarray(z_slice, dtype=float)
    if not np.isfinite(y[index]):
        return -np.inf, np.inf
    obs = np.isfinite(y)
    below = obs & (y < y[index])
    above = obs & (y > y[index])
    lower = z[below].max() if below.any() else -np.inf
    upper = z[above].min() if above.any() else np.inf
    return float(lower), float(upper)


@dataclass
class LevelIndex:
    """Tie-level bookkeeping for the latent updates (arrays on ``vec`` positions).

    ``level`` is a global level id per observed cell, consecutive within a
    variable and ordered by ``y``; ``rank`` is the within-variable level rank.
    """

    dims: tuple[int, ...]
    observed: np.ndarray
    missing: np.ndarray
    level: np.ndarray
    rank: np.ndarray
    has_below: np.ndarray
    has_above: np.ndarray
    sort_order: np.ndarray
    level_starts: np.ndarray
    n_levels: int

    @classmethod
    def build(cls, Y, mask=None) -> "LevelIndex":
        values, mask = _split(Y, mask)
        dims = values.shape
        y = values.ravel(order="F")
        obs_flat = mask.ravel(order="F")
        n_var = dims[-1]
        per_var = y.size // n_var
        variable = np.arange(y.size) // per_var
        observed = np.flatnonzero(obs_flat)
        missing = np.flatnonzero(~obs_flat)
        level = np.empty(observed.size, dtype=np.int64)
        rank = np.empty(observed.size, dtype=np.int64)
        top = np.empty(observed.size, dtype=np.int64)
        offset = 0
        var_obs = variable[observed]
        for j in range(n_var):
            sel = np.flatnonzero(var_obs == j)
            if sel.size == 0:
                continue
            _, inverse = np.unique(y[observed[sel]], return_inverse=True)
            rank[sel] = inverse
            level[sel] = offset + inverse
            top[sel] = inverse.max()
            offset += int(inverse.max()) + 1
        sort_order = np.argsort(level, kind="stable")
        sorted_levels = level[sort_order]
        level_starts = np.flatnonzero(np.r_[True, sorted_levels[1:] != sorted_levels[:-1]])
        return cls(dims, observed, missing, level, rank, rank > 0, rank < top,
                   sort_order, level_starts, offset)

    def level_extrema(self, z_obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        zs = z_obs[self.sort_order]
        return np.maximum.reduceat(zs, self.level_starts), np.minimum.reduceat(zs, self.level_starts)

    def bounds(self, z_obs: np.ndarray, sel: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Truncation interval of each selected observed cell given the others' latent values."""
        sel = np.arange(self.observed.size) if sel is None else sel
        hi, lo = self.level_extrema(z_obs)
        lev = self.level[sel]
        lower = np.where(self.has_below[sel], hi[np.maximum(lev - 1, 0)], -np.inf)
        upper = np.where(self.has_above[sel], lo[np.minimum(lev + 1, self.n_levels - 1)], np.inf)
        return lower, upper

    def satisfied(self, Z: np.ndarray) -> bool:
        """Whether ``Z`` lies in the set of latent values consistent with ``Y``."""
        z_obs = np.asarray(Z, float).ravel(order="F")[self.observed]
        hi, lo = self.level_extrema(z_obs)
        # levels are consecutive within a variable; compare each with the next one up
        next_exists = np.zeros(self.n_levels, dtype=bool)
        next_exists[self.level[self.has_above]] = True
        idx = np.flatnonzero(next_exists)
        return bool(np.all(hi[idx] < lo[idx + 1]))


@dataclass
class LatentState:
    Z: np.ndarray
    chain: ChainState
    levels: LevelIndex


def initialize_latent(Y, mask=None) -> np.ndarray:
    """Normal scores of mid-ranks within each variable; missing cells start at 0."""
    values, mask = _split(Y, mask)
    Z = np.zeros(values.shape)
    for j in range(values.shape[-1]):
        obs = mask[..., j]
        n_obs = int(obs.sum())
        if n_obs == 0:
            continue
        mid = stats.rankdata(values[..., j][obs], method="average")
        zj = Z[..., j]
        zj[obs] = ndtri(mid / (n_obs + 1.0))
    return Z


def update_latent(Y, state: LatentState) -> np.ndarray:
    """Redraw every latent cell from its constrained normal full conditional."""
    idx = state.levels
    gen = as_generator(state.chain.rng)
    m = tucker_product(state.chain.core, state.chain.factors).ravel(order="F")
    z = state.Z.ravel(order="F").copy()
    for parity in (0, 1):
        z_obs = z[idx.observed]
        sel = np.flatnonzero(idx.rank % 2 == parity)
        if sel.size == 0:
            continue
        lower, upper = idx.bounds(z_obs, sel)
        if np.any(~(lower < upper)):
            raise OrderingViolation("latent ordering constraints are inconsistent")
        cells = idx.observed[sel]
        z[cells] = truncated_normal(m[cells], lower, upper, gen)
    if idx.missing.size:
        z[idx.missing] = truncated_normal(m[idx.missing], -np.inf, np.inf, gen)
    state.Z = z.reshape(idx.dims, order="F")
    return state.Z


def _check_informative(levels: LevelIndex) -> None:
    if not np.any(levels.rank > 0):
        raise ValueError("no variable has two distinct observed values; the rank likelihood is flat")


def run_sftd_chain(Y, ranks: Sequence[int], prior: PriorSpec | None = None,
                   config: ChainConfig | None = None, variable_mode: int = -1,
                   mask=None) -> McmcSamples:
    """Gibbs sampler for the scale-free model.

    ``variable_mode`` names the mode whose indices carry separately
    transformed variables (default: the last mode). Returned traces have
    ``sigma_sq`` fixed at 1 and ``mean_M`` is on the latent scale.
    """
    prior = prior or PriorSpec("heteroscedastic")
    config = config or ChainConfig(55_000, 5_000, 10)
    values, mask = _split(Y, mask)
    K = values.ndim
    vm = variable_mode % K
    values = np.moveaxis(values, vm, -1)
    mask = np.moveaxis(mask, vm, -1)
    if len(ranks) != K:
        raise ValueError(f"rank vector {tuple(ranks)} does not match a {K}-way array")
    ranks = list(_check_ranks(values.shape, _move(ranks, vm)))
    levels = LevelIndex.build(values, mask)
    _check_informative(levels)
    Z = initialize_latent(values, mask)
    chain = initialize_chain(Z, ranks, prior, RngStream(config.seed), sigma_sq=1.0)
    state = LatentState(Z, chain, levels)
    rec = _Recorder(values.shape, ranks, config)
    for it in range(1, config.n_iter + 1):
        rec.accept += gibbs_sweep(state.Z, chain, prior, config.vmf_sweeps, fix_sigma=True)
        update_latent(values, state)
        if rec.is_saved(it):
            rec.record(it, chain)
    out = rec.finish()
    if vm != K - 1:
        out.mean_M = np.moveaxis(out.mean_M, -1, vm)
        order = list(range(K - 1))
        order.insert(vm, K - 1)
        out.lambdas = [out.lambdas[i] for i in order]
        out.acceptance = out.acceptance[order]
    return out


def _move(ranks: Sequence[int], vm: int) -> list[int]:
    ranks = list(ranks)
    ranks.append(ranks.pop(vm))
    return ranks


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall's tau-b over pairs where both entries are finite."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("kendall_tau needs vectors of equal length")
    keep = np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        raise ValueError("fewer than 2 complete pairs")
    return float(stats.kendalltau(x[keep], y[keep], variant="b").statistic)
