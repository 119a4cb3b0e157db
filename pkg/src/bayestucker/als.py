"""Least-squares Tucker baseline: higher-order orthogonal iteration (HOOI).

``hooi_impute`` handles missing cells by alternating a HOOI sweep on the
completed array with refilling the unobserved cells from the current fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor_core import (
    DenseTensor,
    TuckerModel,
    hosvd,
    leading_left_singular_vectors,
    matricize,
    tucker_product,
)

DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-9


class UnidentifiableSliceError(ValueError):
    """Some slice of the array has no observed entries."""


@dataclass
class AlsResult:
    model: TuckerModel
    fitted: np.ndarray
    rss: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def _check_ranks(dims, ranks) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims):
        raise ValueError(f"rank vector {ranks} does not match a {len(dims)}-way array")
    for k, (r, n) in enumerate(zip(ranks, dims)):
        if not 1 <= r <= n:
            raise ValueError(f"mode {k}: rank {r} exceeds dimension {n} (or is < 1)")
    return ranks


def _sweep(Y: np.ndarray, factors: list[np.ndarray], ranks) -> list[np.ndarray]:
    for k, r in enumerate(ranks):
        partial = tucker_product(Y, [u.T for u in factors], skip=k)
        factors[k] = leading_left_singular_vectors(matricize(partial, k), r)
    return factors


def _fit(Y: np.ndarray, factors: list[np.ndarray]):
    core = tucker_product(Y, [u.T for u in factors])
    fitted = tucker_product(core, factors)
    return core, fitted


def hooi(Y, ranks: Sequence[int], max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
         init: Sequence[np.ndarray] | None = None) -> AlsResult:
    """Rank-``ranks`` least-squares Tucker fit of a fully observed array.

    Starts from the truncated HOSVD (or ``init`` factors). Stops when the
    relative change in the residual sum of squares drops below ``tol``.
    """
    if isinstance(Y, DenseTensor):
        if not Y.fully_observed:
            raise ValueError("Y has missing entries; use hooi_impute")
        Y = Y.values
    Y = np.asarray(Y, dtype=float)
    ranks = _check_ranks(Y.shape, ranks)
    factors = list(init) if init is not None else hosvd(Y, ranks).factors
    total = float(np.sum(Y * Y))
    core, fitted = _fit(Y, factors)
    rss = [float(np.sum((Y - fitted) ** 2))]
    converged = False
    it = 0
    if ranks == Y.shape:
        # saturated fit: the least-squares estimate is the data itself
        return AlsResult(TuckerModel(core, factors), Y.copy(), [0.0], 0, True)
    for it in range(1, max_iter + 1):
        factors = _sweep(Y, factors, ranks)
        core, fitted = _fit(Y, factors)
        rss.append(float(np.sum((Y - fitted) ** 2)))
        if abs(rss[-2] - rss[-1]) <= tol * max(rss[-2], tol * total, np.finfo(float).tiny):
            converged = True
            break
    return AlsResult(TuckerModel(core, factors), fitted, rss, it, converged)


def check_slices_observed(mask: np.ndarray) -> None:
    for k in range(mask.ndim):
        seen = matricize(mask.astype(float), k).sum(axis=1)
        empty = np.flatnonzero(seen == 0)
        if empty.size:
            raise UnidentifiableSliceError(
                f"mode {k}: slices {list(empty + 1)} (1-based) have no observed entries")


def hooi_impute(Y, ranks: Sequence[int], max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                mask=None) -> AlsResult:
    """HOOI with iterative imputation of unobserved cells.

    ``Y`` is a :class:`DenseTensor` with a mask, or an array with NaN (or an
    explicit ``mask``) marking missing cells. Observed values are never
    modified; missing cells start at the observed mean. The RSS recorded is
    over observed cells only.
    """
    if isinstance(Y, DenseTensor):
        values, mask = Y.values, Y.observed if mask is None else mask
    else:
        values = np.asarray(Y, dtype=float)
        mask = np.isfinite(values) if mask is None else np.asarray(mask, bool)
    if mask.all():
        return hooi(values, ranks, max_iter, tol)
    ranks = _check_ranks(values.shape, ranks)
    check_slices_observed(mask)
    observed = values[mask]
    filled = np.where(mask, values, observed.mean())
    factors = hosvd(filled, ranks).factors
    core, fitted = _fit(filled, factors)
    rss = [float(np.sum((observed - fitted[mask]) ** 2))]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        filled = np.where(mask, values, fitted)
        factors = _sweep(filled, factors, ranks)
        core, fitted = _fit(filled, factors)
        rss.append(float(np.sum((observed - fitted[mask]) ** 2)))
        if abs(rss[-2] - rss[-1]) <= tol * max(rss[-2], np.finfo(float).tiny):
            converged = True
            break
    return AlsResult(TuckerModel(core, factors), fitted, rss, it, converged)
