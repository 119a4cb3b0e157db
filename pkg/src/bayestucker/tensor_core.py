"""Dense K-way arrays and the multilinear algebra used throughout the package.

Vectorization convention: mode 1 varies fastest (Fortran order). The linear
index of ``(i1, ..., iK)`` (0-based) is ``i1 + n1*i2 + n1*n2*i3 + ...``.
Kronecker identities are written in reversed factor order, ``U_K x ... x U_1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_RANK_TOL = 1e-8


@dataclass(frozen=True)
class DenseTensor:
    """K-way real array with an optional mask of observed entries.

    ``values`` has shape ``dims``; unobserved cells hold NaN and are never read
    by numeric kernels that respect the mask.
    """

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 0:
            raise ValueError("a tensor needs at least one mode")
        mask = None
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
            values = np.where(mask, values, np.nan)
            mask.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_vec(cls, vec, dims: Sequence[int], mask_vec=None) -> "DenseTensor":
        dims = tuple(int(d) for d in dims)
        vec = np.asarray(vec, dtype=float)
        if vec.size != int(np.prod(dims)):
            raise ValueError(f"{vec.size} values cannot fill dims {dims}")
        mask = None if mask_vec is None else np.asarray(mask_vec, bool).reshape(dims, order="F")
        return cls(vec.reshape(dims, order="F"), mask)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def order(self) -> int:
        return self.values.ndim

    @property
    def observed(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.dims, dtype=bool)
        return self.mask

    @property
    def fully_observed(self) -> bool:
        return self.mask is None or bool(self.mask.all())

    def vec(self) -> np.ndarray:
        return self.values.ravel(order="F")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass
class TuckerModel:
    """``sigma * core x {factors}`` with orthonormal-column factors."""

    core: np.ndarray
    factors: list[np.ndarray]
    sigma: float = 1.0
    dims: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=float)
        self.factors = [np.asarray(u, dtype=float) for u in self.factors]
        if len(self.factors) != self.core.ndim:
            raise ValueError("need one factor per core mode")
        for k, u in enumerate(self.factors):
            if u.ndim != 2 or u.shape[1] != self.core.shape[k]:
                raise ValueError(f"factor {k} has shape {u.shape}, core mode size {self.core.shape[k]}")
            if u.shape[1] > u.shape[0]:
                raise ValueError(f"factor {k}: rank {u.shape[1]} exceeds dimension {u.shape[0]}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        self.dims = tuple(u.shape[0] for u in self.factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.shape

    def full(self) -> np.ndarray:
        return self.sigma * tucker_product(self.core, self.factors)

    def orthonormality_error(self) -> float:
        return max(np.abs(u.T @ u - np.eye(u.shape[1])).max() for u in self.factors)


def _as_array(T) -> np.ndarray:
    return np.asarray(T, dtype=float)


def _check_mode(k: int, order: int) -> None:
    if not 0 <= k < order:
        raise IndexError(f"mode {k} out of range for a {order}-way array (modes are 0-based)")


def matricize(T, k: int) -> np.ndarray:
    """Mode-``k`` unfolding (0-based ``k``), shape ``n_k x prod(other dims)``.

    Columns enumerate the remaining modes with the lowest mode fastest.
    """
    A = _as_array(T)
    _check_mode(k, A.ndim)
    return np.moveaxis(A, k, 0).reshape(A.shape[k], -1, order="F")


def refold(Mk, k: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize`."""
    dims = tuple(int(d) for d in dims)
    _check_mode(k, len(dims))
    Mk = np.asarray(Mk, dtype=float)
    rest = dims[:k] + dims[k + 1:]
    expected = (dims[k], int(np.prod(rest)))
    if Mk.shape != expected:
        raise ValueError(f"matrix shape {Mk.shape} does not match {expected} for dims {dims}, mode {k}")
    return np.moveaxis(Mk.reshape((dims[k],) + rest, order="F"), 0, k)


def mode_product(T, A, k: int) -> np.ndarray:
    """``T x_k A``: multiply mode ``k`` of ``T`` by the matrix ``A`` (``m x n_k``)."""
    T = _as_array(T)
    A = np.asarray(A, dtype=float)
    _check_mode(k, T.ndim)
    if A.ndim != 2 or A.shape[1] != T.shape[k]:
        raise ValueError(f"mode {k}: matrix with {A.shape[-1]} columns cannot act on size {T.shape[k]}")
    return np.moveaxis(np.tensordot(A, T, axes=(1, k)), 0, k)


def tucker_product(core, factors: Sequence, skip: int | None = None) -> np.ndarray:
    """``core x {C_1, ..., C_K}`` via successive mode products.

    ``vec`` of the result equals ``(C_K kron ... kron C_1) vec(core)``. Mode
    ``skip`` (if given) is left untouched, which yields the partial products
    needed by the factor updates.
    """
    out = _as_array(core)
    if len(factors) != out.ndim:
        raise ValueError(f"{len(factors)} factors for a {out.ndim}-way core")
    for k, C in enumerate(factors):
        if k == skip or C is None:
            continue
        out = mode_product(out, C, k)
    return out


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def leading_left_singular_vectors(A: np.ndarray, r: int) -> np.ndarray:
    """Top ``r`` left singular vectors of ``A`` with the sign convention fixed."""
    if r > A.shape[0]:
        raise ValueError(f"cannot take {r} singular vectors of a matrix with {A.shape[0]} rows")
    U, _, _ = np.linalg.svd(A, full_matrices=A.shape[1] < r)
    return _fix_signs(U[:, :r])


def hosvd(T, ranks: Sequence[int]) -> TuckerModel:
    """Truncated higher-order SVD; ``sigma`` is fixed to 1."""
    A = _as_array(T)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != A.ndim:
        raise ValueError(f"rank vector of length {len(ranks)} for a {A.ndim}-way array")
    for k, (r, n) in enumerate(zip(ranks, A.shape)):
        if not 1 <= r <= n:
            raise ValueError(f"mode {k}: rank {r} not in [1, {n}]")
    factors = [leading_left_singular_vectors(matricize(A, k), r) for k, r in enumerate(ranks)]
    core = tucker_product(A, [u.T for u in factors])
    return TuckerModel(core, factors, 1.0)


def multilinear_rank(T, tol: float = DEFAULT_RANK_TOL) -> tuple[int, ...]:
    """Numerical rank of every unfolding, relative to its largest singular value."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    A = _as_array(T)
    ranks = []
    for k in range(A.ndim):
        s = np.linalg.svd(matricize(A, k), compute_uv=False)
        ranks.append(0 if s.size == 0 or s[0] == 0 else int(np.sum(s > tol * s[0])))
    return tuple(ranks)


def group_action(T, rotations: Sequence[np.ndarray], scale: float = 1.0) -> np.ndarray:
    """``scale * (W_K kron ... kron W_1) vec(T)`` computed with mode products."""
    return scale * tucker_product(T, list(rotations))
