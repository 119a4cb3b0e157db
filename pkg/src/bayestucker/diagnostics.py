"""Chain and estimator quality measures."""

from __future__ import annotations

import warnings

import numpy as np

from .tensor_core import leading_left_singular_vectors, matricize

ESS_MONITOR_THRESHOLD = 300


class DegenerateTraceWarning(RuntimeWarning):
    pass


def autocovariance(x) -> np.ndarray:
    """Biased sample autocovariance at every lag, via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(trace) -> float:
    """ESS with Geyer's initial positive sequence truncation, capped at the trace length.

    Autocorrelations are summed in consecutive pairs until a pair sum turns
    non-positive. A constant trace returns its length with a
    :class:`DegenerateTraceWarning`.
    """
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < 10:
        raise ValueError("need at least 10 draws for an ESS estimate")
    if not np.all(np.isfinite(x)):
        raise ValueError("trace has non-finite values")
    acov = autocovariance(x)
    if acov[0] <= 0:
        warnings.warn("constant trace", DegenerateTraceWarning, stacklevel=2)
        return float(n)
    rho = acov / acov[0]
    tau = -1.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(n, n / max(tau, 1e-12)))


def relative_squared_error(M_true, M_hat) -> float:
    """``|M - M_hat|^2 / |M|^2``."""
    M_true = np.asarray(M_true, dtype=float)
    M_hat = np.asarray(M_hat, dtype=float)
    if M_true.shape != M_hat.shape:
        raise ValueError(f"shape mismatch {M_true.shape} vs {M_hat.shape}")
    denom = float(np.sum(M_true ** 2))
    if denom == 0:
        raise ValueError("true array has zero norm")
    return float(np.sum((M_true - M_hat) ** 2)) / denom


def normalized_eigenspectrum(M, k: int) -> np.ndarray:
    """Eigenvalues of ``M_(k) M_(k)^T`` scaled to sum to one, in decreasing order."""
    Mk = matricize(M, k)
    s = np.linalg.svd(Mk, compute_uv=False)
    ev = np.zeros(Mk.shape[0])
    ev[: s.size] = s ** 2
    total = ev.sum()
    if total == 0:
        raise ValueError("zero array has no eigenspectrum")
    return ev / total


def center_all_modes(M) -> np.ndarray:
    """Subtract per-index means along each mode in turn (mode 1 first).

    Removes every additive main effect; the operation is an orthogonal
    projection, so it is idempotent and the mode order does not matter.
    """
    out = np.array(M, dtype=float)
    for k in range(out.ndim):
        out = out - out.mean(axis=k, keepdims=True)
    return out


def mode_singular_vectors(M, k: int, count: int) -> np.ndarray:
    """Leading ``count`` left singular vectors of ``M_(k)``, largest entry of each made positive."""
    Mk = matricize(M, k)
    if not 0 < count <= Mk.shape[0]:
        raise ValueError(f"count {count} must be in [1, {Mk.shape[0]}]")
    return leading_left_singular_vectors(Mk, count)


def ess_report(traces: dict[str, np.ndarray], threshold: float = ESS_MONITOR_THRESHOLD) -> list[dict]:
    """ESS of each named trace, flagged when below ``threshold``."""
    rows = []
    for name, trace in traces.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateTraceWarning)
            ess = effective_sample_size(trace)
        rows.append({"trace": name, "n": len(trace), "ess": ess, "low": ess < threshold})
    return rows
