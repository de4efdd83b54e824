"""Convergence diagnostics for scalar MCMC series."""

from __future__ import annotations

import numpy as np


class DegenerateSeries(ValueError):
    pass


def gelman_rubin(series) -> float:
    """Potential scale reduction factor across equally long chains (no splitting)."""
    chains = np.asarray(series, dtype=np.float64)
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise ValueError("need at least two chains of equal length")
    m, n = chains.shape
    if n < 4:
        raise ValueError("chains need at least 4 draws")
    W = chains.var(axis=1, ddof=1).mean()
    if W <= 0:
        raise DegenerateSeries("zero within-chain variance")
    B = n * chains.mean(axis=1).var(ddof=1)
    return float(np.sqrt((n - 1) / n + B / (n * W)))


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Biased sample autocorrelation at every lag, via FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    y = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(y, size)
    acov = np.fft.irfft(spec * np.conj(spec), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(series) -> float:
    """ESS with Geyer's initial monotone positive sequence truncation.

    Capped at ``n * log10(n)`` so strongly anti-correlated series stay finite.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0]
    if n < 10:
        raise ValueError("need at least 10 draws")
    if np.all(x == x[0]):
        raise DegenerateSeries("constant series")
    rho = autocorrelation(x)
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    tau = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        tau += g
        prev = g
    tau = 2.0 * tau - 1.0
    cap = n * np.log10(n)
    if tau <= n / cap:
        return float(cap)
    return float(n / tau)
