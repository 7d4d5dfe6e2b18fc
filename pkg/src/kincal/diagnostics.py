"""Chain diagnostics: autocovariance, posterior summaries, marginal grids.

The normalized autocovariance of a scalar chain component is estimated per
walker with the empirical estimator

    C_s = 1/(N-s) * sum_t (x_t - xbar)(x_{t+s} - xbar),

averaged over walkers, and normalized by the lag-0 value.  The ensemble
walkers are treated as independent replicas of the same chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class AutocorrResult:
    """Normalized autocovariance estimates for one chain component."""

    lags: np.ndarray
    rho: np.ndarray
    c0: float
    burn_in: int
    n_effective_points: int


def default_burn_in(n_stored):
    """Discard the first half of the stored sweeps by default."""
    return n_stored // 2


def autocovariance(x, lags):
    """Empirical autocovariance C_s of one scalar series at the given lags."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xbar = x.mean()
    dev = x - xbar
    out = np.empty(len(lags))
    for i, s in enumerate(lags):
        if s >= n:
            raise ValueError(f"lag {s} >= series length {n}")
        out[i] = np.dot(dev[: n - s], dev[s:]) / (n - s)
    return out


def autocorrelation(chain_component, burn_in=None, s_max=None):
    """Walker-averaged normalized autocovariance of one theta component.

    ``chain_component`` has shape (n_stored, L): the stored sweep history of
    one parameter for every walker.  Each walker's series is mean-removed
    individually before averaging.
    """
    x = np.asarray(chain_component, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n_stored, L = x.shape
    if burn_in is None:
        burn_in = default_burn_in(n_stored)
    if not 0 <= burn_in < n_stored - 1:
        raise ValueError(f"burn-in {burn_in} leaves no usable samples")
    y = x[burn_in:]
    n = y.shape[0]
    if s_max is None:
        s_max = min(1000, n // 5)
    s_max = int(min(s_max, n - 1))
    lags = np.arange(s_max + 1)
    acc = np.zeros(s_max + 1)
    for k in range(L):
        acc += autocovariance(y[:, k], lags)
    c = acc / L
    c0 = c[0]
    # treat rounding residue of a constant series as zero variance
    scale = max(float(np.abs(y).max()), 1.0)
    if c0 <= (1e-14 * scale) ** 2:
        # a frozen chain has zero variance; report rho = 1 at lag 0 only
        rho = np.zeros(s_max + 1)
        rho[0] = 1.0
    else:
        rho = c / c0
    return AutocorrResult(lags=lags, rho=rho, c0=float(c0), burn_in=burn_in,
                          n_effective_points=n * L)


def integrated_autocorr_time(result, window_factor=5.0):
    """Integrated autocorrelation time via the self-consistent window
    tau = 1 + 2 sum_{s<=W} rho_s with W the smallest lag where W >= c*tau.

    The estimate is unreliable unless the chain is many tau long; callers
    must request it explicitly.
    """
    rho = result.rho
    tau = 1.0
    for s in range(1, rho.size):
        tau += 2.0 * rho[s]
        if s >= window_factor * tau:
            return max(tau, 1.0)
    return max(tau, 1.0)


QUANTILES = (0.05, 0.25, 0.50, 0.75, 0.95)


@dataclass
class ParameterSummary:
    name: str
    mean: float
    std: float
    quantiles: dict
    hist_mode: float


@dataclass
class PosteriorSummary:
    parameters: list
    covariance: np.ndarray
    correlation: np.ndarray
    n_samples: int


def summarize(samples, names=None, hist_bins=50):
    """Posterior summary of flattened samples, shape (n, n_theta)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError("samples must be 2-D (n_samples, n_theta)")
    n, d = samples.shape
    if names is None:
        names = [f"theta_{i}" for i in range(d)]
    if len(names) != d:
        raise ValueError(f"{len(names)} names for {d} parameters")
    params = []
    for i in range(d):
        col = samples[:, i]
        qs = np.quantile(col, QUANTILES)
        counts, edges = np.histogram(col, bins=hist_bins)
        j = int(np.argmax(counts))
        params.append(ParameterSummary(
            name=names[i], mean=float(col.mean()), std=float(col.std(ddof=1)),
            quantiles={q: float(v) for q, v in zip(QUANTILES, qs)},
            hist_mode=float(0.5 * (edges[j] + edges[j + 1])),
        ))
    cov = np.cov(samples, rowvar=False)
    cov = np.atleast_2d(cov)
    sd = np.sqrt(np.diag(cov))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[~np.isfinite(corr)] = 0.0
    np.fill_diagonal(corr, 1.0)
    return PosteriorSummary(parameters=params, covariance=cov,
                            correlation=corr, n_samples=n)


@dataclass
class HistogramGrid:
    """1-D and pairwise 2-D marginal histograms on shared per-parameter
    edges, for triangle plots.  Values are normalized by the prior means so
    each axis is a dimensionless multiple of the nominal value."""

    names: list
    edges: list  # per-parameter bin edges (normalized units)
    hist1d: list  # per-parameter counts
    hist2d: dict  # (i, j) with i < j -> 2-D counts on (edges[i], edges[j])
    scales: np.ndarray


def triangle_data(samples, scales, names=None, bins=40):
    """Build the marginal histogram grid for samples / scales.

    Shared edges guarantee that summing a 2-D marginal over either axis
    reproduces the corresponding 1-D histogram exactly.
    """
    samples = np.asarray(samples, dtype=float)
    scales = np.asarray(scales, dtype=float)
    if samples.ndim != 2:
        raise ValueError("samples must be 2-D (n_samples, n_theta)")
    d = samples.shape[1]
    if scales.shape != (d,) or (scales <= 0).any():
        raise ValueError("scales must be positive, one per parameter")
    if names is None:
        names = [f"theta_{i}" for i in range(d)]
    norm = samples / scales
    edges = []
    hist1d = []
    for i in range(d):
        lo, hi = norm[:, i].min(), norm[:, i].max()
        if hi <= lo:
            hi = lo + 1e-12
        e = np.linspace(lo, hi, bins + 1)
        counts, _ = np.histogram(norm[:, i], bins=e)
        edges.append(e)
        hist1d.append(counts)
    hist2d = {}
    for i in range(d):
        for j in range(i + 1, d):
            h, _, _ = np.histogram2d(norm[:, i], norm[:, j],
                                     bins=(edges[i], edges[j]))
            hist2d[(i, j)] = h
    return HistogramGrid(names=list(names), edges=edges, hist1d=hist1d,
                         hist2d=hist2d, scales=scales)
