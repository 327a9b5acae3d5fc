"""Estimation of the observation distribution from labeled alert traces.

Alert counts collected under each state are fitted with univariate
Gaussian mixtures by expectation-maximization, then discretized onto
the finite observation alphabet by integrating each component over
unit-width bins.  The resulting per-state pmfs plug directly into
:class:`stopgame.game.ObservationModel`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .game import ObservationModel

VARIANCE_FLOOR = 1e-6
PMF_FLOOR = 1e-12


@dataclass
class Gmm1D:
    """Univariate Gaussian mixture: weights, means, variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        k = self.weights.size
        if self.means.size != k or self.variances.size != k or k < 1:
            raise ValueError("weights, means, variances must have equal nonzero length")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("weights must be a probability vector")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.size

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        z = (x - self.means) ** 2 / (2.0 * self.variances)
        comp = np.exp(-z) / np.sqrt(2.0 * np.pi * self.variances)
        return (self.weights * comp).sum(-1)

    def log_likelihood(self, x) -> float:
        lp = _log_components(np.asarray(x, dtype=float), self.weights, self.means, self.variances)
        return float(_logsumexp(lp, axis=1).sum())

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        return rng.normal(self.means[comp], np.sqrt(self.variances[comp]))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }


@dataclass
class FitResult:
    params: Gmm1D
    log_likelihoods: list[float] = field(default_factory=list)
    variance_floored: bool = False
    iterations: int = 0


@dataclass
class TraceDataset:
    """Observation samples partitioned by the true state."""

    samples0: np.ndarray
    samples1: np.ndarray

    def __post_init__(self):
        self.samples0 = np.asarray(self.samples0, dtype=float)
        self.samples1 = np.asarray(self.samples1, dtype=float)


def _log_components(x, w, mu, var):
    # (n, k) log of weighted component densities
    z = (x[:, None] - mu) ** 2 / (2.0 * var)
    return np.log(w) - 0.5 * np.log(2.0 * np.pi * var) - z


def _logsumexp(a, axis):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def em_fit(samples, k: int, iters: int = 200, tol: float = 1e-8, rng=None) -> FitResult:
    """Fit a k-component univariate Gaussian mixture by EM.

    Initialization is deterministic: means at evenly spaced sample
    quantiles, all variances at the sample variance, uniform weights.
    ``rng`` is used only to jitter degenerate initial means (all
    quantiles identical).  The log-likelihood is non-decreasing across
    iterations; fitting stops after ``iters`` rounds or when the gain
    drops below ``tol``.  Collapsing components have their variance
    floored at 1e-6 and the result is flagged.
    """
    x = np.asarray(samples, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.ndim != 1 or x.size < k:
        raise ValueError("need at least k samples in a 1-d array")

    mu = np.quantile(x, np.linspace(0.0, 1.0, k + 2)[1:-1]) if k > 1 else np.array([x.mean()])
    if k > 1 and np.ptp(mu) == 0.0:
        jitter = (rng.standard_normal(k) if rng is not None else np.linspace(-1, 1, k))
        mu = mu + 1e-3 * (1.0 + np.abs(mu)) * jitter
    var = np.full(k, max(x.var(), VARIANCE_FLOOR))
    w = np.full(k, 1.0 / k)

    lls: list[float] = []
    floored = False
    it = 0
    for it in range(1, iters + 1):
        lp = _log_components(x, w, mu, var)
        ll = float(_logsumexp(lp, axis=1).sum())
        lls.append(ll)
        # E-step: responsibilities in log space for stability
        resp = np.exp(lp - _logsumexp(lp, axis=1)[:, None])
        nk = resp.sum(0)
        nk = np.maximum(nk, 1e-300)
        w = nk / x.size
        mu = (resp * x[:, None]).sum(0) / nk
        var = (resp * (x[:, None] - mu) ** 2).sum(0) / nk
        if np.any(var < VARIANCE_FLOOR):
            floored = True
            var = np.maximum(var, VARIANCE_FLOOR)
        if len(lls) >= 2 and abs(lls[-1] - lls[-2]) < tol:
            break
    params = Gmm1D(w, mu, var)
    lls.append(params.log_likelihood(x))
    return FitResult(params=params, log_likelihoods=lls, variance_floored=floored, iterations=it)


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def discretize(params: Gmm1D, n: int) -> np.ndarray:
    """Pmf over {0..n-1} from unit-width bins [j, j+1).

    The last bin absorbs all mass beyond it; mass below 0 is dropped by
    the renormalization.  Every bin is floored at 1e-12 so a belief
    filter driven by the pmf never divides by zero.
    """
    if n < 2:
        raise ValueError("alphabet size must be >= 2")
    edges = np.arange(0, n + 1, dtype=float)
    pmf = np.zeros(n)
    for w, m, v in zip(params.weights, params.means, params.variances):
        sd = math.sqrt(v)
        cdf = np.array([_norm_cdf((e - m) / sd) for e in edges])
        bins = np.diff(cdf)
        bins[-1] += 1.0 - cdf[-1]  # right tail lumped into the last bin
        pmf += w * bins
    pmf = np.maximum(pmf, PMF_FLOOR)
    return pmf / pmf.sum()


def fit_observation_model(
    dataset: TraceDataset,
    n: int,
    k0: int = 2,
    k1: int = 3,
    iters: int = 200,
    tol: float = 1e-8,
    rng=None,
) -> tuple[ObservationModel, FitResult, FitResult]:
    """Fit per-state mixtures and discretize them onto an n-symbol alphabet."""
    if dataset.samples0.size == 0 or dataset.samples1.size == 0:
        raise ValueError("both state partitions must be nonempty for fitting")
    fit0 = em_fit(dataset.samples0, k0, iters=iters, tol=tol, rng=rng)
    fit1 = em_fit(dataset.samples1, k1, iters=iters, tol=tol, rng=rng)
    model = ObservationModel(discretize(fit0.params, n), discretize(fit1.params, n))
    return model, fit0, fit1


def ingest_trace(path) -> TraceDataset:
    """Read a labeled trace CSV with header ``state,observation``.

    State must be 0 or 1 and the observation a nonnegative real.
    Malformed rows raise a ValueError naming the offending line.
    """
    samples0: list[float] = []
    samples1: list[float] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["state", "observation"]:
            raise ValueError(f"{path}: expected header 'state,observation'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
            try:
                state = int(row[0])
                obs = float(row[1])
            except ValueError as e:
                raise ValueError(f"{path}: line {lineno}: {e}") from None
            if state not in (0, 1):
                raise ValueError(f"{path}: line {lineno}: state must be 0 or 1, got {state}")
            if not obs >= 0 or not math.isfinite(obs):
                raise ValueError(f"{path}: line {lineno}: observation must be a nonnegative real")
            (samples1 if state else samples0).append(obs)
    return TraceDataset(np.array(samples0), np.array(samples1))


def export_trace(dataset: TraceDataset, path) -> None:
    """Write a dataset back to the ingest CSV format."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["state", "observation"])
        for v in dataset.samples0:
            w.writerow([0, _fmt(v)])
        for v in dataset.samples1:
            w.writerow([1, _fmt(v)])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))
