"""Synthetic datasets and distribution diagnostics.

* generalized-normal sampling by exact inverse transform,
* the sign-coded classification task with optional train/test shape shift,
* the element-wise power regression task and its ratio metric,
* moments, histograms, Jensen-Shannon divergence and a KS statistic.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from .errors import ConfigurationError, DataError, DimensionError
from .tensor import write_tensor


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``seed``.

    Keys may be ints or strings; strings are hashed with CRC-32 so streams
    are stable across processes and Python versions.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.default_rng(np.random.SeedSequence(words))


# --------------------------------------------------------------------------
# generalized normal distribution
# --------------------------------------------------------------------------

@dataclass
class GndConfig:
    kappa: float = 0.0
    xi: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigurationError(f"scale must be positive, got {self.scale}")
        if np.any(np.abs(np.asarray(self.kappa)) > 1):
            raise ConfigurationError("|kappa| must not exceed 1")


def gnd_transform(z, kappa, xi=0.0, scale=1.0):
    """Map standard-normal draws ``z`` through the inverse of the GND link.

    ``x = xi + scale * (1 - exp(-kappa z)) / kappa``, reducing to
    ``xi + scale * z`` at ``kappa = 0``.  ``kappa`` broadcasts against ``z``.
    """
    z = np.asarray(z, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    zero = kappa == 0
    k = np.where(zero, 1.0, kappa)
    x = np.where(zero, z, -np.expm1(-k * z) / k)
    return xi + scale * x


def gnd_cdf(x, kappa, xi=0.0, scale=1.0):
    """CDF of the generalized normal: ``Phi(y)`` with ``y = -log(1 - kappa (x-xi)/scale) / kappa``."""
    u = (np.asarray(x, dtype=np.float64) - xi) / scale
    if kappa == 0:
        return special.ndtr(u)
    arg = 1.0 - kappa * u
    y = np.where(arg > 0, -np.log(np.where(arg > 0, arg, 1.0)) / kappa,
                 np.inf if kappa > 0 else -np.inf)
    return special.ndtr(y)


def gnd_sample(config: GndConfig, n: int, seed=None, rng=None) -> np.ndarray:
    """Draw ``n`` samples; deterministic for a given ``seed``."""
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    z = rng.standard_normal(n)
    return gnd_transform(z, config.kappa, config.xi, config.scale)


# --------------------------------------------------------------------------
# sign-coded classification data
# --------------------------------------------------------------------------

def assign_label(x, n_determinant: int):
    """``sum_n 2**n * [x_n >= 0]`` over the first ``n_determinant`` features.

    Works on one feature vector or a ``[samples, features]`` matrix.
    """
    x = np.asarray(x)
    if x.shape[-1] < n_determinant:
        raise DimensionError(f"need at least {n_determinant} features, got {x.shape[-1]}")
    weights = 1 << np.arange(n_determinant, dtype=np.int64)
    return (x[..., :n_determinant] >= 0).astype(np.int64) @ weights


@dataclass
class SyntheticClassSpec:
    n_features: int = 128
    n_determinant: int = 4
    n_train: int = 10_000
    n_test: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_determinant <= self.n_features:
            raise ConfigurationError("need 1 <= n_determinant <= n_features")

    @property
    def n_classes(self) -> int:
        return 2 ** self.n_determinant


@dataclass
class LabeledSet:
    x: np.ndarray
    y: np.ndarray
    kappa: np.ndarray = field(repr=False)


def make_classification_dataset(spec: SyntheticClassSpec, diverged: bool):
    """Train and test sets whose features are GND draws with per-feature shape.

    Each feature gets ``kappa ~ U(-1, 1)``.  Without divergence the test set
    reuses the training shapes; with divergence it draws its own.
    """
    rng = substream(spec.seed, "classification")
    M = spec.n_features
    kappa_train = rng.uniform(-1.0, 1.0, M)
    kappa_test = rng.uniform(-1.0, 1.0, M)
    if not diverged:
        kappa_test = kappa_train.copy()
    z_train = substream(spec.seed, "train-z").standard_normal((spec.n_train, M))
    z_test = substream(spec.seed, "test-z").standard_normal((spec.n_test, M))
    x_train = gnd_transform(z_train, kappa_train)
    x_test = gnd_transform(z_test, kappa_test)
    train = LabeledSet(x_train, assign_label(x_train, spec.n_determinant), kappa_train)
    test = LabeledSet(x_test, assign_label(x_test, spec.n_determinant), kappa_test)
    return train, test


# --------------------------------------------------------------------------
# power regression data
# --------------------------------------------------------------------------

@dataclass
class PowerRegressionSet:
    x: np.ndarray
    y: np.ndarray
    exponents: np.ndarray


def make_power_regression_dataset(n_features: int, n_samples: int, seed: int,
                                  exponents=None) -> PowerRegressionSet:
    """``x ~ U(0,1)^M`` and ``y_m = x_m ** a_m`` with ``a ~ U(0,2)^M`` fixed per dataset.

    Pass ``exponents`` to force them (e.g. all ones for the identity control).
    """
    rng = substream(seed, "power-regression")
    drawn = rng.uniform(0.0, 2.0, n_features)
    a = drawn if exponents is None else np.broadcast_to(
        np.asarray(exponents, dtype=np.float64), (n_features,)).copy()
    x = rng.uniform(0.0, 1.0, (n_samples, n_features))
    return PowerRegressionSet(x, x ** a, a)


def ratio_metric(pred, truth):
    """Per-sample ``sum|pred - truth| / sum(truth)`` in percent.

    Returns ``(ratios, mean, std)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or truth.ndim != 2:
        raise DimensionError(f"expected matching [n, M] arrays, got {pred.shape} and {truth.shape}")
    mass = truth.sum(axis=1)
    if np.any(mass <= 0):
        raise DataError("every truth row must have a positive sum")
    r = np.abs(pred - truth).sum(axis=1) / mass * 100.0
    return r, float(r.mean()), float(r.std())


# --------------------------------------------------------------------------
# distribution statistics
# --------------------------------------------------------------------------

class DegenerateDistributionError(DataError):
    """Standardised moments are undefined for zero-variance samples."""


@dataclass
class DistStats:
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)  # normalised, sums to 1


def histogram(samples, edges) -> np.ndarray:
    """Normalised histogram of ``samples`` over fixed ``edges``."""
    counts, _ = np.histogram(np.ravel(samples), bins=edges)
    total = counts.sum()
    if total == 0:
        raise DataError("no samples fall inside the histogram range")
    return counts / total


def pooled_edges(a, b=None, bins=100) -> np.ndarray:
    """Equal-width edges spanning the pooled range of one or two samples."""
    vals = [np.ravel(a)] + ([np.ravel(b)] if b is not None else [])
    lo = min(float(v.min()) for v in vals)
    hi = max(float(v.max()) for v in vals)
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def dist_moments(samples, bins=100, edges=None) -> DistStats:
    """Population moments plus a normalised histogram."""
    x = np.ravel(np.asarray(samples, dtype=np.float64))
    if x.size < 4:
        raise DataError("need at least 4 samples")
    mean = x.mean()
    d = x - mean
    m2 = np.mean(d ** 2)
    if m2 == 0:
        raise DegenerateDistributionError("zero variance: skewness and kurtosis undefined")
    skew = np.mean(d ** 3) / m2 ** 1.5
    kurt = np.mean(d ** 4) / m2 ** 2 - 3.0
    if edges is None:
        edges = pooled_edges(x, bins=bins)
    return DistStats(float(mean), float(m2), float(skew), float(kurt),
                     np.asarray(edges), histogram(x, edges))


def _kl(p, q):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p, q, edges_p=None, edges_q=None) -> float:
    """Jensen-Shannon divergence (natural log) between two normalised histograms."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"histograms have {p.shape} vs {q.shape} bins")
    if edges_p is not None and edges_q is not None and not np.array_equal(edges_p, edges_q):
        raise DimensionError("histograms use different bin edges")
    m = 0.5 * (p + q)
    return 0.5 * (_kl(p, m) + _kl(q, m))


def ks_statistic(samples, cdf) -> float:
    """Two-sided Kolmogorov-Smirnov distance between samples and a CDF."""
    x = np.sort(np.ravel(samples))
    n = x.size
    f = cdf(x)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def ks_test_normal(samples, significance=0.01):
    """KS test against the standard normal; returns ``(D, p_value, passed)``."""
    n = np.size(samples)
    d = ks_statistic(samples, special.ndtr)
    p = float(stats.kstwo.sf(d, n))
    return d, p, p > significance


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def export_dataset(directory, name: str, x, y, provenance: dict) -> Path:
    """Write ``<name>.x.pct``, ``<name>.y.pct`` and ``<name>.provenance.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / f"{name}.x.pct", x)
    write_tensor(directory / f"{name}.y.pct", y)
    lines = [f"{k} = {v}" for k, v in provenance.items()]
    (directory / f"{name}.provenance.txt").write_text("\n".join(lines) + "\n")
    return directory


def spec_provenance(spec) -> dict:
    return asdict(spec)
