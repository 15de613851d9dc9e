"""
Statistical verification primitives: goodness-of-fit, independence and
two-sample tests with fixed critical values at level 0.01.

A report passes iff statistic < critical value. Permutation tests take an
explicit seed so every run is reproducible.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["TestReport", "ks_test", "correlation_test", "energy_distance_test"]

# Asymptotic one-sample Kolmogorov-Smirnov critical coefficient at level
# 0.01 (c(alpha) = sqrt(-ln(alpha/2)/2) ~= 1.628).
KS_COEFF_001 = 1.628
# Two-sided normal quantile at level 0.01 for the correlation test.
CORR_COEFF_001 = 2.58


@dataclass(frozen=True)
class TestReport:
    """Outcome of one statistical test at level 0.01."""

    name: str
    statistic: float
    critical: float
    sample_size: int
    passed: bool

    def __str__(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name}: statistic={self.statistic:.6g} "
                f"critical={self.critical:.6g} n={self.sample_size}")

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "statistic": self.statistic,
            "critical": self.critical,
            "sample_size": self.sample_size,
            "passed": self.passed,
        }


def ks_test(samples: np.ndarray, cdf, name: str = "ks") -> TestReport:
    """
    One-sample Kolmogorov-Smirnov test against a target CDF.

    The statistic is the sup-distance between the empirical CDF and the
    callable `cdf`; the critical value is the asymptotic 1.628/sqrt(n)
    at level 0.01. Requires n >= 1000.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = len(x)
    if n < 1000:
        raise ValueError("ks_test needs at least 1000 samples")
    f = np.asarray(cdf(x), dtype=float)
    grid = np.arange(1, n + 1) / n
    stat = float(max(np.max(grid - f), np.max(f - (grid - 1.0 / n))))
    crit = KS_COEFF_001 / np.sqrt(n)
    return TestReport(name, stat, crit, n, stat < crit)


def correlation_test(x: np.ndarray, y: np.ndarray,
                     name: str = "correlation") -> TestReport:
    """
    Absolute Pearson correlation with threshold 2.58/sqrt(n).

    Detects linear dependence only; nonlinear but uncorrelated pairs pass
    by construction.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    n = len(x)
    r = float(np.corrcoef(x, y)[0, 1])
    crit = CORR_COEFF_001 / np.sqrt(n)
    return TestReport(name, abs(r), crit, n, abs(r) < crit)


def _pairwise_distances(z: np.ndarray) -> np.ndarray:
    """Dense float32 Euclidean distance matrix, built in row chunks."""
    z = np.ascontiguousarray(z, dtype=np.float32)
    n = len(z)
    sq = np.sum(z * z, axis=1)
    d = np.empty((n, n), dtype=np.float32)
    chunk = max(1, (1 << 25) // max(n, 1))
    for lo in range(0, n, chunk):
        g = z[lo:lo + chunk] @ z.T
        block = sq[lo:lo + chunk, None] + sq[None, :] - 2.0 * g
        np.maximum(block, 0.0, out=block)
        d[lo:lo + chunk] = np.sqrt(block)
    return d


def energy_distance_test(a: np.ndarray, b: np.ndarray, seed: int = 0,
                         n_permutations: int = 200,
                         name: str = "energy") -> TestReport:
    """
    Two-sample energy-distance test with a permutation critical value.

    Statistic: 2 E|A-B| - E|A-A'| - E|B-B'| over the pooled sample; the
    critical value is the 0.99 quantile of the statistic over
    `n_permutations` random relabelings (level 0.01).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 1 and a.size > a.shape[1]:
        a = a.T
    if b.shape[0] == 1 and b.size > b.shape[1]:
        b = b.T
    n, m = len(a), len(b)
    tot = n + m
    dist = _pairwise_distances(np.vstack([a, b]))
    row_sums = dist.sum(axis=1, dtype=np.float64)
    grand = float(row_sums.sum())

    def stat_for(indicator: np.ndarray) -> float:
        da = dist @ indicator
        s_aa = float(indicator @ da)
        s_a = float(row_sums @ indicator)
        s_ab = s_a - s_aa
        s_bb = grand - 2.0 * s_a + s_aa
        return 2.0 * s_ab / (n * m) - s_aa / (n * n) - s_bb / (m * m)

    base = np.zeros(tot, dtype=np.float32)
    base[:n] = 1.0
    observed = stat_for(base)

    rng = np.random.default_rng(seed)
    null = np.empty(n_permutations)
    for i in range(n_permutations):
        ind = np.zeros(tot, dtype=np.float32)
        ind[rng.permutation(tot)[:n]] = 1.0
        null[i] = stat_for(ind)
    crit = float(np.quantile(null, 0.99))
    return TestReport(name, observed, crit, tot, observed < crit)
