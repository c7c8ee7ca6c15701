"""Correlation and group-comparison statistics.

Everything here is a pure function of its array inputs; permutation
shuffles draw from a caller-provided seed.  Tests exercise each formula
against independent summation or exhaustive enumeration oracles.
"""

from __future__ import annotations

from itertools import combinations, permutations
from math import comb, factorial

import numpy as np

from .errors import RankDeficientError, ZeroVarianceError

__all__ = [
    "pearson",
    "spearman",
    "multiple_r2",
    "permutation_test",
    "d_prime",
    "write_correlation_csv",
]


def _as_series(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def pearson(x, y) -> float:
    """Sample Pearson correlation."""
    x = _as_series(x, "x")
    y = _as_series(y, "y")
    if x.size != y.size or x.size < 3:
        raise ValueError("need two equal-length series of at least 3")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(dx @ dx)
    sy = float(dy @ dy)
    if sx == 0.0 or sy == 0.0:
        raise ZeroVarianceError("constant series has no correlation")
    return float(dx @ dy / np.sqrt(sx * sy))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation with averaged ranks on ties."""
    x = _as_series(x, "x")
    y = _as_series(y, "y")
    if x.size != y.size or x.size < 3:
        raise ValueError("need two equal-length series of at least 3")
    return pearson(_midranks(x), _midranks(y))


def multiple_r2(features, y) -> float:
    """Coefficient of determination of an OLS fit with intercept."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = _as_series(y, "y")
    n, k = x.shape
    if y.size != n:
        raise ValueError("feature rows and response length disagree")
    if n <= k + 1:
        raise ValueError(f"need more than {k + 1} observations, got {n}")
    design = np.column_stack([np.ones(n), x])
    if np.linalg.matrix_rank(design) < k + 1:
        raise RankDeficientError("design matrix is rank-deficient")
    coeffs, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ coeffs
    total = y - y.mean()
    ss_tot = float(total @ total)
    if ss_tot == 0.0:
        raise ZeroVarianceError("response is constant")
    return float(1.0 - (residual @ residual) / ss_tot)


def _mean_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(a.mean() - b.mean())


def _slope(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    denom = float(dx @ dx)
    if denom == 0.0:
        raise ZeroVarianceError("slope undefined for constant predictor")
    return float(dx @ (y - y.mean()) / denom)


def permutation_test(
    a,
    b,
    statistic: str = "mean_diff",
    n_perm: int = 10_000,
    seed: int = 0,
) -> float:
    """Two-sided permutation p-value, (1 + hits) / (1 + draws).

    ``mean_diff`` shuffles group labels of the pooled values; ``slope``
    treats (a, b) as paired series and shuffles b against a.  When the
    exact permutation count fits inside ``n_perm`` the enumeration is
    exhaustive instead of sampled.
    """
    a = _as_series(a, "a")
    b = _as_series(b, "b")
    if a.size < 2 or b.size < 2:
        raise ValueError("both groups need at least 2 values")

    if statistic == "mean_diff":
        observed = abs(_mean_diff(a, b))
        pooled = np.concatenate([a, b])
        n_a = a.size
        total = comb(pooled.size, n_a)
        if total <= n_perm:
            hits = 0
            for picked in combinations(range(pooled.size), n_a):
                mask = np.zeros(pooled.size, dtype=bool)
                mask[list(picked)] = True
                if abs(_mean_diff(pooled[mask], pooled[~mask])) >= observed - 1e-15:
                    hits += 1
            return (1 + hits) / (1 + total)
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(n_perm):
            shuffled = rng.permutation(pooled)
            if abs(_mean_diff(shuffled[:n_a], shuffled[n_a:])) >= observed - 1e-15:
                hits += 1
        return (1 + hits) / (1 + n_perm)

    if statistic == "slope":
        if a.size != b.size:
            raise ValueError("slope statistic needs paired series")
        observed = abs(_slope(a, b))
        total = factorial(b.size)
        if total <= n_perm:
            hits = 0
            for perm in permutations(range(b.size)):
                if abs(_slope(a, b[list(perm)])) >= observed - 1e-15:
                    hits += 1
            return (1 + hits) / (1 + total)
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(n_perm):
            if abs(_slope(a, rng.permutation(b))) >= observed - 1e-15:
                hits += 1
        return (1 + hits) / (1 + n_perm)

    raise ValueError(f"unknown statistic {statistic!r}")


def d_prime(a, b) -> float:
    """Sensitivity index between two groups (pooled-variance form)."""
    a = _as_series(a, "a")
    b = _as_series(b, "b")
    if a.size < 2 or b.size < 2:
        raise ValueError("both groups need at least 2 values")
    var_a = float(np.var(a, ddof=1))
    var_b = float(np.var(b, ddof=1))
    spread = np.sqrt((var_a + var_b) / 2)
    if spread == 0.0:
        raise ZeroVarianceError("both groups are constant")
    return float(abs(a.mean() - b.mean()) / spread)


def write_correlation_csv(rows: list[dict], path) -> None:
    """Emit a (measure, spearman, pearson, p_perm) table.

    A None entry becomes an empty field, so summary rows that only carry
    one statistic stay machine-parseable.
    """

    def cell(value) -> str:
        return "" if value is None else repr(value)

    with open(path, "w", encoding="ascii") as fh:
        fh.write("measure,spearman,pearson,p_perm\n")
        for row in rows:
            fh.write(
                f"{row['measure']},{cell(row['spearman'])},"
                f"{cell(row['pearson'])},{cell(row['p_perm'])}\n"
            )
