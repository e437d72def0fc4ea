"""Clustering agreement scores and the bootstrap / Welch t-test used to compare methods."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .streams import stream

MAX_N = 10**6


@dataclass
class ContingencyTable:
    counts: np.ndarray   # (n_true_classes, n_pred_classes), int64
    row_sums: np.ndarray
    col_sums: np.ndarray
    n: int


def contingency(labels_true, labels_pred) -> ContingencyTable:
    a = np.asarray(labels_true)
    b = np.asarray(labels_pred)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label arrays must be 1-D and equal length, got {a.shape} and {b.shape}")
    if len(a) > MAX_N:
        raise ValueError(f"N > {MAX_N} not supported")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    counts = np.zeros((ia.max(initial=-1) + 1, ib.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(counts, (ia, ib), 1)
    return ContingencyTable(counts, counts.sum(axis=1), counts.sum(axis=0), int(len(a)))


def _comb2(v: np.ndarray) -> int:
    v = v.astype(np.int64)
    return int((v * (v - 1) // 2).sum())


def ari(labels_true, labels_pred) -> float:
    """Adjusted Rand index. Returns 1.0 when both partitions are trivial and equal (M == E)."""
    t = contingency(labels_true, labels_pred)
    if t.n < 2:
        raise ValueError("ARI needs at least 2 samples")
    index = _comb2(t.counts.ravel())
    sa, sb = _comb2(t.row_sums), _comb2(t.col_sums)
    total = t.n * (t.n - 1) // 2
    # scale by total to keep the integers exact: E*total = sa*sb, M*total = (sa+sb)*total/2
    num = 2 * (index * total - sa * sb)
    den = (sa + sb) * total - 2 * sa * sb
    if den == 0:
        return 1.0
    return num / den


def ari_pairs(labels_true, labels_pred) -> float:
    """ARI by explicit enumeration of all N(N-1)/2 pairs (slow; for checking)."""
    a = np.asarray(labels_true)
    b = np.asarray(labels_pred)
    n = len(a)
    i, j = np.triu_indices(n, k=1)
    same_a = a[i] == a[j]
    same_b = b[i] == b[j]
    n11 = int(np.sum(same_a & same_b))
    na, nb = int(same_a.sum()), int(same_b.sum())
    total = len(i)
    expected = na * nb / total
    max_index = 0.5 * (na + nb)
    if max_index == expected:
        return 1.0
    return (n11 - expected) / (max_index - expected)


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(-(p * np.log(p)).sum())


def homogeneity(labels_true, labels_pred) -> float:
    """1 - H(true | pred) / H(true), natural logs; 1.0 when H(true) == 0."""
    t = contingency(labels_true, labels_pred)
    h_true = _entropy(t.row_sums)
    if h_true == 0:
        return 1.0
    nz = t.counts > 0
    joint = t.counts[nz].astype(np.float64)
    col = np.broadcast_to(t.col_sums[None, :], t.counts.shape)[nz].astype(np.float64)
    h_cond = float(-(joint / t.n * np.log(joint / col)).sum())
    return 1.0 - h_cond / h_true


# ---------------------------------------------------------------------------
# bootstrap


@dataclass
class BootstrapReport:
    point: float
    values: np.ndarray = field(repr=False)
    mean: float = 0.0
    sd: float = 0.0
    ci_low: float = 0.0
    ci_high: float = 0.0
    n_resamples: int = 0
    seed: int = 0

    def to_dict(self, with_values: bool = False) -> dict:
        d = asdict(self)
        d["values"] = self.values.tolist() if with_values else None
        if not with_values:
            del d["values"]
        return d

    def to_json(self, with_values: bool = True) -> str:
        return json.dumps(self.to_dict(with_values))


def _order_stat(sorted_vals: np.ndarray, q: float) -> float:
    # nearest-rank percentile: always one of the resample values
    b = len(sorted_vals)
    k = min(max(int(math.ceil(q * b)) - 1, 0), b - 1)
    return float(sorted_vals[k])


def bootstrap_metric(labels_true, labels_pred, metric: Callable = ari, n_resamples: int = 1000,
                     seed: int = 0) -> BootstrapReport:
    """Paired bootstrap: each resample draws subject indices with replacement."""
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    a = np.asarray(labels_true)
    b = np.asarray(labels_pred)
    if a.shape != b.shape:
        raise ValueError("label arrays must have equal length")
    rng = stream(seed, "bootstrap")
    n = len(a)
    values = np.empty(n_resamples)
    for i in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        values[i] = metric(a[idx], b[idx])
    s = np.sort(values)
    return BootstrapReport(
        point=float(metric(a, b)), values=values, mean=float(values.mean()),
        sd=float(values.std(ddof=1)) if n_resamples > 1 else 0.0,
        ci_low=_order_stat(s, 0.025), ci_high=_order_stat(s, 0.975),
        n_resamples=n_resamples, seed=seed,
    )


# ---------------------------------------------------------------------------
# Student t distribution


def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 10000) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be > 0")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return min(1.0, max(0.0, betainc_reg(0.5 * df, 0.5, x)))


@dataclass
class TTestResult:
    t: float
    df: float
    p: float
    alternative: str = "two-sided"
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def welch_ttest(sample_a, sample_b, alternative: str = "two-sided", equal_var: bool = False) -> TTestResult:
    """Welch (or, with ``equal_var``, pooled) two-sample t-test."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least 2 values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if equal_var:
        df = na + nb - 2.0
        sp = ((na - 1) * va + (nb - 1) * vb) / df
        se2 = sp * (1.0 / na + 1.0 / nb)
    else:
        qa, qb = va / na, vb / nb
        se2 = qa + qb
        df = se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1)) if se2 > 0 else float(na + nb - 2)
    if se2 == 0:
        if ma == mb:
            return TTestResult(0.0, float(df), 1.0, alternative, degenerate=True)
        t = math.copysign(math.inf, ma - mb)
        return TTestResult(t, float(df), _p_from_t(t, df, alternative), alternative, degenerate=True)
    t = float((ma - mb) / math.sqrt(se2))
    return TTestResult(t, float(df), _p_from_t(t, df, alternative), alternative)


def _p_from_t(t: float, df: float, alternative: str) -> float:
    two = t_sf_two_sided(t, df)
    if alternative == "two-sided":
        return two
    upper = 0.5 * two if t > 0 else 1.0 - 0.5 * two   # P(T >= t)
    if alternative == "greater":
        return upper
    if alternative == "less":
        return 1.0 - upper
    raise ValueError(f"unknown alternative {alternative!r}")


def effective_classes(assignments, threshold: float = 0.01) -> int:
    """Number of labels holding at least ``threshold`` of the assignments."""
    a = np.asarray(assignments)
    _, counts = np.unique(a, return_counts=True)
    return int((counts >= threshold * len(a)).sum())
