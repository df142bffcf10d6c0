"""
Significance machinery: one-sample t-test, Wilcoxon signed-rank (exact up to
n=25), Benjamini-Hochberg FDR and correlation p-values.
"""
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import special, stats as sps

from src.errors import ConfigError, DataError, DegenerateInputError
from src.numeric import pearson

logger = logging.getLogger(__name__)

WILCOXON_EXACT_MAX_N = 25


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    p: float
    n: int  # nonzero differences used
    n_zero: int  # zero differences dropped
    method: str  # "exact" | "normal"


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p: float
    n: int
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {"r": self.r, "p": self.p, "n": self.n, "degenerate": self.degenerate}


@dataclass(frozen=True, eq=False)
class PValueSet:
    raw: np.ndarray
    adjusted: np.ndarray
    rejected_at: dict[float, np.ndarray] = field(default_factory=dict)


def t_cdf(t, df) -> np.ndarray:
    """Student-t CDF through the regularized incomplete beta function."""
    t = np.asarray(t, dtype=np.float64)
    df = np.asarray(df, dtype=np.float64)
    tail = 0.5 * special.betainc(df / 2.0, 0.5, df / (df + t**2))
    return np.where(t >= 0, 1.0 - tail, tail)


def _two_sided_t(t, df) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return special.betainc(df / 2.0, 0.5, df / (df + t**2))


def t_test_one_sample(x, mu0: float = 0.0) -> TTestResult:
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size < 2:
        raise DegenerateInputError(f"t-test needs at least 2 samples, got {a.size}")
    sd = a.std(ddof=1)
    if sd == 0:
        raise DegenerateInputError("t-test on a sample with zero standard deviation")
    t = (a.mean() - mu0) / (sd / np.sqrt(a.size))
    return TTestResult(float(t), float(_two_sided_t(t, a.size - 1)), a.size - 1)


def t_test_columns(samples, mu0: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sample t-test per column of a samples x targets matrix.

    Returns (t, p, zero_sd). Zero-SD columns get p = 0 when their mean differs
    from mu0 and p = 1 otherwise; NaN columns get p = 1.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateInputError(f"column t-test needs a (>=2, m) matrix, got {x.shape}")
    n = x.shape[0]
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    zero_sd = sd == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (mean - mu0) / (sd / np.sqrt(n))
    p = _two_sided_t(np.where(zero_sd, 0.0, t), n - 1)
    p = np.where(zero_sd, np.where(mean != mu0, 0.0, 1.0), p)
    p = np.where(np.isnan(mean), 1.0, p)
    return t, p, zero_sd


def _signed_rank_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2*W+ (all 2^n patterns)."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in ranks2.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(x, y=None, exact_max_n: int = WILCOXON_EXACT_MAX_N) -> WilcoxonResult:
    """Two-sided paired signed-rank test; zero differences are dropped.

    Exact p for n <= exact_max_n (average ranks for ties), otherwise the
    normal approximation with continuity and tie correction.
    """
    a = np.asarray(x, dtype=np.float64).ravel()
    if y is None:
        d = a
    else:
        b = np.asarray(y, dtype=np.float64).ravel()
        if a.size != b.size:
            raise DegenerateInputError(f"wilcoxon needs equally long samples, got {a.size} and {b.size}")
        d = a - b
    nonzero = d[d != 0]
    n_zero = d.size - nonzero.size
    if nonzero.size == 0:
        raise DegenerateInputError("all paired differences are zero")
    if n_zero:
        logger.info(f"wilcoxon: dropped {n_zero} zero difference(s)")

    ranks = sps.rankdata(np.abs(nonzero))
    w_plus = float(ranks[nonzero > 0].sum())
    w_minus = float(ranks[nonzero < 0].sum())
    w = min(w_plus, w_minus)
    n = nonzero.size

    if n <= exact_max_n:
        ranks2 = np.rint(ranks * 2).astype(int)
        counts = _signed_rank_counts(ranks2)
        at_most = int(sum(counts[: int(round(2 * w)) + 1]))
        p = min(1.0, 2 * at_most / 2**n)
        return WilcoxonResult(w, p, n, n_zero, "exact")

    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes**3 - tie_sizes) / 48.0
    z = (w - mean + 0.5) / np.sqrt(var)
    p = min(1.0, 2.0 * float(sps.norm.cdf(z)))
    return WilcoxonResult(w, p, n, n_zero, "normal")


def fdr_bh(p, q=0.05) -> PValueSet:
    """Benjamini-Hochberg step-up procedure at one or several q levels."""
    raw = np.asarray(p, dtype=np.float64).ravel()
    if raw.size and (np.any(np.isnan(raw)) or raw.min() < 0 or raw.max() > 1):
        raise DataError("p-values must lie in [0, 1]")
    levels = [float(v) for v in np.atleast_1d(q)]
    m = raw.size
    if m == 0:
        return PValueSet(raw, raw.copy(), {lv: np.zeros(0, dtype=bool) for lv in levels})

    order = np.argsort(raw, kind="mergesort")
    ranked = raw[order]
    ranks = np.arange(1, m + 1)
    adjusted_sorted = np.minimum.accumulate((m * ranked / ranks)[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adjusted_sorted, 1.0)

    rejected_at = {}
    for level in levels:
        below = np.flatnonzero(ranked <= ranks * level / m)
        mask = np.zeros(m, dtype=bool)
        if below.size:
            mask[order[: below[-1] + 1]] = True
        rejected_at[level] = mask
    return PValueSet(raw, adjusted, rejected_at)


def pearson_p(r: float, n: int) -> float:
    """Two-sided p-value of a Pearson r from n samples (t with n-2 df).

    |r| = 1 returns exactly 0 and is logged as degenerate.
    """
    if n < 3:
        raise DegenerateInputError(f"correlation p-value needs n >= 3, got {n}")
    if abs(r) >= 1.0:
        logger.warning(f"degenerate correlation |r|=1 with n={n}: p set to 0")
        return 0.0
    df = n - 2
    return float(special.betainc(df / 2.0, 0.5, 1.0 - r * r))


def correlation_test(x, y) -> CorrelationResult:
    r = pearson(x, y)
    n = np.asarray(x).size
    return CorrelationResult(r, pearson_p(r, n), n, abs(r) >= 1.0)


def compare_conditions(table: pd.DataFrame, family: str, q: float = 0.05) -> pd.DataFrame:
    """Paired Wilcoxon between every pair of conditions, per metric, across subjects.

    `table` is long format with columns subject, model, metric, value.
    `family` names the FDR correction family: "metric" (one family per
    metric) or "all" (every comparison together).
    """
    if family not in ("metric", "all"):
        raise ConfigError("family", f"must be 'metric' or 'all', got {family!r}")
    missing = {"subject", "model", "metric", "value"} - set(table.columns)
    if missing:
        raise DataError(f"comparison table lacks columns {sorted(missing)}")

    rows = []
    for metric, sub in table.groupby("metric", sort=True):
        wide = sub.pivot_table(index="subject", columns="model", values="value", aggfunc="mean")
        for a, b in itertools.combinations(sorted(wide.columns), 2):
            pair = wide[[a, b]].dropna()
            try:
                res = wilcoxon_signed_rank(pair[a].to_numpy(), pair[b].to_numpy())
            except DegenerateInputError as e:
                logger.warning(f"{metric}: {a} vs {b} skipped ({e})")
                continue
            rows.append({
                "metric": metric, "model_a": a, "model_b": b, "n_subjects": len(pair),
                "statistic": res.statistic, "p": res.p, "method": res.method,
                "mean_diff": float((pair[a] - pair[b]).mean()),
            })
    out = pd.DataFrame(rows, columns=["metric", "model_a", "model_b", "n_subjects", "statistic", "p", "method", "mean_diff"])
    out["p_fdr"] = np.nan
    out["significant"] = False
    if out.empty:
        return out
    groups = [out.index] if family == "all" else [g.index for _, g in out.groupby("metric", sort=True)]
    for idx in groups:
        res = fdr_bh(out.loc[idx, "p"].to_numpy(), q)
        out.loc[idx, "p_fdr"] = res.adjusted
        out.loc[idx, "significant"] = res.rejected_at[q]
    return out
