"""Error metrics, score aggregation, rank tables and the Friedman test layer.

The four metrics:

    msle  = (1/n) sum (log(1 + y) - log(1 + yhat))^2
    mape  = (100/n') sum |y - yhat| / |y|        over terms with y != 0
    rmsle = sqrt(msle)
    ev    = 1 - Var(yhat - y) / Var(y)           population (1/n) variance

The comparison layer ranks k models on N datasets by aggregate score (lower is
better, ties get the average of tied positions), computes the Friedman
statistic

    chi2_F = 12N / (k(k+1)) * [ sum_j R_j^2 - k(k+1)^2 / 4 ]

its F-distributed correction

    F_f = (N-1) chi2_F / (N(k-1) - chi2_F)      with df (k-1, (k-1)(N-1))

and compares F_f against the upper critical value of the F distribution,
obtained by bisecting the regularized incomplete beta function.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AllActualsZeroError,
    ConstantActualsError,
    ConvergenceFailureError,
    DegenerateDenominatorError,
    DegenerateTableError,
    EmptyInputError,
    InvalidValueError,
    LengthMismatchError,
    MissingMetricError,
    NegativeValueError,
)

log = logging.getLogger("horizonbench.stats")


def _paired(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape or actual.ndim != 1:
        raise LengthMismatchError(
            f"actual shape {actual.shape} != predicted shape {predicted.shape}"
        )
    if actual.size == 0:
        raise EmptyInputError("metric of empty input")
    return actual, predicted


def msle(actual, predicted) -> float:
    """Mean squared log error on log(1 + x); zeros are legal, negatives are not."""
    actual, predicted = _paired(actual, predicted)
    if (actual < 0).any() or (predicted < 0).any():
        raise NegativeValueError("msle requires non-negative values")
    diff = np.log1p(actual) - np.log1p(predicted)
    return float(np.mean(diff * diff))


def rmsle(actual, predicted) -> float:
    return math.sqrt(msle(actual, predicted))


def mape(actual, predicted) -> float:
    """Mean absolute percentage error (in percent), skipping zero actuals."""
    actual, predicted = _paired(actual, predicted)
    nonzero = actual != 0
    skipped = int(actual.size - nonzero.sum())
    if skipped == actual.size:
        raise AllActualsZeroError("every actual value is zero; MAPE undefined")
    if skipped:
        log.warning("mape: skipped %d term(s) with zero actual value", skipped)
    a = actual[nonzero]
    p = predicted[nonzero]
    return float(100.0 * np.mean(np.abs(a - p) / np.abs(a)))


def explained_variance(actual, predicted) -> float:
    """1 - Var(residual) / Var(actual), population variances."""
    actual, predicted = _paired(actual, predicted)
    if actual.size < 2:
        raise EmptyInputError("explained variance needs at least 2 samples")
    var_actual = float(np.var(actual))
    if var_actual == 0.0:
        raise ConstantActualsError("actual values are constant; EV undefined")
    return 1.0 - float(np.var(predicted - actual)) / var_actual


def abs_error_histogram(actual, predicted, num_bins: int):
    """Equal-width histogram of |y - yhat| over [0, max error].

    Returns (edges, counts) with len(edges) == num_bins + 1. Bins are
    right-closed, the first bin additionally includes its left edge, so zero
    errors land in bin 0 and counts always sum to n.
    """
    if num_bins < 1:
        raise InvalidValueError("num_bins must be >= 1")
    actual, predicted = _paired(actual, predicted)
    errors = np.abs(actual - predicted)
    hi = float(errors.max())
    edges = np.linspace(0.0, hi, num_bins + 1)
    counts = np.zeros(num_bins, dtype=np.int64)
    if hi == 0.0:
        counts[0] = errors.size
        return edges, counts
    width = hi / num_bins
    # (lo, hi] bins via ceil(e / width) - 1; exact zeros go to bin 0
    idx = np.ceil(errors / width).astype(np.int64) - 1
    idx = np.clip(idx, 0, num_bins - 1)
    counts = np.bincount(idx, minlength=num_bins)
    return edges, counts


@dataclass(frozen=True)
class MetricReport:
    """The four metrics plus their unweighted mean for one (dataset, model)."""

    dataset_id: str
    model_id: str
    msle: float
    mape: float
    rmsle: float
    ev: float
    aggregate_score: float


def aggregate_score(msle_value: float, mape_value: float, rmsle_value: float,
                    ev_value: float, ev_corrected: bool = False) -> float:
    """Unweighted mean of the four metrics.

    EV enters verbatim even though it is a higher-is-better quantity; passing
    ev_corrected=True swaps in (1 - EV) instead, which is a deliberate,
    clearly non-default variant.
    """
    values = (msle_value, mape_value, rmsle_value,
              (1.0 - ev_value) if ev_corrected else ev_value)
    if any(v is None or not np.isfinite(v) for v in values):
        raise MissingMetricError(f"aggregate over incomplete metrics {values}")
    return float(np.mean(values))


def score_report(dataset_id: str, model_id: str, actual, predicted) -> MetricReport:
    """All four metrics for one forecast run.

    Count forecasts dipping below zero are clamped to zero here (a negative
    count prediction means zero); the raw predictions stay untouched in the
    emitted forecast files.
    """
    predicted = np.maximum(np.asarray(predicted, dtype=np.float64), 0.0)
    m = msle(actual, predicted)
    a = mape(actual, predicted)
    r = math.sqrt(m)
    e = explained_variance(actual, predicted)
    return MetricReport(dataset_id=dataset_id, model_id=model_id, msle=m, mape=a,
                        rmsle=r, ev=e, aggregate_score=aggregate_score(m, a, r, e))


# --- ranking ---------------------------------------------------------------


@dataclass(frozen=True)
class RankTable:
    datasets: tuple[str, ...]
    models: tuple[str, ...]
    ranks: np.ndarray  # (N, k)

    @property
    def average_ranks(self) -> np.ndarray:
        return self.ranks.mean(axis=0)

    @property
    def n_datasets(self) -> int:
        return self.ranks.shape[0]

    @property
    def n_models(self) -> int:
        return self.ranks.shape[1]


def _rank_row(values: np.ndarray) -> np.ndarray:
    """Ascending ranks starting at 1; ties get the average of tied positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_models(scores, datasets, models) -> RankTable:
    """Per-dataset ranks of models by score; lower score means better rank."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape != (len(datasets), len(models)):
        raise DegenerateTableError(
            f"scores shape {scores.shape} != ({len(datasets)}, {len(models)})"
        )
    ranks = np.vstack([_rank_row(row) for row in scores])
    return RankTable(datasets=tuple(datasets), models=tuple(models), ranks=ranks)


# --- Friedman / Iman-Davenport ------------------------------------------------


def friedman_chi2(average_ranks, n_datasets: int) -> float:
    """Friedman statistic from the k average ranks over N datasets."""
    ranks = np.asarray(average_ranks, dtype=np.float64)
    k = ranks.size
    if k < 2 or n_datasets < 2:
        raise DegenerateTableError(f"need k >= 2 models and N >= 2 datasets, got k={k}, N={n_datasets}")
    return float(
        12.0 * n_datasets / (k * (k + 1)) * (np.sum(ranks ** 2) - k * (k + 1) ** 2 / 4.0)
    )


def friedman_statistic(table: RankTable) -> float:
    return friedman_chi2(table.average_ranks, table.n_datasets)


def iman_davenport(chi2_f: float, n_datasets: int, k_models: int) -> float:
    denom = n_datasets * (k_models - 1) - chi2_f
    if denom <= 0:
        raise DegenerateDenominatorError(
            f"N(k-1) = {n_datasets * (k_models - 1)} must exceed chi2 = {chi2_f}"
        )
    return (n_datasets - 1) * chi2_f / denom


@dataclass(frozen=True)
class FriedmanResult:
    chi2_f: float
    f_f: float
    df1: int
    df2: int
    alpha: float
    critical_value: float
    reject_null: bool


def friedman_test(average_ranks, n_datasets: int, alpha: float = 0.05) -> FriedmanResult:
    """Full decision: chi2, Iman-Davenport F, critical value, reject/accept."""
    ranks = np.asarray(average_ranks, dtype=np.float64)
    k = ranks.size
    chi2 = friedman_chi2(ranks, n_datasets)
    f_f = iman_davenport(chi2, n_datasets, k)
    df1 = k - 1
    df2 = (k - 1) * (n_datasets - 1)
    critical = f_critical(alpha, df1, df2)
    return FriedmanResult(chi2_f=chi2, f_f=f_f, df1=df1, df2=df2, alpha=alpha,
                          critical_value=critical, reject_null=f_f > critical)


# --- F distribution -----------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ConvergenceFailureError(f"betacf failed to converge for a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise InvalidValueError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_cdf(x: float, df1: int, df2: int) -> float:
    if x <= 0.0:
        return 0.0
    t = df1 * x / (df1 * x + df2)
    return betainc_reg(df1 / 2.0, df2 / 2.0, t)


def f_critical(alpha: float, df1: int, df2: int) -> float:
    """Upper critical value: the (1 - alpha) quantile of F(df1, df2).

    Found by bisecting the CDF (via the regularized incomplete beta) to an
    interval below 1e-8.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidValueError(f"alpha must be in (0, 1), got {alpha}")
    if df1 < 1 or df2 < 1:
        raise InvalidValueError("degrees of freedom must be positive integers")
    target = 1.0 - alpha
    lo, hi = 0.0, 1.0
    expansions = 0
    while f_cdf(hi, df1, df2) < target:
        hi *= 2.0
        expansions += 1
        if expansions > 200:
            raise ConvergenceFailureError(f"quantile bracket failed for alpha={alpha}")
    for _ in range(500):
        if hi - lo <= 1e-8 * max(1.0, lo):
            break
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, df1, df2) < target:
            lo = mid
        else:
            hi = mid
    else:
        raise ConvergenceFailureError("bisection failed to reach tolerance")
    return 0.5 * (lo + hi)
