import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from horizonbench.errors import (
    AllActualsZeroError,
    ConstantActualsError,
    DegenerateDenominatorError,
    DegenerateTableError,
    InvalidValueError,
    MissingMetricError,
    NegativeValueError,
)
from horizonbench.stats import (
    abs_error_histogram,
    aggregate_score,
    explained_variance,
    f_cdf,
    f_critical,
    friedman_chi2,
    friedman_statistic,
    friedman_test,
    iman_davenport,
    mape,
    msle,
    rank_models,
    rmsle,
)

# Published aggregate-score table (datasets x models) and its rank table;
# model column order: LSTM, GRU, Conv-LSTM, Bi-LSTM, Bi-GRU, Bi-Conv-LSTM.
REFERENCE_AVERAGE_RANKS = (3.0, 3.25, 4.83, 4.08, 2.33, 3.42)
FIRST_ROW_SCORES = (0.49265, 0.494675, 0.71, 0.49435, 0.4927, 0.548825)


# independent brute-force re-implementations used as oracles
def oracle_msle(actual, predicted):
    total = 0.0
    for y, p in zip(actual, predicted):
        total += (math.log(1 + y) - math.log(1 + p)) ** 2
    return total / len(actual)


def oracle_mape(actual, predicted):
    terms = [abs(y - p) / abs(y) for y, p in zip(actual, predicted) if y != 0]
    return 100.0 * sum(terms) / len(terms)


def oracle_ev(actual, predicted):
    n = len(actual)
    resid = [p - y for y, p in zip(actual, predicted)]
    mr = sum(resid) / n
    my = sum(actual) / n
    var_r = sum((r - mr) ** 2 for r in resid) / n
    var_y = sum((y - my) ** 2 for y in actual) / n
    return 1.0 - var_r / var_y


positive_seq = st.lists(
    st.floats(min_value=0.0, max_value=1e6, allow_subnormal=False),
    min_size=2, max_size=30,
)


class TestMsle:
    def test_identity(self):
        assert msle([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_unit_log_gap(self):
        assert msle([math.e - 1.0], [0.0]) == pytest.approx(1.0, abs=1e-12)

    def test_zeros_are_legal(self):
        assert msle([0.0, 0.0], [0.0, 0.0]) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(NegativeValueError):
            msle([1.0], [-0.5])

    @given(positive_seq, positive_seq)
    def test_matches_oracle(self, a, p):
        n = min(len(a), len(p))
        assert msle(a[:n], p[:n]) == pytest.approx(oracle_msle(a[:n], p[:n]), abs=1e-10)


class TestMape:
    def test_identity(self):
        assert mape([10.0], [10.0]) == 0.0

    def test_hand_value(self):
        assert mape([100.0, 200.0], [110.0, 180.0]) == pytest.approx(10.0)

    def test_reported_seven_day_error_point(self):
        assert mape([345000.0], [404000.0]) == pytest.approx(17.10, abs=5e-3)

    def test_reported_one_day_error_point(self):
        assert mape([345000.0], [354000.0]) == pytest.approx(2.6, abs=0.05)

    def test_zero_actuals_skipped_with_warning(self, caplog):
        with caplog.at_level("WARNING", logger="horizonbench.stats"):
            value = mape([0.0, 100.0], [5.0, 110.0])
        assert value == pytest.approx(10.0)
        assert "skipped 1" in caplog.text

    def test_all_zero_actuals(self):
        with pytest.raises(AllActualsZeroError):
            mape([0.0, 0.0], [1.0, 2.0])


class TestRmsle:
    def test_identity(self):
        assert rmsle([2.0], [2.0]) == 0.0

    def test_square_root_of_unit(self):
        assert rmsle([math.e - 1.0], [0.0]) == pytest.approx(1.0, abs=1e-12)

    @given(positive_seq, positive_seq)
    def test_square_equals_msle(self, a, p):
        n = min(len(a), len(p))
        assert rmsle(a[:n], p[:n]) ** 2 == pytest.approx(msle(a[:n], p[:n]), abs=1e-12)


class TestExplainedVariance:
    def test_identity(self):
        assert explained_variance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_constant_offset_is_perfect(self):
        assert explained_variance([1.0, 2.0, 3.0], [8.0, 9.0, 10.0]) == pytest.approx(1.0)

    def test_hand_value(self):
        assert explained_variance([0.0, 2.0], [0.0, 0.0]) == pytest.approx(0.0)

    def test_constant_actuals(self):
        with pytest.raises(ConstantActualsError):
            explained_variance([5.0, 5.0], [1.0, 2.0])

    @given(st.lists(st.floats(min_value=0, max_value=1e4), min_size=3, max_size=30),
           st.lists(st.floats(min_value=0, max_value=1e4), min_size=3, max_size=30))
    def test_matches_oracle(self, a, p):
        n = min(len(a), len(p))
        a, p = a[:n], p[:n]
        if float(np.var(a)) == 0.0:
            return
        assert explained_variance(a, p) == pytest.approx(oracle_ev(a, p), abs=1e-9)


@given(positive_seq, positive_seq, st.randoms())
def test_metrics_symmetric_under_pair_permutation(a, p, rnd):
    n = min(len(a), len(p))
    a, p = a[:n], p[:n]
    order = list(range(n))
    rnd.shuffle(order)
    a2 = [a[i] for i in order]
    p2 = [p[i] for i in order]
    assert msle(a, p) == pytest.approx(msle(a2, p2), rel=1e-12, abs=1e-12)
    assert rmsle(a, p) == pytest.approx(rmsle(a2, p2), rel=1e-12, abs=1e-12)
    if any(y != 0 for y in a):
        assert mape(a, p) == pytest.approx(mape(a2, p2), rel=1e-12, abs=1e-9)


class TestHistogram:
    def test_identity_all_in_first_bin(self):
        edges, counts = abs_error_histogram([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 4)
        assert counts[0] == 3
        assert counts[1:].sum() == 0

    def test_hand_binning(self):
        edges, counts = abs_error_histogram([1.0, 2.0, 3.0, 4.0], [0.0] * 4, 2)
        np.testing.assert_array_equal(edges, [0.0, 2.0, 4.0])
        np.testing.assert_array_equal(counts, [2, 2])

    def test_single_bin(self):
        _, counts = abs_error_histogram([1.0, 5.0], [0.0, 0.0], 1)
        assert counts[0] == 2

    def test_bad_bins(self):
        with pytest.raises(InvalidValueError):
            abs_error_histogram([1.0], [0.0], 0)

    @given(st.lists(st.floats(min_value=0, max_value=1e5), min_size=1, max_size=60),
           st.integers(min_value=1, max_value=12))
    def test_counts_conserved(self, errors, bins):
        actual = np.asarray(errors)
        _, counts = abs_error_histogram(actual, np.zeros_like(actual), bins)
        assert counts.sum() == len(errors)


class TestAggregateScore:
    def test_all_equal(self):
        assert aggregate_score(0.5, 0.5, 0.5, 0.5) == 0.5

    def test_missing_metric(self):
        with pytest.raises(MissingMetricError):
            aggregate_score(0.5, float("nan"), 0.5, 0.5)

    def test_ev_corrected_variant(self):
        plain = aggregate_score(0.0, 0.0, 0.0, 1.0)
        corrected = aggregate_score(0.0, 0.0, 0.0, 1.0, ev_corrected=True)
        assert plain == pytest.approx(0.25)
        assert corrected == 0.0


class TestRankModels:
    def test_reference_first_row(self):
        table = rank_models([FIRST_ROW_SCORES], ["row"], list("ABCDEF"))
        np.testing.assert_array_equal(table.ranks[0], [1, 4, 6, 3, 2, 5])

    def test_full_tie(self):
        table = rank_models([[1.0] * 6], ["row"], list("ABCDEF"))
        np.testing.assert_array_equal(table.ranks[0], [3.5] * 6)

    def test_partial_tie(self):
        table = rank_models([[1.0, 1.0, 2.0]], ["row"], list("ABC"))
        np.testing.assert_array_equal(table.ranks[0], [1.5, 1.5, 3.0])

    def test_shape_checked(self):
        with pytest.raises(DegenerateTableError):
            rank_models([[1.0, 2.0]], ["row"], ["only"])

    @given(st.lists(st.lists(st.floats(min_value=0, max_value=100), min_size=4,
                             max_size=4), min_size=2, max_size=8))
    def test_row_sums_and_scipy_agreement(self, rows):
        scores = np.asarray(rows)
        table = rank_models(scores, [f"d{i}" for i in range(len(rows))], list("WXYZ"))
        k = 4
        np.testing.assert_allclose(table.ranks.sum(axis=1), k * (k + 1) / 2, atol=1e-12)
        for row, expected in zip(table.ranks, scores):
            np.testing.assert_allclose(row, scipy.stats.rankdata(expected), atol=1e-12)

    @given(st.lists(st.floats(min_value=0.01, max_value=100), min_size=4, max_size=4),
           st.floats(min_value=0.01, max_value=50))
    def test_positive_scaling_invariance(self, row, factor):
        a = rank_models([row], ["d"], list("WXYZ")).ranks
        b = rank_models([[v * factor for v in row]], ["d"], list("WXYZ")).ranks
        np.testing.assert_array_equal(a, b)


class TestFriedman:
    def test_reference_chi2(self):
        assert friedman_chi2(REFERENCE_AVERAGE_RANKS, 12) == pytest.approx(10.84, abs=0.02)

    def test_no_disagreement_gives_zero(self):
        k = 6
        assert friedman_chi2([(k + 1) / 2] * k, 10) == pytest.approx(0.0, abs=1e-12)

    @given(st.lists(st.lists(st.floats(min_value=0, max_value=10), min_size=3,
                             max_size=3), min_size=4, max_size=10))
    def test_matches_direct_formula(self, rows):
        scores = np.asarray(rows)
        table = rank_models(scores, [f"d{i}" for i in range(len(rows))], list("XYZ"))
        n, k = table.ranks.shape
        avg = [sum(table.ranks[i][j] for i in range(n)) / n for j in range(k)]
        expected = 12.0 * n / (k * (k + 1)) * (sum(r * r for r in avg)
                                               - k * (k + 1) ** 2 / 4.0)
        assert friedman_statistic(table) == pytest.approx(expected, abs=1e-9)

    @given(st.lists(st.lists(st.floats(min_value=0, max_value=10), min_size=4,
                             max_size=4), min_size=3, max_size=8),
           st.permutations(range(4)))
    def test_label_permutation_invariance(self, rows, perm):
        scores = np.asarray(rows)
        names = [f"d{i}" for i in range(len(rows))]
        chi_a = friedman_statistic(rank_models(scores, names, list("WXYZ")))
        chi_b = friedman_statistic(rank_models(scores[:, list(perm)], names, list("WXYZ")))
        assert chi_a == pytest.approx(chi_b, abs=1e-9)

    def test_degenerate_table(self):
        with pytest.raises(DegenerateTableError):
            friedman_chi2([1.0], 12)


class TestImanDavenport:
    def test_reference_value(self):
        chi2 = friedman_chi2(REFERENCE_AVERAGE_RANKS, 12)
        assert iman_davenport(chi2, 12, 6) == pytest.approx(2.43, abs=0.02)

    def test_zero_chi2(self):
        assert iman_davenport(0.0, 12, 6) == 0.0

    def test_monotone_in_chi2(self):
        values = [iman_davenport(c, 12, 6) for c in np.linspace(0.1, 59.0, 40)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_degenerate_denominator(self):
        with pytest.raises(DegenerateDenominatorError):
            iman_davenport(60.0, 12, 6)


class TestFriedmanDecision:
    def test_reference_decision(self):
        result = friedman_test(REFERENCE_AVERAGE_RANKS, 12, alpha=0.05)
        assert result.df1 == 5
        assert result.df2 == 55
        assert result.critical_value == pytest.approx(2.38, abs=0.01)
        assert result.f_f > result.critical_value
        assert result.reject_null


class TestFDistribution:
    def test_reference_critical_value(self):
        assert f_critical(0.05, 5, 55) == pytest.approx(2.38, abs=0.01)

    def test_median_of_symmetric_f_is_one(self):
        for d in (1, 2, 5, 20):
            assert f_critical(0.5, d, d) == pytest.approx(1.0, abs=1e-6)

    def test_f_1_1_upper_tail(self):
        assert f_critical(0.05, 1, 1) == pytest.approx(161.45, abs=0.1)

    @pytest.mark.parametrize("alpha", [0.01, 0.05, 0.10, 0.5])
    @pytest.mark.parametrize("df", [(1, 1), (2, 5), (5, 55), (3, 10), (10, 2)])
    def test_cdf_round_trip_against_scipy(self, alpha, df):
        q = f_critical(alpha, *df)
        assert scipy.stats.f.cdf(q, *df) == pytest.approx(1 - alpha, abs=1e-6)
        assert f_cdf(q, *df) == pytest.approx(1 - alpha, abs=1e-8)

    def test_invalid_alpha(self):
        with pytest.raises(InvalidValueError):
            f_critical(1.5, 2, 2)
