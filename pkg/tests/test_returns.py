"""
Тесты кривых времени возврата.
"""
import numpy as np
import pytest

from app.core.exceptions import ConfigurationError, DomainError, InsufficientDataError
from app.models.curve import Provenance, RankedPairs, ReturnCurve
from app.services.returns_service import ReturnsService, TiltedFilter, return_time


def _curve(thresholds, r, group=None, provenance=Provenance.GPA) -> ReturnCurve:
    r = np.asarray(r, dtype=float)
    return ReturnCurve(thresholds=thresholds, probabilities=-np.expm1(-1.0 / r), return_times=r,
                       provenance=provenance, label="gpa", group=group)


class TestReturnTime:

    def test_unit_return_time(self):
        assert return_time(1.0 - np.exp(-1.0)) == pytest.approx(1.0)

    def test_small_probability(self):
        p = 1e-6
        assert return_time(p) == pytest.approx(1.0 / p, rel=1e-5)


class TestFromRanked:

    def test_uniform_pairs(self):
        pairs = RankedPairs(thresholds=np.arange(100.0), weights=np.full(100, 0.01))
        curve = ReturnsService.curve_from_ranked(pairs)
        # накопленная вероятность 1 у наименьшего порога отбрасывается
        assert len(curve) == 99
        assert curve.dropped == 1
        assert curve.thresholds[0] == 99.0
        assert curve.return_times[0] == pytest.approx(-1.0 / np.log1p(-0.01))
        assert curve.is_monotone()

    def test_ties_collapse_to_largest_cumulative(self):
        pairs = RankedPairs(thresholds=[3.0, 2.0, 2.0, 1.0], weights=[0.1, 0.1, 0.1, 0.1])
        curve = ReturnsService.curve_from_ranked(pairs)
        np.testing.assert_array_equal(curve.thresholds, [3.0, 2.0, 1.0])
        np.testing.assert_allclose(curve.probabilities, [0.1, 0.3, 0.4])

    def test_pairs_are_sorted_on_construction(self):
        pairs = RankedPairs(thresholds=[1.0, 3.0, 2.0], weights=[0.3, 0.1, 0.2])
        np.testing.assert_array_equal(pairs.thresholds, [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(pairs.weights, [0.1, 0.2, 0.3])

    def test_overflow_raises(self):
        pairs = RankedPairs(thresholds=[2.0, 1.0], weights=[0.6, 0.6])
        with pytest.raises(DomainError):
            ReturnsService.curve_from_ranked(pairs, on_overflow="raise")

    def test_overflow_drops(self):
        pairs = RankedPairs(thresholds=[2.0, 1.0], weights=[0.6, 0.6])
        curve = ReturnsService.curve_from_ranked(pairs, on_overflow="drop")
        np.testing.assert_array_equal(curve.thresholds, [2.0])
        assert curve.dropped == 1

    def test_negative_probability(self):
        with pytest.raises(DomainError):
            ReturnsService.curve_from_ranked(RankedPairs(thresholds=[1.0], weights=[-0.1]))

    def test_empty_pairs(self):
        with pytest.raises(InsufficientDataError):
            ReturnsService.curve_from_ranked(RankedPairs(thresholds=[], weights=[]))

    def test_unknown_policy(self):
        with pytest.raises(ConfigurationError):
            ReturnsService.curve_from_ranked(RankedPairs(thresholds=[1.0], weights=[0.1]), on_overflow="clip")


class TestFromSeries:

    def test_block_series_agrees_with_ranked_pairs(self):
        series = np.random.default_rng(8).standard_normal(1000)
        curve = ReturnsService.curve_from_block_series(series, delta_t=10.0, dt=1.0)
        maxima = series.reshape(100, 10).max(axis=1)
        expected = ReturnsService.curve_from_ranked(RankedPairs(thresholds=maxima, weights=np.full(100, 0.01)),
                                                    Provenance.CONTROL, on_overflow="drop")
        np.testing.assert_array_equal(curve.thresholds, expected.thresholds)
        np.testing.assert_allclose(curve.return_times, expected.return_times)
        assert curve.block_length == 10.0
        assert curve.provenance == Provenance.CONTROL

    def test_block_length_off_grid(self):
        with pytest.raises(ConfigurationError):
            ReturnsService.curve_from_block_series(np.zeros(100), delta_t=2.5, dt=1.0)

    def test_series_shorter_than_two_blocks(self):
        with pytest.raises(InsufficientDataError):
            ReturnsService.curve_from_block_series(np.zeros(15), delta_t=10.0, dt=1.0)

    def test_from_thresholds_drops_degenerate_probabilities(self):
        curve = ReturnsService.curve_from_thresholds([1.0, 2.0, 3.0, 4.0], [0.5, 0.1, 0.0, 1.0])
        np.testing.assert_array_equal(curve.thresholds, [2.0, 1.0])
        assert curve.dropped == 2


class TestInterpolation:

    def test_exact_at_nodes_and_nan_outside(self):
        curve = _curve([3.0, 2.0, 1.0], [30.0, 7.0, 2.0])
        r = ReturnsService.interpolate_log_return(curve, [0.5, 1.0, 2.0, 3.0, 3.5])
        assert np.isnan(r[0]) and np.isnan(r[-1])
        np.testing.assert_array_equal(r[1:4], [2.0, 7.0, 30.0])

    def test_log_linear_between_nodes(self):
        curve = _curve([2.0, 1.0], [100.0, 1.0])
        assert ReturnsService.interpolate_log_return(curve, [1.5])[0] == pytest.approx(10.0)


class TestAverage:

    def test_mean_and_band(self):
        r = np.array([8.0, 4.0, 2.0])
        average = ReturnsService.average_curves([_curve([3.0, 2.0, 1.0], r), _curve([3.0, 2.0, 1.0], 3 * r)])
        np.testing.assert_allclose(average.return_times, 2 * r)
        np.testing.assert_allclose(average.band_lo, r)
        np.testing.assert_allclose(average.band_hi, 3 * r)
        np.testing.assert_array_equal(average.n_experiments, [2, 2, 2])

    def test_two_stage_mean_over_groups(self):
        curves = [_curve([1.0], [2.0], group=1.0), _curve([1.0], [4.0], group=1.0),
                  _curve([1.0], [12.0], group=2.0)]
        average = ReturnsService.average_curves(curves)
        assert average.return_times[0] == pytest.approx(7.5)
        assert average.n_experiments[0] == 3

    def test_partial_coverage(self):
        average = ReturnsService.average_curves([_curve([2.0, 1.0], [10.0, 2.0]), _curve([3.0, 2.0], [50.0, 20.0])])
        np.testing.assert_array_equal(average.thresholds, [3.0, 2.0, 1.0])
        np.testing.assert_allclose(average.return_times, [50.0, 15.0, 2.0])
        np.testing.assert_array_equal(average.n_experiments, [1, 2, 1])

    def test_tilted_filter(self):
        narrow = _curve([3.0, 2.0, 1.0], [40.0, 10.0, 2.0])
        narrow.tilted_mean, narrow.tilted_std = 2.0, 1.0
        wide = _curve([3.0, 2.0, 1.0], [20.0, 5.0, 4.0])
        average = ReturnsService.average_curves([narrow, wide], tilted_filter=TiltedFilter())
        # первая кривая оставляет только пороги в [1.5, 2.5]
        np.testing.assert_allclose(average.return_times, [20.0, 7.5, 4.0])

    def test_probabilities_follow_return_times(self):
        average = ReturnsService.average_curves([_curve([2.0, 1.0], [10.0, 2.0])])
        np.testing.assert_allclose(return_time(average.probabilities), average.return_times)

    def test_no_curves(self):
        with pytest.raises(InsufficientDataError):
            ReturnsService.average_curves([])


class TestAverageOnReturnTimes:

    def test_thresholds_are_averaged_at_fixed_return_times(self):
        curves = [_curve([3.0, 2.0, 1.0], [100.0, 10.0, 1.0]), _curve([4.0, 3.0, 2.0], [100.0, 10.0, 1.0])]
        average = ReturnsService.average_on_return_times(curves, n_points=3)
        np.testing.assert_allclose(average.return_times, [100.0, 10.0, 1.0])
        np.testing.assert_allclose(average.thresholds, [3.5, 2.5, 1.5])
        np.testing.assert_array_equal(average.n_experiments, [2, 2, 2])
        assert average.is_monotone()

    def test_grid_is_even_in_log_return_time(self):
        average = ReturnsService.average_on_return_times([_curve([3.0, 1.0], [1000.0, 1.0])], n_points=4)
        np.testing.assert_allclose(np.diff(np.log10(average.return_times[::-1])), 1.0)
        np.testing.assert_allclose(average.thresholds, [3.0, 7.0 / 3.0, 5.0 / 3.0, 1.0])

    def test_partial_coverage(self):
        curves = [_curve([2.0, 1.0], [20.0, 1.0]), _curve([4.0, 2.0], [100.0, 1.0])]
        average = ReturnsService.average_on_return_times(curves, n_points=3)
        np.testing.assert_array_equal(average.n_experiments, [1, 2, 2])
        assert average.thresholds[0] == pytest.approx(4.0)

    def test_interpolate_threshold(self):
        curve = _curve([2.0, 1.0], [100.0, 1.0])
        a = ReturnsService.interpolate_threshold(curve, [0.5, 10.0, 200.0])
        assert np.isnan(a[0]) and np.isnan(a[2])
        assert a[1] == pytest.approx(1.5)

    def test_grid_needs_two_points(self):
        with pytest.raises(ConfigurationError):
            ReturnsService.average_on_return_times([_curve([1.0], [2.0])], n_points=1)
