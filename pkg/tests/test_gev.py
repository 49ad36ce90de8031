"""
Тесты GEV: блочные максимумы, подгонка, хвосты и уровни возврата.
"""
import numpy as np
import pytest
from scipy import special

from app.core.exceptions import ConfigurationError, ConvergenceError, DomainError, InsufficientDataError
from app.models.curve import Provenance
from app.schemas.gev import BlockLayout, GevFit, GevParams
from app.services.gev_service import PENALTY, GevService, negative_log_likelihood


def _gumbel_fit(block_size: int = 1) -> GevFit:
    return GevFit(params=GevParams(mu=0.0, sigma=1.0, zeta=0.0), log_likelihood=0.0,
                  covariance=(0.01 * np.eye(3)).tolist(), block_size=block_size, n_maxima=100)


@pytest.fixture(scope="module")
def gumbel_sample():
    return np.random.default_rng(314).gumbel(0.0, 1.0, 20_000)


class TestBlockMaxima:

    def test_single_series(self):
        maxima = GevService.block_maxima(np.arange(10.0), 3)
        np.testing.assert_array_equal(maxima.values, [2.0, 5.0, 8.0])
        assert maxima.block_size == 3

    def test_per_time_step(self):
        source = np.arange(24.0).reshape(6, 4)
        maxima = GevService.block_maxima(source, 2, BlockLayout.PER_TIME_STEP_ACROSS_TRAJECTORIES)
        assert maxima.values.shape == (4, 3)
        np.testing.assert_array_equal(maxima.values[:, 0], source[1])

    def test_too_few_values(self):
        with pytest.raises(InsufficientDataError):
            GevService.block_maxima(np.arange(5.0), 3)

    def test_block_size_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            GevService.block_maxima(np.arange(5.0), 0)


class TestFit:

    def test_recovers_gumbel(self, gumbel_sample):
        fit = GevService.fit_gev_mle(gumbel_sample)
        assert fit.params.mu == pytest.approx(0.0, abs=0.05)
        assert fit.params.sigma == pytest.approx(1.0, abs=0.05)
        assert fit.params.zeta == pytest.approx(0.0, abs=0.05)
        assert fit.diagnostics.converged_starts >= 1
        assert fit.n_maxima == 20_000

    def test_covariance_is_positive(self, gumbel_sample):
        fit = GevService.fit_gev_mle(gumbel_sample)
        se = fit.standard_errors()
        assert all(0 < s < 0.05 for s in se)
        lo, hi = fit.shape_ci()
        assert lo < fit.params.zeta < hi

    def test_shifted_and_scaled_data(self):
        x = 5.0 + 2.0 * np.random.default_rng(1).gumbel(0.0, 1.0, 5000)
        fit = GevService.fit_gev_mle(x)
        assert fit.params.mu == pytest.approx(5.0, abs=0.15)
        assert fit.params.sigma == pytest.approx(2.0, abs=0.15)

    def test_location_scale_equivariance(self):
        x = np.random.default_rng(2).gumbel(0.0, 1.0, 2000)
        base = GevService.fit_gev_mle(x).params
        moved = GevService.fit_gev_mle(3.0 * x + 5.0).params
        assert moved.mu == pytest.approx(3.0 * base.mu + 5.0, rel=1e-4)
        assert moved.sigma == pytest.approx(3.0 * base.sigma, rel=1e-4)
        assert moved.zeta == pytest.approx(base.zeta, abs=1e-4)

    def test_constant_data(self):
        with pytest.raises(ConvergenceError):
            GevService.fit_gev_mle(np.full(50, 3.0))

    def test_too_few_maxima(self):
        with pytest.raises(InsufficientDataError):
            GevService.fit_gev_mle([1.0])

    def test_profile_interval_contains_estimate(self):
        x = np.random.default_rng(2).gumbel(0.0, 1.0, 500)
        fit = GevService.fit_gev_mle(x, profile_ci=True)
        lo, hi = fit.shape_profile_ci
        assert lo < fit.params.zeta < hi


class TestLikelihood:

    def test_negative_scale_is_penalized(self):
        assert negative_log_likelihood(np.array([0.0, -1.0, 0.0]), np.array([0.1, 0.2])) >= PENALTY

    def test_support_violation_is_penalized(self):
        assert negative_log_likelihood(np.array([0.0, 1.0, 1.0]), np.array([-5.0, 0.0])) >= PENALTY

    def test_gumbel_likelihood(self):
        x = np.array([0.0, 1.0])
        expected = np.sum(x + np.exp(-x))
        assert negative_log_likelihood(np.array([0.0, 1.0, 0.0]), x) == pytest.approx(expected)


class TestTails:

    def test_gumbel_tail_formula(self):
        fit = _gumbel_fit(block_size=10)
        assert GevService.tail_from_gev(fit, 2.0) == pytest.approx(-np.expm1(-np.exp(-2.0) / 10))

    def test_cdf_and_quantile_are_inverse(self):
        params = GevParams(mu=1.0, sigma=2.0, zeta=0.2)
        p = np.array([0.1, 0.5, 0.99])
        np.testing.assert_allclose(GevService.gev_cdf(params, GevService.gev_quantile(params, p)), p)

    def test_cdf_outside_support(self):
        params = GevParams(mu=0.0, sigma=1.0, zeta=0.5)
        assert GevService.gev_cdf(params, -10.0) == 0.0
        params = GevParams(mu=0.0, sigma=1.0, zeta=-0.5)
        assert GevService.gev_cdf(params, 10.0) == 1.0

    def test_return_level(self):
        level = GevService.return_level(_gumbel_fit(), 100.0)
        assert level.level == pytest.approx(-np.log(-np.log(0.99)))
        assert level.lower < level.level < level.upper

    def test_return_time_must_exceed_one(self):
        with pytest.raises(DomainError):
            GevService.return_level(_gumbel_fit(), 1.0)

    def test_gaussian_tail_from_block_maxima(self):
        samples = np.random.default_rng(41).standard_normal(100_000)
        fit = GevService.fit_gev_mle(GevService.block_maxima(samples, 100))
        lo, hi = GevService.tail_band(fit, np.array([2.0]))
        gamma = special.erfc(2.0 / np.sqrt(2.0)) / 2.0
        assert lo[0] <= gamma <= hi[0]
        assert GevService.tail_from_gev(fit, 2.0) == pytest.approx(gamma, rel=0.2)

    def test_return_curve(self):
        curve = GevService.return_curve(_gumbel_fit(), np.linspace(0.0, 5.0, 11), label="gev m=1")
        assert curve.provenance == Provenance.GEV
        assert curve.is_monotone()
        assert np.all(curve.band_lo <= curve.return_times)
        assert np.all(curve.band_hi >= curve.return_times)


@pytest.mark.slow
def test_recovers_gumbel_precisely():
    x = np.random.default_rng(99).gumbel(0.0, 1.0, 100_000)
    fit = GevService.fit_gev_mle(x)
    assert fit.params.mu == pytest.approx(0.0, abs=0.02)
    assert fit.params.sigma == pytest.approx(1.0, abs=0.02)
    assert fit.params.zeta == pytest.approx(0.0, abs=0.02)


@pytest.mark.slow
def test_shape_interval_covers_zero_for_gaussian_blocks():
    # максимумы m гауссовых величин точно: Φ̄(M) = 1 − U^{1/m}
    m, n_maxima = 1e12, 100
    rng = np.random.default_rng(7)
    covered = 0
    for _ in range(100):
        u = rng.random(n_maxima)
        maxima = -special.ndtri(-np.expm1(np.log(u) / m))
        lo, hi = GevService.fit_gev_mle(maxima).shape_ci()
        covered += lo <= 0.0 <= hi
    assert covered >= 90
