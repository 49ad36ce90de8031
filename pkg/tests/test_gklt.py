"""
Тесты GKLT: восстановление траекторий по предкам и оценки для средних по времени.
"""
import numpy as np
import pytest

from app.core.exceptions import ConfigurationError, LineageIntegrityError
from app.core.rng import StreamFactory
from app.models.trajectory import BackwardTrajectory
from app.services.dynamics_service import DynamicsService
from app.services.gklt_service import GkltService
from app.services.mc_service import McService
from app.services.resampler_service import ResamplerService


def test_zero_tilt_equals_plain_monte_carlo(ou_spec, position, gklt_tilt):
    tilt = gklt_tilt(0.0)
    gklt = GkltService.run_gklt(ou_spec, position, tilt, 30, StreamFactory(5, 1))
    plain = ResamplerService.run_plain(ou_spec, position, tilt, 30, StreamFactory(5, 1), record_segments=True)

    bts = GkltService.backward_from_run(gklt)
    plain_bts = GkltService.backward_from_run(plain)
    maxima = GkltService.window_maxima(bts, 0.25)
    np.testing.assert_array_equal(maxima, GkltService.window_maxima(plain_bts, 0.25))

    thresholds = [0.0, 0.5, 1.0]
    gamma = GkltService.estimate_tail_fixed_thresholds(bts, gklt.ledger, tilt, 0.25, thresholds)
    np.testing.assert_array_equal(gamma, McService.tail_curve_mc(maxima, thresholds))


def test_backward_trajectories_are_continuous(ou_spec, position, gklt_tilt):
    run = GkltService.run_gklt(ou_spec, position, gklt_tilt(0.5), 40, StreamFactory(2))
    bts = GkltService.backward_from_run(run)
    assert len(bts) == 40
    assert all(bt.series.shape == (101,) for bt in bts)
    assert bts[0].final_time == pytest.approx(1.0)
    assert GkltService.continuity_audit(bts) == 0.0


def test_backward_end_matches_final_ensemble(ou_spec, position, gklt_tilt):
    run = GkltService.run_gklt(ou_spec, position, gklt_tilt(0.5), 25, StreamFactory(3))
    bts = GkltService.backward_from_run(run)
    np.testing.assert_array_equal([bt.series[-1] for bt in bts], run.final.end_observable)
    np.testing.assert_array_equal([bt.series[0] for bt in bts], run.final.initial_observable)


def test_telescoping_identity(ou_spec, position, gpa_tilt):
    tilt = gpa_tilt(2.0)
    run = ResamplerService.run_gpa(ou_spec, position, tilt, 50, StreamFactory(11), record_segments=True)
    bts = GkltService.reconstruct_backward(run.ancestry, run.segments, run.dt)
    thresholds = [-0.5, 0.0, 0.5, 1.0, 1.5]
    direct = ResamplerService.estimate_tail_gpa(run.final, run.ledger, position, tilt, thresholds)
    telescoped = GkltService.telescoping_tail(bts, run.ledger, thresholds)
    np.testing.assert_allclose(telescoped, direct, rtol=1e-10)

    # испорченный вес предка одной траектории меняет оценку
    j = int(np.argmax(run.final.end_observable))
    run.ledger.entries[3].raw[bts[j].slots[3]] *= 2.0
    assert GkltService.telescoping_tail(bts, run.ledger, [-0.5])[0] != pytest.approx(direct[0], rel=1e-10)


def test_every_final_particle_has_one_root(ou_spec, position, gpa_tilt):
    run = ResamplerService.run_gpa(ou_spec, position, gpa_tilt(3.0), 40, StreamFactory(12), record_segments=True)
    bts = GkltService.backward_from_run(run)
    roots = np.array([bt.slots[0] for bt in bts])
    np.testing.assert_array_equal(roots, run.final.root)
    assert all(bt.slots.shape == (len(run.ledger),) for bt in bts)
    assert np.unique(roots).size < 40


def test_telescoping_needs_full_lineage(ou_spec, position, gpa_tilt):
    run = ResamplerService.run_gpa(ou_spec, position, gpa_tilt(1.0), 10, StreamFactory(13), record_segments=True)
    bts = GkltService.backward_from_run(run)
    bts[0].slots = bts[0].slots[:-1]
    with pytest.raises(LineageIntegrityError):
        GkltService.telescoping_tail(bts, run.ledger, [0.0])


def test_window_averages_of_linear_series():
    t = np.linspace(0.0, 1.0, 101)
    bt = BackwardTrajectory(series=t, dt=0.01, integral=0.5, source_id=0)
    averages = GkltService.time_averages(bt, 0.5)
    np.testing.assert_allclose(averages.values, [0.25, 0.75], rtol=1e-12)
    assert averages.maximum == pytest.approx(0.75)


def test_window_off_grid():
    with pytest.raises(ConfigurationError):
        GkltService.window_averages_matrix(np.zeros((2, 101)), 0.01, 0.255)


def test_window_longer_than_trajectory():
    with pytest.raises(ConfigurationError):
        GkltService.window_averages_matrix(np.zeros((2, 11)), 0.01, 0.5)


def test_missing_epoch_breaks_lineage(ou_spec, position, gklt_tilt):
    run = GkltService.run_gklt(ou_spec, position, gklt_tilt(0.5), 10, StreamFactory(4))
    segments = dict(run.segments)
    del segments[2]
    with pytest.raises(LineageIntegrityError):
        GkltService.reconstruct_backward(run.ancestry, segments, run.dt)


def test_out_of_range_parent_breaks_lineage(ou_spec, position, gklt_tilt):
    run = GkltService.run_gklt(ou_spec, position, gklt_tilt(0.5), 10, StreamFactory(4))
    run.ancestry.records[3].parents = run.ancestry.records[3].parents + 100
    with pytest.raises(LineageIntegrityError) as info:
        GkltService.backward_from_run(run)
    assert info.value.epoch == 3


def test_per_trajectory_max_pairs(ou_spec, position, gklt_tilt):
    tilt = gklt_tilt(0.05)
    run = GkltService.run_gklt(ou_spec, position, tilt, 40, StreamFactory(6))
    bts = GkltService.backward_from_run(run)
    pairs = GkltService.estimate_per_trajectory_max(bts, run.ledger, tilt, 0.25)
    assert len(pairs) == 40
    assert np.all(np.diff(pairs.thresholds) <= 0)
    np.testing.assert_allclose(np.sort(pairs.thresholds), np.sort(GkltService.window_maxima(bts, 0.25)))


def test_fixed_threshold_estimate_is_monotone(ou_spec, position, gklt_tilt):
    tilt = gklt_tilt(0.05)
    run = GkltService.run_gklt(ou_spec, position, tilt, 40, StreamFactory(7))
    bts = GkltService.backward_from_run(run)
    gamma = GkltService.estimate_tail_fixed_thresholds(bts, run.ledger, tilt, 0.25, [0.0, 0.5, 1.0, 1.5])
    assert np.all(np.diff(gamma) <= 0)
    assert np.all(gamma >= 0)


def test_window_average_variance_matches_oracle(ou_spec, position, gklt_tilt):
    tilt = gklt_tilt(0.0, tau=0.25, T_f=0.25)
    run = GkltService.run_gklt(ou_spec, position, tilt, 2000, StreamFactory(14))
    averages = np.array([GkltService.time_averages(bt, 0.25).maximum for bt in GkltService.backward_from_run(run)])
    expected = DynamicsService.time_average_variance(ou_spec, 0.25)
    assert np.var(averages) == pytest.approx(expected, rel=0.15)


@pytest.mark.slow
def test_ranked_weights_carry_unit_mass(ou_spec, position, gklt_tilt):
    tilt = gklt_tilt(0.05, tau=0.1, T_f=2.0)
    masses = []
    for k in range(40):
        run = GkltService.run_gklt(ou_spec, position, tilt, 100, StreamFactory(15, k))
        pairs = GkltService.estimate_per_trajectory_max(GkltService.backward_from_run(run), run.ledger, tilt, 0.25)
        masses.append(pairs.total_mass)
    assert np.mean(masses) == pytest.approx(1.0, abs=0.05)
