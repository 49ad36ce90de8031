"""
Тесты источников траекторий и наблюдаемых.
"""
import numpy as np
import pytest
from scipy.signal import lfilter

from app.config import settings
from app.core.exceptions import ConfigurationError, RejectedInputError, ResamplingTimeNotFoundError
from app.models.trajectory import State, Trajectory
from app.schemas.system import Observable, SystemSpec
from app.services.dynamics_service import DynamicsService


class TestStepOu:

    def test_euler_step_without_noise(self, ou_spec):
        new = DynamicsService.step_ou(State(values=[1.0]), ou_spec, 0.0)
        assert new.values[0] == pytest.approx(0.99, abs=1e-15)
        assert new.time == pytest.approx(0.01)

    def test_euler_step_with_unit_noise(self, ou_spec):
        new = DynamicsService.step_ou(State(values=[1.0]), ou_spec, 1.0)
        assert new.values[0] == pytest.approx(1.09, abs=1e-12)

    def test_nan_state_is_rejected(self, ou_spec):
        with pytest.raises(RejectedInputError):
            DynamicsService.step_ou(State(values=[np.nan]), ou_spec, 0.0)

    def test_requires_ou_system(self, l96_spec):
        with pytest.raises(ConfigurationError):
            DynamicsService.step_ou(State(values=np.zeros(8)), l96_spec, 0.0)

    def test_integrate_matches_step_loop(self, ou_spec, position):
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal((5, 1))
        noise = rng.standard_normal((50, 5))
        _, path = DynamicsService.integrate(x0, ou_spec, 50, position, noise)

        for n in range(5):
            state = State(values=x0[n])
            expected = [state.values[0]]
            for k in range(50):
                state = DynamicsService.step_ou(state, ou_spec, noise[k, n])
                expected.append(state.values[0])
            np.testing.assert_allclose(path[n], expected, rtol=1e-12, atol=1e-12)

    def test_exact_transition_preserves_stationary_variance(self, position):
        spec = SystemSpec.ou(dt=0.01, exact=True)
        rng = np.random.default_rng(11)
        x0 = DynamicsService.sample_initial_states(spec, 20000, rng)
        final, _ = DynamicsService.integrate(x0, spec, 300, position, rng.standard_normal((300, 20000)))
        assert np.var(final) == pytest.approx(0.5, abs=0.03)

    def test_euler_stationary_variance_is_close_to_half(self, ou_spec, position):
        rng = np.random.default_rng(12)
        x0 = DynamicsService.sample_initial_states(ou_spec, 20000, rng)
        final, _ = DynamicsService.integrate(x0, ou_spec, 300, position, rng.standard_normal((300, 20000)))
        assert DynamicsService.stationary_variance(ou_spec) == 0.5
        assert np.var(final) == pytest.approx(0.5, abs=0.03)

    def test_time_average_variance(self):
        spec = SystemSpec.ou()
        assert DynamicsService.time_average_variance(spec, 0.25) == pytest.approx(0.4608, rel=1e-3)
        # при T → ∞ дисперсия среднего ≈ 2v/(λT)
        assert DynamicsService.time_average_variance(spec, 1e4) == pytest.approx(1e-4, rel=1e-3)
        with pytest.raises(ConfigurationError):
            DynamicsService.time_average_variance(spec, 0.0)

    def test_position_decorrelates_in_three_time_units(self):
        spec = SystemSpec.ou(dt=0.05, exact=True)
        traj = DynamicsService.simulate(State(values=[0.0]), spec, 1_000_000, np.random.default_rng(31))
        # e^{−λ·lag} = 0.05
        lag = DynamicsService.estimate_resampling_time(traj.values[:, 0], tolerance=0.05, dt=spec.dt)
        assert lag == pytest.approx(3.0, abs=0.4)


class TestLorenz96:

    def test_fixed_point_is_invariant(self, l96_spec):
        state = State(values=np.full(8, l96_spec.l96_forcing))
        new = DynamicsService.step_lorenz96(state, l96_spec)
        np.testing.assert_array_equal(new.values, state.values)

    def test_rotation_equivariance(self, l96_spec):
        x = np.random.default_rng(0).normal(8.0, 1.0, 8)
        shifted = DynamicsService.step_lorenz96(State(values=np.roll(x, 3)), l96_spec).values
        plain = DynamicsService.step_lorenz96(State(values=x), l96_spec).values
        np.testing.assert_allclose(shifted, np.roll(plain, 3), rtol=1e-14)

    def test_wrong_number_of_sites(self, l96_spec):
        with pytest.raises(RejectedInputError):
            DynamicsService.step_lorenz96(State(values=np.ones(5)), l96_spec)

    def test_initial_states_come_from_several_chains(self, l96_spec, fast_l96):
        rng = np.random.default_rng(5)
        states = DynamicsService.sample_initial_states(l96_spec, 20, rng)
        assert states.shape == (20, 8)
        assert np.all(np.isfinite(states))
        assert np.unique(states[:, 0]).size == 20

    def test_spinup_leaves_the_fixed_point(self, l96_spec, monkeypatch):
        monkeypatch.setattr(settings, "l96_max_chains", 16)
        states = DynamicsService.sample_initial_states(l96_spec, 32, np.random.default_rng(8))
        energy = DynamicsService.observe(states, Observable.energy())
        # у неподвижной точки x = F энергия F²/2 = 32
        assert 4.0 < float(np.mean(energy)) < 20.0

    def test_nearby_states_separate(self):
        spec = SystemSpec.lorenz96()
        x = spec.l96_forcing + np.random.default_rng(4).standard_normal((1, spec.l96_sites))
        x, _ = DynamicsService.integrate(x, spec, 1000, Observable.energy())
        pair = np.vstack([x, x + 1e-8])
        final, _ = DynamicsService.integrate(pair, spec, 5000, Observable.energy())
        assert np.linalg.norm(final[0] - final[1]) > 0.1


class TestClonePerturbation:

    def test_zero_epsilon_keeps_state(self, l96_spec):
        spec = l96_spec.model_copy(update={"clone_epsilon": 0.0})
        state = State(values=np.arange(8.0), time=1.5)
        moved = DynamicsService.perturb_clone(state, spec, np.full(8, 0.7))
        np.testing.assert_array_equal(moved.values, state.values)
        assert moved.time == 1.5

    def test_shift_is_epsilon_times_draw(self, l96_spec):
        state = State(values=np.zeros(8))
        moved = DynamicsService.perturb_clone(state, l96_spec, np.ones(8))
        np.testing.assert_allclose(moved.values, 1e-3)

    def test_mean_shift_vanishes(self, l96_spec):
        draws = np.random.default_rng(21).uniform(-1.0, 1.0, (4000, 8))
        shifts = np.vstack([DynamicsService.perturb_clone(State(values=np.zeros(8)), l96_spec, u).values
                            for u in draws])
        # СКО среднего: ε/√(3n)
        assert np.all(np.abs(shifts.mean(axis=0)) <= 2 * 1e-3 / np.sqrt(draws.shape[0]))
        assert np.max(np.abs(shifts)) <= 1e-3

    @pytest.mark.parametrize("draws", [np.full(8, 1.5), np.full(8, np.nan), np.ones(5)])
    def test_invalid_draws(self, l96_spec, draws):
        with pytest.raises(RejectedInputError):
            DynamicsService.perturb_clone(State(values=np.zeros(8)), l96_spec, draws)


class TestObservables:

    def test_energy(self):
        values = np.array([[1.0, 2.0, 3.0, 4.0]])
        assert DynamicsService.observe(values, Observable.energy())[0] == pytest.approx(3.75)

    def test_position_on_lorenz96_is_rejected(self, l96_spec):
        traj = DynamicsService.simulate(State(values=np.full(8, 8.0)), l96_spec, 3)
        with pytest.raises(ConfigurationError):
            DynamicsService.evaluate_observable(traj, Observable.position(), l96_spec)

    def test_energy_on_ou_is_rejected(self, ou_spec):
        traj = Trajectory(values=np.zeros(4), dt=0.01)
        with pytest.raises(ConfigurationError):
            DynamicsService.evaluate_observable(traj, Observable.energy(), ou_spec)

    def test_custom_observable(self, ou_spec):
        DynamicsService.register_observable("square", lambda v: v[..., 0] ** 2)
        traj = Trajectory(values=np.array([1.0, -2.0, 3.0]), dt=0.01)
        series = DynamicsService.evaluate_observable(traj, Observable(kind="custom", tag="square"), ou_spec)
        np.testing.assert_allclose(series, [1.0, 4.0, 9.0])

    def test_unknown_custom_observable(self, ou_spec):
        traj = Trajectory(values=np.zeros(3), dt=0.01)
        with pytest.raises(ConfigurationError):
            DynamicsService.evaluate_observable(traj, Observable(kind="custom", tag="missing"), ou_spec)


class TestTrajectory:

    def test_from_states_requires_uniform_grid(self):
        states = [State(values=[0.0], time=t) for t in (0.0, 0.1, 0.25)]
        with pytest.raises(RejectedInputError):
            Trajectory.from_states(states)

    def test_from_states(self):
        states = [State(values=[float(k)], time=0.1 * k) for k in range(4)]
        traj = Trajectory.from_states(states)
        assert len(traj) == 4
        assert traj.dt == pytest.approx(0.1)


class TestResamplingTime:

    def test_ar1_lag(self):
        rng = np.random.default_rng(2024)
        series = lfilter([1.0], [1.0, -0.9], rng.standard_normal(100_000))
        lag = DynamicsService.estimate_resampling_time(series, tolerance=0.05)
        assert 20 <= lag <= 40

    def test_lag_in_time_units(self):
        rng = np.random.default_rng(2025)
        series = lfilter([1.0], [1.0, -0.9], rng.standard_normal(100_000))
        steps = DynamicsService.estimate_resampling_time(series, tolerance=0.05)
        assert DynamicsService.estimate_resampling_time(series, tolerance=0.05, dt=0.01) == pytest.approx(
            0.01 * steps)

    def test_constant_series(self):
        with pytest.raises(ResamplingTimeNotFoundError):
            DynamicsService.estimate_resampling_time(np.ones(1000))

    def test_invalid_tolerance(self):
        with pytest.raises(ConfigurationError):
            DynamicsService.estimate_resampling_time(np.arange(10.0), tolerance=1.5)
