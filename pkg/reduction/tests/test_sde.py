import math

import numpy as np
from django.test import SimpleTestCase

from reduction import stats
from reduction.exceptions import ConfigurationError, InputValidationError
from reduction.fixtures import load_fixture
from reduction.hilbert import HermitianObservable, StateVector, spectral_decompose
from reduction.sde import (
    InitialCondition,
    ReductionChannels,
    SimConfig,
    em_step,
    em_step_multi,
    reduction_time,
    sample_initial,
    simulate,
    simulate_ensemble,
    strong_order_check,
)


class SimConfigTests(SimpleTestCase):
    def test_negative_sigma_is_rejected(self):
        with self.assertRaises(ConfigurationError):
            SimConfig(sigma=-1.0).validate()

    def test_short_horizon_is_rejected(self):
        with self.assertRaises(ConfigurationError):
            SimConfig(horizon_tau=0.5).validate()

    def test_seed_must_fit_in_64_bits(self):
        with self.assertRaises(ConfigurationError):
            SimConfig(seed=2 ** 64).validate()
        SimConfig(seed=2 ** 64 - 1).validate()

    def test_timing_follows_reduction_time(self):
        dt, horizon = SimConfig(dt_tau=1e-3, horizon_tau=20.0).resolve_timing(4.0)
        self.assertAlmostEqual(dt, 4e-3)
        self.assertAlmostEqual(horizon, 80.0)

    def test_undefined_reduction_time_uses_unit_scale(self):
        dt, horizon = SimConfig(dt_tau=1e-2, horizon_tau=5.0).resolve_timing(None)
        self.assertAlmostEqual(dt, 1e-2)
        self.assertAlmostEqual(horizon, 5.0)

    def test_absolute_overrides_win(self):
        dt, horizon = SimConfig(dt=0.5, horizon=3.0).resolve_timing(100.0)
        self.assertEqual((dt, horizon), (0.5, 3.0))


class ReductionTimeTests(SimpleTestCase):
    def test_qubit(self):
        qubit = load_fixture('qubit')
        self.assertAlmostEqual(reduction_time(qubit.pure, qubit.decomposition, 1.0), 1.0 / 0.1875)
        self.assertAlmostEqual(reduction_time(qubit.pure, qubit.decomposition, 2.0), 0.25 / 0.1875)

    def test_undefined_without_noise_or_spread(self):
        qubit = load_fixture('qubit')
        self.assertIsNone(reduction_time(qubit.pure, qubit.decomposition, 0.0))
        eigenstate = InitialCondition.pure(StateVector(np.array([1.0, 0.0])))
        self.assertIsNone(reduction_time(eigenstate, qubit.decomposition, 1.0))

    def test_mixture_uses_weighted_variance(self):
        pair = load_fixture('spin-pair')
        # members have V0 = 0.5 and 0.25
        self.assertAlmostEqual(reduction_time(pair.mixture, pair.decomposition, 1.0), 1.0 / 0.375)


class EulerMaruyamaStepTests(SimpleTestCase):
    def setUp(self):
        self.qubit = load_fixture('qubit')

    def test_step_keeps_state_normalized(self):
        state, norm_error = em_step(self.qubit.state, self.qubit.decomposition, 1.0, 1e-3, 0.02)
        self.assertAlmostEqual(state.norm(), 1.0, places=12)
        self.assertLess(norm_error, 1e-2)

    def test_eigenstate_only_picks_up_a_phase(self):
        eigenstate = StateVector(np.array([0.0, 1.0]))
        state, norm_error = em_step(eigenstate, self.qubit.decomposition, 1.0, 1e-3, 0.5)
        self.assertAlmostEqual(abs(state.amplitudes[1]), 1.0, places=12)
        self.assertAlmostEqual(abs(state.amplitudes[0]), 0.0, places=12)

    def test_eigenstate_phase_and_second_order_norm_error(self):
        eigenstate = StateVector(np.array([0.0, 1.0]))
        errors = []
        for dt in (1e-2, 1e-3):
            state, norm_error = em_step(eigenstate, self.qubit.decomposition, 1.0, dt, 0.3)
            self.assertAlmostEqual(abs(state.amplitudes[1] - np.exp(-1j * dt)), 0.0, delta=dt ** 2)
            self.assertLessEqual(norm_error, dt ** 2)
            errors.append(norm_error)
        self.assertAlmostEqual(errors[0] / errors[1], 100.0, delta=1.0)

    def test_without_noise_the_step_is_a_schrodinger_step(self):
        dt = 1e-2
        psi = self.qubit.state.amplitudes
        expected = psi - 1j * dt * (self.qubit.observable.matrix @ psi)
        expected /= np.linalg.norm(expected)
        for sigma, dw in ((0.0, 0.0), (0.0, 0.7)):
            state, _ = em_step(self.qubit.state, self.qubit.decomposition, sigma, dt, dw)
            np.testing.assert_allclose(state.amplitudes, expected, atol=1e-14)

    def test_non_finite_increment_is_rejected(self):
        with self.assertRaises(InputValidationError):
            em_step(self.qubit.state, self.qubit.decomposition, 1.0, 1e-3, float('nan'))

    def test_commuting_channels(self):
        pair = load_fixture('spin-pair')
        first = spectral_decompose(HermitianObservable(np.diag([1.0, 1.0, -1.0, -1.0])))
        second = spectral_decompose(HermitianObservable(np.diag([1.0, -1.0, 1.0, -1.0])))
        state, _ = em_step_multi(pair.state, [first, second], [1.0, 0.5], 1e-3, [0.01, -0.03],
                                 hamiltonian=pair.decomposition)
        self.assertAlmostEqual(state.norm(), 1.0, places=12)

    def test_non_commuting_channels_are_rejected(self):
        sigma_z = self.qubit.decomposition
        sigma_x = spectral_decompose(HermitianObservable(np.array([[0.0, 1.0], [1.0, 0.0]])))
        with self.assertRaisesMessage(ConfigurationError, 'do not commute'):
            ReductionChannels.commuting([sigma_z, sigma_x], [1.0, 1.0])


class CommutingChannelTests(SimpleTestCase):
    def test_one_channel_is_bitwise_a_single_step(self):
        qubit = load_fixture('qubit')
        single, single_error = em_step(qubit.state, qubit.decomposition, 0.8, 1e-3, 0.013)
        multi, multi_error = em_step_multi(qubit.state, [qubit.decomposition], [0.8], 1e-3, [0.013])
        np.testing.assert_array_equal(single.amplitudes, multi.amplitudes)
        self.assertEqual(single_error, multi_error)

    def test_split_coupling_has_the_same_law(self):
        qubit = load_fixture('qubit')
        dec = qubit.decomposition
        half = math.sqrt(0.5)
        split = ReductionChannels.commuting([dec, dec], [half, half])
        one = simulate_ensemble(SimConfig(sigma=1.0, dt_tau=1e-2, horizon_tau=2.0, record_stride=10, seed=21),
                                qubit.pure, dec, 400)
        two = simulate_ensemble(SimConfig(sigma=1.0, dt_tau=1e-2, horizon_tau=2.0, record_stride=10, seed=22),
                                qubit.pure, dec, 400, channels=split)
        np.testing.assert_array_equal(one.times, two.times)
        index = one.time_index(reduction_time(qubit.pure, dec, 1.0))
        result = stats.ks_two_sample(one.H[:, index], two.H[:, index])
        self.assertTrue(result.passed, msg=str(result.to_dict()))

    def test_commuting_channels_end_in_a_joint_eigenstate(self):
        first = spectral_decompose(HermitianObservable(np.diag([1.0, 1.0, -1.0, -1.0])))
        second = spectral_decompose(HermitianObservable(np.diag([1.0, -1.0, 1.0, -1.0])))
        hamiltonian = spectral_decompose(HermitianObservable(np.diag([0.0, 1.0, 2.0, 3.0])))
        channels = ReductionChannels.commuting([first, second], [1.0, 1.0], hamiltonian=hamiltonian)
        uniform = InitialCondition.pure(StateVector(np.full(4, 0.5)))
        config = SimConfig(sigma=1.0, dt=1e-2, horizon=150.0, record_stride=1000, seed=4)
        series = simulate_ensemble(config, uniform, hamiltonian, 40, channels=channels)
        self.assertTrue(np.all(series.terminated))
        weights = np.abs(series.terminal_states) ** 2
        np.testing.assert_allclose(np.max(weights, axis=1), 1.0, atol=1e-6)
        np.testing.assert_array_equal(np.argmax(weights, axis=1), series.terminal_levels)


class SingleTrajectoryTests(SimpleTestCase):
    def setUp(self):
        self.qubit = load_fixture('qubit')

    def test_trajectory_collapses_to_an_eigenstate(self):
        config = SimConfig(sigma=1.0, dt_tau=1e-2, horizon_tau=60.0, record_stride=10, seed=3)
        trajectory = simulate(config, self.qubit.pure, self.qubit.decomposition)
        self.assertIn(trajectory.terminal_level, (0, 1))
        self.assertLess(trajectory.V[-1], config.collapse_threshold)
        self.assertAlmostEqual(trajectory.H[-1], float(trajectory.terminal_level), places=5)
        self.assertEqual(trajectory.noise.size, int(round(trajectory.terminal_time / (1e-2 / 0.1875))))

    def test_same_seed_same_path(self):
        config = SimConfig(sigma=1.0, dt_tau=1e-2, horizon_tau=5.0, record_stride=5, seed=9)
        a = simulate(config, self.qubit.pure, self.qubit.decomposition, trajectory_index=4)
        b = simulate(config, self.qubit.pure, self.qubit.decomposition, trajectory_index=4)
        np.testing.assert_array_equal(a.H, b.H)
        np.testing.assert_array_equal(a.noise, b.noise)

    def test_no_noise_means_no_reduction(self):
        config = SimConfig(sigma=0.0, dt=1e-2, horizon=1.0, record_stride=10)
        trajectory = simulate(config, self.qubit.pure, self.qubit.decomposition)
        self.assertIsNone(trajectory.terminal_level)
        # explicit Euler steps of the unitary part drift the level weights by O(dt²) each
        np.testing.assert_allclose(trajectory.H, 0.75, atol=5e-3)
        np.testing.assert_allclose(trajectory.V, 0.1875, atol=5e-3)

    def test_eigenstate_terminates_immediately(self):
        config = SimConfig(sigma=1.0, dt=1e-2, horizon=1.0)
        eigenstate = InitialCondition.pure(StateVector(np.array([1.0, 0.0])))
        trajectory = simulate(config, eigenstate, self.qubit.decomposition)
        self.assertEqual(trajectory.terminal_level, 0)
        self.assertEqual(trajectory.terminal_time, 0.0)

    def test_dimension_mismatch_is_rejected(self):
        config = SimConfig(sigma=1.0, dt=1e-2, horizon=1.0)
        state = InitialCondition.pure(StateVector(np.array([1.0, 0.0, 0.0])))
        with self.assertRaises(InputValidationError):
            simulate(config, state, self.qubit.decomposition)


class EnsembleTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.qubit = load_fixture('qubit')
        cls.config = SimConfig(sigma=1.0, dt_tau=1e-2, horizon_tau=60.0, record_stride=10, seed=11)
        cls.series = simulate_ensemble(cls.config, cls.qubit.pure, cls.qubit.decomposition, 60, batch_size=20)

    def test_shapes(self):
        series = self.series
        self.assertEqual(series.H.shape, (60, series.times.size))
        self.assertEqual(series.P.shape, (60, series.times.size, 2))
        self.assertEqual(series.Pi.shape, (60, series.times.size, 0))
        self.assertEqual(series.monitored_levels, ())

    def test_every_path_collapses(self):
        self.assertTrue(np.all(self.series.terminated))
        self.assertTrue(set(self.series.terminal_levels) <= {0, 1})

    def test_values_are_frozen_after_collapse(self):
        series = self.series
        for row in range(series.n_trajectories):
            after = series.times > series.terminal_times[row] + series.dt * self.config.record_stride
            if after.any():
                self.assertTrue(np.all(series.H[row, after] == series.H[row, -1]))
        np.testing.assert_allclose(series.H[:, -1], series.terminal_energies, atol=1e-5)

    def test_worker_count_does_not_change_results(self):
        parallel = simulate_ensemble(self.config, self.qubit.pure, self.qubit.decomposition, 60,
                                     workers=2, batch_size=20)
        np.testing.assert_array_equal(parallel.H, self.series.H)
        np.testing.assert_array_equal(parallel.terminal_levels, self.series.terminal_levels)

    def test_reduction_time_grid(self):
        tau_r = 1.0 / 0.1875
        self.assertAlmostEqual(self.series.dt, 1e-2 * tau_r)
        self.assertAlmostEqual(self.series.times[1], 10 * 1e-2 * tau_r)

    def test_needs_at_least_one_trajectory(self):
        with self.assertRaises(ConfigurationError):
            simulate_ensemble(self.config, self.qubit.pure, self.qubit.decomposition, 0)


class MixtureTests(SimpleTestCase):
    def test_mixture_validation(self):
        a = StateVector(np.array([1.0, 0.0]))
        b = StateVector(np.array([0.0, 1.0]))
        with self.assertRaises(InputValidationError):
            InitialCondition.mixture([(0.7, a), (0.7, b)]).validate()
        mixture = InitialCondition.mixture([(0.25, a), (0.75, b)]).validate()
        np.testing.assert_allclose(mixture.density().matrix, np.diag([0.25, 0.75]))

    def test_sample_initial(self):
        a = StateVector(np.array([1.0, 0.0]))
        b = StateVector(np.array([0.0, 1.0]))
        stream = np.random.default_rng(3)
        self.assertIs(sample_initial(InitialCondition.pure(a), stream), a)
        mixture = InitialCondition.mixture([(0.25, a), (0.75, b)])
        draws = [sample_initial(mixture, stream) for _ in range(2000)]
        picked_a = sum(1 for state in draws if state is a)
        self.assertGreater(picked_a, 400)
        self.assertLess(picked_a, 600)

    def test_mixture_members_are_sampled(self):
        qubit = load_fixture('qubit')
        a = StateVector(np.array([1.0, 0.0]))
        b = StateVector(np.array([0.0, 1.0]))
        mixture = InitialCondition.mixture([(0.5, a), (0.5, b)])
        config = SimConfig(sigma=1.0, dt=1e-2, horizon=0.1, record_stride=1, seed=2)
        series = simulate_ensemble(config, mixture, qubit.decomposition, 200)
        started_high = int(np.count_nonzero(series.H0 > 0.5))
        self.assertGreater(started_high, 50)
        self.assertLess(started_high, 150)
        np.testing.assert_array_equal(series.terminal_levels, (series.H0 > 0.5).astype(int))


class StrongOrderTests(SimpleTestCase):
    def test_halving_dt_reduces_error(self):
        qubit = load_fixture('qubit')
        config = SimConfig(sigma=1.0, dt_tau=1e-2, seed=5)
        result = strong_order_check(config, qubit.pure, qubit.decomposition, n_paths=800)
        self.assertGreater(result['mse_fine'], 0.0)
        self.assertGreaterEqual(result['ratio'], 1.5)
        self.assertLessEqual(result['ratio'], 3.0)
        self.assertAlmostEqual(result['t_end'], 1.0 / 0.1875)

    def test_refine_must_be_even(self):
        qubit = load_fixture('qubit')
        with self.assertRaises(ConfigurationError):
            strong_order_check(SimConfig(), qubit.pure, qubit.decomposition, n_paths=10, refine=3)

