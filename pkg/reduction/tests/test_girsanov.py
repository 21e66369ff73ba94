import math

import numpy as np
from django.test import SimpleTestCase

from reduction import rng
from reduction.conf import resolve_tolerances
from reduction.exceptions import InputValidationError, NumericError
from reduction.fixtures import load_fixture
from reduction.girsanov import (
    ensemble_average_observable,
    h_of_wstar,
    lambda_physical_path,
    lambda_star_of_wstar,
    projector_martingale_closed_form,
    q_time_grid,
    reconstruct_wstar,
    sample_q_terminal,
    simulate_wstar_ensemble,
    simulate_wstar_physical,
    state_closed_form,
    weighted_expectation,
)
from reduction.hilbert import (
    HermitianObservable,
    StateVector,
    density_from_state,
    expectation,
    fidelity,
    spectral_decompose,
)
from reduction.lindblad import rho_closed_form
from reduction.sde import SimConfig, em_step, simulate
from reduction.stats import check_born_frequencies

QUBIT_PI = np.array([0.25, 0.75])
QUBIT_E = np.array([0.0, 1.0])


def physical_stream(seed):
    return rng.stream(seed, 0, rng.FAMILY_GIRSANOV_PHYSICAL)


class ClosedFormTests(SimpleTestCase):
    def test_density_starts_at_one(self):
        self.assertAlmostEqual(lambda_star_of_wstar(QUBIT_PI, QUBIT_E, 1.0, 0.0, 0.0), 1.0, places=14)
        self.assertAlmostEqual(lambda_star_of_wstar(QUBIT_PI, QUBIT_E, 1.0, 0.0, 0.0, log=True), 0.0, places=14)

    def test_single_level_is_geometric_brownian_motion(self):
        value = lambda_star_of_wstar([0.0, 1.0], QUBIT_E, 2.0, 0.3, 1.5)
        self.assertAlmostEqual(value, math.exp(2.0 * 0.3 - 0.5 * 4.0 * 1.5), places=12)

    def test_log_density_survives_large_arguments(self):
        value = lambda_star_of_wstar(QUBIT_PI, QUBIT_E, 1.0, 2000.0, 1.0, log=True)
        self.assertTrue(math.isfinite(value))
        self.assertAlmostEqual(value, math.log(0.75) + 2000.0 - 0.5, places=8)

    def test_energy_at_origin_is_the_initial_energy(self):
        self.assertAlmostEqual(h_of_wstar(QUBIT_PI, QUBIT_E, 1.0, 0.0, 0.0), 0.75, places=14)

    def test_energy_stays_in_the_spectrum(self):
        wstar = np.linspace(-500.0, 500.0, 101)
        energy = h_of_wstar(QUBIT_PI, QUBIT_E, 1.0, wstar, 3.0)
        self.assertTrue(np.all(np.isfinite(energy)))
        self.assertTrue(np.all((energy >= 0.0) & (energy <= 1.0)))

    def test_projector_martingales_sum_to_one(self):
        probs = projector_martingale_closed_form([0.25, 0.5, 0.25], [-1.0, 0.0, 1.0], 1.0,
                                                 np.array([-3.0, 0.0, 4.0]), np.array([0.5, 1.0, 2.0]))
        self.assertEqual(probs.shape, (3, 3))
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0)

    def test_invalid_probabilities_are_rejected(self):
        with self.assertRaises(InputValidationError):
            h_of_wstar([0.5, 0.6], QUBIT_E, 1.0, 0.0, 1.0)
        with self.assertRaises(InputValidationError):
            h_of_wstar(QUBIT_PI, QUBIT_E, 1.0, 0.0, -1.0)

    def test_state_at_time_zero_is_the_initial_state(self):
        qubit = load_fixture('qubit')
        state = state_closed_form(qubit.state, qubit.decomposition, 1.0, 0.0, 0.0)
        np.testing.assert_allclose(state.amplitudes, qubit.state.amplitudes, atol=1e-14)

    def test_state_level_weights_match_projector_martingales(self):
        pair = load_fixture('spin-pair')
        state = state_closed_form(pair.state, pair.decomposition, 1.3, 0.7, 0.9)
        self.assertAlmostEqual(state.norm(), 1.0, places=12)
        weights = [np.linalg.norm(p @ state.amplitudes) ** 2 for p in pair.decomposition.projectors]
        expected = projector_martingale_closed_form([0.25, 0.5, 0.25], pair.decomposition.eigenvalues, 1.3, 0.7, 0.9)
        np.testing.assert_allclose(weights, expected, atol=1e-12)

    def test_empty_level_does_not_overflow(self):
        qubit = load_fixture('qubit')
        state = state_closed_form(StateVector(np.array([1.0, 0.0])), qubit.decomposition, 1.0, 5000.0, 1.0)
        self.assertAlmostEqual(abs(state.amplitudes[0]), 1.0, places=12)

    def test_energy_is_monotone_in_wstar(self):
        pi, energies = [0.25, 0.5, 0.25], [-1.0, 0.0, 1.0]
        wstar = np.linspace(-40.0, 40.0, 2001)
        for sigma, t in ((1.0, 0.5), (0.3, 4.0), (2.0, 10.0)):
            energy = h_of_wstar(pi, energies, sigma, wstar, t)
            self.assertGreaterEqual(float(np.min(np.diff(energy))), -1e-12)

    def test_closed_form_error_halves_with_the_step(self):
        # a spectrum symmetric about zero keeps the unitary part out of the level weights
        observable = HermitianObservable(np.diag([-0.5, 0.5]))
        dec = spectral_decompose(observable)
        psi0 = StateVector(np.array([0.5, math.sqrt(0.75)]))
        fine_dt, n_fine, n_paths = 0.01, 100, 400
        brownian = np.random.default_rng(17).standard_normal((n_paths, n_fine)) * math.sqrt(fine_dt)

        def mean_square_error(factor):
            dt = fine_dt * factor
            errors = []
            for path in brownian:
                increments = path.reshape(-1, factor).sum(axis=1)
                state = psi0
                energies = [expectation(state, observable)]
                for dw in increments:
                    state, _ = em_step(state, dec, 1.0, dt, dw)
                    energies.append(expectation(state, observable))
                wstar = reconstruct_wstar(energies, increments, 1.0, dt)[-1]
                closed = h_of_wstar([0.25, 0.75], [-0.5, 0.5], 1.0, wstar, n_fine * fine_dt)
                errors.append((closed - energies[-1]) ** 2)
            return float(np.mean(errors))

        ratio = mean_square_error(2) / mean_square_error(1)
        self.assertGreaterEqual(ratio, 1.5)
        self.assertLessEqual(ratio, 3.0)

    def test_closed_form_follows_the_integrated_state(self):
        qubit = load_fixture('qubit')
        config = SimConfig(sigma=1.0, dt=1e-4, horizon=1.0, record_stride=1, detect_collapse=False, seed=21)
        trajectory = simulate(config, qubit.pure, qubit.decomposition)
        wstar = reconstruct_wstar(trajectory.H, trajectory.noise, 1.0, 1e-4)
        closed = state_closed_form(qubit.state, qubit.decomposition, 1.0, wstar[-1], trajectory.times[-1])
        self.assertGreater(fidelity(closed, trajectory.final_state), 0.999)


class PhysicalPathTests(SimpleTestCase):
    def test_density_paths_multiply_to_one(self):
        sample = simulate_wstar_physical(QUBIT_PI, QUBIT_E, 1.0, 1e-3, 2.0, physical_stream(8),
                                         detect_collapse=False)
        product = sample.log_lambda_star + sample.log_lambda_physical
        self.assertLess(float(np.max(np.abs(product))), 0.1)
        self.assertEqual(sample.noise.size, sample.times.size - 1)

    def test_recomputed_density_matches_accumulated_one(self):
        sample = simulate_wstar_physical(QUBIT_PI, QUBIT_E, 1.0, 1e-3, 1.0, physical_stream(4),
                                         detect_collapse=False)
        accumulated = lambda_physical_path(sample.H, sample.noise, 1.0, 1e-3)
        np.testing.assert_allclose(np.log(accumulated), sample.log_lambda_physical, atol=1e-10)

    def test_certain_level_drifts_at_constant_rate(self):
        sample = simulate_wstar_physical([0.0, 1.0], QUBIT_E, 2.0, 1e-2, 1.0, physical_stream(1),
                                         detect_collapse=False)
        brownian = np.concatenate([[0.0], np.cumsum(sample.noise)])
        np.testing.assert_allclose(sample.wstar, brownian + 2.0 * sample.times, atol=1e-10)
        np.testing.assert_allclose(sample.H, 1.0)

    def test_path_collapses(self):
        sample = simulate_wstar_physical(QUBIT_PI, QUBIT_E, 1.0, 1e-2, 400.0, physical_stream(6))
        self.assertIn(sample.terminal_level, (0, 1))
        self.assertLess(sample.V[-1], 1e-12)

    def test_ensemble_born_frequencies(self):
        qubit = load_fixture('qubit')
        ensemble = simulate_wstar_ensemble(qubit.pure, qubit.decomposition, 1.0, 0.05, 400.0, 2000, seed=42,
                                           record_stride=200)
        self.assertTrue(np.all(ensemble.terminal_levels >= 0))
        result = check_born_frequencies(ensemble.terminal_levels, QUBIT_PI)
        self.assertTrue(result.passed, msg=str(result.to_dict()))

    def test_ensemble_worker_invariance(self):
        qubit = load_fixture('qubit')
        args = (qubit.pure, qubit.decomposition, 1.0, 0.05, 5.0, 50)
        serial = simulate_wstar_ensemble(*args, seed=3, record_stride=10, batch_size=25, workers=1)
        parallel = simulate_wstar_ensemble(*args, seed=3, record_stride=10, batch_size=25, workers=2)
        np.testing.assert_array_equal(serial.wstar, parallel.wstar)


class ChangeOfMeasureTests(SimpleTestCase):
    def test_weighted_expectation(self):
        estimate = weighted_expectation([1.0, 2.0, 3.0], [1.0, 1.0, 2.0])
        self.assertAlmostEqual(estimate.mean, 2.25)
        self.assertAlmostEqual(estimate.effective_sample_size, 16.0 / 6.0)
        self.assertIsNotNone(estimate.warning)

    def test_log_weights_give_the_same_estimate(self):
        plain = weighted_expectation([1.0, 2.0, 3.0], [1.0, 1.0, 2.0], ess_warning=1.0)
        logged = weighted_expectation([1.0, 2.0, 3.0], np.log([1.0, 1.0, 2.0]) + 700.0, log_weights=True,
                                      ess_warning=1.0)
        self.assertAlmostEqual(plain.mean, logged.mean)
        self.assertAlmostEqual(plain.standard_error, logged.standard_error)
        self.assertIsNone(logged.warning)

    def test_bad_weights_are_rejected(self):
        with self.assertRaises(InputValidationError):
            weighted_expectation([1.0, 2.0], [1.0, -1.0])
        with self.assertRaises(InputValidationError):
            weighted_expectation([1.0, 2.0], [1.0])

    def test_single_time_q_samples(self):
        sample = sample_q_terminal(QUBIT_PI, QUBIT_E, 1.0, 0.0, 50, np.random.default_rng(1))
        np.testing.assert_array_equal(sample.wstar, 0.0)
        np.testing.assert_allclose(sample.weight, 1.0, atol=1e-12)
        np.testing.assert_allclose(sample.H, 0.75, atol=1e-12)
        with self.assertRaises(InputValidationError):
            sample_q_terminal(QUBIT_PI, QUBIT_E, 1.0, -1.0, 5, np.random.default_rng(1))

    def test_physical_and_weighted_estimates_agree(self):
        qubit = load_fixture('qubit')
        ensemble = simulate_wstar_ensemble(qubit.pure, qubit.decomposition, 1.0, 5e-3, 1.0, 4000, seed=11,
                                           record_stride=200)
        self.assertAlmostEqual(float(ensemble.times[-1]), 1.0)
        physical = ensemble.H[:, -1] ** 2
        physical_se = float(np.std(physical, ddof=1)) / math.sqrt(physical.size)
        sample = sample_q_terminal(QUBIT_PI, QUBIT_E, 1.0, 1.0, 40000, np.random.default_rng(12))
        weighted = weighted_expectation(sample.H ** 2, sample.log_weight, log_weights=True)
        tolerance = 3.0 * math.hypot(physical_se, weighted.standard_error)
        self.assertLess(abs(float(np.mean(physical)) - weighted.mean), tolerance)

    def test_q_grid_estimates(self):
        rows = q_time_grid(QUBIT_PI, QUBIT_E, 1.0, [0.25, 0.5, 1.0], 20000, seed=42)
        self.assertEqual([row['t'] for row in rows], [0.25, 0.5, 1.0])
        for row in rows:
            self.assertLess(abs(row['lambda_star_mean'] - 1.0), 3.0 * row['lambda_star_se'])
            self.assertLess(abs(row['H']['mean'] - 0.75), 3.0 * row['H']['standard_error'])
            self.assertEqual(row['H']['n_samples'], 20000)

    def test_q_grid_is_reproducible(self):
        a = q_time_grid(QUBIT_PI, QUBIT_E, 1.0, [0.5], 1000, seed=7)
        b = q_time_grid(QUBIT_PI, QUBIT_E, 1.0, [0.5], 1000, seed=7)
        self.assertEqual(a, b)

    def test_ensemble_average_matches_master_equation(self):
        pair = load_fixture('spin-pair')
        rho0 = pair.mixture.density()
        n = pair.decomposition.dimension
        for G in (pair.observable, HermitianObservable(np.ones((n, n)) / n)):
            for t in (0.0, 0.3, 2.0):
                average = ensemble_average_observable(G, rho0, pair.decomposition, 1.0, t)
                trace = np.trace(G.matrix @ rho_closed_form(rho0, pair.decomposition, 1.0, t).matrix)
                self.assertLess(abs(average - trace), 1e-12)
                self.assertIsInstance(average, float)

    def test_ensemble_average_at_time_zero(self):
        qubit = load_fixture('qubit')
        average = ensemble_average_observable(qubit.observable, density_from_state(qubit.state),
                                              qubit.decomposition, 1.0, 0.0)
        self.assertAlmostEqual(average, 0.75, places=12)

    def test_ensemble_average_rejects_a_complex_result(self):
        qubit = load_fixture('qubit')
        # anti-Hermitian part 1e-3 passes a loosened Hermiticity check but gives Im ≈ 8.7e-4
        skewed = HermitianObservable(np.array([[1.0, 1e-3j], [1e-3j, 0.0]]))
        loose = resolve_tolerances(None).with_overrides(tol_herm=1e-2)
        with self.assertRaisesMessage(NumericError, 'imaginary part'):
            ensemble_average_observable(skewed, density_from_state(qubit.state), qubit.decomposition, 1.0, 0.0,
                                        tol=loose)
