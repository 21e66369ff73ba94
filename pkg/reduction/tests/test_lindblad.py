import math

import numpy as np
from django.test import SimpleTestCase

from reduction.exceptions import InputValidationError, IntegrationQualityError
from reduction.fixtures import load_fixture
from reduction.hilbert import (
    DensityMatrix,
    HermitianObservable,
    density_from_state,
    luders_map,
    purity,
    spectral_decompose,
)
from reduction.lindblad import (
    BlockDecomposedDensity,
    closed_form_series,
    ensemble_density_from_trajectories,
    integrator_order_check,
    rho_closed_form,
    rho_integrate,
    rho_integrate_series,
    unitary_time_average,
)
from reduction.sde import SimConfig, simulate, simulate_ensemble


def random_system(seed, dimension=4):
    """A Hermitian matrix of spectral norm one and a full-rank density matrix."""
    generator = np.random.default_rng(seed)
    a = generator.normal(size=(dimension, dimension)) + 1j * generator.normal(size=(dimension, dimension))
    hamiltonian = 0.5 * (a + a.conj().T)
    hamiltonian /= np.linalg.norm(hamiltonian, 2)
    b = generator.normal(size=(dimension, dimension)) + 1j * generator.normal(size=(dimension, dimension))
    rho = b @ b.conj().T
    return spectral_decompose(HermitianObservable(hamiltonian)), DensityMatrix(rho / np.trace(rho).real)


class ClosedFormTests(SimpleTestCase):
    def setUp(self):
        self.qubit = load_fixture('qubit')
        self.rho0 = density_from_state(self.qubit.state)

    def test_time_zero_returns_the_input(self):
        np.testing.assert_array_equal(rho_closed_form(self.rho0, self.qubit.decomposition, 1.0, 0.0).matrix,
                                      self.rho0.matrix)

    def test_long_times_approach_the_luders_image(self):
        late = rho_closed_form(self.rho0, self.qubit.decomposition, 1.0, 400.0).matrix
        np.testing.assert_allclose(late, luders_map(self.rho0, self.qubit.decomposition).matrix, atol=1e-12)

    def test_coherence_decays_at_the_dephasing_rate(self):
        rho_t = rho_closed_form(self.rho0, self.qubit.decomposition, 2.0, 1.5).matrix
        expected = abs(self.rho0.matrix[0, 1]) * math.exp(-0.125 * 4.0 * 1.5)
        self.assertAlmostEqual(abs(rho_t[0, 1]), expected, places=12)

    def test_diagonal_blocks_are_conserved(self):
        dec, rho0 = random_system(3)
        blocks = BlockDecomposedDensity.from_density(rho0, dec, 1.0).validate()
        rho_t = BlockDecomposedDensity.from_density(rho_closed_form(rho0, dec, 1.0, 2.5), dec, 1.0)
        for n in range(dec.n_levels):
            np.testing.assert_allclose(rho_t.blocks[n, n], blocks.blocks[n, n], atol=1e-12)

    def test_result_is_a_density_matrix(self):
        dec, rho0 = random_system(4)
        for t in (0.1, 1.0, 10.0):
            rho_closed_form(rho0, dec, 1.5, t).validate()

    def test_semigroup_property(self):
        dec, rho0 = random_system(5)
        for s, t in ((0.3, 0.7), (1.0, 2.5)):
            direct = rho_closed_form(rho0, dec, 1.2, s + t).matrix
            composed = rho_closed_form(rho_closed_form(rho0, dec, 1.2, s), dec, 1.2, t).matrix
            np.testing.assert_allclose(composed, direct, atol=1e-12)

    def test_purity_does_not_increase(self):
        dec, rho0 = random_system(6)
        values = [purity(rho_closed_form(rho0, dec, 1.0, t)) for t in np.linspace(0.0, 20.0, 41)]
        self.assertTrue(np.all(np.diff(values) <= 1e-12))
        self.assertLess(values[-1], values[0])

    def test_without_noise_diagonal_blocks_stay_constant(self):
        dec, rho0 = random_system(7)
        initial = BlockDecomposedDensity.from_density(rho0, dec, 0.0)
        for t in (0.5, 3.0, 40.0):
            later = BlockDecomposedDensity.from_density(rho_closed_form(rho0, dec, 0.0, t), dec, 0.0)
            for n in range(dec.n_levels):
                np.testing.assert_allclose(later.blocks[n, n], initial.blocks[n, n], atol=1e-12)
        self.assertAlmostEqual(purity(rho_closed_form(rho0, dec, 0.0, 40.0)), purity(rho0), places=12)

    def test_negative_time_is_rejected(self):
        with self.assertRaises(InputValidationError):
            rho_closed_form(self.rho0, self.qubit.decomposition, 1.0, -1.0)

    def test_dimension_mismatch_is_rejected(self):
        pair = load_fixture('spin-pair')
        with self.assertRaises(InputValidationError):
            rho_closed_form(self.rho0, pair.decomposition, 1.0, 1.0)


class IntegratorTests(SimpleTestCase):
    def test_integration_matches_closed_form_on_random_systems(self):
        for seed in (1, 2, 3):
            dec, rho0 = random_system(seed)
            integrated = rho_integrate(rho0, dec, 1.0, 5.0, dt=1e-3).matrix
            exact = rho_closed_form(rho0, dec, 1.0, 5.0).matrix
            self.assertLessEqual(np.max(np.abs(integrated - exact)), 1e-8)

    def test_series_matches_closed_form_series(self):
        pair = load_fixture('spin-pair')
        rho0 = pair.mixture.density()
        times = np.linspace(0.0, 2.0, 5)
        integrated = rho_integrate_series(rho0, pair.decomposition, 1.0, times, dt=1e-3)
        exact = closed_form_series(rho0, pair.decomposition, 1.0, times)
        self.assertLessEqual(float(np.max(integrated.max_distance(exact))), 1e-8)
        integrated.validate()

    def test_series_needs_increasing_times(self):
        qubit = load_fixture('qubit')
        with self.assertRaises(InputValidationError):
            rho_integrate_series(density_from_state(qubit.state), qubit.decomposition, 1.0, [0.0, 1.0, 0.5])

    def test_fourth_order_convergence(self):
        qubit = load_fixture('qubit')
        result = integrator_order_check(density_from_state(qubit.state), qubit.decomposition, 1.0)
        self.assertGreater(result['error_fine'], 1e-13)
        self.assertLess(abs(result['ratio'] - 256.0), 0.4 * 256.0)

    def test_unstable_step_loses_positivity(self):
        qubit = load_fixture('qubit')
        with self.assertRaises(IntegrationQualityError):
            rho_integrate(density_from_state(qubit.state), qubit.decomposition, 1.0, 50.0, dt=5.0)


class UnitaryAverageTests(SimpleTestCase):
    def test_average_fades_towards_the_luders_image(self):
        qubit = load_fixture('qubit')
        rho0 = density_from_state(qubit.state)
        luders = luders_map(rho0, qubit.decomposition).matrix
        for T in (10.0, 100.0, 1000.0):
            average = unitary_time_average(rho0, qubit.decomposition, T).matrix
            self.assertLessEqual(np.max(np.abs(average - luders)), 2.0 * abs(rho0.matrix[0, 1]) / T + 1e-12)
            np.testing.assert_allclose(np.diag(average), np.diag(luders), atol=1e-12)

    def test_coherence_halves_when_the_horizon_doubles(self):
        qubit = load_fixture('qubit')
        rho0 = density_from_state(qubit.state)
        # with a unit gap |sin(T/2)| is the same at T = 2π/3 and 2T
        T = 2.0 * math.pi / 3.0
        short = abs(unitary_time_average(rho0, qubit.decomposition, T).matrix[0, 1])
        long = abs(unitary_time_average(rho0, qubit.decomposition, 2.0 * T).matrix[0, 1])
        self.assertAlmostEqual(long / short, 0.5, places=12)

    def test_horizon_must_be_positive(self):
        qubit = load_fixture('qubit')
        with self.assertRaises(InputValidationError):
            unitary_time_average(density_from_state(qubit.state), qubit.decomposition, 0.0)


class EnsembleDensityTests(SimpleTestCase):
    def test_averaged_states_follow_the_master_equation(self):
        qubit = load_fixture('qubit')
        config = SimConfig(sigma=1.0, dt_tau=1e-2, horizon_tau=3.0, record_stride=20, seed=5, record_states=True)
        series = simulate_ensemble(config, qubit.pure, qubit.decomposition, 400)
        empirical = ensemble_density_from_trajectories(series)
        exact = closed_form_series(density_from_state(qubit.state), qubit.decomposition, 1.0, series.times)
        self.assertLessEqual(float(np.max(empirical.max_distance(exact))), 4.0 / math.sqrt(400))

    def test_states_are_required(self):
        qubit = load_fixture('qubit')
        config = SimConfig(sigma=1.0, dt_tau=1e-2, horizon_tau=1.0, record_stride=20)
        series = simulate_ensemble(config, qubit.pure, qubit.decomposition, 5)
        with self.assertRaisesMessage(InputValidationError, 'record_states'):
            ensemble_density_from_trajectories(series)

    def test_trajectories_must_share_a_grid(self):
        qubit = load_fixture('qubit')
        config = SimConfig(sigma=1.0, dt=1e-2, horizon=0.5, record_stride=5, record_states=True,
                           detect_collapse=False)
        first = simulate(config, qubit.pure, qubit.decomposition, 0)
        second = simulate(SimConfig(sigma=1.0, dt=1e-2, horizon=1.0, record_stride=5, record_states=True,
                                    detect_collapse=False), qubit.pure, qubit.decomposition, 1)
        self.assertEqual(ensemble_density_from_trajectories([first, first]).matrices.shape[0], first.times.size)
        with self.assertRaisesMessage(InputValidationError, 'different time grid'):
            ensemble_density_from_trajectories([first, second])
