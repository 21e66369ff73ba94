import math

import numpy as np
from django.test import SimpleTestCase

from reduction.exceptions import DegenerateProjectionError, InputValidationError
from reduction.fixtures import load_fixture
from reduction.hilbert import (
    DensityMatrix,
    HermitianObservable,
    SpectralDecomposition,
    StateVector,
    batch_level_probabilities,
    commutator_norm,
    density_from_state,
    expectation,
    fidelity,
    level_probabilities,
    luders_map,
    luders_state,
    moments,
    orthogonal_luders_complement,
    purity,
    spectral_decompose,
)


def diag(*values):
    return HermitianObservable(np.diag(np.asarray(values, dtype=complex)))


class SpectralDecomposeTests(SimpleTestCase):
    def test_diagonal_qubit(self):
        dec = spectral_decompose(diag(0.0, 1.0))
        self.assertEqual(dec.n_levels, 2)
        np.testing.assert_allclose(dec.eigenvalues, [0.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(dec.multiplicities, [1, 1])
        np.testing.assert_allclose(dec.projectors[1], np.diag([0.0, 1.0]), atol=1e-14)

    def test_degenerate_level_is_merged(self):
        dec = spectral_decompose(diag(-1.0, 0.0, 0.0, 1.0))
        self.assertEqual(dec.n_levels, 3)
        self.assertEqual(list(dec.multiplicities), [1, 2, 1])
        self.assertEqual(dec.degenerate_levels, (1,))
        np.testing.assert_allclose(dec.projectors[1], np.diag([0.0, 1.0, 1.0, 0.0]), atol=1e-12)

    def test_random_matrix_is_reconstructed(self):
        generator = np.random.default_rng(5)
        a = generator.normal(size=(5, 5)) + 1j * generator.normal(size=(5, 5))
        matrix = 0.5 * (a + a.conj().T)
        dec = spectral_decompose(HermitianObservable(matrix))
        self.assertLessEqual(np.max(np.abs(dec.matrix - matrix)), 1e-12)
        dec.validate()

    def test_non_hermitian_input_is_rejected(self):
        with self.assertRaisesMessage(InputValidationError, 'not Hermitian'):
            spectral_decompose(HermitianObservable(np.array([[0.0, 1.0], [0.0, 0.0]])))

    def test_from_spectral_sorts_levels(self):
        dec = SpectralDecomposition.from_spectral([2.0, -1.0], [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
        np.testing.assert_allclose(dec.eigenvalues, [-1.0, 2.0])
        np.testing.assert_allclose(dec.projectors[0], np.diag([0.0, 1.0]))

    def test_from_spectral_rejects_incomplete_projectors(self):
        with self.assertRaises(InputValidationError):
            SpectralDecomposition.from_spectral([0.0, 1.0], [np.diag([1.0, 0.0, 0.0]), np.diag([0.0, 1.0, 0.0])])


class MomentTests(SimpleTestCase):
    def setUp(self):
        self.qubit = load_fixture('qubit')
        self.pair = load_fixture('spin-pair')

    def test_qubit_moments(self):
        stats = moments(self.qubit.state, self.qubit.decomposition)
        self.assertAlmostEqual(stats.H, 0.75, places=12)
        self.assertAlmostEqual(stats.V, 0.1875, places=12)
        self.assertAlmostEqual(stats.V, stats.moment(2) - stats.H ** 2, places=12)

    def test_spin_pair_moments(self):
        stats = moments(self.pair.state, self.pair.decomposition)
        self.assertAlmostEqual(stats.H, 0.0, places=12)
        self.assertAlmostEqual(stats.V, 0.5, places=12)
        self.assertAlmostEqual(stats.beta, 0.0, places=12)

    def test_skewness_identity(self):
        stats = moments(self.qubit.state, self.qubit.decomposition, n_max=4)
        h, h2, h3 = stats.H, stats.moment(2), stats.moment(3)
        self.assertAlmostEqual(stats.beta, h3 - 3 * h * h2 + 2 * h ** 3, places=12)
        self.assertEqual(len(stats.raw), 4)

    def test_eigenstate_has_no_spread(self):
        stats = moments(StateVector(np.array([0.0, 1.0])), self.qubit.decomposition)
        self.assertAlmostEqual(stats.H, 1.0, places=12)
        self.assertAlmostEqual(stats.V, 0.0, places=12)
        self.assertAlmostEqual(stats.beta, 0.0, places=12)

    def test_variance_is_bounded_by_quarter_range(self):
        generator = np.random.default_rng(11)
        for _ in range(20):
            state = StateVector(generator.normal(size=4) + 1j * generator.normal(size=4)).normalized()
            stats = moments(state, self.pair.decomposition)
            self.assertLessEqual(stats.V, 0.25 * self.pair.decomposition.spectral_range ** 2 + 1e-12)

    def test_unnormalized_state_is_rejected(self):
        with self.assertRaisesMessage(InputValidationError, 'not normalized'):
            moments(StateVector(np.array([1.0, 1.0])), self.qubit.decomposition)

    def test_n_max_below_three_is_rejected(self):
        with self.assertRaises(InputValidationError):
            moments(self.qubit.state, self.qubit.decomposition, n_max=2)


class LudersTests(SimpleTestCase):
    def setUp(self):
        self.qubit = load_fixture('qubit')
        self.pair = load_fixture('spin-pair')

    def test_level_probabilities(self):
        np.testing.assert_allclose(level_probabilities(self.qubit.state, self.qubit.decomposition), [0.25, 0.75])
        np.testing.assert_allclose(level_probabilities(self.pair.state, self.pair.decomposition),
                                   [0.25, 0.5, 0.25])

    def test_luders_state_of_degenerate_level(self):
        luders = luders_state(self.pair.state, self.pair.decomposition, 1)
        expected = StateVector(np.array([0.0, 1.0, 1.0, 0.0]) / math.sqrt(2.0))
        self.assertAlmostEqual(fidelity(luders, expected), 1.0, places=12)

    def test_luders_state_is_a_fixed_point(self):
        eigenstate = StateVector(np.array([0.0, 1j]))
        self.assertAlmostEqual(fidelity(luders_state(eigenstate, self.qubit.decomposition, 1), eigenstate), 1.0)

    def test_empty_level_has_no_luders_state(self):
        with self.assertRaises(DegenerateProjectionError):
            luders_state(StateVector(np.array([1.0, 0.0])), self.qubit.decomposition, 1)

    def test_orthogonal_complement(self):
        complement = orthogonal_luders_complement(self.pair.state, self.pair.decomposition, 1).matrix
        self.assertAlmostEqual(np.trace(complement).real, 1.0, places=12)
        np.testing.assert_allclose(complement @ complement, complement, atol=1e-12)
        np.testing.assert_allclose(complement @ self.pair.state.amplitudes, 0.0, atol=1e-12)

    def test_unconditional_luders_map(self):
        rho = density_from_state(self.qubit.state)
        projected = luders_map(rho, self.qubit.decomposition).matrix
        np.testing.assert_allclose(projected, np.diag([0.25, 0.75]), atol=1e-12)

    def test_conditional_luders_map(self):
        rho = self.pair.mixture.density()
        conditional = luders_map(rho, self.pair.decomposition, level=1).matrix
        self.assertAlmostEqual(np.trace(conditional).real, 1.0, places=12)
        DensityMatrix(conditional).validate()

    def test_luders_map_is_idempotent(self):
        rho = self.pair.mixture.density()
        for level in (None, 0, 1, 2):
            once = luders_map(rho, self.pair.decomposition, level=level)
            twice = luders_map(once, self.pair.decomposition, level=level)
            np.testing.assert_allclose(twice.matrix, once.matrix, atol=1e-12)

    def test_invalid_density_is_rejected(self):
        with self.assertRaisesMessage(InputValidationError, 'trace'):
            luders_map(DensityMatrix(np.eye(2)), self.qubit.decomposition)


class HelperTests(SimpleTestCase):
    def test_expectation_matches_moments(self):
        qubit = load_fixture('qubit')
        self.assertAlmostEqual(expectation(qubit.state, qubit.observable), 0.75, places=12)

    def test_purity(self):
        self.assertAlmostEqual(purity(DensityMatrix(np.diag([0.5, 0.5]))), 0.5)
        self.assertAlmostEqual(purity(density_from_state(StateVector(np.array([0.6, 0.8j])))), 1.0, places=12)

    def test_commutator_norm(self):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        z = np.diag([1.0, -1.0])
        self.assertEqual(commutator_norm(z, z), 0.0)
        self.assertAlmostEqual(commutator_norm(x, z), 2.0)

    def test_batch_level_probabilities(self):
        pair = load_fixture('spin-pair')
        psis = np.stack([member.amplitudes for member in pair.mixture.members])
        batch = batch_level_probabilities(psis, pair.decomposition)
        for row, member in zip(batch, pair.mixture.members):
            np.testing.assert_allclose(row, level_probabilities(member, pair.decomposition), atol=1e-12)
