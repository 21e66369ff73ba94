"""
Finite-dimensional Hilbert-space machinery: states, Hermitian observables,
spectral structure, Lüders projections and energy moments.

All value types are immutable after construction (their arrays are marked
read-only) and every operation is pure, so the objects may be shared freely
between trajectory workers.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .conf import Tolerances, resolve_tolerances
from .exceptions import DegenerateProjectionError, EigensolverError, InputValidationError

logger = logging.getLogger(__name__)


def _frozen(array, dtype=np.complex128) -> np.ndarray:
    result = np.array(array, dtype=dtype, copy=True)
    result.setflags(write=False)
    return result


def _as_matrix(matrix, name: str) -> np.ndarray:
    result = _frozen(matrix)
    if result.ndim != 2 or result.shape[0] != result.shape[1] or result.shape[0] < 1:
        raise InputValidationError(f"{name} must be a non-empty square matrix, got shape {result.shape}")
    return result


def max_asymmetry(matrix: np.ndarray) -> float:
    """Largest element of |A - A†|."""
    return float(np.max(np.abs(matrix - matrix.conj().T)))


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitude vector |ψ⟩ on an N-dimensional space."""
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = _frozen(np.ravel(self.amplitudes))
        if amplitudes.size < 1:
            raise InputValidationError("A state needs at least one amplitude")
        object.__setattr__(self, 'amplitudes', amplitudes)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> 'StateVector':
        """Build a state from a list of [re, im] pairs."""
        array = np.asarray(pairs, dtype=float)
        if array.ndim != 2 or array.shape[1] != 2:
            raise InputValidationError("State amplitudes must be given as [re, im] pairs")
        return cls(array[:, 0] + 1j * array[:, 1])

    @property
    def dimension(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> 'StateVector':
        norm = self.norm()
        if norm == 0.0 or not np.isfinite(norm):
            raise InputValidationError(f"Cannot normalize a state with norm {norm}")
        return StateVector(self.amplitudes / norm)

    def validate_normalized(self, tol: Optional[Tolerances] = None) -> 'StateVector':
        tol = resolve_tolerances(tol)
        error = abs(self.norm() - 1.0)
        if not error <= tol.tol_norm:
            raise InputValidationError(
                f"State is not normalized: |‖ψ‖ - 1| = {error:.3e} exceeds {tol.tol_norm:.1e}"
            )
        return self


@dataclass(frozen=True, eq=False)
class HermitianObservable:
    """Hermitian N×N matrix, e.g. the Hamiltonian."""
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'matrix', _as_matrix(self.matrix, 'Observable'))

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def validate(self, tol: Optional[Tolerances] = None) -> 'HermitianObservable':
        tol = resolve_tolerances(tol)
        asymmetry = max_asymmetry(self.matrix)
        if not asymmetry <= tol.tol_herm:
            raise InputValidationError(
                f"Observable is not Hermitian: max |A - A†| = {asymmetry:.3e} exceeds {tol.tol_herm:.1e}"
            )
        return self


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive-semidefinite, unit-trace matrix ρ̂."""
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'matrix', _as_matrix(self.matrix, 'Density matrix'))

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def validate(self, tol: Optional[Tolerances] = None) -> 'DensityMatrix':
        tol = resolve_tolerances(tol)
        asymmetry = max_asymmetry(self.matrix)
        if not asymmetry <= tol.tol_herm:
            raise InputValidationError(f"Density matrix is not Hermitian: max asymmetry {asymmetry:.3e}")
        trace = complex(np.trace(self.matrix))
        if not abs(trace - 1.0) <= tol.tol_norm:
            raise InputValidationError(f"Density matrix trace is {trace.real:.12g}, expected 1")
        smallest = float(np.min(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))))
        if smallest < -tol.tol_psd:
            raise InputValidationError(f"Density matrix has negative eigenvalue {smallest:.3e}")
        return self


@dataclass(frozen=True, eq=False)
class SpectralLevel:
    """One distinct eigenvalue E_n with its multiplicity d_n and projector P̂_n."""
    eigenvalue: float
    multiplicity: int
    projector: np.ndarray


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """
    Distinct eigenvalues, multiplicities and orthogonal projectors of an observable.

    ``basis`` holds orthonormal eigenvectors as columns, grouped level by level
    in order of increasing eigenvalue; ``level_starts`` marks where each level
    begins in that ordering.
    """
    levels: Tuple[SpectralLevel, ...]
    basis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'levels', tuple(self.levels))
        object.__setattr__(self, 'basis', _frozen(self.basis))
        object.__setattr__(self, 'eigenvalues', _frozen([lv.eigenvalue for lv in self.levels], float))
        object.__setattr__(self, 'multiplicities', _frozen([lv.multiplicity for lv in self.levels], int))
        object.__setattr__(self, 'projectors', _frozen(np.stack([lv.projector for lv in self.levels])))
        starts = np.concatenate([[0], np.cumsum(self.multiplicities)[:-1]]).astype(int)
        object.__setattr__(self, 'level_starts', _frozen(starts, int))
        expanded = np.repeat(self.eigenvalues, self.multiplicities)
        object.__setattr__(self, 'basis_energies', _frozen(expanded, float))

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def e_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def e_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def spectral_range(self) -> float:
        return self.e_max - self.e_min

    @property
    def matrix(self) -> np.ndarray:
        """Σ_n E_n P̂_n."""
        return np.einsum('n,nij->ij', self.eigenvalues, self.projectors)

    @property
    def degenerate_levels(self) -> Tuple[int, ...]:
        return tuple(int(n) for n in np.flatnonzero(self.multiplicities > 1))

    def observable(self) -> HermitianObservable:
        return HermitianObservable(self.matrix)

    def validate(self, tol: Optional[Tolerances] = None) -> 'SpectralDecomposition':
        """Check resolution of identity, orthogonality, traces and ordering."""
        tol = resolve_tolerances(tol)
        n = self.dimension
        if int(np.sum(self.multiplicities)) != n:
            raise InputValidationError(f"Multiplicities sum to {np.sum(self.multiplicities)}, expected {n}")
        if np.any(np.diff(self.eigenvalues) <= 0):
            raise InputValidationError("Eigenvalues must be strictly increasing")
        identity_error = float(np.max(np.abs(self.projectors.sum(axis=0) - np.eye(n))))
        if identity_error > tol.tol_herm:
            raise InputValidationError(f"Projectors do not resolve the identity (error {identity_error:.3e})")
        for a, p_a in enumerate(self.projectors):
            if abs(np.trace(p_a).real - self.multiplicities[a]) > tol.tol_herm:
                raise InputValidationError(f"Trace of projector {a} differs from its multiplicity")
            for b, p_b in enumerate(self.projectors):
                expected = p_a if a == b else np.zeros_like(p_a)
                error = float(np.max(np.abs(p_a @ p_b - expected)))
                if error > tol.tol_herm:
                    raise InputValidationError(
                        f"Projectors {a} and {b} violate P_a P_b = δ_ab P_a (error {error:.3e})"
                    )
        return self

    @classmethod
    def from_spectral(cls, eigenvalues: Sequence[float], projectors: Sequence,
                      tol: Optional[Tolerances] = None) -> 'SpectralDecomposition':
        """
        Build a decomposition from explicit spectral data and validate it.

        Args:
            eigenvalues: Distinct eigenvalues (any order)
            projectors: One projector matrix per eigenvalue

        Returns:
            Validated SpectralDecomposition sorted by eigenvalue
        """
        values = np.asarray(eigenvalues, dtype=float)
        mats = [_as_matrix(p, 'Projector') for p in projectors]
        if len(mats) != values.size or values.size == 0:
            raise InputValidationError("Need exactly one projector per eigenvalue")
        order = np.argsort(values, kind='stable')
        levels = []
        columns = []
        for index in order:
            projector = mats[index]
            weights, vectors = scipy.linalg.eigh(0.5 * (projector + projector.conj().T))
            keep = weights > 0.5
            multiplicity = int(np.count_nonzero(keep))
            if multiplicity == 0:
                raise InputValidationError(f"Projector for eigenvalue {values[index]} has rank zero")
            columns.append(vectors[:, keep])
            levels.append(SpectralLevel(float(values[index]), multiplicity, projector))
        return cls(tuple(levels), np.hstack(columns)).validate(tol)


def spectral_decompose(obs: HermitianObservable, tol_degeneracy: Optional[float] = None,
                       tol: Optional[Tolerances] = None) -> SpectralDecomposition:
    """
    Decompose a Hermitian observable into distinct levels.

    Eigenvalues whose consecutive gap is at most ``tol_degeneracy`` are merged
    into one level; by default the gap threshold is ``degeneracy_rel`` times
    the spectral range.

    Raises:
        InputValidationError: If the matrix is not Hermitian
        EigensolverError: If the eigensolver does not converge
    """
    tol = resolve_tolerances(tol)
    obs.validate(tol)
    symmetric = 0.5 * (obs.matrix + obs.matrix.conj().T)
    try:
        values, vectors = scipy.linalg.eigh(symmetric)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigensolverError(f"Hermitian eigensolver failed: {e}") from e

    spread = float(values[-1] - values[0])
    if tol_degeneracy is None:
        scale = spread if spread > 0 else max(float(np.max(np.abs(values))), 1.0)
        tol_degeneracy = tol.degeneracy_rel * scale

    groups = [[0]]
    for i in range(1, values.size):
        if values[i] - values[i - 1] <= tol_degeneracy:
            groups[-1].append(i)
        else:
            groups.append([i])

    levels = []
    for group in groups:
        block = vectors[:, group]
        levels.append(SpectralLevel(
            eigenvalue=float(np.mean(values[group])),
            multiplicity=len(group),
            projector=block @ block.conj().T,
        ))
    logger.debug(f"Decomposed {obs.dimension}x{obs.dimension} observable into {len(levels)} levels")
    return SpectralDecomposition(tuple(levels), vectors)


@dataclass(frozen=True)
class MomentSet:
    """Energy moments of a state: H, H^(n), variance V and skewness β."""
    H: float
    raw: Tuple[float, ...]
    V: float
    beta: float

    def moment(self, n: int) -> float:
        """H^(n) for n ≥ 1."""
        return self.raw[n - 1]


def _check_level(dec: SpectralDecomposition, level: int) -> int:
    if not 0 <= int(level) < dec.n_levels:
        raise InputValidationError(f"Level {level} out of range for {dec.n_levels} levels")
    return int(level)


def _check_dimensions(state: StateVector, dec: SpectralDecomposition):
    if state.dimension != dec.dimension:
        raise InputValidationError(
            f"State dimension {state.dimension} does not match observable dimension {dec.dimension}"
        )


def level_probabilities(state: StateVector, dec: SpectralDecomposition,
                        tol: Optional[Tolerances] = None) -> np.ndarray:
    """π_n = ⟨ψ|P̂_n|ψ⟩ for every level."""
    _check_dimensions(state, dec)
    state.validate_normalized(tol)
    return batch_level_probabilities(state.amplitudes[None, :], dec)[0]


def batch_level_probabilities(psis: np.ndarray, dec: SpectralDecomposition) -> np.ndarray:
    """Level probabilities for a (B, N) stack of states, computed in the eigenbasis."""
    coefficients = psis @ dec.basis.conj()
    weights = (coefficients * coefficients.conj()).real
    return np.add.reduceat(weights, dec.level_starts, axis=-1)


def moments_from_probabilities(probs: np.ndarray, eigenvalues: np.ndarray, n_max: int = 3) -> MomentSet:
    raw = tuple(float(np.dot(probs, eigenvalues ** k)) for k in range(1, n_max + 1))
    energy = raw[0]
    centred = eigenvalues - energy
    variance = max(float(np.dot(probs, centred ** 2)), 0.0)
    skewness = float(np.dot(probs, centred ** 3))
    return MomentSet(H=energy, raw=raw, V=variance, beta=skewness)


def moments(state: StateVector, dec: SpectralDecomposition, n_max: int = 3,
            tol: Optional[Tolerances] = None) -> MomentSet:
    """
    Energy moments H^(n) = Σ_k E_k^n ⟨ψ|P̂_k|ψ⟩ for n = 1..n_max, with V and β.

    V and β are evaluated as central moments, which agree with
    H^(2) - H² and H^(3) - 3HH^(2) + 2H³ up to rounding.
    """
    if n_max < 3:
        raise InputValidationError(f"n_max must be at least 3, got {n_max}")
    probs = level_probabilities(state, dec, tol)
    return moments_from_probabilities(probs, dec.eigenvalues, n_max)


def luders_state(state: StateVector, dec: SpectralDecomposition, level: int,
                 tol: Optional[Tolerances] = None) -> StateVector:
    """
    Normalized Lüders state P̂_n|ψ⟩ / ⟨ψ|P̂_n|ψ⟩^½.

    The phase is inherited from P̂_n|ψ⟩.

    Raises:
        DegenerateProjectionError: If ⟨ψ|P̂_n|ψ⟩ ≤ tol_prob
    """
    tol = resolve_tolerances(tol)
    level = _check_level(dec, level)
    probability = level_probabilities(state, dec, tol)[level]
    if probability <= tol.tol_prob:
        raise DegenerateProjectionError(
            f"Level {level} has probability {probability:.3e}; the Lüders state is undefined"
        )
    projected = dec.projectors[level] @ state.amplitudes
    return StateVector(projected / np.linalg.norm(projected))


def orthogonal_luders_complement(state: StateVector, dec: SpectralDecomposition, level: int,
                                 tol: Optional[Tolerances] = None) -> HermitianObservable:
    """Π̂_n = P̂_n - |n,1⟩⟨n,1|, the part of the eigenspace orthogonal to the Lüders state."""
    luders = luders_state(state, dec, level, tol).amplitudes
    return HermitianObservable(dec.projectors[level] - np.outer(luders, luders.conj()))


def luders_map(rho: DensityMatrix, dec: SpectralDecomposition, level: Optional[int] = None,
               tol: Optional[Tolerances] = None) -> DensityMatrix:
    """
    Lüders projection of a density matrix.

    With ``level`` the conditional map P̂_n ρ̂ P̂_n / Tr(P̂_n ρ̂) is applied,
    otherwise the unconditional Σ_n P̂_n ρ̂ P̂_n.
    """
    tol = resolve_tolerances(tol)
    rho.validate(tol)
    if rho.dimension != dec.dimension:
        raise InputValidationError("Density matrix and observable dimensions differ")
    if level is None:
        return DensityMatrix(np.einsum('nij,jk,nkl->il', dec.projectors, rho.matrix, dec.projectors))
    level = _check_level(dec, level)
    projector = dec.projectors[level]
    weight = float(np.trace(projector @ rho.matrix).real)
    if weight <= tol.tol_prob:
        raise DegenerateProjectionError(f"Tr(P_{level} ρ) = {weight:.3e}; conditional Lüders map undefined")
    return DensityMatrix(projector @ rho.matrix @ projector / weight)


def density_from_state(state: StateVector) -> DensityMatrix:
    return DensityMatrix(np.outer(state.amplitudes, state.amplitudes.conj()))


def density_from_mixture(weights: Sequence[float], states: Sequence[StateVector]) -> DensityMatrix:
    matrix = sum(w * np.outer(s.amplitudes, s.amplitudes.conj()) for w, s in zip(weights, states))
    return DensityMatrix(matrix)


def fidelity(a: StateVector, b: StateVector) -> float:
    """|⟨a|b⟩|², insensitive to global phase."""
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def expectation(state: StateVector, obs: HermitianObservable) -> float:
    return float(np.vdot(state.amplitudes, obs.matrix @ state.amplitudes).real)


def purity(rho: DensityMatrix) -> float:
    return float(np.trace(rho.matrix @ rho.matrix).real)


def commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    """Max-element norm of [A, B]."""
    return float(np.max(np.abs(a @ b - b @ a)))
