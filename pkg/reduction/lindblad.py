"""
Density-matrix evolution under energy-based dephasing

    ∂ρ̂/∂t = -i[Ĥ, ρ̂] + ¼σ²(Ĥρ̂Ĥ - ½Ĥ²ρ̂ - ½ρ̂Ĥ²)

solved exactly block by block, integrated with a fixed-step RK4 scheme as a
cross-check, and compared with the purely unitary time average.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .conf import Tolerances, get_section, resolve_tolerances
from .exceptions import ConfigurationError, InputValidationError, IntegrationQualityError
from .hilbert import DensityMatrix, SpectralDecomposition, max_asymmetry

logger = logging.getLogger(__name__)


def _check_inputs(rho0: DensityMatrix, dec: SpectralDecomposition, tol: Tolerances):
    rho0.validate(tol)
    if rho0.dimension != dec.dimension:
        raise InputValidationError(
            f"Density matrix dimension {rho0.dimension} does not match observable dimension {dec.dimension}"
        )


@dataclass(frozen=True, eq=False)
class BlockDecomposedDensity:
    """
    The operator blocks R_nm = P̂_nρ̂P̂_m of a density matrix.

    Diagonal blocks are constants of the motion; off-diagonal blocks rotate
    at E_n - E_m and decay at ⅛σ²(E_n - E_m)².
    """
    blocks: np.ndarray
    eigenvalues: np.ndarray
    sigma: float

    @classmethod
    def from_density(cls, rho: DensityMatrix, dec: SpectralDecomposition, sigma: float) -> 'BlockDecomposedDensity':
        blocks = np.einsum('nij,jk,mkl->nmil', dec.projectors, rho.matrix, dec.projectors)
        return cls(blocks, dec.eigenvalues, float(sigma))

    def damping(self, t: float) -> np.ndarray:
        gaps = self.eigenvalues[:, None] - self.eigenvalues[None, :]
        return np.exp(-1j * gaps * t - 0.125 * self.sigma ** 2 * gaps ** 2 * t)

    def at(self, t: float) -> np.ndarray:
        return np.einsum('nm,nmij->ij', self.damping(t), self.blocks)

    def validate(self, tol: Optional[Tolerances] = None) -> 'BlockDecomposedDensity':
        tol = resolve_tolerances(tol)
        adjoint = np.conj(np.swapaxes(np.swapaxes(self.blocks, 0, 1), 2, 3))
        if np.max(np.abs(self.blocks - adjoint)) > tol.tol_herm:
            raise InputValidationError("Blocks violate R_nm = R_mn†")
        trace = sum(np.trace(self.blocks[n, n]).real for n in range(self.blocks.shape[0]))
        if abs(trace - 1.0) > tol.tol_norm:
            raise InputValidationError(f"Diagonal blocks have total trace {trace:.12g}")
        return self


def rho_closed_form(rho0: DensityMatrix, dec: SpectralDecomposition, sigma: float, t: float,
                    tol: Optional[Tolerances] = None) -> DensityMatrix:
    """
    Exact solution Σ_nm P̂_nρ̂₀P̂_m exp(-i(E_n-E_m)t - ⅛σ²(E_n-E_m)²t).

    At t = 0 the input is returned unchanged; as t → ∞ the result tends to
    the Lüders image Σ_n P̂_nρ̂₀P̂_n.
    """
    tol = resolve_tolerances(tol)
    _check_inputs(rho0, dec, tol)
    if t < 0:
        raise InputValidationError("t must be non-negative")
    if t == 0:
        return DensityMatrix(rho0.matrix.copy())
    return DensityMatrix(BlockDecomposedDensity.from_density(rho0, dec, sigma).at(t))


def default_dt(dec: SpectralDecomposition, sigma: float) -> float:
    stiffness = sigma ** 2 * dec.spectral_range ** 2
    return 1e-3 * min(1.0, 8.0 / stiffness) if stiffness > 0 else 1e-3


def _generator(hamiltonian: np.ndarray, h_squared: np.ndarray, sigma: float):
    coupling = 0.25 * sigma ** 2

    def rhs(rho):
        hr = hamiltonian @ rho
        rh = rho @ hamiltonian
        return -1j * (hr - rh) + coupling * (hr @ hamiltonian - 0.5 * (h_squared @ rho + rho @ h_squared))
    return rhs


def _rk4(rho: np.ndarray, rhs, h: float, n_steps: int, tol: Tolerances, step_offset: int = 0) -> np.ndarray:
    for step in range(1, n_steps + 1):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * h * k1)
        k3 = rhs(rho + 0.5 * h * k2)
        k4 = rhs(rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        lowest = float(scipy.linalg.eigvalsh(rho)[0])
        if lowest < -tol.tol_psd:
            raise IntegrationQualityError(
                f"Positivity lost at step {step + step_offset}: minimum eigenvalue {lowest:.3e}; reduce dt"
            )
    return rho


def rho_integrate(rho0: DensityMatrix, dec: SpectralDecomposition, sigma: float, t_end: float,
                  dt: Optional[float] = None, tol: Optional[Tolerances] = None) -> DensityMatrix:
    """
    Fixed-step classical RK4 integration of the dephasing master equation.

    The step is shrunk to t_end / ceil(t_end / dt) so the last step lands on
    t_end. Hermiticity is restored every step, positivity is monitored and
    the result is re-projected to unit trace.

    Raises:
        IntegrationQualityError: If an eigenvalue drops below -tol_psd
    """
    tol = resolve_tolerances(tol)
    _check_inputs(rho0, dec, tol)
    if t_end < 0:
        raise InputValidationError("t_end must be non-negative")
    dt = dt if dt is not None else get_section('lindblad')['dt'] or default_dt(dec, sigma)
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    n_steps = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    hamiltonian = dec.matrix
    rho = rho0.matrix.copy()
    if n_steps:
        rho = _rk4(rho, _generator(hamiltonian, hamiltonian @ hamiltonian, sigma), t_end / n_steps, n_steps, tol)
    trace = np.trace(rho).real
    logger.debug(f"RK4 finished {n_steps} steps, trace drift {abs(trace - 1.0):.2e}")
    return DensityMatrix(rho / trace)


def rho_integrate_series(rho0: DensityMatrix, dec: SpectralDecomposition, sigma: float,
                         times: Sequence[float], dt: Optional[float] = None,
                         tol: Optional[Tolerances] = None) -> 'DensitySeries':
    """RK4 solution sampled on an increasing time grid, continuing from one point to the next."""
    tol = resolve_tolerances(tol)
    _check_inputs(rho0, dec, tol)
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise InputValidationError("times must be non-negative and strictly increasing")
    dt = dt if dt is not None else get_section('lindblad')['dt'] or default_dt(dec, sigma)
    hamiltonian = dec.matrix
    rhs = _generator(hamiltonian, hamiltonian @ hamiltonian, sigma)
    rho = rho0.matrix.copy()
    current = 0.0
    done = 0
    snapshots = []
    for t in times:
        span = t - current
        n_steps = int(math.ceil(span / dt - 1e-9)) if span > 0 else 0
        if n_steps:
            rho = _rk4(rho, rhs, span / n_steps, n_steps, tol, done)
        done += n_steps
        current = t
        snapshots.append(rho / np.trace(rho).real)
    return DensitySeries(times, np.stack(snapshots))


def integrator_order_check(rho0: DensityMatrix, dec: SpectralDecomposition, sigma: float,
                           t_end: float = 1.0, dt: Optional[float] = None,
                           tol: Optional[Tolerances] = None) -> Dict[str, float]:
    """
    Errors of RK4 against the closed form at dt and dt/4.

    For a fourth-order scheme the ratio is close to 4⁴ = 256. The default dt
    keeps both errors well above rounding.
    """
    if dt is None:
        dt = 0.1 * min(1.0, 1.0 / max(dec.spectral_range, 1e-12), 8.0 / max(sigma ** 2 * dec.spectral_range ** 2, 1e-12))
    exact = rho_closed_form(rho0, dec, sigma, t_end, tol).matrix
    coarse = float(np.max(np.abs(rho_integrate(rho0, dec, sigma, t_end, dt, tol).matrix - exact)))
    fine = float(np.max(np.abs(rho_integrate(rho0, dec, sigma, t_end, dt / 4.0, tol).matrix - exact)))
    ratio = coarse / fine if fine > 0 else float('inf')
    logger.info(f"RK4 order check: error {coarse:.3e} -> {fine:.3e}, ratio {ratio:.1f}")
    return {'error_coarse': coarse, 'error_fine': fine, 'ratio': ratio, 'dt': dt, 't_end': t_end}


def unitary_time_average(rho0: DensityMatrix, dec: SpectralDecomposition, T: float,
                         tol: Optional[Tolerances] = None) -> DensityMatrix:
    """
    (1/T)∫₀ᵀ e^{-iĤt}ρ̂₀e^{iĤt}dt in closed form.

    Off-diagonal blocks carry (1/T)[sin(ωT)/ω + i(cos(ωT)-1)/ω] with
    ω = E_n - E_m, so they fade as O(1/T) towards the Lüders image.
    """
    tol = resolve_tolerances(tol)
    _check_inputs(rho0, dec, tol)
    if not T > 0:
        raise InputValidationError(f"T must be positive, got {T}")
    blocks = BlockDecomposedDensity.from_density(rho0, dec, 0.0).blocks
    omega = dec.eigenvalues[:, None] - dec.eigenvalues[None, :]
    factor = np.ones_like(omega, dtype=complex)
    off = omega != 0
    w = omega[off]
    factor[off] = (np.sin(w * T) / w + 1j * (np.cos(w * T) - 1.0) / w) / T
    return DensityMatrix(np.einsum('nm,nmij->ij', factor, blocks))


@dataclass(frozen=True, eq=False)
class DensitySeries:
    """Density matrices on a time grid, indexed [time, row, column]."""
    times: np.ndarray
    matrices: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, index: int) -> DensityMatrix:
        return DensityMatrix(self.matrices[index])

    def max_distance(self, other: 'DensitySeries') -> np.ndarray:
        """Max-element distance at each time."""
        if self.matrices.shape != other.matrices.shape or not np.allclose(self.times, other.times):
            raise InputValidationError("Density series live on different grids")
        return np.max(np.abs(self.matrices - other.matrices), axis=(1, 2))

    def validate(self, tol: Optional[Tolerances] = None) -> 'DensitySeries':
        for index in range(len(self)):
            self[index].validate(tol)
        return self


def closed_form_series(rho0: DensityMatrix, dec: SpectralDecomposition, sigma: float,
                       times: Sequence[float], tol: Optional[Tolerances] = None) -> DensitySeries:
    times = np.asarray(times, dtype=float)
    return DensitySeries(times, np.stack([rho_closed_form(rho0, dec, sigma, t, tol).matrix for t in times]))


def ensemble_density_from_trajectories(source: Union[Sequence, object],
                                       tol: Optional[Tolerances] = None) -> DensitySeries:
    """
    ρ̂_t = E[|ψ_t⟩⟨ψ_t|] on a common grid.

    Args:
        source: An ensemble series recorded with states, or a sequence of
            trajectories that all carry states on the same time grid

    Raises:
        InputValidationError: On missing states or mismatched grids
    """
    if hasattr(source, 'states') and hasattr(source, 'n_trajectories'):
        if source.states is None:
            raise InputValidationError("Ensemble was integrated without record_states")
        times, states = source.times, source.states
    else:
        trajectories = list(source)
        if not trajectories:
            raise InputValidationError("No trajectories given")
        times = trajectories[0].times
        for index, trajectory in enumerate(trajectories):
            if trajectory.states is None:
                raise InputValidationError(f"Trajectory {index} has no recorded states")
            if trajectory.times.shape != times.shape or not np.array_equal(trajectory.times, times):
                raise InputValidationError(f"Trajectory {index} uses a different time grid")
        states = np.stack([trajectory.states for trajectory in trajectories])
    matrices = np.einsum('bri,brj->rij', states, states.conj()) / states.shape[0]
    series = DensitySeries(np.asarray(times, dtype=float), matrices)
    worst = max(max_asymmetry(m) for m in matrices)
    if worst > resolve_tolerances(tol).tol_herm:
        logger.warning(f"Averaged densities deviate from Hermiticity by {worst:.2e}")
    return series
