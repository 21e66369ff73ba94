"""
Runners for the dephasing master equation.
"""
import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from reduction.conf import Tolerances
from reduction.hilbert import DensityMatrix, SpectralDecomposition, luders_map, max_asymmetry
from reduction.io import write_density_series
from reduction.lindblad import (
    DensitySeries,
    closed_form_series,
    integrator_order_check,
    rho_integrate_series,
    unitary_time_average,
)
from reduction.stats import CheckResult

from .base_experiment import BaseExperiment

logger = logging.getLogger(__name__)

CROSSCHECK_BOUND = 1e-8


def density_validity_check(series: DensitySeries, rho0: DensityMatrix, dec: SpectralDecomposition,
                           tol: Tolerances) -> CheckResult:
    """
    Every ρ̂_t is a density matrix, and its block-diagonal part Σ P̂_nρ̂_tP̂_n
    stays equal to that of ρ̂₀.
    """
    violations = []
    for matrix in series.matrices:
        lowest = float(linalg.eigvalsh(0.5 * (matrix + matrix.conj().T))[0])
        violations.append(max(abs(np.trace(matrix).real - 1.0), max_asymmetry(matrix), -lowest, 0.0))
    worst = int(np.argmax(violations))
    validity = CheckResult.upper_bound('validity', violations[worst], tol.tol_psd, tol.tol_psd, len(series),
                                       detail={'t': float(series.times[worst])})

    blocks = luders_map(rho0, dec, tol=tol).matrix
    evolved = np.einsum('nij,tjk,nkl->til', dec.projectors, series.matrices, dec.projectors)
    drift = np.max(np.abs(evolved - blocks), axis=(1, 2))
    worst = int(np.argmax(drift))
    conservation = CheckResult.upper_bound('block_diagonal_conservation', drift[worst], tol.tol_num, tol.tol_num,
                                           len(series), detail={'t': float(series.times[worst])})
    return CheckResult.composite('density_validity', [validity, conservation])


def crosscheck(rho0: DensityMatrix, dec: SpectralDecomposition, sigma: float, times: Sequence[float],
               dt: Optional[float], tol: Tolerances, ode: Optional[DensitySeries] = None) -> CheckResult:
    """RK4 against the closed form, max-element over the grid, within 1e-8."""
    exact = closed_form_series(rho0, dec, sigma, times, tol)
    if ode is None:
        ode = rho_integrate_series(rho0, dec, sigma, times, dt, tol)
    distance = ode.max_distance(exact)
    worst = int(np.argmax(distance))
    return CheckResult.upper_bound('lindblad_crosscheck', distance[worst], CROSSCHECK_BOUND, CROSSCHECK_BOUND,
                                   len(exact), detail={'t': float(exact.times[worst])})


def integrator_order_result(rho0: DensityMatrix, dec: SpectralDecomposition, sigma: float,
                            tol: Tolerances) -> CheckResult:
    """Quartering the RK4 step shrinks the error by 4⁴ = 256, within 40%."""
    result = integrator_order_check(rho0, dec, sigma, tol=tol)
    if result['error_fine'] < 1e-13:
        return CheckResult.not_applicable('integrator_order', 'errors at rounding level')
    return CheckResult.equality('integrator_order', result['ratio'], 256.0, 0.4 * 256.0, 2, detail=result)


class LindbladExperiment(BaseExperiment):
    """
    Solves the master equation on ``n_times`` points of [0, t_end], in
    closed form (lindblad-closed) or by RK4 integration (lindblad-ode).
    """

    @property
    def rho0(self) -> DensityMatrix:
        return self.initial_condition.density()

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.config.t_end, self.config.n_times)

    def execute(self) -> None:
        sigma = self.config.sigma
        if self.config.mode == 'lindblad-ode':
            series = rho_integrate_series(self.rho0, self.dec, sigma, self.times, self.config.lindblad_dt, self.tol)
            names = self.requested('density_validity', 'lindblad_crosscheck', 'integrator_order')
        else:
            series = closed_form_series(self.rho0, self.dec, sigma, self.times, self.tol)
            names = self.requested('density_validity')
        write_density_series(self.artifact_path('densities.json'), series.times,
                             [series[i] for i in range(len(series))])

        average = unitary_time_average(self.rho0, self.dec, self.config.t_end, self.tol)
        luders = luders_map(self.rho0, self.dec, tol=self.tol)
        self.diagnostics['unitary_average_distance'] = float(np.max(np.abs(average.matrix - luders.matrix)))
        self.diagnostics['final_distance_to_luders'] = float(np.max(np.abs(series.matrices[-1] - luders.matrix)))

        for name in names:
            if name == 'density_validity':
                check = density_validity_check(series, self.rho0, self.dec, self.tol)
            elif name == 'lindblad_crosscheck':
                check = crosscheck(self.rho0, self.dec, sigma, self.times, None, self.tol, ode=series)
            else:
                check = integrator_order_result(self.rho0, self.dec, sigma, self.tol)
            logger.info(f"{check.name}: {'passed' if check.passed else 'FAILED'}")
            self.checks.append(check)
