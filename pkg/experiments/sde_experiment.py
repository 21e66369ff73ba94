"""
Runner for the full state-vector reduction SDE.
"""
import logging
import math
from typing import Any, Dict

import numpy as np

from reduction.io import write_trajectory_csv
from reduction.lindblad import closed_form_series, ensemble_density_from_trajectories
from reduction.sde import reduction_time, simulate_ensemble
from reduction.stats import (
    NOT_APPLICABLE,
    CheckResult,
    EnsembleSeries,
    check_born_frequencies,
    check_conditional_variance,
    check_doob_bounds,
    check_energy_martingale,
    check_increment_variance,
    check_luders_confinement,
    check_projection_martingales,
    check_terminal_moments,
    check_variance_laws,
    evaluate_mixed_state_luders,
    variance_diagnostics,
)

from .base_experiment import BaseExperiment

logger = logging.getLogger(__name__)

# Checks computed from one ensemble
SERIES_CHECKS = (
    'born_frequencies',
    'energy_martingale',
    'variance_laws',
    'doob_bounds',
    'conditional_variance',
    'luders_confinement',
    'mixed_state_luders',
    'projection_martingales',
    'terminal_moments',
    'increment_variance',
    'lindblad_ensemble',
)


class SdeExperiment(BaseExperiment):
    """
    Integrates an ensemble of the full SDE and writes its trajectories.

    Checks run only when selected with ``checks``; the verify-all runner
    runs all of them.
    """

    def execute(self) -> None:
        names = self.requested(*SERIES_CHECKS) if self.config.checks else []
        series = self.simulate(record_states='lindblad_ensemble' in names)
        self.write_trajectories(series)
        self.diagnostics.update(self.ensemble_summary(series))
        for name in names:
            self.add_check(getattr(self, f"check_{name}")(series))

    def add_check(self, check: CheckResult) -> None:
        verdict = 'n/a' if check.kind == NOT_APPLICABLE else ('passed' if check.passed else 'FAILED')
        logger.info(f"{check.name}: {verdict}")
        self.checks.append(check)

    def simulate(self, record_states: bool = False) -> EnsembleSeries:
        config = self.config.sim_config(record_states=bool(record_states or self.config.record_states))
        return simulate_ensemble(config, self.initial_condition, self.dec, self.config.n_trajectories,
                                 workers=self.config.workers, batch_size=self.config.batch_size, tol=self.tol)

    def write_trajectories(self, series: EnsembleSeries) -> None:
        rows = self.csv_rows(series.n_trajectories)
        columns = {key: getattr(series, key)[:rows] for key in ('H', 'V', 'beta', 'norm_err', 'P', 'Pi')}
        write_trajectory_csv(self.artifact_path('trajectories.csv'), series.times, columns,
                             series.P.shape[2], series.monitored_levels, range(rows),
                             metadata=self.csv_metadata)

    def ensemble_summary(self, series: EnsembleSeries) -> Dict[str, Any]:
        done = series.terminated
        tau_r = reduction_time(self.initial_condition, self.dec, series.sigma, self.tol)
        summary = {
            'n_trajectories': series.n_trajectories,
            'collapsed': int(done.sum()),
            'dt': series.dt,
            'tau_r': tau_r,
            'recorded_until': float(series.times[-1]),
            'mean_terminal_time': float(np.mean(series.terminal_times[done])) if done.any() else None,
        }
        if series.norm_err_max is not None:
            summary['max_norm_error'] = float(np.max(series.norm_err_max))
        return {'ensemble': summary, 'variance': variance_diagnostics(series)}

    @property
    def expected_probabilities(self) -> np.ndarray:
        rho0 = self.initial_condition.density()
        return np.einsum('nij,ji->n', self.dec.projectors, rho0.matrix).real

    def check_born_frequencies(self, series: EnsembleSeries) -> CheckResult:
        return check_born_frequencies(series.terminal_levels, self.expected_probabilities,
                                      self.config.n_sigma, self.tol)

    def check_energy_martingale(self, series: EnsembleSeries) -> CheckResult:
        return check_energy_martingale(series, self.config.n_sigma, self.tol)

    def check_variance_laws(self, series: EnsembleSeries) -> CheckResult:
        return check_variance_laws(series, n_sigma=self.config.n_sigma, tol=self.tol)

    def check_doob_bounds(self, series: EnsembleSeries) -> CheckResult:
        return check_doob_bounds(series, lambdas=self.config.lambdas, n_sigma=self.config.n_sigma, tol=self.tol)

    def check_conditional_variance(self, series: EnsembleSeries) -> CheckResult:
        return check_conditional_variance(series, n_sigma=self.config.n_sigma, tol=self.tol)

    def check_luders_confinement(self, series: EnsembleSeries) -> CheckResult:
        if self.config.use_mixture:
            return CheckResult.not_applicable('luders_confinement', 'mixed initial condition')
        return check_luders_confinement(series, self.dec, self.fixture.state, n_sigma=self.config.n_sigma,
                                        tol=self.tol)

    def check_mixed_state_luders(self, series: EnsembleSeries) -> CheckResult:
        return evaluate_mixed_state_luders(series, self.initial_condition.density(), self.dec,
                                           n_sigma=self.config.n_sigma, tol=self.tol)

    def check_projection_martingales(self, series: EnsembleSeries) -> CheckResult:
        return check_projection_martingales(series, self.config.n_sigma, self.tol)

    def check_terminal_moments(self, series: EnsembleSeries) -> CheckResult:
        return check_terminal_moments(series, n_sigma=self.config.n_sigma, tol=self.tol)

    def check_increment_variance(self, series: EnsembleSeries) -> CheckResult:
        return check_increment_variance(series)

    def check_lindblad_ensemble(self, series: EnsembleSeries) -> CheckResult:
        """Averaged |ψ_t⟩⟨ψ_t| against the closed-form master equation, within 4/√n."""
        empirical = ensemble_density_from_trajectories(series, self.tol)
        exact = closed_form_series(self.initial_condition.density(), self.dec, series.sigma, series.times, self.tol)
        distance = empirical.max_distance(exact)
        worst = int(np.argmax(distance))
        bound = 4.0 / math.sqrt(series.n_trajectories)
        return CheckResult.upper_bound('lindblad_ensemble', distance[worst], bound, bound, series.n_trajectories,
                                       detail={'t': float(series.times[worst])})
