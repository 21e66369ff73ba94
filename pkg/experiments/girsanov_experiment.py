"""
Runners for the change-of-measure representation of the reduction process.
"""
import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from reduction.conf import Tolerances, get_section
from reduction.fixtures import Fixture
from reduction.girsanov import (
    WstarEnsemble,
    projector_martingale_closed_form,
    q_time_grid,
    simulate_wstar_ensemble,
)
from reduction.hilbert import SpectralDecomposition, level_probabilities, moments
from reduction.io import write_json, write_trajectory_csv
from reduction.sde import InitialCondition, reduction_time
from reduction.stats import CheckResult

from .base_experiment import BaseExperiment
from .config import RunConfig

logger = logging.getLogger(__name__)


def _series_sigma(n_sigma: Optional[float]) -> float:
    return float(n_sigma if n_sigma is not None else get_section('verification')['series_n_sigma'])


def q_martingale_check(rows: Sequence[Dict[str, Any]], n_sigma: Optional[float] = None,
                       tol: Optional[Tolerances] = None) -> CheckResult:
    """E^Q[Λ*_t] = 1 at every time of a ``q_time_grid``."""
    n_sigma = _series_sigma(n_sigma)
    tol_num = (tol or Tolerances.from_settings()).tol_num
    subchecks = [
        CheckResult.equality(f"t_{row['t']:.6g}", row['lambda_star_mean'], 1.0,
                             n_sigma * row['lambda_star_se'] + tol_num, row['H']['n_samples'],
                             detail={'t': row['t']})
        for row in rows
    ]
    return CheckResult.composite('q_martingale', subchecks)


def weighted_energy_check(rows: Sequence[Dict[str, Any]], h0: float, n_sigma: Optional[float] = None,
                          tol: Optional[Tolerances] = None) -> CheckResult:
    """Importance-weighted E[H_t] stays at H₀; low effective sample sizes are listed in the detail."""
    n_sigma = _series_sigma(n_sigma)
    tol_num = (tol or Tolerances.from_settings()).tol_num
    subchecks = []
    warnings = []
    for row in rows:
        estimate = row['H']
        if estimate['warning']:
            warnings.append({'t': row['t'], 'warning': estimate['warning']})
        subchecks.append(CheckResult.equality(
            f"t_{row['t']:.6g}", estimate['mean'], h0, n_sigma * estimate['standard_error'] + tol_num,
            estimate['n_samples'], detail={'t': row['t'], 'ess': estimate['effective_sample_size']}))
    return CheckResult.composite('weighted_energy', subchecks, {'ess_warnings': warnings})


def q_times(fixture: Fixture, config: RunConfig, tol: Tolerances) -> List[float]:
    """``q_times_tau`` in units of τ_R; a unit time-scale when τ_R is undefined."""
    tau_r = reduction_time(fixture.pure, fixture.decomposition, config.sigma, tol)
    if tau_r is None:
        logger.warning("Reduction time is undefined; q times are taken in absolute units")
        tau_r = 1.0
    return [factor * tau_r for factor in config.q_times_tau]


def weighted_rows(fixture: Fixture, config: RunConfig, tol: Tolerances) -> List[Dict[str, Any]]:
    """Q-sampled estimates for the fixture's pure state on the configured time grid."""
    dec = fixture.decomposition
    pi = level_probabilities(fixture.state, dec, tol)
    return q_time_grid(pi, dec.eigenvalues, config.sigma, q_times(fixture, config, tol),
                       config.q_samples, config.seed, tol)


def simulate_scalar(init: InitialCondition, dec: SpectralDecomposition, config: RunConfig, tol: Tolerances,
                    horizon: Optional[float] = None) -> WstarEnsemble:
    """Scalar W* ensemble on the same dt and record grid as the full SDE would use."""
    sim = config.sim_config()
    dt, full_horizon = sim.resolve_timing(reduction_time(init, dec, sim.sigma, tol))
    return simulate_wstar_ensemble(
        init, dec, sim.sigma, dt, full_horizon if horizon is None else horizon, config.n_trajectories,
        config.seed, record_stride=sim.record_stride, collapse_threshold=sim.collapse_threshold,
        workers=config.workers, batch_size=config.batch_size, tol=tol,
    )


class ScalarGirsanovExperiment(BaseExperiment):
    """
    Integrates the scalar SDE for W*_t and reconstructs H_t, V_t and P_nt from
    the closed form.
    """

    def execute(self) -> None:
        ensemble = simulate_scalar(self.initial_condition, self.dec, self.config, self.tol)
        self.write_trajectories(ensemble)
        done = ensemble.terminal_levels >= 0
        product = ensemble.log_lambda_star + ensemble.log_lambda_physical
        self.diagnostics['scalar_ensemble'] = {
            'n_trajectories': ensemble.n_trajectories,
            'collapsed': int(done.sum()),
            'recorded_until': float(ensemble.times[-1]),
            # zero up to discretization along each path
            'max_abs_log_density_product': float(np.max(np.abs(product))),
            'terminal_frequencies': np.bincount(ensemble.terminal_levels[done],
                                                minlength=self.dec.n_levels) / max(int(done.sum()), 1),
        }

    def write_trajectories(self, ensemble: WstarEnsemble) -> None:
        rows = self.csv_rows(ensemble.n_trajectories)
        energies = ensemble.eigenvalues
        # recorded W* is frozen after collapse, so the clock stops there too
        stop = np.where(np.isnan(ensemble.terminal_times[:rows]), np.inf, ensemble.terminal_times[:rows])
        clock = np.minimum(ensemble.times[None, :], stop[:, None])
        probs = projector_martingale_closed_form(ensemble.pi[:rows, None, :], energies, ensemble.sigma,
                                                 ensemble.wstar[:rows], clock, self.tol)
        centred = energies[None, None, :] - ensemble.H[:rows, :, None]
        columns = {
            'H': ensemble.H[:rows],
            'V': ensemble.V[:rows],
            'beta': np.sum(probs * centred ** 3, axis=2),
            'norm_err': np.zeros_like(ensemble.H[:rows]),
            'P': probs,
            'wstar': ensemble.wstar[:rows],
            'log_lambda_star': ensemble.log_lambda_star[:rows],
        }
        write_trajectory_csv(self.artifact_path('trajectories.csv'), ensemble.times, columns,
                             energies.size, trajectory_ids=range(rows), extra=('wstar', 'log_lambda_star'),
                             metadata=self.csv_metadata)


class WeightedGirsanovExperiment(BaseExperiment):
    """
    Estimates E[H_t], E^Q[Λ*_t] and E[V_t] on a time grid from single-time
    draws W*_t ~ N(0, t) under Q.
    """

    def execute(self) -> None:
        rows = weighted_rows(self.fixture, self.config, self.tol)
        write_json(self.artifact_path('weighted_estimates.json'), rows)
        self.diagnostics['weighted_estimates'] = rows
        h0 = moments(self.fixture.state, self.dec, tol=self.tol).H
        for name in self.requested('q_martingale', 'weighted_energy'):
            if name == 'q_martingale':
                self.checks.append(q_martingale_check(rows, self.config.n_sigma, self.tol))
            else:
                self.checks.append(weighted_energy_check(rows, h0, self.config.n_sigma, self.tol))
