"""
Runner for the full verification suite.
"""
import logging
from dataclasses import replace
from functools import cached_property
from typing import Any, Dict, List, Tuple

import numpy as np

from reduction.conf import get_section
from reduction.girsanov import ensemble_average_observable
from reduction.hilbert import HermitianObservable, moments
from reduction.lindblad import DensitySeries, closed_form_series, rho_closed_form, rho_integrate_series
from reduction.sde import reduction_time, strong_order_check
from reduction.stats import CheckResult, EnsembleSeries, check_mixed_state_luders, ks_two_sample

from .config import CHECKS
from .girsanov_experiment import q_martingale_check, simulate_scalar, weighted_energy_check, weighted_rows
from .lindblad_experiment import crosscheck, density_validity_check, integrator_order_result
from .sde_experiment import SdeExperiment

logger = logging.getLogger(__name__)

IDENTITY_BOUND = 1e-12


class VerifyAllExperiment(SdeExperiment):
    """
    Runs every check against a fresh ensemble and the other representations
    of the same dynamics.
    """

    def execute(self) -> None:
        names = self.requested(*CHECKS)
        series = self.simulate(record_states='lindblad_ensemble' in names)
        self.write_trajectories(series)
        self.diagnostics.update(self.ensemble_summary(series))
        for name in names:
            logger.info(f"Running {name}")
            self.add_check(getattr(self, f"check_{name}")(series))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.config.t_end, self.config.n_times)

    @cached_property
    def q_rows(self) -> List[Dict[str, Any]]:
        return weighted_rows(self.fixture, self.config, self.tol)

    @cached_property
    def lindblad_series(self) -> Tuple[DensitySeries, DensitySeries]:
        rho0 = self.initial_condition.density()
        closed = closed_form_series(rho0, self.dec, self.config.sigma, self.times, self.tol)
        ode = rho_integrate_series(rho0, self.dec, self.config.sigma, self.times, self.config.lindblad_dt, self.tol)
        return closed, ode

    def check_mixed_state_luders(self, series: EnsembleSeries) -> CheckResult:
        mixture = self.fixture.mixture if self.fixture.mixture is not None else self.fixture.pure
        return check_mixed_state_luders(mixture, self.dec, self.config.sigma, self.config.n_trajectories,
                                        config=self.config.sim_config(), workers=self.config.workers,
                                        tol=self.tol)

    def check_girsanov_equivalence(self, series: EnsembleSeries) -> CheckResult:
        """Law of H_t from the full SDE and from the scalar W* equation at the grid point nearest τ_R."""
        tau_r = reduction_time(self.initial_condition, self.dec, series.sigma, self.tol)
        if tau_r is None:
            return CheckResult.not_applicable('girsanov_equivalence', 'reduction time undefined')
        j = series.time_index(tau_r)
        scalar = simulate_scalar(self.initial_condition, self.dec, self.config, self.tol,
                                 horizon=float(series.times[j]))
        k = int(np.argmin(np.abs(scalar.times - series.times[j])))
        check = ks_two_sample(series.H[:, j], scalar.H[:, k], 'girsanov_equivalence')
        product = scalar.log_lambda_star[:, k] + scalar.log_lambda_physical[:, k]
        return replace(check, detail={**check.detail, 't': float(series.times[j]),
                                      'max_abs_log_density_product': float(np.max(np.abs(product)))})

    def check_q_martingale(self, series: EnsembleSeries) -> CheckResult:
        return q_martingale_check(self.q_rows, self.config.n_sigma, self.tol)

    def check_weighted_energy(self, series: EnsembleSeries) -> CheckResult:
        h0 = moments(self.fixture.state, self.dec, tol=self.tol).H
        return weighted_energy_check(self.q_rows, h0, self.config.n_sigma, self.tol)

    def check_lindblad_crosscheck(self, series: EnsembleSeries) -> CheckResult:
        closed, ode = self.lindblad_series
        return crosscheck(self.initial_condition.density(), self.dec, self.config.sigma, self.times,
                          self.config.lindblad_dt, self.tol, ode=ode)

    def check_closed_form_identity(self, series: EnsembleSeries) -> CheckResult:
        """Ensemble averages from the change of measure equal Tr(Ĝρ̂_t) of the master equation."""
        rho0 = self.initial_condition.density()
        n = self.dec.dimension
        observables = (self.fixture.observable, HermitianObservable(np.ones((n, n)) / n))
        worst = 0.0
        for G in observables:
            for t in self.times:
                average = ensemble_average_observable(G, rho0, self.dec, self.config.sigma, float(t), self.tol)
                trace = np.trace(G.matrix @ rho_closed_form(rho0, self.dec, self.config.sigma, float(t),
                                                            self.tol).matrix)
                worst = max(worst, abs(average - complex(trace)))
        return CheckResult.upper_bound('closed_form_identity', worst, IDENTITY_BOUND, IDENTITY_BOUND,
                                       len(observables) * self.times.size)

    def check_strong_order(self, series: EnsembleSeries) -> CheckResult:
        """Halving dt divides the mean-square endpoint error by a factor in [1.5, 3]."""
        n_paths = int(get_section('verification')['order_paths'])
        if reduction_time(self.fixture.pure, self.dec, self.config.sigma, self.tol) is None:
            return CheckResult.not_applicable('strong_order', 'reduction time undefined')
        result = strong_order_check(self.config.sim_config(), self.fixture.pure, self.dec, n_paths, tol=self.tol)
        if result['mse_fine'] <= 0:
            return CheckResult.not_applicable('strong_order', 'no discretization error')
        return CheckResult.equality('strong_order', result['ratio'], 2.25, 0.75, n_paths, detail=result)

    def check_integrator_order(self, series: EnsembleSeries) -> CheckResult:
        return integrator_order_result(self.initial_condition.density(), self.dec, self.config.sigma, self.tol)

    def check_density_validity(self, series: EnsembleSeries) -> CheckResult:
        rho0 = self.initial_condition.density()
        closed, ode = self.lindblad_series
        return CheckResult.composite('density_validity', [
            replace(density_validity_check(closed, rho0, self.dec, self.tol), name='closed_form'),
            replace(density_validity_check(ode, rho0, self.dec, self.tol), name='ode'),
        ])
