"""
Cross-validation of two modes on the same fixture and seed.
"""
import logging
import math
from dataclasses import replace
from typing import Any, Dict, Optional

import numpy as np

from reduction.conf import get_section
from reduction.exceptions import ConfigurationError
from reduction.fixtures import Fixture
from reduction.sde import reduction_time
from reduction.stats import CheckResult, ks_two_sample

from .config import RunConfig
from .girsanov_experiment import simulate_scalar
from .lindblad_experiment import crosscheck
from .sde_experiment import SdeExperiment

logger = logging.getLogger(__name__)

# Matched comparison times in units of τ_R
MATCHED_TIMES_TAU = (0.5, 1.0, 2.0)

COMPARISONS = {
    frozenset(('sde', 'girsanov-scalar')): 'compare_laws',
    frozenset(('lindblad-closed', 'lindblad-ode')): 'compare_lindblad',
    frozenset(('sde', 'lindblad-closed')): 'compare_ensemble_density',
}


class ComparisonExperiment(SdeExperiment):
    """
    Runs two representations of the same dynamics and compares them.

    Supported pairs, in either order: sde with girsanov-scalar (laws of H_t),
    lindblad-closed with lindblad-ode (integrator against closed form) and
    sde with lindblad-closed (ensemble density).
    """

    def __init__(self, config: RunConfig, mode_a: str, mode_b: str, fixture: Optional[Fixture] = None):
        pair = frozenset((mode_a, mode_b))
        if pair not in COMPARISONS:
            supported = '; '.join(' vs '.join(sorted(p)) for p in COMPARISONS)
            raise ConfigurationError(f"Cannot compare {mode_a} with {mode_b}; supported: {supported}")
        super().__init__(config, fixture)
        self.modes = (mode_a, mode_b)
        self.label = f"{mode_a}_vs_{mode_b}"

    def manifest(self) -> Dict[str, Any]:
        manifest = super().manifest()
        manifest['mode'] = 'compare'
        manifest['compared_modes'] = list(self.modes)
        return manifest

    def execute(self) -> None:
        check = getattr(self, COMPARISONS[frozenset(self.modes)])()
        self.add_check(replace(check, name=self.label))

    def compare_laws(self) -> CheckResult:
        """KS and mean comparisons of H_t and V_t at matched multiples of τ_R."""
        tau_r = reduction_time(self.initial_condition, self.dec, self.config.sigma, self.tol)
        if tau_r is None:
            return CheckResult.not_applicable(self.label, 'reduction time undefined')
        series = self.simulate()
        indices = [series.time_index(factor * tau_r) for factor in MATCHED_TIMES_TAU]
        scalar = simulate_scalar(self.initial_condition, self.dec, self.config, self.tol,
                                 horizon=float(series.times[max(indices)]))
        n_sigma = float(self.config.n_sigma if self.config.n_sigma is not None
                        else get_section('verification')['series_n_sigma'])
        subchecks = []
        for factor, j in zip(MATCHED_TIMES_TAU, indices):
            k = int(np.argmin(np.abs(scalar.times - series.times[j])))
            subchecks.append(ks_two_sample(series.H[:, j], scalar.H[:, k], f"ks_H_{factor:g}tau"))
            for key in ('H', 'V'):
                a, b = getattr(series, key)[:, j], getattr(scalar, key)[:, k]
                se = math.sqrt(np.var(a, ddof=1) / a.size + np.var(b, ddof=1) / b.size)
                subchecks.append(CheckResult.equality(
                    f"mean_{key}_{factor:g}tau", np.mean(a), np.mean(b), n_sigma * se + self.tol.tol_num,
                    min(a.size, b.size), detail={'t': float(series.times[j])}))
        return CheckResult.composite(self.label, subchecks)

    def compare_lindblad(self) -> CheckResult:
        times = np.linspace(0.0, self.config.t_end, self.config.n_times)
        return crosscheck(self.initial_condition.density(), self.dec, self.config.sigma, times,
                          self.config.lindblad_dt, self.tol)

    def compare_ensemble_density(self) -> CheckResult:
        series = self.simulate(record_states=True)
        return self.check_lindblad_ensemble(series)


def compare(mode_a: str, mode_b: str, config: RunConfig, fixture: Optional[Fixture] = None) -> CheckResult:
    """
    Run a comparison and return its summary check.

    Raises:
        ConfigurationError: For an unsupported pair of modes
    """
    experiment = ComparisonExperiment(config, mode_a, mode_b, fixture).run()
    return experiment.checks[0]
