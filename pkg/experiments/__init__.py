"""
Experiment factory module.
"""
from typing import Optional

from reduction.exceptions import ConfigurationError
from reduction.fixtures import Fixture

from .base_experiment import BaseExperiment
from .compare import ComparisonExperiment, compare
from .config import RunConfig
from .girsanov_experiment import ScalarGirsanovExperiment, WeightedGirsanovExperiment
from .lindblad_experiment import LindbladExperiment
from .sde_experiment import SdeExperiment
from .verify_experiment import VerifyAllExperiment

__all__ = ['BaseExperiment', 'ComparisonExperiment', 'RunConfig', 'compare', 'get_experiment_for_mode']


def get_experiment_for_mode(config: RunConfig, fixture: Optional[Fixture] = None) -> BaseExperiment:
    """
    Factory function to get the runner for a configured mode.

    Args:
        config: Resolved run configuration
        fixture: Already loaded fixture; loaded from ``config.fixture`` when omitted

    Returns:
        Experiment instance for the given mode

    Raises:
        ConfigurationError: If no runner is available for the mode
    """
    # Map modes to runner classes
    experiment_map = {
        'sde': SdeExperiment,
        'girsanov-scalar': ScalarGirsanovExperiment,
        'girsanov-weighted': WeightedGirsanovExperiment,
        'lindblad-closed': LindbladExperiment,
        'lindblad-ode': LindbladExperiment,
        'verify-all': VerifyAllExperiment,
    }

    if config.mode in experiment_map:
        return experiment_map[config.mode](config, fixture)

    raise ConfigurationError(f"No runner available for mode: {config.mode}")
