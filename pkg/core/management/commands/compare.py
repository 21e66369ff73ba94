"""
Management command to cross-validate two modes.
"""
from core.management.base import ExperimentCommand
from experiments import ComparisonExperiment, RunConfig
from experiments.config import MODES


class Command(ExperimentCommand):
    """
    Django management command to compare two representations of the same
    dynamics on one fixture and seed.
    """
    help = 'Compare two modes: sde/girsanov-scalar, lindblad-closed/lindblad-ode or sde/lindblad-closed'
    modes = ()

    def add_arguments(self, parser):
        parser.add_argument('mode_a', type=str, choices=MODES, help='First mode')
        parser.add_argument('mode_b', type=str, choices=MODES, help='Second mode')
        super().add_arguments(parser)

    def resolve_config(self, options) -> RunConfig:
        return RunConfig.resolve(options.get('config'), mode=options['mode_a'], **self.config_flags(options))

    def build_experiment(self, config, options):
        return ComparisonExperiment(config, options['mode_a'], options['mode_b'])
