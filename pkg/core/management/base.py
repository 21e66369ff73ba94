"""
Shared base for the experiment management commands.
"""
import logging
import time

from django.core.management.base import BaseCommand, CommandError

from experiments import BaseExperiment, RunConfig, get_experiment_for_mode
from reduction.exceptions import ConfigurationError, NumericError, ReductionError
from reduction.stats import report_table

logger = logging.getLogger(__name__)

# Exit codes
EXIT_CHECK_FAILED = 1
EXIT_CONFIGURATION = 2
EXIT_NUMERIC = 3


class ExperimentCommand(BaseCommand):
    """
    Resolves a RunConfig from --config and flags, runs the experiment and
    maps its outcome to an exit code: 0 all checks passed, 1 a check failed,
    2 configuration or validation error, 3 numeric error.
    """
    modes = ('sde',)
    default_mode = 'sde'

    def add_arguments(self, parser):
        """Add command arguments."""
        parser.add_argument('--fixture', type=str, help='Built-in fixture name or path to a fixture JSON file')
        parser.add_argument('--config', type=str, help='JSON document of run configuration fields')
        parser.add_argument('--seed', type=int, help='Master seed')
        parser.add_argument('--n-traj', type=int, dest='n_trajectories', help='Number of trajectories')
        parser.add_argument('--dt', type=float, help='Absolute time step (default: dt_tau·τ_R)')
        parser.add_argument('--sigma', type=float, help='Reduction rate parameter σ')
        parser.add_argument('--out', type=str, dest='output_dir', help='Output directory for artifacts')
        parser.add_argument('--workers', type=int, help='Worker processes; never changes the results')
        if len(self.modes) > 1:
            parser.add_argument('--mode', type=str, choices=self.modes,
                                help=f"Run mode (default: {self.default_mode})")
        parser.add_argument('--checks', type=str, help='Comma-separated names of checks to run')
        parser.add_argument('--use-mixture', action='store_true', default=None,
                            help="Start from the fixture's mixture instead of its pure state")
        parser.add_argument(
            '--verbose',
            action='store_true',
            help='Increase output verbosity',
        )

    def config_flags(self, options) -> dict:
        flags = {key: options.get(key) for key in (
            'fixture', 'seed', 'n_trajectories', 'dt', 'sigma', 'output_dir', 'workers', 'use_mixture',
        )}
        if options.get('checks'):
            flags['checks'] = tuple(name.strip() for name in options['checks'].split(',') if name.strip())
        return flags

    def resolve_config(self, options) -> RunConfig:
        """
        Resolve the run config, defaulting to this command's own mode.

        Raises:
            ConfigurationError: If --config asks for a mode this command does not run
        """
        requested = options.get('mode') or RunConfig.read_document(options.get('config')).get('mode')
        if requested is not None and requested not in self.modes:
            raise ConfigurationError(f"Mode {requested} is not run by this command, expected one of "
                                     f"{', '.join(self.modes)}")
        return RunConfig.resolve(options.get('config'), mode=requested or self.default_mode,
                                 **self.config_flags(options))

    def build_experiment(self, config: RunConfig, options) -> BaseExperiment:
        return get_experiment_for_mode(config)

    def handle(self, *args, **options):
        """Execute the command."""
        if options.get('verbose', False):
            for name in ('reduction', 'experiments', __name__):
                logging.getLogger(name).setLevel(logging.INFO)

        start_time = time.time()
        try:
            config = self.resolve_config(options)
            experiment = self.build_experiment(config, options)
            self.stdout.write(f"Running {experiment.label} on {experiment.fixture.name} with seed {config.seed}")
            experiment.run()
        except NumericError as e:
            self.stderr.write(self.style.ERROR(f"Numeric error: {e}"))
            raise CommandError(str(e), returncode=EXIT_NUMERIC)
        except ReductionError as e:
            self.stderr.write(self.style.ERROR(f"Invalid input: {e}"))
            raise CommandError(str(e), returncode=EXIT_CONFIGURATION)

        if experiment.checks:
            self.stdout.write(report_table(experiment.checks))
        self.stdout.write(f"Artifacts written to {experiment.out_dir}")
        self.stdout.write(f"Finished in {time.time() - start_time:.2f} seconds")

        failed = [check.name for check in experiment.checks if not check.passed]
        if failed:
            self.stderr.write(self.style.ERROR(f"Failed checks: {', '.join(failed)}"))
            raise CommandError(f"{len(failed)} check(s) failed", returncode=EXIT_CHECK_FAILED)
        self.stdout.write(self.style.SUCCESS(f"All {len(experiment.checks)} check(s) passed"))
