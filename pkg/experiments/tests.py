import json
import tempfile
from pathlib import Path

from django.test import TestCase, override_settings

from core.models import CheckRecord, ExperimentRun
from experiments import ComparisonExperiment, RunConfig, compare, get_experiment_for_mode
from experiments.girsanov_experiment import ScalarGirsanovExperiment, WeightedGirsanovExperiment
from experiments.lindblad_experiment import LindbladExperiment
from experiments.sde_experiment import SdeExperiment
from experiments.verify_experiment import VerifyAllExperiment
from reduction.exceptions import ConfigurationError
from reduction.fixtures import load_fixture

FAST = {'dt_tau': 1e-2, 'horizon_tau': 5.0, 'record_stride': 50}


class RunConfigTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write_config(self, document):
        path = Path(self.tmp.name) / 'config.json'
        path.write_text(json.dumps(document) if not isinstance(document, str) else document, encoding='utf-8')
        return str(path)

    def test_defaults_come_from_settings(self):
        config = RunConfig.resolve()
        self.assertEqual(config.mode, 'sde')
        self.assertEqual(config.horizon_tau, 20.0)
        self.assertEqual(config.record_stride, 100)

    def test_verify_all_uses_verification_defaults(self):
        config = RunConfig.resolve(mode='verify-all')
        self.assertEqual(config.n_trajectories, 10000)
        self.assertEqual(config.horizon_tau, 100.0)
        self.assertEqual(config.record_stride, 250)

    def test_flags_override_the_config_file(self):
        path = self.write_config({'seed': 5, 'sigma': 2.0})
        config = RunConfig.resolve(path, seed=9, sigma=None)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.sigma, 2.0)

    def test_config_file_errors(self):
        with self.assertRaisesMessage(ConfigurationError, 'not found'):
            RunConfig.resolve(str(Path(self.tmp.name) / 'missing.json'))
        with self.assertRaisesMessage(ConfigurationError, 'invalid JSON'):
            RunConfig.resolve(self.write_config('{"seed": '))
        with self.assertRaisesMessage(ConfigurationError, 'unknown field(s) colour'):
            RunConfig.resolve(self.write_config({'colour': 'blue'}))

    def test_invalid_values(self):
        with self.assertRaisesMessage(ConfigurationError, 'mode must be one of'):
            RunConfig.resolve(mode='annealing')
        with self.assertRaisesMessage(ConfigurationError, 'Unknown check'):
            RunConfig.resolve(checks=('born_frequencies', 'entropy'))
        with self.assertRaisesMessage(ConfigurationError, 'at least 100'):
            RunConfig.resolve(mode='verify-all', n_trajectories=50)
        with self.assertRaises(ConfigurationError):
            RunConfig.resolve(sigma=-1.0)
        with self.assertRaisesMessage(ConfigurationError, 'Invalid config value'):
            RunConfig.resolve(seed='forty-two')

    def test_hash_ignores_runtime_fields(self):
        base = RunConfig.resolve(seed=3)
        moved = RunConfig.resolve(seed=3, workers=4, batch_size=7, output_dir='/tmp/elsewhere')
        self.assertEqual(base.config_hash, moved.config_hash)
        self.assertNotIn('workers', base.to_dict())
        self.assertNotEqual(base.config_hash, RunConfig.resolve(seed=4).config_hash)


class FactoryTests(TestCase):
    def test_modes_map_to_runners(self):
        qubit = load_fixture('qubit')
        expected = {
            'sde': SdeExperiment,
            'girsanov-scalar': ScalarGirsanovExperiment,
            'girsanov-weighted': WeightedGirsanovExperiment,
            'lindblad-closed': LindbladExperiment,
            'lindblad-ode': LindbladExperiment,
            'verify-all': VerifyAllExperiment,
        }
        for mode, runner in expected.items():
            experiment = get_experiment_for_mode(RunConfig.resolve(mode=mode), qubit)
            self.assertIsInstance(experiment, runner)
            self.assertIs(experiment.fixture, qubit)

    def test_unknown_mode(self):
        with self.assertRaisesMessage(ConfigurationError, 'No runner available'):
            get_experiment_for_mode(RunConfig(mode='compare'))


class ExperimentRunTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)

    def run_mode(self, mode, **flags):
        config = RunConfig.resolve(mode=mode, output_dir=str(self.out), **flags)
        return get_experiment_for_mode(config).run()

    def test_sde_run_writes_artifacts_and_history(self):
        experiment = self.run_mode('sde', n_trajectories=20, **FAST)
        self.assertEqual(sorted(experiment.artifacts), ['manifest.json', 'report.json', 'trajectories.csv'])
        lines = (self.out / 'trajectories.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[0], f"# config_hash={experiment.config.config_hash} csv_trajectories=100 seed=42")
        self.assertTrue(lines[1].startswith('traj_id,t,H,V,beta,norm_err,P_1,P_2'))

        manifest = json.loads((self.out / 'manifest.json').read_text(encoding='utf-8'))
        self.assertEqual(manifest['fixture_hash'], load_fixture('qubit').fingerprint)
        self.assertEqual(manifest['config']['n_trajectories'], 20)

        run = ExperimentRun.objects.get()
        self.assertTrue(run.success)
        self.assertEqual(run.config_hash, experiment.config.config_hash)
        self.assertIsNotNone(run.finished_at)

    def test_sde_run_with_born_check(self):
        experiment = self.run_mode('sde', n_trajectories=200, checks=('born_frequencies',),
                                   dt_tau=1e-2, horizon_tau=60.0, record_stride=50)
        self.assertEqual([c.name for c in experiment.checks], ['born_frequencies'])
        self.assertTrue(experiment.passed)
        self.assertEqual(CheckRecord.objects.filter(run__success=True).count(), 1)

    @override_settings(REDUCTION_CONFIG={'output': {'csv_trajectories': 5}})
    def test_trajectory_csv_cap_is_logged_and_recorded(self):
        with self.assertLogs('experiments.base_experiment', 'WARNING') as logs:
            experiment = self.run_mode('sde', n_trajectories=8, **FAST)
        self.assertIn('keeps 5 of 8 trajectories', '\n'.join(logs.output))
        lines = (self.out / 'trajectories.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[0], f"# config_hash={experiment.config.config_hash} csv_trajectories=5 seed=42")
        ids = {line.split(',')[0] for line in lines[2:]}
        self.assertEqual(ids, {str(i) for i in range(5)})

    def test_scalar_girsanov_csv_has_extra_columns(self):
        self.run_mode('girsanov-scalar', n_trajectories=10, **FAST)
        header = (self.out / 'trajectories.csv').read_text(encoding='utf-8').splitlines()[1]
        self.assertTrue(header.endswith('P_1,P_2,wstar,log_lambda_star'))

    def test_weighted_girsanov_checks(self):
        experiment = self.run_mode('girsanov-weighted', q_samples=20000,
                                   checks=('q_martingale', 'weighted_energy'))
        rows = json.loads((self.out / 'weighted_estimates.json').read_text(encoding='utf-8'))
        self.assertEqual(len(rows), 3)
        self.assertEqual([c.name for c in experiment.checks], ['q_martingale', 'weighted_energy'])
        self.assertTrue(experiment.passed)

    def test_lindblad_ode_checks(self):
        experiment = self.run_mode('lindblad-ode', t_end=2.0, n_times=5, lindblad_dt=1e-3)
        self.assertEqual([c.name for c in experiment.checks],
                         ['density_validity', 'lindblad_crosscheck', 'integrator_order'])
        self.assertTrue(experiment.passed)
        densities = json.loads((self.out / 'densities.json').read_text(encoding='utf-8'))
        self.assertEqual([d['time'] for d in densities], [0.0, 0.5, 1.0, 1.5, 2.0])

    def test_missing_mixture_is_recorded_as_an_error(self):
        with self.assertRaisesMessage(ConfigurationError, 'defines no mixture'):
            self.run_mode('lindblad-closed', use_mixture=True)
        run = ExperimentRun.objects.get()
        self.assertFalse(run.success)
        self.assertIn('defines no mixture', run.errors)


class ComparisonTests(TestCase):
    def test_unsupported_pair(self):
        with self.assertRaisesMessage(ConfigurationError, 'Cannot compare sde with lindblad-ode'):
            ComparisonExperiment(RunConfig.resolve(), 'sde', 'lindblad-ode')

    def test_closed_form_against_integrator(self):
        with tempfile.TemporaryDirectory() as directory:
            config = RunConfig.resolve(mode='lindblad-closed', t_end=2.0, n_times=5, lindblad_dt=1e-3,
                                       output_dir=directory)
            check = compare('lindblad-ode', 'lindblad-closed', config)
            manifest = json.loads((Path(directory) / 'manifest.json').read_text(encoding='utf-8'))
        self.assertEqual(check.name, 'lindblad-ode_vs_lindblad-closed')
        self.assertTrue(check.passed)
        self.assertEqual(manifest['compared_modes'], ['lindblad-ode', 'lindblad-closed'])
