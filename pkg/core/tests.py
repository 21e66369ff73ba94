import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from core.models import CheckRecord, ExperimentRun


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def write_config(self, **values):
        path = self.root / 'config.json'
        path.write_text(json.dumps(values), encoding='utf-8')
        return str(path)

    def call(self, name, *args, **options):
        out, err = StringIO(), StringIO()
        call_command(name, *args, stdout=out, stderr=err, **options)
        return out.getvalue()


class SimulateCommandTests(CommandTestCase):
    def test_results_do_not_depend_on_worker_count(self):
        config = self.write_config(dt_tau=1e-2, horizon_tau=5.0, record_stride=50, batch_size=5)
        for workers in (1, 2):
            self.call('simulate', config=config, n_trajectories=20, seed=7, workers=workers,
                      output_dir=str(self.root / f"w{workers}"))
        for name in ('report.json', 'manifest.json', 'trajectories.csv'):
            self.assertEqual((self.root / 'w1' / name).read_bytes(), (self.root / 'w2' / name).read_bytes())
        self.assertEqual(ExperimentRun.objects.count(), 2)

    def test_born_check_in_report(self):
        config = self.write_config(dt_tau=1e-2, horizon_tau=60.0, record_stride=50)
        output = self.call('simulate', config=config, n_trajectories=200, checks='born_frequencies',
                           output_dir=str(self.root))
        self.assertIn('born_frequencies', output)
        report = json.loads((self.root / 'report.json').read_text(encoding='utf-8'))
        self.assertTrue(report['passed'])
        expected = report['checks'][0]['detail']['expected']
        self.assertAlmostEqual(expected[0], 0.25)
        self.assertAlmostEqual(expected[1], 0.75)
        self.assertEqual(report['manifest']['mode'], 'sde')

    def test_failed_check_exits_with_one(self):
        # 201 trajectories cannot reproduce a probability of 0.25 exactly
        config = self.write_config(dt_tau=1e-2, horizon_tau=60.0, record_stride=50, n_sigma=1e-6)
        with self.assertRaises(CommandError) as raised:
            self.call('simulate', config=config, n_trajectories=201, checks='born_frequencies',
                      output_dir=str(self.root))
        self.assertEqual(raised.exception.returncode, 1)
        run = ExperimentRun.objects.get()
        self.assertFalse(run.success)
        self.assertEqual(run.checks_failed, 1)
        self.assertEqual(CheckRecord.objects.filter(run=run, passed=False).count(), 1)

    def test_missing_fixture_exits_with_two(self):
        with self.assertRaises(CommandError) as raised:
            self.call('simulate', fixture=str(self.root / 'absent.json'), output_dir=str(self.root))
        self.assertEqual(raised.exception.returncode, 2)

    def test_config_mode_owned_by_another_command_exits_with_two(self):
        config = self.write_config(mode='lindblad-ode', t_end=1.0, n_times=3)
        with self.assertRaises(CommandError) as raised:
            self.call('simulate', config=config, output_dir=str(self.root))
        self.assertEqual(raised.exception.returncode, 2)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_config_mode_owned_by_the_command_is_used(self):
        config = self.write_config(mode='girsanov-weighted', q_samples=20000, q_times_tau=[0.1])
        self.call('exact', config=config, output_dir=str(self.root))
        manifest = json.loads((self.root / 'manifest.json').read_text(encoding='utf-8'))
        self.assertEqual(manifest['mode'], 'girsanov-weighted')
        self.assertTrue((self.root / 'weighted_estimates.json').is_file())

    def test_unterminated_ensemble_exits_with_two(self):
        config = self.write_config(dt_tau=1e-2, horizon_tau=1.0, record_stride=50)
        with self.assertRaises(CommandError) as raised:
            self.call('simulate', config=config, n_trajectories=100, checks='born_frequencies',
                      output_dir=str(self.root))
        self.assertEqual(raised.exception.returncode, 2)


class ModeCommandTests(CommandTestCase):
    def test_lindblad_defaults_to_closed_form(self):
        config = self.write_config(t_end=1.0, n_times=3)
        self.call('lindblad', config=config, fixture='spin-pair', output_dir=str(self.root))
        manifest = json.loads((self.root / 'manifest.json').read_text(encoding='utf-8'))
        self.assertEqual(manifest['mode'], 'lindblad-closed')
        self.assertEqual(manifest['artifacts'], ['densities.json', 'manifest.json', 'report.json'])

    def test_exact_weighted_mode(self):
        config = self.write_config(q_samples=20000, q_times_tau=[0.1])
        self.call('exact', mode='girsanov-weighted', config=config, output_dir=str(self.root))
        self.assertTrue((self.root / 'weighted_estimates.json').is_file())

    def test_compare_rejects_unsupported_pairs(self):
        with self.assertRaises(CommandError) as raised:
            self.call('compare', 'sde', 'lindblad-ode', output_dir=str(self.root))
        self.assertEqual(raised.exception.returncode, 2)

    def test_compare_master_equation_solvers(self):
        config = self.write_config(t_end=1.0, n_times=3, lindblad_dt=1e-3)
        output = self.call('compare', 'lindblad-closed', 'lindblad-ode', config=config, output_dir=str(self.root))
        self.assertIn('All 1 check(s) passed', output)


class VerifyAllCommandTests(CommandTestCase):
    def run_command(self, name, *args, **options):
        try:
            self.call(name, *args, **options)
        except CommandError as e:
            return e.returncode
        return 0

    def test_desk_scale_report_does_not_depend_on_worker_count(self):
        config = self.write_config(
            n_trajectories=100, dt_tau=1e-2, horizon_tau=100.0, record_stride=250, batch_size=30,
            t_end=1.0, n_times=5, lindblad_dt=1e-3, q_samples=2000, q_times_tau=[0.5],
            checks=['born_frequencies', 'energy_martingale', 'doob_bounds', 'mixed_state_luders',
                    'girsanov_equivalence', 'q_martingale', 'lindblad_crosscheck', 'closed_form_identity'],
        )
        codes = {}
        for workers in (1, 2):
            codes[workers] = self.run_command('verify_all', config=config, seed=11, workers=workers,
                                              output_dir=str(self.root / f"w{workers}"))
        self.assertEqual((self.root / 'w1' / 'report.json').read_bytes(),
                         (self.root / 'w2' / 'report.json').read_bytes())
        report = json.loads((self.root / 'w1' / 'report.json').read_text(encoding='utf-8'))
        self.assertEqual(len(report['checks']), 8)
        self.assertEqual(codes[1], codes[2])
        self.assertEqual(codes[1], 0 if report['passed'] else 1)
        runs = ExperimentRun.objects.filter(mode='verify-all')
        self.assertEqual(runs.count(), 2)
        self.assertEqual({run.success for run in runs}, {report['passed']})

    def test_compare_full_sde_with_scalar_equation(self):
        config = self.write_config(n_trajectories=200, dt_tau=1e-2, horizon_tau=3.0, record_stride=10)
        code = self.run_command('compare', 'sde', 'girsanov-scalar', config=config, seed=5,
                                output_dir=str(self.root))
        report = json.loads((self.root / 'report.json').read_text(encoding='utf-8'))
        self.assertEqual(report['manifest']['compared_modes'], ['sde', 'girsanov-scalar'])
        check = report['checks'][0]
        self.assertEqual(check['name'], 'sde_vs_girsanov-scalar')
        names = [sub['name'] for sub in check['detail']['subchecks']]
        self.assertEqual(names[:3], ['ks_H_0.5tau', 'mean_H_0.5tau', 'mean_V_0.5tau'])
        self.assertIn('ks_H_2tau', names)
        self.assertEqual(code, 0 if report['passed'] else 1)


class HistoryCommandTests(CommandTestCase):
    def create_run(self, success):
        return ExperimentRun.objects.create(mode='sde', fixture='qubit', seed=42, config_hash='0' * 64,
                                            success=success)

    def test_purge_runs(self):
        run = self.create_run(True)
        CheckRecord.objects.create(run=run, name='born_frequencies', passed=True)
        self.create_run(False)
        output = self.call('purge_runs', keep_failed=True)
        self.assertIn('Deleted 1 runs and 1 check records', output)
        self.assertEqual(ExperimentRun.objects.count(), 1)
        self.call('purge_runs')
        self.assertEqual(ExperimentRun.objects.count(), 0)

    def test_list_fixtures(self):
        output = self.call('list_fixtures')
        for name in ('qubit', 'spin-pair', 'qutrit'):
            self.assertIn(name, output)
        self.assertIn('N=4 D=3', output)
        self.assertIn('mixture=yes', output)
