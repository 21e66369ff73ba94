"""
Base experiment class for all mode runners.
"""
import logging
import platform
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional

import django
import numpy as np
import scipy
from django.core.exceptions import AppRegistryNotReady, ImproperlyConfigured
from django.db import DatabaseError
from django.utils import timezone

from reduction.conf import Tolerances, get_section
from reduction.exceptions import ConfigurationError, ReductionError
from reduction.fixtures import Fixture, load_fixture
from reduction.io import write_json
from reduction.sde import InitialCondition
from reduction.stats import NOT_APPLICABLE, CheckResult, family_wise_error

from .config import RunConfig

logger = logging.getLogger(__name__)

_HISTORY_ERRORS = (DatabaseError, ImproperlyConfigured, AppRegistryNotReady, ImportError)


class BaseExperiment(ABC):
    """
    Abstract base class for experiment runners.

    Subclasses implement ``execute``, which computes results, writes its own
    artifacts and appends to ``self.checks``. ``run`` wraps it with logging,
    the manifest and report files, and the run-history record.
    """

    def __init__(self, config: RunConfig, fixture: Optional[Fixture] = None):
        self.config = config
        self.label = config.mode
        self.tol = Tolerances.from_settings()
        self.fixture = fixture if fixture is not None else load_fixture(config.fixture, self.tol)
        self.out_dir = Path(config.output_dir) if config.output_dir else Path('runs') / config.mode
        self.checks: List[CheckResult] = []
        self.errors: List[str] = []
        self.diagnostics: Dict[str, Any] = {}
        self.artifacts: List[str] = []
        self.record = None

    @property
    def initial_condition(self) -> InitialCondition:
        if self.config.use_mixture:
            if self.fixture.mixture is None:
                raise ConfigurationError(f"Fixture '{self.fixture.name}' defines no mixture")
            return self.fixture.mixture
        return self.fixture.pure

    @property
    def dec(self):
        return self.fixture.decomposition

    def requested(self, *names: str) -> List[str]:
        """Checks to run: the configured selection, or ``names`` when none was given."""
        selected = self.config.checks or names
        ignored = [name for name in selected if name not in names]
        if ignored:
            logger.warning(f"Checks not available in {self.config.mode} mode: {', '.join(ignored)}")
        return [name for name in names if name in selected]

    def run(self) -> 'BaseExperiment':
        """
        Main method. Orchestrates the experiment and writes the report.

        Raises:
            ReductionError: Re-raised after being recorded in the run history
        """
        self.record = self._open_record()
        try:
            logger.info(f"Starting {self.label} run on {self.fixture.name}, seed {self.config.seed}")
            self.execute()
            self.write_reports()
            failed = [c.name for c in self.checks if not c.passed]
            if failed:
                logger.warning(f"Checks failed: {', '.join(failed)}")
            logger.info(f"Finished {self.label} run with {len(self.checks)} checks")
        except ReductionError as e:
            error_msg = f"Error during {self.label} run on {self.fixture.name}: {e}"
            logger.error(error_msg)
            self.errors.append(error_msg)
            raise
        finally:
            self._close_record()
        return self

    @abstractmethod
    def execute(self) -> None:
        """Compute results, write mode artifacts and collect checks."""

    @property
    def passed(self) -> bool:
        return not self.errors and all(check.passed for check in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def artifact_path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.out_dir / name

    def csv_rows(self, n_trajectories: int) -> int:
        """Number of trajectories written to CSV, capped at output.csv_trajectories."""
        cap = int(get_section('output')['csv_trajectories'])
        if n_trajectories > cap:
            logger.warning(f"Trajectory CSV keeps {cap} of {n_trajectories} trajectories "
                           f"(output.csv_trajectories), {n_trajectories - cap} dropped")
        return min(n_trajectories, cap)

    @property
    def csv_metadata(self) -> Dict[str, Any]:
        return {'config_hash': self.config.config_hash, 'seed': self.config.seed,
                'csv_trajectories': int(get_section('output')['csv_trajectories'])}

    def manifest(self) -> Dict[str, Any]:
        return {
            'mode': self.config.mode,
            'fixture': self.fixture.name,
            'fixture_hash': self.fixture.fingerprint,
            'config': self.config.to_dict(),
            'config_hash': self.config.config_hash,
            'seed': self.config.seed,
            'artifacts': sorted(self.artifacts),
            'versions': {
                'python': platform.python_version(),
                'numpy': np.__version__,
                'scipy': scipy.__version__,
                'django': django.get_version(),
            },
        }

    def report(self) -> Dict[str, Any]:
        applicable = [c for c in self.checks if c.kind != NOT_APPLICABLE]
        return {
            'manifest': self.manifest(),
            'checks': [check.to_dict() for check in self.checks],
            'passed': self.passed,
            'family_wise_error': family_wise_error(len(applicable), self.config.n_sigma) if applicable else 0.0,
            'diagnostics': self.diagnostics,
        }

    def write_reports(self) -> None:
        self.artifact_path('manifest.json')
        self.artifact_path('report.json')
        write_json(self.out_dir / 'manifest.json', self.manifest())
        write_json(self.out_dir / 'report.json', self.report())
        logger.info(f"Wrote report to {self.out_dir / 'report.json'}")

    def _open_record(self):
        try:
            from core.models import ExperimentRun
            return ExperimentRun.objects.create(
                mode=self.label,
                fixture=self.fixture.name,
                fixture_hash=self.fixture.fingerprint,
                seed=self.config.seed,
                config_hash=self.config.config_hash,
                n_trajectories=self.config.n_trajectories,
                output_dir=str(self.out_dir),
            )
        except _HISTORY_ERRORS as e:
            logger.warning(f"Run history unavailable, continuing without it: {e}")
            return None

    def _close_record(self) -> None:
        if self.record is None:
            return
        try:
            from core.models import CheckRecord
            applicable = [c for c in self.checks if c.kind != NOT_APPLICABLE]
            self.record.checks_passed = sum(1 for c in applicable if c.passed)
            self.record.checks_failed = sum(1 for c in applicable if not c.passed)
            self.record.errors = '\n'.join(self.errors)
            self.record.success = self.passed
            self.record.finished_at = timezone.now()
            self.record.save()
            CheckRecord.objects.bulk_create([
                CheckRecord(run=self.record, **_record_fields(check.to_dict())) for check in applicable
            ])
        except _HISTORY_ERRORS as e:
            logger.warning(f"Could not update run history: {e}")


def _record_fields(values: Dict[str, Any]) -> Dict[str, Any]:
    return {
        'name': values['name'],
        'statistic': values['statistic'],
        'target': values['target'],
        'tolerance': values['tolerance'],
        'n_samples': values['n_samples'],
        'passed': values['passed'],
        'p_value': values['p_value'],
    }
