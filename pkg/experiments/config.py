"""
Run configuration for experiments.

Precedence, lowest first: built-in defaults, ``settings.REDUCTION_CONFIG``,
the ``--config`` JSON document, explicit command-line flags.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from reduction.conf import get_section
from reduction.exceptions import ConfigurationError
from reduction.fixtures import canonical_json
from reduction.sde import SimConfig

logger = logging.getLogger(__name__)

MODES = ('sde', 'girsanov-scalar', 'girsanov-weighted', 'lindblad-closed', 'lindblad-ode', 'verify-all')

CHECKS = (
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
    'girsanov_equivalence',
    'q_martingale',
    'weighted_energy',
    'lindblad_ensemble',
    'lindblad_crosscheck',
    'closed_form_identity',
    'strong_order',
    'integrator_order',
    'density_validity',
)

# Fields that never change results and so stay out of artifacts and the hash
_RUNTIME_ONLY = ('output_dir', 'workers', 'batch_size')


@dataclass(frozen=True)
class RunConfig:
    fixture: str = 'qubit'
    mode: str = 'sde'
    sigma: float = 1.0
    dt: Optional[float] = None
    dt_tau: float = 1e-3
    horizon_tau: float = 20.0
    horizon: Optional[float] = None
    collapse_threshold: float = 1e-12
    record_stride: int = 100
    seed: int = 42
    record_states: bool = False
    n_trajectories: int = 1000
    use_mixture: bool = False
    checks: Tuple[str, ...] = ()
    lambdas: Tuple[float, ...] = (1.5, 2.0, 3.0)
    n_sigma: Optional[float] = None
    t_end: float = 5.0
    n_times: int = 51
    lindblad_dt: Optional[float] = None
    q_samples: int = 100000
    q_times_tau: Tuple[float, ...] = (0.1, 0.5, 1.0)
    output_dir: Optional[str] = None
    workers: int = 1
    batch_size: int = 500

    @classmethod
    def defaults_for(cls, mode: str) -> Dict[str, Any]:
        """Layered defaults from settings; verify-all uses the verification section."""
        simulation = get_section('simulation')
        ensemble = get_section('ensemble')
        lindblad = get_section('lindblad')
        girsanov = get_section('girsanov')
        verification = get_section('verification')
        values = {k: v for k, v in simulation.items() if k in cls.__dataclass_fields__}
        values.update({
            'workers': ensemble['workers'],
            'batch_size': ensemble['batch_size'],
            't_end': lindblad['t_end'],
            'n_times': lindblad['n_times'],
            'lindblad_dt': lindblad['dt'],
            'q_samples': girsanov['q_samples'],
            'q_times_tau': girsanov['q_times_tau'],
            'lambdas': verification['lambdas'],
        })
        if mode == 'verify-all':
            values.update({
                'n_trajectories': verification['n_trajectories'],
                'horizon_tau': verification['horizon_tau'],
                'record_stride': verification['record_stride'],
            })
        return values

    @classmethod
    def read_document(cls, config_path: Optional[str]) -> Dict[str, Any]:
        """
        Load a ``--config`` JSON document; no path gives an empty document.

        Raises:
            ConfigurationError: On a missing or unreadable file, or unknown fields
        """
        if not config_path:
            return {}
        path = Path(config_path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {config_path}")
        try:
            document = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{config_path}: invalid JSON ({e})")
        if not isinstance(document, dict):
            raise ConfigurationError(f"{config_path}: expected a JSON object")
        unknown = sorted(set(document) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigurationError(f"{config_path}: unknown field(s) {', '.join(unknown)}")
        return document

    @classmethod
    def resolve(cls, config_path: Optional[str] = None, **flags) -> 'RunConfig':
        """
        Build a validated config from the settings layers, a JSON file and flags.

        Args:
            config_path: Optional path to a JSON document of RunConfig fields
            **flags: Explicit overrides; None values are ignored

        Raises:
            ConfigurationError: On unreadable files, unknown fields or invalid values
        """
        document = cls.read_document(config_path)
        flags = {k: v for k, v in flags.items() if v is not None}
        mode = flags.get('mode', document.get('mode', cls.mode))
        values = cls.defaults_for(mode)
        values.update(document)
        values.update(flags)
        try:
            config = cls(**{k: v for k, v in values.items() if k in cls.__dataclass_fields__})
        except TypeError as e:
            raise ConfigurationError(str(e))
        config = config.normalized().validate()
        logger.info(f"Resolved {config.mode} config for {config.fixture}, hash {config.config_hash[:12]}")
        return config

    def normalized(self) -> 'RunConfig':
        try:
            return replace(
                self,
                sigma=float(self.sigma),
                dt=float(self.dt) if self.dt is not None else None,
                horizon=float(self.horizon) if self.horizon is not None else None,
                record_stride=int(self.record_stride),
                seed=int(self.seed),
                n_trajectories=int(self.n_trajectories),
                checks=tuple(str(c) for c in self.checks),
                lambdas=tuple(float(x) for x in self.lambdas),
                q_times_tau=tuple(float(x) for x in self.q_times_tau),
                output_dir=str(self.output_dir) if self.output_dir is not None else None,
                workers=int(self.workers),
                batch_size=int(self.batch_size),
            )
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid config value: {e}")

    def validate(self) -> 'RunConfig':
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {', '.join(MODES)}, got '{self.mode}'")
        unknown = [c for c in self.checks if c not in CHECKS]
        if unknown:
            raise ConfigurationError(f"Unknown check(s): {', '.join(unknown)}")
        if self.n_trajectories < 1:
            raise ConfigurationError(f"n_trajectories must be at least 1, got {self.n_trajectories}")
        if self.mode == 'verify-all' and self.n_trajectories < 100:
            raise ConfigurationError("verify-all needs n_trajectories of at least 100")
        if any(x <= 0 for x in self.lambdas):
            raise ConfigurationError("lambdas must be positive")
        if self.workers < 1 or self.batch_size < 1:
            raise ConfigurationError("workers and batch_size must be positive")
        if self.n_sigma is not None and self.n_sigma <= 0:
            raise ConfigurationError("n_sigma must be positive")
        if self.t_end <= 0 or self.n_times < 2:
            raise ConfigurationError("t_end must be positive and n_times at least 2")
        if self.mode == 'girsanov-weighted' and (self.q_samples < 2 or not self.q_times_tau):
            raise ConfigurationError("girsanov-weighted needs q_samples ≥ 2 and at least one q time")
        self.sim_config()
        return self

    def sim_config(self, **overrides) -> SimConfig:
        values = dict(
            sigma=self.sigma, dt=self.dt, dt_tau=self.dt_tau, horizon_tau=self.horizon_tau,
            horizon=self.horizon, collapse_threshold=self.collapse_threshold,
            record_stride=self.record_stride, seed=self.seed, record_states=self.record_states,
        )
        values.update(overrides)
        return SimConfig(**values).validate()

    def to_dict(self) -> Dict[str, Any]:
        """Result-relevant fields, as embedded in artifacts."""
        values = asdict(self)
        for key in _RUNTIME_ONLY:
            values.pop(key)
        values['checks'] = list(self.checks)
        values['lambdas'] = list(self.lambdas)
        values['q_times_tau'] = list(self.q_times_tau)
        return values

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode('utf-8')).hexdigest()
