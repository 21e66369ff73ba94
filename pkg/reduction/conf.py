"""
Configuration access for the reduction toolkit.

Defaults live here; a Django project may override any section through
``settings.REDUCTION_CONFIG``. The library also works without Django being
configured, in which case only the defaults apply.
"""
import copy
from dataclasses import dataclass, fields, replace
from typing import Any, Dict

DEFAULTS: Dict[str, Dict[str, Any]] = {
    'tolerances': {
        'tol_norm': 1e-10,
        'tol_herm': 1e-10,
        'tol_psd': 1e-10,
        'tol_prob': 1e-12,
        'tol_num': 1e-9,
        'degeneracy_rel': 1e-9,
    },
    'simulation': {
        'sigma': 1.0,
        'dt_tau': 1e-3,
        'horizon_tau': 20.0,
        'collapse_threshold': 1e-12,
        'record_stride': 100,
        'seed': 42,
        'record_states': False,
    },
    'ensemble': {
        'batch_size': 500,
        'workers': 1,
        'noise_chunk': 1024,
    },
    'lindblad': {
        'dt': None,
        't_end': 5.0,
        'n_times': 51,
    },
    'girsanov': {
        'ess_warning': 10.0,
        'q_samples': 100000,
        'q_times_tau': [0.1, 0.5, 1.0],
    },
    'verification': {
        'n_trajectories': 10000,
        'horizon_tau': 100.0,
        'record_stride': 250,
        'n_sigma': 3.0,
        'series_n_sigma': 3.0,
        'lambdas': [1.5, 2.0, 3.0],
        'fid_tol': 1e-6,
        'min_bin': 30,
        'n_bins': 10,
        'ks_alpha': 0.01,
        'chi2_p_min': 1e-3,
        'increment_rel_tol': 0.1,
        'order_paths': 400,
    },
    'output': {
        'csv_trajectories': 100,
    },
    'fixtures': {
        'directory': None,
    },
}


def _user_config() -> Dict[str, Any]:
    try:
        from django.conf import settings
        if settings.configured:
            return getattr(settings, 'REDUCTION_CONFIG', {}) or {}
    except ImportError:
        pass
    return {}


def get_section(name: str) -> Dict[str, Any]:
    """
    Return one configuration section with user overrides applied.

    Args:
        name: Section name, e.g. 'simulation'

    Returns:
        A fresh dict; callers may mutate it freely.
    """
    if name not in DEFAULTS:
        raise KeyError(f"Unknown configuration section: {name}")
    section = copy.deepcopy(DEFAULTS[name])
    section.update(copy.deepcopy(_user_config().get(name, {})))
    return section


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by all operations."""
    tol_norm: float = 1e-10
    tol_herm: float = 1e-10
    tol_psd: float = 1e-10
    tol_prob: float = 1e-12
    tol_num: float = 1e-9
    degeneracy_rel: float = 1e-9

    @classmethod
    def from_settings(cls) -> 'Tolerances':
        section = get_section('tolerances')
        known = {f.name for f in fields(cls)}
        return cls(**{k: float(v) for k, v in section.items() if k in known})

    def with_overrides(self, **overrides: float) -> 'Tolerances':
        return replace(self, **overrides)


def resolve_tolerances(tol: 'Tolerances | None') -> Tolerances:
    return tol if tol is not None else Tolerances.from_settings()
