"""
Observable/state fixtures.

A fixture is a JSON object with ``dimension``, either ``matrix`` (row-major
array of [re, im] pairs) or ``spectral`` ({``eigenvalues``, ``projectors``}),
a pure ``state`` (array of [re, im]) and optionally a ``mixture`` list of
{``weight``, ``state``} members.
"""
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .conf import Tolerances, get_section, resolve_tolerances
from .exceptions import ConfigurationError, InputValidationError
from .hilbert import (
    HermitianObservable,
    SpectralDecomposition,
    StateVector,
    moments,
    spectral_decompose,
)
from .sde import InitialCondition

logger = logging.getLogger(__name__)

_HALF = [0.5, 0.0]
_ROOT_HALF = [1.0 / math.sqrt(2.0), 0.0]
_ZERO = [0.0, 0.0]

BUILTIN_FIXTURES: Dict[str, Dict[str, Any]] = {
    'qubit': {
        'description': 'Two-level system diag(0, 1) in the state (√0.25, √0.75)',
        'dimension': 2,
        'matrix': [[_ZERO, _ZERO], [_ZERO, [1.0, 0.0]]],
        'state': [[0.5, 0.0], [math.sqrt(0.75), 0.0]],
    },
    'spin-pair': {
        'description': 'Two noninteracting spin-½ particles, spectrum diag(-1, 0, 0, 1), uniform state',
        'dimension': 4,
        'matrix': [
            [[-1.0, 0.0], _ZERO, _ZERO, _ZERO],
            [_ZERO, _ZERO, _ZERO, _ZERO],
            [_ZERO, _ZERO, _ZERO, _ZERO],
            [_ZERO, _ZERO, _ZERO, [1.0, 0.0]],
        ],
        'state': [_HALF, _HALF, _HALF, _HALF],
        'mixture': [
            {'weight': 0.5, 'state': [_HALF, _HALF, _HALF, _HALF]},
            {'weight': 0.5, 'state': [_ROOT_HALF, _ROOT_HALF, _ZERO, _ZERO]},
        ],
    },
}


@dataclass(frozen=True, eq=False)
class Fixture:
    name: str
    document: Dict[str, Any]
    observable: HermitianObservable
    decomposition: SpectralDecomposition
    state: StateVector
    mixture: Optional[InitialCondition] = None
    description: str = ''

    @property
    def fingerprint(self) -> str:
        return fixture_hash(self.document)

    @property
    def pure(self) -> InitialCondition:
        return InitialCondition.pure(self.state)

    def summary(self, tol: Optional[Tolerances] = None) -> Dict[str, Any]:
        stats = moments(self.state, self.decomposition, tol=tol)
        return {
            'name': self.name,
            'dimension': self.decomposition.dimension,
            'levels': self.decomposition.n_levels,
            'H0': stats.H,
            'V0': stats.V,
            'mixture': self.mixture is not None,
            'description': self.description,
        }


def canonical_json(document: Any) -> str:
    return json.dumps(document, sort_keys=True, separators=(',', ':'), ensure_ascii=True)


def fixture_hash(document: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form."""
    return hashlib.sha256(canonical_json(document).encode('utf-8')).hexdigest()


def _complex_vector(raw, field: str) -> np.ndarray:
    try:
        pairs = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as e:
        raise InputValidationError(f"{field}: expected an array of [re, im] pairs ({e})")
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise InputValidationError(f"{field}: expected an array of [re, im] pairs, got shape {pairs.shape}")
    return pairs[:, 0] + 1j * pairs[:, 1]


def _complex_matrix(raw, dimension: int, field: str) -> np.ndarray:
    try:
        values = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as e:
        raise InputValidationError(f"{field}: expected rows of [re, im] pairs ({e})")
    if values.shape == (dimension * dimension, 2):
        values = values.reshape(dimension, dimension, 2)
    if values.shape != (dimension, dimension, 2):
        raise InputValidationError(f"{field}: expected a {dimension}x{dimension} matrix of [re, im] pairs")
    return values[..., 0] + 1j * values[..., 1]


def parse_fixture(document: Dict[str, Any], name: str = 'fixture',
                  tol: Optional[Tolerances] = None) -> Fixture:
    """
    Build and validate a fixture from its JSON document.

    Raises:
        InputValidationError: On any malformed or inconsistent field
    """
    tol = resolve_tolerances(tol)
    if not isinstance(document, dict):
        raise InputValidationError(f"{name}: fixture must be a JSON object")
    try:
        dimension = int(document['dimension'])
    except (KeyError, TypeError, ValueError):
        raise InputValidationError(f"{name}: missing or invalid field 'dimension'")
    if dimension < 1:
        raise InputValidationError(f"{name}: dimension must be positive")

    if 'matrix' in document:
        observable = HermitianObservable(_complex_matrix(document['matrix'], dimension, f"{name}.matrix"))
        decomposition = spectral_decompose(observable, tol=tol)
    elif 'spectral' in document:
        spectral = document['spectral']
        try:
            eigenvalues = spectral['eigenvalues']
            projectors = [_complex_matrix(p, dimension, f"{name}.spectral.projectors")
                          for p in spectral['projectors']]
        except (KeyError, TypeError):
            raise InputValidationError(f"{name}: 'spectral' needs 'eigenvalues' and 'projectors'")
        decomposition = SpectralDecomposition.from_spectral(eigenvalues, projectors, tol)
        observable = decomposition.observable()
    else:
        raise InputValidationError(f"{name}: fixture needs either 'matrix' or 'spectral'")

    if 'state' not in document:
        raise InputValidationError(f"{name}: missing field 'state'")
    state = StateVector(_complex_vector(document['state'], f"{name}.state")).validate_normalized(tol)
    if state.dimension != dimension:
        raise InputValidationError(f"{name}.state: dimension {state.dimension}, expected {dimension}")

    mixture = None
    if document.get('mixture'):
        try:
            pairs = [(float(m['weight']), StateVector(_complex_vector(m['state'], f"{name}.mixture.state")))
                     for m in document['mixture']]
        except (KeyError, TypeError):
            raise InputValidationError(f"{name}: mixture members need 'weight' and 'state'")
        mixture = InitialCondition.mixture(pairs).validate(tol)
        if mixture.dimension != dimension:
            raise InputValidationError(f"{name}.mixture: dimension {mixture.dimension}, expected {dimension}")

    return Fixture(name, document, observable, decomposition, state, mixture, document.get('description', ''))


def _search_paths(reference: str) -> List[Path]:
    paths = [Path(reference)]
    directory = get_section('fixtures').get('directory')
    if directory and not os.path.isabs(reference):
        paths.append(Path(directory) / reference)
        paths.append(Path(directory) / f"{reference}.json")
    return paths


def load_fixture(reference: str, tol: Optional[Tolerances] = None) -> Fixture:
    """
    Load a fixture by built-in name or from a JSON file.

    Relative paths are also looked up in the configured fixture directory.

    Raises:
        ConfigurationError: If no file exists at the given path
        InputValidationError: If the file is not a valid fixture
    """
    if reference in BUILTIN_FIXTURES:
        return parse_fixture(BUILTIN_FIXTURES[reference], reference, tol)
    for path in _search_paths(reference):
        if path.is_file():
            logger.info(f"Loading fixture from {path}")
            try:
                document = json.loads(path.read_text(encoding='utf-8'))
            except json.JSONDecodeError as e:
                raise InputValidationError(f"{path}: invalid JSON ({e})")
            return parse_fixture(document, path.stem, tol)
    raise ConfigurationError(f"Fixture file not found: {reference}")
