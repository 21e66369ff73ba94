"""
Artifact writers: trajectory CSV, canonical JSON and density snapshots.

Floats are written with ``repr`` so that reruns with the same seed produce
byte-identical files.
"""
import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .hilbert import DensityMatrix


def to_jsonable(value: Any) -> Any:
    """Convert numpy containers and scalars; non-finite floats become None."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, complex):
        return [to_jsonable(value.real), to_jsonable(value.imag)]
    return value


def dumps(document: Any) -> str:
    return json.dumps(to_jsonable(document), sort_keys=True, indent=2, allow_nan=False) + '\n'


def write_json(path: Path, document: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(document), encoding='utf-8')
    return path


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding='utf-8'))


def _cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def trajectory_header(n_levels: int, monitored_levels: Sequence[int] = (), with_traj_id: bool = False,
                      extra: Sequence[str] = ()) -> List[str]:
    """``t,H,V,beta,norm_err,P_1..P_D[,Pi_k...]`` with optional ``traj_id`` and extra columns."""
    header = ['traj_id'] if with_traj_id else []
    header += ['t', 'H', 'V', 'beta', 'norm_err']
    header += [f"P_{n + 1}" for n in range(n_levels)]
    header += [f"Pi_{k + 1}" for k in monitored_levels]
    header += list(extra)
    return header


def write_trajectory_csv(path: Path, times: np.ndarray, columns: Mapping[str, np.ndarray],
                         n_levels: int, monitored_levels: Sequence[int] = (),
                         trajectory_ids: Optional[Iterable[int]] = None,
                         extra: Sequence[str] = (), metadata: Optional[Mapping[str, Any]] = None) -> Path:
    """
    Write one or many trajectories in long format.

    When ``metadata`` is given the file starts with one comment line,
    ``# key=value key=value``, in sorted key order.

    Args:
        times: Common time grid of length R
        columns: 'H', 'V', 'beta', 'norm_err' as (B, R) arrays, 'P' as
            (B, R, D), optional 'Pi' as (B, R, K) and each name in ``extra``
            as (B, R)
        trajectory_ids: Row labels; when given a leading traj_id column is written
        metadata: e.g. the config hash and master seed
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = list(trajectory_ids) if trajectory_ids is not None else None
    header = trajectory_header(n_levels, monitored_levels, ids is not None, extra)
    n_rows = columns['H'].shape[0]
    with path.open('w', newline='', encoding='utf-8') as handle:
        if metadata:
            handle.write('# ' + ' '.join(f"{key}={metadata[key]}" for key in sorted(metadata)) + '\n')
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for b in range(n_rows):
            for r, t in enumerate(times):
                row = [ids[b]] if ids is not None else []
                row += [t, columns['H'][b, r], columns['V'][b, r], columns['beta'][b, r], columns['norm_err'][b, r]]
                row += list(columns['P'][b, r])
                if monitored_levels:
                    row += list(columns['Pi'][b, r])
                row += [columns[name][b, r] for name in extra]
                writer.writerow([_cell(v) for v in row])
    return path


def density_snapshot(time: float, rho: DensityMatrix) -> Dict[str, Any]:
    """A density matrix in the fixture matrix format plus its time."""
    matrix = rho.matrix
    return {
        'time': float(time),
        'dimension': int(matrix.shape[0]),
        'matrix': [[[float(z.real), float(z.imag)] for z in row] for row in matrix],
    }


def write_density_series(path: Path, times: Sequence[float], densities: Sequence[DensityMatrix]) -> Path:
    return write_json(path, [density_snapshot(t, rho) for t, rho in zip(times, densities)])
