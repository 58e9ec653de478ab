"""CSV and JSON writers for solved horizons.

CSV files are UTF-8, comma separated, one header row, every value written with
17 significant digits ('%.16e'). The JSON report has no timestamps so reruns
are byte-identical.
"""
import json
import logging
import math
from pathlib import Path

import numpy as np

from .operator_core import dist_to_kernel
from .ph_models import output_map
from .simulate import dissipation_rate, field_energies, hamiltonian

logger = logging.getLogger(__name__)

CSV_FORMAT = '%.16e'


def horizon_tag(T):
    return f"T{T:g}"


def trajectory_columns(sys, full_state=False):
    cols = ['t', 'H', 'dissipation_rate', 'dist2', 'supplied_power']
    cols += [f"abs_u{a + 1}" for a in range(sys.m)]
    if len(sys.grid.fields) > 1:
        cols += [f"energy_{name}" for name in sys.grid.fields]
    if full_state:
        cols += list(sys.labels)
    return cols


def trajectory_table(sys, traj, u, full_state=False):
    """One row per node; the control at t_N repeats the last interval value"""
    X = traj.states
    u_nodes = u.node_values()
    dist2 = dist_to_kernel(X, sys.kernel_projector, sys.weights) ** 2
    power = np.sum(u_nodes * output_map(sys, X), axis=1)
    blocks = [traj.grid.times[:, None], hamiltonian(sys, X)[:, None], dissipation_rate(sys, X)[:, None],
              dist2[:, None], power[:, None], np.abs(u_nodes)]
    if len(sys.grid.fields) > 1:
        blocks.append(field_energies(sys, traj))
    if full_state:
        blocks.append(X)
    return np.hstack(blocks)


def _write_csv(path, table, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, fmt=CSV_FORMAT, delimiter=',', header=','.join(columns), comments='',
               encoding='utf-8')
    return path


def write_trajectory_csv(path, sys, traj, u, full_state=False):
    table = trajectory_table(sys, traj, u, full_state)
    return _write_csv(path, table, trajectory_columns(sys, full_state))


def write_snapshot_csv(path, sys, state):
    """x(T/2) as (position, field, value) rows; field is the field index"""
    table = np.column_stack([sys.grid.positions, sys.grid.field_index.astype(float), state])
    return _write_csv(path, table, ['position', 'field', 'value'])


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None"""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_report(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_clean(report), f, indent=2)
        f.write('\n')
    logger.info(f"Wrote report to {path}")
    return path
