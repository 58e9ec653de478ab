"""Experiment files: YAML documents describing one model and a horizon sweep.

Every validation failure is reported as a ConfigError naming the dotted
field and, when the field exists in the file, its line number.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .config import Config
from .errors import ConfigError
from .ocp_solver import ControlSet, OCPProblem, SolverOptions
from .ph_models import DiffusionConfig, TimoshenkoConfig, build_diffusion, build_timoshenko
from .simulate import TimeGrid

logger = logging.getLogger(__name__)

MODELS = ('diffusion', 'timoshenko')
NAMED_PROFILES = ('sin_pi', 'const:<c>', 'linear_mix', 'csv:<path>')

_MODEL_FIELDS = {
    'diffusion': {'n_cells': int, 'd': float, 'delta': float, 'actuators': list},
    'timoshenko': {'n_nodes': int, 'R1': float, 'R2': float, 'nu': float},
}
_SOLVER_FIELDS = {'kkt_tol': float, 'max_outer': int, 'max_inner': int, 'rho0': float,
                  'rho_factor': float, 'rho_max': float, 'power_iterations': int, 'warm_start': bool,
                  'polish': bool, 'project_target': bool, 'fit_iterations': int}


def _line_index(node, prefix="", out=None):
    """Map dotted keys to 1-based line numbers from a composed YAML node"""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            name = f"{prefix}.{key.value}" if prefix else str(key.value)
            out[name] = key.start_mark.line + 1
            _line_index(value, name, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            out[f"{prefix}[{i}]"] = item.start_mark.line + 1
    return out


class _Reader:
    """Typed access to the parsed document with line-aware errors"""

    def __init__(self, data, lines, source):
        self.data = data
        self.lines = lines
        self.source = source

    def error(self, name, message):
        line = self.lines.get(name)
        if line is None and '.' in name:
            line = self.lines.get(name.rsplit('.', 1)[0])
        return ConfigError(name, message, line=line, source=self.source)

    def section(self, name):
        value = self.data.get(name, {})
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise self.error(name, "must be a mapping")
        return value

    def coerce(self, name, value, kind):
        try:
            if kind is bool:
                if isinstance(value, bool):
                    return value
                raise ValueError
            if kind is int:
                if isinstance(value, bool) or float(value) != int(float(value)):
                    raise ValueError
                return int(float(value))
            if kind is float:
                if isinstance(value, bool):
                    raise ValueError
                return float(value)
            if kind is list:
                if not isinstance(value, list):
                    raise ValueError
                return value
        except (TypeError, ValueError):
            raise self.error(name, f"expected {kind.__name__}, got {value!r}") from None
        return value

    def typed_section(self, name, fields):
        section = self.section(name)
        out = {}
        for key, value in section.items():
            if key not in fields:
                raise self.error(f"{name}.{key}", f"unknown key (allowed: {', '.join(fields)})")
            if value is not None:
                out[key] = self.coerce(f"{name}.{key}", value, fields[key])
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    model_config: object
    horizons: tuple
    intervals: tuple
    x0: object = 'sin_pi'
    xT: object = 'const:2'
    control_set: dict = field(default_factory=lambda: {'kind': 'box', 'bound': 10.0})
    solver: SolverOptions = field(default_factory=SolverOptions)
    terminal_tol: Optional[float] = None
    T0: Optional[float] = None
    T1: Optional[float] = None
    steer_tol: Optional[float] = None
    output_dir: str = Config.OUTPUT_DIR
    full_state: bool = False
    source: str = '<string>'
    base_dir: str = '.'

    def build_system(self):
        if self.model == 'diffusion':
            return build_diffusion(self.model_config)
        return build_timoshenko(self.model_config)

    def initial_state(self, sys):
        return resolve_profile(self.x0, sys, self.base_dir, field_name='x0')

    def target_state(self, sys):
        return resolve_profile(self.xT, sys, self.base_dir, field_name='xT')

    def uset(self, sys):
        return ControlSet(self.control_set['kind'], self.control_set['bound'], sys.m)

    def problem(self, sys, T, N):
        return OCPProblem(sys, self.initial_state(sys), self.target_state(sys), TimeGrid(T, N),
                          self.uset(sys), self.terminal_tol, self.solver)

    def sweep(self):
        return list(zip(self.horizons, self.intervals))


def resolve_profile(spec, sys, base_dir='.', field_name='profile'):
    """State vector for a named profile, a literal list or a CSV reference"""
    z = sys.grid.positions
    if isinstance(spec, (list, tuple)):
        values = np.asarray(spec, dtype=float)
    elif isinstance(spec, (int, float)) and not isinstance(spec, bool):
        values = np.full(sys.n, float(spec))
    elif isinstance(spec, str):
        name = spec.strip()
        if name == 'sin_pi':
            values = np.sin(np.pi * z)
        elif name.startswith('const:'):
            try:
                values = np.full(sys.n, float(name[len('const:'):]))
            except ValueError:
                raise ConfigError(field_name, f"bad constant in profile {spec!r}") from None
        elif name == 'linear_mix':
            # (w, 1 - w, w, 1 - w) over the fields of a multi-field model, w on one field
            odd = sys.grid.field_index % 2 == 1
            values = np.where(odd, 1.0 - z, z)
        elif name.startswith('csv:'):
            path = Path(base_dir) / name[len('csv:'):]
            try:
                values = np.loadtxt(path, delimiter=',', ndmin=1).ravel()
            except OSError as e:
                raise ConfigError(field_name, f"cannot read {path}: {e}") from None
        else:
            raise ConfigError(field_name, f"unknown profile {spec!r} (use one of {', '.join(NAMED_PROFILES)})")
    else:
        raise ConfigError(field_name, f"unsupported profile {spec!r}")
    if values.shape != (sys.n,):
        raise ConfigError(field_name, f"profile has {values.size} entries, state dimension is {sys.n}")
    if not np.all(np.isfinite(values)):
        raise ConfigError(field_name, "profile values must be finite")
    return values


def parse_experiment(text, source='<string>', base_dir='.'):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError('document', f"invalid YAML: {getattr(e, 'problem', None) or e}",
                          line=line, source=source) from None
    if not isinstance(data, dict):
        raise ConfigError('document', "top level must be a mapping", source=source)
    reader = _Reader(data, _line_index(node), source)

    model = data.get('model')
    if model not in MODELS:
        raise reader.error('model', f"must be one of {', '.join(MODELS)}, got {model!r}")
    params = reader.typed_section(model, _MODEL_FIELDS[model])
    try:
        if model == 'diffusion':
            if 'actuators' in params:
                params['actuators'] = tuple(tuple(float(v) for v in pair) for pair in params['actuators'])
            model_config = DiffusionConfig(**params).validate()
        else:
            model_config = TimoshenkoConfig(**params).validate()
    except ConfigError as e:
        raise reader.error(f"{model}.{e.field}", e.message) from None
    except (TypeError, ValueError) as e:
        raise reader.error(model, str(e)) from None

    horizons = data.get('horizons')
    intervals = data.get('intervals')
    if not isinstance(horizons, list) or not horizons:
        raise reader.error('horizons', "must be a nonempty list")
    if not isinstance(intervals, list):
        raise reader.error('intervals', "must be a list")
    horizons = tuple(reader.coerce(f"horizons[{i}]", T, float) for i, T in enumerate(horizons))
    intervals = tuple(reader.coerce(f"intervals[{i}]", N, int) for i, N in enumerate(intervals))
    if any(not T > 0 for T in horizons):
        raise reader.error('horizons', "horizons must be > 0")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise reader.error('horizons', f"must be strictly ascending, got {list(horizons)}")
    if len(intervals) != len(horizons):
        raise reader.error('intervals', f"needs one entry per horizon ({len(horizons)}), got {len(intervals)}")
    if any(N < 1 for N in intervals):
        raise reader.error('intervals', "interval counts must be >= 1")

    uset_section = reader.typed_section('control_set', {'kind': str, 'u_max': object, 'radius': float})
    kind = uset_section.get('kind', 'box')
    if kind == 'box':
        bound = uset_section.get('u_max', 10.0)
        bound_field = 'control_set.u_max'
    elif kind == 'ball':
        bound = uset_section.get('radius', 10.0)
        bound_field = 'control_set.radius'
    else:
        raise reader.error('control_set.kind', f"must be 'box' or 'ball', got {kind!r}")
    try:
        bound_values = np.atleast_1d(np.asarray(bound, dtype=float))
    except (TypeError, ValueError):
        raise reader.error(bound_field, f"expected a number or a list of numbers, got {bound!r}") from None
    if not np.all(bound_values > 0):
        raise reader.error(bound_field, f"bounds must be > 0 so that 0 is interior, got {bound!r}")

    solver_params = reader.typed_section('solver', dict(_SOLVER_FIELDS, terminal_tol=float))
    terminal_tol = solver_params.pop('terminal_tol', None)
    if terminal_tol is not None and not terminal_tol > 0:
        raise reader.error('solver.terminal_tol', "must be > 0")
    try:
        solver = SolverOptions(**solver_params).validate()
    except ValueError as e:
        raise reader.error('solver', str(e)) from None

    turnpike = reader.typed_section('turnpike', {'T0': float, 'T1': float, 'steer_tol': float})
    for key in ('T0', 'T1'):
        if key in turnpike and turnpike[key] < 0:
            raise reader.error(f"turnpike.{key}", "must be >= 0")
    output = reader.typed_section('output', {'dir': str, 'full_state': bool})

    for key in ('x0', 'xT'):
        if key in data and data[key] is None:
            raise reader.error(key, "profile is empty")
    known = {'model', model, 'horizons', 'intervals', 'x0', 'xT', 'control_set', 'solver', 'turnpike', 'output'}
    for key in data:
        if key not in known:
            raise reader.error(str(key), "unknown section")

    cfg = ExperimentConfig(
        model=model,
        model_config=model_config,
        horizons=horizons,
        intervals=intervals,
        x0=data.get('x0', 'sin_pi'),
        xT=data.get('xT', 'const:2'),
        control_set={'kind': kind, 'bound': tuple(bound_values.tolist())},
        solver=solver,
        terminal_tol=terminal_tol,
        T0=turnpike.get('T0'),
        T1=turnpike.get('T1'),
        steer_tol=turnpike.get('steer_tol'),
        output_dir=output.get('dir', Config.OUTPUT_DIR),
        full_state=output.get('full_state', False),
        source=source,
        base_dir=str(base_dir),
    )

    # Profiles depend on the grid, so they are checked against the built system
    try:
        sys = cfg.build_system()
    except ConfigError as e:
        raise reader.error(f"{model}.{e.field}", e.message) from None
    for key in ('x0', 'xT'):
        try:
            resolve_profile(getattr(cfg, key), sys, base_dir, field_name=key)
        except ConfigError as e:
            raise reader.error(key, e.message) from None
    try:
        cfg.uset(sys)
    except ValueError as e:
        raise reader.error(bound_field, str(e)) from None
    return cfg


def load_experiment(path):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError('path', f"cannot read config: {e}", source=str(path)) from None
    cfg = parse_experiment(text, source=str(path), base_dir=path.parent)
    logger.info(f"Loaded {cfg.model} experiment from {path}: horizons {list(cfg.horizons)}")
    return cfg
