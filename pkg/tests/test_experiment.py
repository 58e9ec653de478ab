from pathlib import Path

import numpy as np
import pytest

from phturnpike.errors import ConfigError
from phturnpike.experiment import load_experiment, parse_experiment, resolve_profile

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'

MINIMAL = """\
model: diffusion
diffusion:
  n_cells: 21
  d: 0.1
horizons: [5, 10]
intervals: [251, 501]
"""


def test_shipped_diffusion_config():
    cfg = load_experiment(CONFIGS / 'diffusion.yaml')
    assert cfg.model == 'diffusion'
    assert cfg.sweep() == [(5.0, 251), (10.0, 501), (20.0, 1001), (40.0, 2001)]
    assert cfg.control_set == {'kind': 'box', 'bound': (10.0,)}
    assert cfg.solver.kkt_tol == 1e-6
    assert not cfg.solver.warm_start and cfg.solver.polish and not cfg.solver.project_target
    sys = cfg.build_system()
    np.testing.assert_allclose(cfg.initial_state(sys), np.sin(np.pi * sys.grid.positions))
    np.testing.assert_array_equal(cfg.target_state(sys), np.full(21, 2.0))


@pytest.mark.parametrize("name", ['timoshenko_const.yaml', 'timoshenko_linear.yaml'])
def test_shipped_timoshenko_configs(name):
    cfg = load_experiment(CONFIGS / name)
    sys = cfg.build_system()
    assert sys.n == 200 and sys.m == 2
    assert cfg.initial_state(sys).shape == (200,)
    assert cfg.uset(sys).m == 2
    assert cfg.solver.project_target


def test_defaults():
    cfg = parse_experiment(MINIMAL)
    assert cfg.x0 == 'sin_pi' and cfg.xT == 'const:2'
    assert cfg.control_set['kind'] == 'box'
    assert cfg.terminal_tol is None
    assert cfg.full_state is False
    prob = cfg.problem(cfg.build_system(), 5.0, 251)
    assert prob.grid.N == 251


def test_negative_diffusivity_names_field_and_line():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL.replace('d: 0.1', 'd: -0.1'), source='bad.yaml')
    assert info.value.field == 'diffusion.d'
    assert info.value.line == 4
    assert str(info.value).startswith('bad.yaml:4: diffusion.d')


def test_horizons_must_ascend():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL.replace('[5, 10]', '[10, 5]'))
    assert info.value.field == 'horizons'
    assert info.value.line == 5


def test_one_interval_count_per_horizon():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL.replace('[251, 501]', '[251]'))
    assert info.value.field == 'intervals'


def test_interval_counts_are_integers():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL.replace('[251, 501]', '[251, 50.5]'))
    assert info.value.field == 'intervals[1]'


def test_invalid_yaml_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_experiment("model: diffusion\n  bad: indent\n")
    assert info.value.field == 'document'
    assert info.value.line == 2


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL.replace('  d: 0.1', '  d: 0.1\n  diffusivity: 0.2'))
    assert info.value.field == 'diffusion.diffusivity'
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL + "plots: true\n")
    assert info.value.field == 'plots'


def test_unknown_model():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL.replace('model: diffusion', 'model: wave'))
    assert info.value.field == 'model'
    assert info.value.line == 1


def test_control_set_bound_must_be_positive():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL + "control_set:\n  kind: ball\n  radius: 0\n")
    assert info.value.field == 'control_set.radius'


def test_ball_control_set():
    cfg = parse_experiment(MINIMAL + "control_set:\n  kind: ball\n  radius: 2.5\n")
    assert cfg.uset(cfg.build_system()).u_max_norm == 2.5


def test_solver_section():
    cfg = parse_experiment(MINIMAL + "solver:\n  max_outer: 3\n  terminal_tol: 1.0e-4\n")
    assert cfg.solver.max_outer == 3
    assert cfg.terminal_tol == 1e-4
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL + "solver:\n  warm_start: maybe\n")
    assert info.value.field == 'solver.warm_start'


def test_solver_section_rejects_bad_penalty_cap():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL + "solver:\n  rho0: 10\n  rho_max: 1\n")
    assert info.value.field == 'solver'
    cfg = parse_experiment(MINIMAL + "solver:\n  polish: false\n  project_target: true\n  fit_iterations: 50\n")
    assert not cfg.solver.polish and cfg.solver.project_target
    assert cfg.solver.fit_iterations == 50


def test_turnpike_phases():
    cfg = parse_experiment(MINIMAL + "turnpike:\n  T0: 1.5\n  T1: 0.5\n")
    assert (cfg.T0, cfg.T1) == (1.5, 0.5)
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL + "turnpike:\n  T0: -1\n")
    assert info.value.field == 'turnpike.T0'


def test_profile_length_is_checked():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL + "x0: [1.0, 2.0, 3.0]\n")
    assert info.value.field == 'x0'
    assert info.value.line == 7


def test_unknown_profile_name():
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL + "xT: gaussian\n")
    assert info.value.field == 'xT'


def test_csv_profile(tmp_path):
    np.savetxt(tmp_path / 'start.csv', np.linspace(0.0, 1.0, 21), delimiter=',')
    cfg = parse_experiment(MINIMAL + "x0: csv:start.csv\n", base_dir=tmp_path)
    np.testing.assert_allclose(cfg.initial_state(cfg.build_system()), np.linspace(0.0, 1.0, 21))
    with pytest.raises(ConfigError) as info:
        parse_experiment(MINIMAL + "x0: csv:missing.csv\n", base_dir=tmp_path)
    assert info.value.field == 'x0'


def test_missing_file():
    with pytest.raises(ConfigError) as info:
        load_experiment('does/not/exist.yaml')
    assert info.value.field == 'path'


def test_named_profiles(small_timoshenko, small_diffusion):
    mix = resolve_profile('linear_mix', small_timoshenko)
    z = small_timoshenko.grid.positions
    np.testing.assert_allclose(mix[:4], z[:4])
    np.testing.assert_allclose(mix[4:8], 1.0 - z[4:8])
    np.testing.assert_array_equal(resolve_profile(3, small_diffusion), np.full(5, 3.0))
    np.testing.assert_array_equal(resolve_profile('const:-1.5', small_diffusion), np.full(5, -1.5))
    with pytest.raises(ConfigError):
        resolve_profile('const:abc', small_diffusion)
