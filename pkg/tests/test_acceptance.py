"""Full horizon sweeps on the shipped experiment files (run with -m slow)."""
import json
from pathlib import Path

import pytest

from phturnpike import runner

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'

pytestmark = pytest.mark.slow


def run_config(name, out):
    code = runner.run(CONFIGS / name, out=out, jobs=1)
    report = json.loads((out / 'report.json').read_text(encoding='utf-8'))
    return code, report


@pytest.fixture(scope="module")
def diffusion_run(tmp_path_factory):
    out = tmp_path_factory.mktemp('diffusion')
    return out, run_config('diffusion.yaml', out)


def test_diffusion_sweep_converges_under_the_bound(diffusion_run):
    out, (code, report) = diffusion_run
    assert code == runner.EXIT_OK
    assert report['all_converged']
    assert [h['T'] for h in report['horizons']] == [5.0, 10.0, 20.0, 40.0]
    F = report['bound']['F']
    for entry in report['horizons']:
        assert entry['bound_satisfied']
        assert entry['integral_metric'] <= F
        assert (out / entry['file']).exists()
        assert (out / entry['snapshot']).exists()
    assert report['bound']['correction_ratio'] <= 0.05


def test_dissipation_dominates_gap_times_metric(diffusion_run):
    _, (_, report) = diffusion_run
    sigma = report['sigma_plus']
    for entry in report['horizons']:
        assert entry['cost_equiv'] >= sigma * entry['integral_metric'] - 1e-9


def test_midpoint_distance_decays_with_horizon(diffusion_run):
    _, (_, report) = diffusion_run
    mids = [entry['midpoint_dist'] for entry in report['horizons']]
    for shorter, longer in zip(mids, mids[1:]):
        assert longer <= 1.1 * shorter


def test_control_settles_on_the_coast(diffusion_run):
    _, (_, report) = diffusion_run
    by_T = {entry['T']: entry['control_coast_mean'] for entry in report['horizons']}
    assert by_T[40.0] <= 0.25 * by_T[5.0]


def test_rerun_is_identical(diffusion_run, tmp_path):
    out, _ = diffusion_run
    code, _ = run_config('diffusion.yaml', tmp_path)
    assert code == runner.EXIT_OK
    assert (tmp_path / 'report.json').read_bytes() == (out / 'report.json').read_bytes()


@pytest.mark.parametrize("name", ['timoshenko_const.yaml', 'timoshenko_linear.yaml'])
def test_timoshenko_momenta_follow_the_turnpike(name, tmp_path):
    code, report = run_config(name, tmp_path)
    assert code == runner.EXIT_OK
    assert report['kernel_dimension'] == 100
    assert report['all_converged']
    for entry in report['horizons']:
        # the beam is steered to the closest reachable state when the target is out of reach
        assert entry['terminal_error'] == pytest.approx(entry['target_gap'], abs=1e-4)
    split = report['horizons'][-1]['field_split']
    momenta = ('transverse_momentum', 'angular_momentum')
    coast = sum(split[f]['coast_mean'] for f in momenta)
    full = sum(split[f]['full_mean'] for f in momenta)
    assert coast <= 0.05 * full
    angle = split['angular_displacement']
    assert angle['coast_mean'] >= 0.1 * angle['initial']
