import json
import logging
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from phturnpike import runner
from phturnpike.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'

AT_REST = """\
model: diffusion
diffusion:
  n_cells: 21
  d: 0.1
horizons: [1, 2]
intervals: [50, 100]
x0: const:2
xT: const:2
control_set:
  kind: box
  u_max: 10
"""


@pytest.fixture
def at_rest(tmp_path):
    path = tmp_path / 'at_rest.yaml'
    path.write_text(AT_REST, encoding='utf-8')
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def read_csv(path):
    with open(path, encoding='utf-8') as f:
        header = f.readline().strip().split(',')
    return header, np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)


def test_run_at_rest(at_rest, tmp_path):
    out = tmp_path / 'out'
    result = invoke('run', at_rest, '--out', out)
    assert result.exit_code == 0, result.output

    report = json.loads((out / 'report.json').read_text(encoding='utf-8'))
    assert report['model'] == 'diffusion'
    assert report['kernel_dimension'] == 1
    assert report['all_converged'] is True
    assert [h['T'] for h in report['horizons']] == [1.0, 2.0]
    for entry in report['horizons']:
        assert entry['converged']
        assert entry['cost_equiv'] <= 1e-10
        assert entry['bound_satisfied']

    header, table = read_csv(out / 'traj_T1.csv')
    assert header[:6] == ['t', 'H', 'dissipation_rate', 'dist2', 'supplied_power', 'abs_u1']
    assert table.shape == (51, 6)
    assert np.all(np.diff(table[:, 0]) > 0)
    np.testing.assert_allclose(table[:, 1], 2.0, rtol=1e-12)
    assert np.all(table[:, 5] <= 1e-8)

    header, snapshot = read_csv(out / 'snapshot_T2.csv')
    assert header == ['position', 'field', 'value']
    assert snapshot.shape == (21, 3)


def test_csv_values_keep_full_precision(at_rest, tmp_path):
    out = tmp_path / 'out'
    invoke('run', at_rest, '--out', out)
    first_row = (out / 'traj_T1.csv').read_text(encoding='utf-8').splitlines()[1]
    assert first_row.split(',')[0] == '0.0000000000000000e+00'


def test_config_error_exits_with_one(at_rest, tmp_path, caplog):
    bad = tmp_path / 'bad.yaml'
    bad.write_text(AT_REST.replace('d: 0.1', 'd: -0.1'), encoding='utf-8')
    with caplog.at_level(logging.ERROR):
        result = invoke('run', bad, '--out', tmp_path / 'out')
    assert result.exit_code == 1
    assert 'diffusion.d' in caplog.text
    assert ':4:' in caplog.text
    assert not (tmp_path / 'out' / 'report.json').exists()


def test_jobs_must_be_positive(at_rest):
    result = invoke('run', at_rest, '--jobs', 0)
    assert result.exit_code == 2
    assert '--jobs' in result.output


def test_reruns_are_byte_identical(at_rest, tmp_path):
    assert invoke('run', at_rest, '--out', tmp_path / 'a').exit_code == 0
    assert invoke('run', at_rest, '--out', tmp_path / 'b', '--jobs', 2).exit_code == 0
    names = sorted(p.name for p in (tmp_path / 'a').iterdir())
    assert names == ['report.json', 'snapshot_T1.csv', 'snapshot_T2.csv', 'traj_T1.csv', 'traj_T2.csv']
    for name in names:
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


def test_verify_default_diffusion():
    result = invoke('verify', CONFIGS / 'diffusion.yaml')
    assert result.exit_code == 0, result.output
    for name in ('structure.skew', 'structure.psd', 'structure.sigma_plus', 'projector.algebra',
                 'bound.spectral_gap', 'energy.refinement', 'oracle.dense_kkt'):
        assert name in result.output
    assert 'FAIL' not in result.output


def test_verify_flags_broken_skew_symmetry():
    def perturb(sys):
        J = sys.J.copy()
        J[0, 1] += 1e-3
        return sys.with_operators(J=J, check=False)

    lines = []
    code = runner.verify(CONFIGS / 'diffusion.yaml', system_hook=perturb, echo=lines.append)
    assert code == runner.EXIT_FAILURE
    table = {row.split()[0]: row.split()[1] for row in lines[0].splitlines()[1:]}
    assert table['structure.skew'] == 'FAIL'
    assert table['structure.psd'] == 'PASS'


def test_verify_reports_missing_gap_and_keeps_going():
    lines = []
    code = runner.verify(CONFIGS / 'diffusion.yaml', echo=lines.append,
                         system_hook=lambda sys: sys.with_operators(R=np.zeros_like(sys.R)))
    assert code == runner.EXIT_FAILURE
    rows = lines[0].splitlines()[1:]
    table = {row.split()[0]: row for row in rows}
    assert 'NoGap' in table['structure.sigma_plus']
    assert 'PASS' in table['structure.skew']
    assert 'PASS' in table['structure.psd']
    assert len(rows) == 7


def test_verify_missing_config(tmp_path):
    result = invoke('verify', tmp_path / 'nope.yaml')
    assert result.exit_code == 1
