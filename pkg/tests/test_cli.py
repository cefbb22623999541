import json

import pytest

from app.cli import build_parser, main
from app.services.run_service import EXIT_CONFIG, EXIT_OK, sweep_points

SMALL_SIM = """
mode = "simulate"
a = 1
b = 1
s = 1
g = 2

[grid]
dr = 0.2

[run]
t_end = 10
snapshot_dt = 1
"""


def write_config(tmp_path, text, name='run.toml'):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return str(path)


def read_manifest(out):
    return json.loads((out / 'manifest.json').read_text(encoding='utf-8'))


def test_parser_accepts_every_mode():
    parser = build_parser()
    for mode in ('simulate', 'sweep', 'verify', 'ode', 'dirichlet', 'fit'):
        args = parser.parse_args([mode, '--workers', '2'])
        assert args.command == mode
        assert args.workers == 2


def test_bad_config_exits_2(tmp_path):
    path = write_config(tmp_path, 'a = 1\nb = 1\ns = 1\ng = 2\nd = 0.5\nt_end = 10\n')
    assert main(['simulate', '--config', path, '--out', str(tmp_path / 'out')]) == EXIT_CONFIG


def test_missing_config_file_exits_2(tmp_path):
    assert main(['simulate', '--config', str(tmp_path / 'none.toml')]) == EXIT_CONFIG


def test_ode_run(tmp_path):
    path = write_config(tmp_path, 'a = 1\nb = 1\ns = 0.5\ng = 0.4\n\n[ode]\nT = 50\nn_random = 20\nT_random = 100\n')
    out = tmp_path / 'ode'
    assert main(['ode', '--config', path, '--out', str(out)]) == EXIT_OK
    lines = (out / 'ode.csv').read_text(encoding='utf-8').splitlines()
    assert lines[0] == 't,C,H,Phi,dPhi_dt'
    manifest = read_manifest(out)
    assert manifest['mode'] == 'ode'
    assert manifest['exit_code'] == 0
    assert [entry['path'] for entry in manifest['files']] == ['ode.csv']
    batch = manifest['audit_summary']['random_starts']
    assert batch['n_starts'] == 20
    assert batch['T'] == 100.0
    assert batch['passed']


def test_simulate_run_writes_outputs(tmp_path):
    out = tmp_path / 'sim'
    assert main(['simulate', '--config', write_config(tmp_path, SMALL_SIM), '--out', str(out)]) == EXIT_OK
    for name in ('profiles.csv', 'fronts.csv', 'audit.ndjson', 'fits.json', 'envelope-report.json', 'plot.gp'):
        assert (out / name).exists(), name
    manifest = read_manifest(out)
    listed = sorted(entry['path'] for entry in manifest['files'])
    on_disk = sorted(p.name for p in out.iterdir() if p.name != 'manifest.json')
    assert listed == on_disk
    assert manifest['versions']['numpy']
    assert manifest['audit_summary']['passed']


def test_simulate_is_deterministic(tmp_path):
    path = write_config(tmp_path, SMALL_SIM)
    first, second = tmp_path / 'one', tmp_path / 'two'
    assert main(['simulate', '--config', path, '--out', str(first), '--workers', '1']) == EXIT_OK
    assert main(['simulate', '--config', path, '--out', str(second), '--workers', '2']) == EXIT_OK
    for name in ('profiles.csv', 'fronts.csv', 'audit.ndjson', 'envelope-report.json'):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_fit_requires_existing_fronts(tmp_path):
    path = write_config(tmp_path, f'a = 1\nb = 1\ns = 1\ng = 2\n\n[fit]\nsource_dir = "{tmp_path / "missing"}"\n')
    assert main(['fit', '--config', path, '--out', str(tmp_path / 'fit')]) == EXIT_CONFIG


def test_sweep_points_are_ordered():
    points = sweep_points({'g': [0.4, 2.0], 'a': [1.0, 4.0]})
    assert points == [{'a': 1.0, 'g': 0.4}, {'a': 1.0, 'g': 2.0}, {'a': 4.0, 'g': 0.4}, {'a': 4.0, 'g': 2.0}]


@pytest.mark.slow
def test_sweep_run(tmp_path):
    text = SMALL_SIM.replace('mode = "simulate"', 'mode = "sweep"') + '\n[sweep]\ng = [0.4, 2]\n'
    out = tmp_path / 'sweep'
    main(['sweep', '--config', write_config(tmp_path, text), '--out', str(out), '--workers', '2'])
    index = json.loads((out / 'sweep-index.json').read_text(encoding='utf-8'))
    assert [entry['dir'] for entry in index['entries']] == ['g=0.4', 'g=2']
    for name in ('g=0.4', 'g=2'):
        assert (out / name / 'profiles.csv').exists()
