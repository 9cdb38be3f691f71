import json

import pandas as pd
import pytest
from click.testing import CliRunner

import qoct.commands  # noqa: F401  registers the subcommands
from app import app, EXIT_CONFIG_ERROR, EXIT_STAGE_ERROR
from qoct import __version__
from qoct.utilities_download import read_ascan_csv, read_joint_spectrum_csv, write_event_stream
from qoct.utilities_reconstruct import measure_peak


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / 'small.json'
    path.write_text(json.dumps({
        'object': {'positions': [40.0]},
        'detection': {'fibre1': {'slope_per_km': 0.0}, 'fibre2': {'slope_per_km': 0.0}},
        'grid': {'n': 128},
    }))
    return str(path)


def test_version(runner):
    result = runner.invoke(app, ['--version'])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_preset_listing(runner):
    result = runner.invoke(app, ['preset'])
    assert result.exit_code == 0
    assert result.output.split() == ['classical_mirror', 'falloff', 'glass', 'glass_stack', 'mirror',
                                     'mirror_whole', 'plastic', 'td_mirror']


def test_configuration_errors_exit_with_2(runner, tmp_path):
    result = runner.invoke(app, ['run', str(tmp_path / 'absent.json')])
    assert result.exit_code == EXIT_CONFIG_ERROR == 2
    broken = tmp_path / 'broken.json'
    broken.write_text('{"scan": ')
    result = runner.invoke(app, ['run', str(broken)])
    assert result.exit_code == 2
    assert 'Configuration error' in result.output
    assert runner.invoke(app, ['preset', 'hologram']).exit_code == 2


def test_stage_errors_exit_with_3(runner, tmp_path):
    path = tmp_path / 'frames.json'
    path.write_text(json.dumps({
        'grid': {'n': 128},
        'scan': {'mode': 'fd_whole'},
        'acquisition': {'n_frames': 9, 'frame_bins': 400, 'step_bins': 200},
    }))
    result = runner.invoke(app, ['--out', str(tmp_path), 'run', str(path)])
    assert result.exit_code == EXIT_STAGE_ERROR == 3
    assert "Stage 'frames' failed" in result.output


def test_simulate_rotate_ascan_chain(runner, tmp_path, small_config):
    out = str(tmp_path)
    assert runner.invoke(app, ['--out', out, 'simulate', small_config]).exit_code == 0
    assert runner.invoke(app, ['--out', out, 'rotate', str(tmp_path / 'joint_spectrum.qjs')]).exit_code == 0
    result = runner.invoke(app, ['--out', out, 'ascan', str(tmp_path / 'rotated.qjs')])
    assert result.exit_code == 0
    ascan = read_ascan_csv(str(tmp_path / 'ascan.csv'))
    assert measure_peak(ascan, (25.0, 55.0)).position == pytest.approx(40.0, abs=2.0)


def test_global_options_override_the_config(runner, tmp_path, small_config):
    result = runner.invoke(app, ['--out', str(tmp_path), '--grid', '64', '--format', 'csv', 'simulate', small_config])
    assert result.exit_code == 0
    js = read_joint_spectrum_csv(str(tmp_path / 'joint_spectrum.csv'))
    assert js.shape == (64, 64)


def test_artefact_prediction_for_a_preset(runner, tmp_path):
    result = runner.invoke(app, ['--out', str(tmp_path), 'artefacts', 'glass'])
    assert result.exit_code == 0
    table = pd.read_csv(tmp_path / 'artefacts.csv')
    assert list(table['kind']) == ['structural', 'structural', 'midpoint', 'stationary']
    assert list(table['position_um']) == pytest.approx([50.0, 200.0, 125.0, 75.0])


def test_model_pump_compensation_needs_a_config(runner, tmp_path, small_config):
    out = str(tmp_path)
    runner.invoke(app, ['--out', out, 'simulate', small_config])
    runner.invoke(app, ['--out', out, 'rotate', str(tmp_path / 'joint_spectrum.qjs')])
    result = runner.invoke(app, ['--out', out, 'comp-pump', str(tmp_path / 'rotated.qjs'), '--mode', 'model'])
    assert result.exit_code == 2
    result = runner.invoke(app, ['--out', out, 'comp-pump', str(tmp_path / 'rotated.qjs'),
                                 '--mode', 'model', '--config', small_config])
    assert result.exit_code == 0
    assert (tmp_path / 'rotated_pump.qjs').exists()


def test_event_stream_histogram(runner, tmp_path):
    events = str(tmp_path / 'events.bin')
    write_event_stream(events, [0, 1, 2, 0, 1, 2], [0, 100, 300, 12500, 12700, 12900])
    result = runner.invoke(app, ['--out', str(tmp_path), '--format', 'csv', 'histogram', events,
                                 '--time-bin', '50', '--window', '1000'])
    assert result.exit_code == 0
    hist = read_joint_spectrum_csv(str(tmp_path / 'event_histogram.csv'))
    assert hist.values.sum() == 2.0
    assert hist.axis1.axis_kind == 'arrival_time'
