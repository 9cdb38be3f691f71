# commands_preprocess.py

import click

from app import app
from qoct.commands.utilities_commands import (
    context_config,
    read_spectrum,
    write_rotated,
    report_written,
)
from qoct.pipeline import PUMP_MODES
from qoct.utilities_download import read_rotated
from qoct.utilities_preprocess import (
    PumpModel,
    rotate45,
    fibre_shift_vector,
    compensate_fibre,
    estimate_row_frequencies,
    model_row_frequencies,
    compensate_pump,
)
from qoct.utilities_validation import fail, ConfigError


@app.command('rotate')
@click.argument('spectrum', type=click.Path(exists=True, dir_okay=False))
@click.option('--rows', type=int, default=None, help='Rotated rows (sum frequency).')
@click.option('--cols', type=int, default=None, help='Rotated columns (difference frequency).')
@click.pass_context
def rotate(ctx, spectrum, rows, cols):
    """Resample a wavelength joint spectrum onto difference/sum frequency axes."""
    rot = rotate45(read_spectrum(spectrum), rows, cols)
    report_written(write_rotated(ctx, rot, 'rotated'))


@app.command('comp-fibre')
@click.argument('rotated', type=click.Path(exists=True, dir_okay=False))
@click.option('--config', 'target', required=True, help='Config file or preset holding the fibres.')
@click.pass_context
def comp_fibre(ctx, rotated, target):
    """Straighten the ridge bent by the fibres' nonlinear group delay."""
    config = context_config(ctx, target)
    rot = read_rotated(rotated)
    shifts = fibre_shift_vector(config.detection, rot, 2.0 * config.source.center_frequency)
    report_written(write_rotated(ctx, compensate_fibre(rot, shifts), 'rotated_fibre'))


@app.command('comp-pump')
@click.argument('rotated', type=click.Path(exists=True, dir_okay=False))
@click.option('--mode', type=click.Choice(PUMP_MODES[1:]), default='data', show_default=True)
@click.option('--config', 'target', default=None, help='Config file or preset; required in model mode.')
@click.option('--calibration-depth', type=float, default=None, help='Mirror depth (um) for model mode.')
@click.option('--continuous', is_flag=True, help='Resample each row in one piece instead of two halves.')
@click.pass_context
def comp_pump(ctx, rotated, mode, target, calibration_depth, continuous):
    """Equalise the fringe frequency of every row (broadband-pump compensation)."""
    rot = read_rotated(rotated)
    if mode == 'data':
        profile = estimate_row_frequencies(rot)
    else:
        if target is None:
            fail(ConfigError, "Model-driven pump compensation needs --config.", field='config')
        config = context_config(ctx, target)
        depth = calibration_depth
        if depth is None:
            depth = float(config.object.positions[0]) - config.scan.reference_delay
        model = PumpModel(config.object.arm_imbalance, config.source.center_frequency, depth)
        profile = model_row_frequencies(rot, model)
    report_written(write_rotated(ctx, compensate_pump(rot, profile, continuous=continuous), 'rotated_pump'))
