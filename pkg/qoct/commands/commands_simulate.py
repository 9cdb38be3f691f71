# commands_simulate.py
# Forward-model subcommands: Fourier-domain joint spectra, time-domain traces, classical OCT

import click
import pandas as pd

from app import app
from qoct.commands.utilities_commands import context_config, output_path, write_spectrum, write_ascan, report_written
from qoct.utilities_forward import (
    SimulationRequest,
    simulate_joint_spectrum,
    simulate_time_domain,
    simulate_classical_fringes,
    apply_shot_noise,
)
from qoct.utilities_reconstruct import trace_to_ascan, classical_ascan
from qoct.utilities_validation import fail, ConfigError


@app.command('simulate')
@click.argument('target')
@click.pass_context
def simulate(ctx, target):
    """Simulate the wavelength joint spectrum of TARGET (config file or preset)."""
    config = context_config(ctx, target)
    request = SimulationRequest(config.source, config.object, config.detection, config.scan.reference_delay,
                                config.grid, config.scan.integration_time)
    js = simulate_joint_spectrum(request)
    if config.scan.seed is not None:
        js = apply_shot_noise(js, config.scan.seed)
    report_written(write_spectrum(ctx, js, 'joint_spectrum'))


@app.command('td')
@click.argument('target')
@click.pass_context
def time_domain(ctx, target):
    """Simulate a time-domain Q-OCT trace over the configured stage positions."""
    config = context_config(ctx, target)
    if config.scan.stage_positions is None:
        fail(ConfigError, "Time-domain scans need 'scan.stage_positions'.", field='scan.stage_positions')
    trace = simulate_time_domain(config.source, config.object, config.detection, config.scan.stage_positions,
                                 config.scan.integration_time, config.scan.seed, config.grid)
    trace_path = output_path(ctx, 'td_trace.csv')
    pd.DataFrame({'stage_position_um': trace.stage_positions,
                  'coincidences': trace.coincidence_rate}).to_csv(trace_path, index=False, float_format='%.17g')
    paths = [trace_path] + write_ascan(ctx, trace_to_ascan(trace), 'td_ascan.csv', 'Time domain')
    report_written(paths)


@app.command('classical')
@click.argument('target')
@click.pass_context
def classical(ctx, target):
    """Simulate a spectral-domain OCT interferogram and its A-scan."""
    config = context_config(ctx, target)
    spectrum = simulate_classical_fringes(config.classical, config.object, config.scan.reference_delay, config.grid)
    spectrum_path = output_path(ctx, 'classical_spectrum.csv')
    pd.DataFrame({'wavelength_nm': spectrum.grid.values,
                  'intensity': spectrum.intensity}).to_csv(spectrum_path, index=False, float_format='%.17g')
    ascan = classical_ascan(spectrum, dc_removal=config.processing.dc_removal, window=config.processing.window)
    report_written([spectrum_path] + write_ascan(ctx, ascan, 'classical_ascan.csv', 'Classical OCT'))
