# commands_acquisition.py

import click

from app import app
from qoct.commands.utilities_commands import context_config, write_spectrum, report_written
from qoct.pipeline import acquire, parse_config
from qoct.utilities_acquisition import to_time_histogram, histogram_events
from qoct.utilities_download import read_event_stream
from qoct.utilities_forward import SimulationRequest, simulate_joint_spectrum


@app.command('stitch')
@click.argument('target')
@click.option('--frames', 'n_frames', type=int, default=None, help='Override the number of frames.')
@click.pass_context
def stitch(ctx, target, n_frames):
    """Acquire TARGET frame by frame along the anti-diagonal and stitch the frames."""
    config = context_config(ctx, target)
    document = dict(config.document)
    document['scan'] = {**document.get('scan', {}), 'mode': 'fd_whole'}
    if n_frames is not None:
        document['acquisition'] = {**document.get('acquisition', {}), 'n_frames': n_frames}
    config = parse_config(document)
    js = acquire(config, config.object, config.scan.reference_delay, {}, config.scan.seed)
    report_written(write_spectrum(ctx, js, 'stitched'))


@app.command('time-histogram')
@click.argument('target')
@click.pass_context
def time_histogram(ctx, target):
    """Rebin the simulated joint spectrum of TARGET onto arrival-time axes."""
    config = context_config(ctx, target)
    request = SimulationRequest(config.source, config.object, config.detection, config.scan.reference_delay,
                                config.grid, config.scan.integration_time)
    hist = to_time_histogram(simulate_joint_spectrum(request), config.detection)
    report_written(write_spectrum(ctx, hist, 'time_histogram'))


@app.command('histogram')
@click.argument('events', type=click.Path(exists=True, dir_okay=False))
@click.option('--time-bin', type=float, required=True, help='Histogram bin in ps.')
@click.option('--window', type=float, required=True, help='Histogram extent per channel in ps.')
@click.pass_context
def histogram(ctx, events, time_bin, window):
    """Build the arrival-time joint histogram of a recorded time-tag stream."""
    hist = histogram_events(read_event_stream(events), time_bin, window)
    report_written(write_spectrum(ctx, hist, 'event_histogram'))
