# commands_reconstruct.py

import click

from app import app
from qoct.commands.utilities_commands import context_config, output_path, write_ascan, report_written
from qoct.pipeline import run, parse_config
from qoct.utilities_download import read_rotated, read_ascan_csv, write_artefacts_csv
from qoct.utilities_figure import write_pgm, write_figure_html, generate_fourier_map_figure
from qoct.utilities_reconstruct import ASCAN_METHODS, fourier_map, predict_artefacts, match_artefacts


@app.command('ascan')
@click.argument('rotated', type=click.Path(exists=True, dir_okay=False))
@click.option('--method', type=click.Choice(tuple(ASCAN_METHODS)), default='row_average', show_default=True)
@click.option('--keep-dc', is_flag=True, help='Skip envelope removal and keep the zero-depth peak.')
@click.option('--hann', is_flag=True, help='Apply a Hann window before the transform.')
@click.pass_context
def ascan(ctx, rotated, method, keep_dc, hann):
    """Compute the A-scan of a rotated spectrum."""
    result = ASCAN_METHODS[method](read_rotated(rotated), dc_removal=not keep_dc, window='hann' if hann else None)
    report_written(write_ascan(ctx, result, 'ascan.csv'))


@app.command('fmap')
@click.argument('rotated', type=click.Path(exists=True, dir_okay=False))
@click.option('--bits', type=click.Choice(['8', '16']), default='16', show_default=True)
@click.pass_context
def fmap(ctx, rotated, bits):
    """Write the 2D Fourier map of a rotated spectrum as a PGM heatmap."""
    result = fourier_map(read_rotated(rotated))
    path = output_path(ctx, 'fourier_map.pgm')
    sidecar = write_pgm(result.values, path, int(bits), axes={
        'rows_depth_um': [float(result.v_depth[0]), float(result.v_depth[-1])],
        'columns_depth_um': [float(result.u_depth[0]), float(result.u_depth[-1])],
    })
    if ctx.obj.get('plot'):
        write_figure_html(generate_fourier_map_figure(result), f"{path}.html")
    report_written([path, sidecar])


@app.command('falloff')
@click.argument('target')
@click.pass_context
def falloff(ctx, target):
    """Run the reference-delay sweep of TARGET and report the 6-dB imaging range."""
    config = context_config(ctx, target)
    document = dict(config.document)
    document['outputs'] = [{'kind': 'falloff', 'path': 'falloff.csv'}]
    manifest = run(parse_config(document), ctx.obj.get('out_dir', '.'), plot=ctx.obj.get('plot', False))
    report = manifest.results['falloff']
    state = ' (censored)' if report.censored else ''
    click.echo(f"six_db_range_um={report.six_db_range:.1f}{state}")
    report_written(sorted(manifest.outputs))


@app.command('artefacts')
@click.argument('target')
@click.option('--ascan', 'ascan_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Measured A-scan CSV to match the predictions against.')
@click.pass_context
def artefacts(ctx, target, ascan_path):
    """Predict structural peaks and pair artefacts for the object of TARGET."""
    config = context_config(ctx, target)
    report = predict_artefacts(config.object, config.source, config.scan.reference_delay)
    if ascan_path is not None:
        report = match_artefacts(report, read_ascan_csv(ascan_path))
    report_written(write_artefacts_csv(report, output_path(ctx, 'artefacts.csv')))
