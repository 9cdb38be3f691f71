# commands_run.py

import click

from app import app
from qoct.commands.utilities_commands import report_written
from qoct.pipeline import load_config, load_preset, list_presets, with_overrides, run


def _run(ctx, config):
    config = with_overrides(config, ctx.obj.get('seed'), ctx.obj.get('grid_points'))
    manifest = run(config, ctx.obj.get('out_dir', '.'), ctx.obj.get('output_format', 'qjs'),
                   ctx.obj.get('plot', False))
    report_written(sorted(manifest.outputs))
    return manifest


@app.command('run')
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.pass_context
def run_config(ctx, config_path):
    """Run every stage of a JSON configuration and write its outputs."""
    _run(ctx, load_config(config_path))


@app.command('preset')
@click.argument('name', required=False)
@click.pass_context
def preset(ctx, name):
    """Run a shipped scenario preset; lists the presets without NAME."""
    if name is None:
        click.echo('\n'.join(list_presets()))
        return
    _run(ctx, load_preset(name))
