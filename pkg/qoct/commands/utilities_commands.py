# utilities_commands.py
# Helpers shared by the subcommands

import os

import click

from qoct.pipeline import load_target, with_overrides
from qoct.toast import generate_toast
from qoct import utilities_download as download
from qoct import utilities_figure as figure


def context_config(ctx, target):
    """Loads a config file or preset and applies the group's --seed and --grid."""
    return with_overrides(load_target(target), ctx.obj.get('seed'), ctx.obj.get('grid_points'))


def output_path(ctx, name):
    out_dir = ctx.obj.get('out_dir', '.')
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def write_spectrum(ctx, js, stem):
    """Writes a joint spectrum in the group's --format; returns the written paths."""
    if ctx.obj.get('output_format') == 'csv':
        paths = download.write_joint_spectrum_csv(js, output_path(ctx, f"{stem}.csv"))
    else:
        paths = download.write_joint_spectrum(js, output_path(ctx, f"{stem}.qjs"))
    if ctx.obj.get('plot'):
        figure.write_figure_html(figure.generate_joint_spectrum_figure(js), f"{paths[0]}.html")
    return paths


def write_ascan(ctx, ascan, name, label='A-scan'):
    paths = download.write_ascan_csv(ascan, output_path(ctx, name))
    if ctx.obj.get('plot'):
        figure.write_figure_html(figure.generate_ascan_figure({label: ascan}), f"{paths[0]}.html")
    return paths


def report_written(paths):
    generate_toast('success', 'Written', ', '.join(paths))
    click.echo('\n'.join(paths))


def read_spectrum(path):
    """Reads a joint spectrum in either format, chosen by the file extension."""
    if path.lower().endswith('.csv'):
        return download.read_joint_spectrum_csv(path)
    return download.read_joint_spectrum(path)


def write_rotated(ctx, rot, stem):
    paths = download.write_rotated(rot, output_path(ctx, f"{stem}.qjs"))
    if ctx.obj.get('plot'):
        figure.write_figure_html(figure.generate_rotated_figure(rot), f"{paths[0]}.html")
    return paths
