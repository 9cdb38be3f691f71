# utilities_figure.py

import json
import logging
import os

import numpy as np
import plotly.graph_objects as go

from qoct.config import line_color_palette, plot_settings, axis_units
from qoct.utilities_validation import fail, InvalidArgumentError, FormatError

log = logging.getLogger(__name__)

PGM_MAGIC = b'P5'


def update_figure_layout(fig, x_title, y_title, settings=None):
    """
    Applies the shared font, size and background settings to a figure.

    Parameters:
    ----------
    fig : plotly.graph_objs._figure.Figure
    x_title, y_title : str
    settings : dict, optional
        Same keys as config.plot_settings; missing keys fall back to it.

    Returns:
    -------
    plotly.graph_objs._figure.Figure
    """
    settings = {**plot_settings, **(settings or {})}
    font = dict(family=settings['font_selector'], size=settings['font_size'], color='black')
    fig.update_layout(
        height=settings['height'],
        width=settings['width'],
        plot_bgcolor='white',
        font=font,
        hoverlabel=dict(font_size=settings['font_size'], font_family=settings['font_selector']),
        legend=dict(font=font),
    )
    fig.update_xaxes(title_text=x_title, showline=True, linecolor='black', ticks='outside')
    fig.update_yaxes(title_text=y_title, showline=True, linecolor='black', ticks='outside')
    return fig


def generate_ascan_figure(ascans, settings=None, normalise=True):
    """
    Line plot of one or more A-scans.

    Parameters:
    ----------
    ascans : dict
        Legend label -> AScan.
    normalise : bool
        Scale every trace to a peak of 1.

    Returns:
    -------
    plotly.graph_objs._figure.Figure
    """
    settings = {**plot_settings, **(settings or {})}
    fig = go.Figure()
    for index, (label, ascan) in enumerate(ascans.items()):
        shown = ascan.normalised() if normalise else ascan
        fig.add_trace(go.Scatter(
            x=shown.depth_axis,
            y=shown.amplitude,
            mode='lines',
            name=label,
            line=dict(color=line_color_palette[index % len(line_color_palette)],
                      width=settings['line_width']),
        ))
    y_title = 'Normalised amplitude' if normalise else 'Amplitude'
    return update_figure_layout(fig, 'Depth (um)', y_title, settings)


def generate_falloff_figure(reports, settings=None):
    """
    Peak height in dB against depth, one trace per fall-off report, with the -6 dB line.

    Parameters:
    ----------
    reports : dict
        Legend label -> FalloffReport.
    """
    settings = {**plot_settings, **(settings or {})}
    fig = go.Figure()
    for index, (label, report) in enumerate(reports.items()):
        heights = np.array(report.heights_db, dtype=float)
        heights[~np.isfinite(heights)] = np.nan
        fig.add_trace(go.Scatter(
            x=list(report.depths),
            y=heights,
            mode='lines+markers',
            name=f"{label} ({report.six_db_range:.0f} um)" if np.isfinite(report.six_db_range) else label,
            line=dict(color=line_color_palette[index % len(line_color_palette)],
                      width=settings['line_width']),
        ))
    fig.add_hline(y=-6.0, line_dash='dash', line_color='grey')
    return update_figure_layout(fig, 'Depth (um)', 'Peak height (dB)', settings)


def generate_heatmap_figure(values, x_axis, y_axis, x_title, y_title, settings=None):
    """Greyscale heatmap of a matrix whose rows follow y_axis."""
    settings = {**plot_settings, **(settings or {})}
    fig = go.Figure(go.Heatmap(z=values, x=x_axis, y=y_axis, colorscale=settings['colorscale'],
                               reversescale=True))
    return update_figure_layout(fig, x_title, y_title, settings)


def generate_joint_spectrum_figure(js, settings=None):
    unit1 = axis_units[js.axis1.axis_kind]
    unit2 = axis_units[js.axis2.axis_kind]
    return generate_heatmap_figure(np.asarray(js.values), js.axis2.values, js.axis1.values,
                                   f"Channel 2 ({unit2})", f"Channel 1 ({unit1})", settings)


def generate_rotated_figure(rot, settings=None):
    return generate_heatmap_figure(np.asarray(rot.values), rot.u_axis, rot.v_axis,
                                   'Difference frequency (THz)', 'Sum frequency (THz)', settings)


def generate_fourier_map_figure(fmap, settings=None):
    return generate_heatmap_figure(fmap.values, fmap.u_depth, fmap.v_depth,
                                   'Depth along difference frequency (um)',
                                   'Depth along sum frequency (um)', settings)


def write_figure_html(fig, path):
    """
    Writes a standalone HTML file; plotly.js itself is loaded from the CDN.
    The camera button of the page exports the figure as SVG.
    """
    filename = os.path.splitext(os.path.basename(path))[0]
    config = {
        'toImageButtonOptions': {
            'format': 'svg',
            'filename': filename,
            'height': None,
            'width': None,
        }
    }
    fig.write_html(path, include_plotlyjs='cdn', config=config)
    log.info("Figure written to %s.", path)
    return path


# ---------------------------------------------------------------------------
# PGM heatmaps
# ---------------------------------------------------------------------------

def write_pgm(values, path, bit_depth=8, axes=None):
    """
    Writes a matrix as a binary greyscale PGM scaled to its maximum, plus a JSON sidecar.

    Parameters:
    ----------
    values : np.ndarray
        Non-negative matrix; row 0 is the top of the image.
    path : str
        Image path; the sidecar is written to `path + '.json'`.
    bit_depth : int
        8 or 16. 16-bit samples are big-endian as the format requires.
    axes : dict, optional
        Extra sidecar content, typically axis kinds, units, starts and steps.

    Returns:
    -------
    str
        Sidecar path.
    """
    if bit_depth not in (8, 16):
        fail(InvalidArgumentError, f"PGM bit depth must be 8 or 16, got {bit_depth}.")
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        fail(InvalidArgumentError, "PGM images are two-dimensional.")
    maxval = 255 if bit_depth == 8 else 65535
    peak = values.max() if values.size else 0.0
    scaled = np.zeros_like(values) if peak <= 0 else np.clip(values, 0.0, None) / peak * maxval
    pixels = np.rint(scaled).astype('u1' if bit_depth == 8 else '>u2')

    height, width = values.shape
    with open(path, 'wb') as handle:
        handle.write(PGM_MAGIC + f"\n{width} {height}\n{maxval}\n".encode('ascii'))
        handle.write(pixels.tobytes())

    sidecar = f"{path}.json"
    document = {'width': width, 'height': height, 'maxval': maxval, 'scale_max': float(peak)}
    document.update(axes or {})
    with open(sidecar, 'w') as handle:
        json.dump(document, handle, indent=2)
    log.info("Heatmap written to %s (%dx%d, %d-bit).", path, width, height, bit_depth)
    return sidecar


def read_pgm(path):
    """
    Reads a binary PGM written by write_pgm.

    Returns:
    -------
    tuple
        (pixels as an integer array, maxval)
    """
    with open(path, 'rb') as handle:
        content = handle.read()
    fields = content.split(maxsplit=4)
    if len(fields) < 4 or fields[0] != PGM_MAGIC:
        fail(FormatError, f"{path} is not a binary PGM file.")
    width, height, maxval = (int(field) for field in fields[1:4])
    dtype = 'u1' if maxval < 256 else '>u2'
    payload = content[len(content) - width * height * np.dtype(dtype).itemsize:]
    pixels = np.frombuffer(payload, dtype=dtype)
    if pixels.size != width * height:
        fail(FormatError, f"{path} holds {pixels.size} pixels, header says {width * height}.")
    return pixels.reshape(height, width), maxval
