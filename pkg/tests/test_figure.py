import json
import re

import numpy as np
import pytest

from qoct.utilities_core import AScan, JointSpectrum, make_grid
from qoct.utilities_figure import (
    generate_ascan_figure,
    generate_falloff_figure,
    generate_joint_spectrum_figure,
    read_pgm,
    write_figure_html,
    write_pgm,
)
from qoct.utilities_reconstruct import FalloffReport
from qoct.utilities_validation import FormatError, InvalidArgumentError


def test_ascan_figure_has_one_trace_per_scan():
    depth = np.linspace(0.0, 50.0, 11)
    fig = generate_ascan_figure({'Q-OCT': AScan(depth, np.arange(11.0)), 'OCT': AScan(depth, np.ones(11) * 4.0)})
    assert [trace.name for trace in fig.data] == ['Q-OCT', 'OCT']
    assert max(fig.data[1].y) == pytest.approx(1.0)
    assert fig.layout.xaxis.title.text == 'Depth (um)'
    raw = generate_ascan_figure({'OCT': AScan(depth, np.ones(11) * 4.0)}, normalise=False)
    assert max(raw.data[0].y) == pytest.approx(4.0)


def test_falloff_figure_labels_the_range():
    report = FalloffReport((40.0, 60.0, 80.0), (None, None, None), (0.0, -3.0, -9.0), 70.0, False)
    censored = FalloffReport((40.0, 60.0, 80.0), (None, None, None), (0.0, -1.0, -np.inf), np.inf, True)
    fig = generate_falloff_figure({'compensated': report, 'raw': censored})
    assert fig.data[0].name == 'compensated (70 um)'
    assert fig.data[1].name == 'raw'
    assert np.isnan(fig.data[1].y[2])


def test_joint_spectrum_heatmap_and_html(tmp_path):
    grid = make_grid(1550.0, 20.0, 8)
    js = JointSpectrum(grid, grid, np.eye(8))
    fig = generate_joint_spectrum_figure(js)
    assert fig.data[0].type == 'heatmap'
    assert fig.layout.yaxis.title.text == 'Channel 1 (nm)'
    path = str(tmp_path / 'spectrum.html')
    write_figure_html(fig, path)
    html = (tmp_path / 'spectrum.html').read_text()
    assert 'plotly' in html
    assert re.search(r'"format":\s*"svg"', html)
    assert re.search(r'"filename":\s*"spectrum"', html)


@pytest.mark.parametrize('bit_depth, maxval', [(8, 255), (16, 65535)])
def test_pgm_scaling(tmp_path, bit_depth, maxval):
    values = np.array([[0.0, 1.0, 2.0], [4.0, 3.0, 0.5]])
    path = str(tmp_path / 'map.pgm')
    sidecar = write_pgm(values, path, bit_depth, axes={'rows': 'sum_frequency'})
    pixels, read_maxval = read_pgm(path)
    assert read_maxval == maxval
    assert pixels.shape == (2, 3)
    assert pixels[1, 0] == maxval
    assert pixels[0, 0] == 0
    assert pixels[0, 2] == round(maxval / 2)
    with open(sidecar) as handle:
        document = json.load(handle)
    assert document['scale_max'] == 4.0
    assert document['rows'] == 'sum_frequency'


def test_pgm_errors(tmp_path):
    with pytest.raises(InvalidArgumentError):
        write_pgm(np.ones((2, 2)), str(tmp_path / 'map.pgm'), bit_depth=12)
    bogus = tmp_path / 'bogus.pgm'
    bogus.write_bytes(b'P2\n2 2\n255\n0 0 0 0')
    with pytest.raises(FormatError):
        read_pgm(str(bogus))
