# Shared fixtures for the qoct test suite

import pytest

from qoct.config import default_coincidence_window, default_frame_span
from qoct.utilities_core import SourceSpec, DetectionSpec, FibreSpec, make_grid
from qoct.utilities_forward import SimulationRequest, simulate_joint_spectrum
from qoct.utilities_preprocess import rotate45
from qoct.utilities_reconstruct import ascan_row_average


@pytest.fixture
def source():
    """Narrowband-pump pair source: 6.3 THz diagonal, 3.2 nm anti-diagonal."""
    return SourceSpec()


@pytest.fixture
def linear_detection():
    dispersion = default_coincidence_window / default_frame_span
    fibre = FibreSpec(5.0, (0.0, dispersion))
    return DetectionSpec(fibre, fibre)


@pytest.fixture
def grid():
    return make_grid(1550.0, 160.0, 512)


@pytest.fixture
def fd_ascan(linear_detection):
    """Noise-free simulate -> rotate -> row-average A-scan, straight from the wavelength spectrum."""

    def compute(source, obj, grid, reference_delay=0.0, detection=None):
        request = SimulationRequest(source, obj, detection or linear_detection, reference_delay, grid)
        return ascan_row_average(rotate45(simulate_joint_spectrum(request)))

    return compute
