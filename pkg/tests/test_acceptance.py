# End-to-end checks of resolution, dispersion behaviour, artefacts, imaging range and noise

import numpy as np
import pytest

from qoct.utilities_core import (
    DetectionSpec,
    Dispersion,
    FibreSpec,
    JointSpectrum,
    SourceSpec,
    layered_object,
    make_grid,
    mirror,
)
from qoct.utilities_forward import (
    ClassicalSource,
    SimulationRequest,
    apply_shot_noise,
    default_time_domain_grid,
    simulate_classical_fringes,
    simulate_joint_spectrum,
    simulate_time_domain,
)
from qoct.utilities_preprocess import compensate_pump, estimate_row_frequencies, rotate45
from qoct.utilities_reconstruct import (
    ascan_row_average,
    classical_ascan,
    falloff_analysis,
    measure_peak,
    predict_artefacts,
    suppression_factor,
    trace_to_ascan,
)

CLASSICAL_GRID = make_grid(1550.0, 400.0, 4096)

# fs^3; widens the 10.5 um single-frame peak to 11.4 um
TD_FD_BETA3 = 7.41e4


def _classical_fwhm(frequency_fwhm, obj=None):
    source = ClassicalSource.from_bandwidth(1550.0, frequency_fwhm)
    spectrum = simulate_classical_fringes(source, obj or mirror(300.0), 0.0, CLASSICAL_GRID)
    return measure_peak(classical_ascan(spectrum), (150.0, 450.0)).fwhm


def test_single_frame_quantum_resolution(fd_ascan, source, grid):
    peak = measure_peak(fd_ascan(source, mirror(78.0), grid), (60.0, 100.0))
    assert peak.fwhm == pytest.approx(10.4, rel=0.05)


def test_classical_resolution():
    assert _classical_fwhm(7.6) == pytest.approx(17.5, rel=0.05)


def test_quantum_resolution_is_twice_the_classical(fd_ascan, source, grid):
    quantum = measure_peak(fd_ascan(source, mirror(78.0), grid), (60.0, 100.0)).fwhm
    classical = _classical_fwhm(source.diagonal_fwhm)
    assert quantum / classical == pytest.approx(0.5, rel=0.02)


def test_whole_spectrum_resolution(fd_ascan):
    wide = SourceSpec(diagonal_fwhm=22.8)
    peak = measure_peak(fd_ascan(wide, mirror(78.0), make_grid(1550.0, 700.0, 1024)), (60.0, 100.0))
    assert peak.fwhm == pytest.approx(2.9, rel=0.1)


def test_even_order_dispersion_cancels(fd_ascan):
    gvd = Dispersion(10000.0, 0.0)
    plain, broadened = _classical_fwhm(7.6), _classical_fwhm(7.6, mirror(300.0, arm_imbalance=gvd))
    assert broadened >= 3.0 * plain

    narrow_pump = SourceSpec(pump_fwhm=0.5)
    grid = make_grid(1550.0, 160.0, 1024)
    reference = measure_peak(fd_ascan(narrow_pump, mirror(78.0), grid), (60.0, 100.0)).fwhm
    imbalanced = measure_peak(fd_ascan(narrow_pump, mirror(78.0, arm_imbalance=gvd), grid), (60.0, 100.0)).fwhm
    assert imbalanced == pytest.approx(reference, rel=0.02)


def test_third_order_dispersion_leaves_a_one_sided_tail(fd_ascan, source, grid):
    # the oscillating tail of a 3e6 fs^3 imbalance runs ~160 um past the mirror; the window must hold all of it
    window = (20.0, 240.0)
    tod = measure_peak(fd_ascan(source, mirror(78.0, arm_imbalance=Dispersion(0.0, 3.0e6)), grid), window)
    assert tod.asymmetry > 5.0
    assert tod.position > 78.0
    clean = measure_peak(fd_ascan(source, mirror(78.0), grid), window)
    assert 0.8 <= clean.asymmetry <= 1.2


def test_glass_layer_peaks_and_artefacts(fd_ascan, source, grid):
    ascan = fd_ascan(source, layered_object([50.0, 200.0], 0.2), grid)
    report = predict_artefacts(layered_object([50.0, 200.0], 0.2), source, 0.0)
    assert [entry.position for entry in report.entries] == pytest.approx([50.0, 200.0, 125.0, 75.0])
    for entry in report.entries:
        peak = measure_peak(ascan, (entry.position - 5.0, entry.position + 5.0))
        assert abs(peak.position - entry.position) <= ascan.step


def test_wider_layers_suppress_artefacts_more(fd_ascan, source, grid):
    delta = source.antidiagonal_frequency_fwhm
    plastic = suppression_factor(delta, 260.0 / 299.792458)
    glass = suppression_factor(delta, 100.0 / 299.792458)
    assert plastic < glass

    z1, z_ref = 300.0, 120.0
    # separations on whole multiples of the pump half wavelength keep the pair phase at |cos| = 1
    for m in np.rint(np.linspace(52, 400, 10)):
        d = float(m) * 0.775
        ascan = fd_ascan(source, layered_object([z1, z1 + d], 0.5), grid, reference_delay=z_ref)
        structural = measure_peak(ascan, (z1 - z_ref - 5.0, z1 - z_ref + 5.0)).height
        midpoint_depth = z1 + d / 2.0 - z_ref
        midpoint = measure_peak(ascan, (midpoint_depth - 5.0, midpoint_depth + 5.0)).height
        expected = 2.0 * suppression_factor(delta, d / 299.792458)
        assert midpoint / structural == pytest.approx(expected, rel=0.1)


@pytest.fixture(scope='module')
def falloff_ascans():
    source = SourceSpec()
    fibre = FibreSpec(5.0, (0.0, 12500.0 / 102.0))
    detection = DetectionSpec(fibre, fibre, spectral_resolution_fwhm=1.56)
    obj = mirror(0.0, arm_imbalance=Dispersion(23000.0, 0.0))
    grid = make_grid(1550.0, 102.0, 512)
    raw, compensated = [], []
    for depth in np.arange(40.0, 361.0, 20.0):
        rot = rotate45(simulate_joint_spectrum(SimulationRequest(source, obj, detection, depth, grid)))
        raw.append((depth, ascan_row_average(rot)))
        compensated.append((depth, ascan_row_average(compensate_pump(rot, estimate_row_frequencies(rot)))))
    return raw, compensated


def test_pump_compensation_extends_the_imaging_range(falloff_ascans):
    raw, compensated = falloff_ascans
    after = falloff_analysis(compensated)
    # both curves on the dB scale of the best shallow peak
    before = falloff_analysis(raw, reference_height=after.peaks[0].height)
    assert after.six_db_range == pytest.approx(240.0, rel=0.2)
    assert before.six_db_range == pytest.approx(190.0, rel=0.2)
    assert after.six_db_range > before.six_db_range
    for depth, gained, lost in zip(after.depths, after.peaks, before.peaks):
        if depth <= 220.0:
            assert gained.height > lost.height


def test_time_and_fourier_domain_widths_agree(fd_ascan, source, linear_detection, grid):
    # a small third-order imbalance broadens both traces alike; second order would cancel
    obj = mirror(78.0, arm_imbalance=Dispersion(0.0, TD_FD_BETA3))
    positions = np.arange(38.0, 118.25, 0.5)
    trace = simulate_time_domain(source, obj, linear_detection, positions, 1.0,
                                 grid=default_time_domain_grid(source))
    td = measure_peak(trace_to_ascan(trace), (38.0, 118.0)).fwhm
    fd = measure_peak(fd_ascan(source, obj, grid), (60.0, 100.0)).fwhm
    assert td == pytest.approx(11.4, rel=0.05)
    assert fd == pytest.approx(11.4, rel=0.05)
    assert td == pytest.approx(fd, rel=0.02)


def test_shot_noise_statistics():
    grid = make_grid(1550.0, 20.0, 100)
    expected = JointSpectrum(grid, grid, np.full((100, 100), 100.0))
    sampled = apply_shot_noise(expected, 2024).values
    assert sampled.var() / sampled.mean() == pytest.approx(1.0, abs=0.1)
    assert sampled.mean() == pytest.approx(100.0, abs=0.5)
    np.testing.assert_array_equal(apply_shot_noise(expected, 2024).values, sampled)


def test_pump_compensation_gain_does_not_depend_on_depth(falloff_ascans):
    # a second-order imbalance shifts each row's fringe delay by the same amount at every depth
    raw, compensated = falloff_ascans
    after, before = falloff_analysis(compensated), falloff_analysis(raw)
    gains = np.array([gained.height / lost.height for gained, lost in zip(after.peaks, before.peaks)])
    assert np.all(gains > 1.05)
    assert np.ptp(gains) < 0.05 * gains.mean()
    assert before.six_db_range == pytest.approx(after.six_db_range, rel=0.03)
