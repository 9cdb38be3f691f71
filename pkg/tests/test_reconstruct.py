import numpy as np
import pytest

from qoct.utilities_core import AScan, SourceSpec, layered_object, make_grid, mirror
from qoct.utilities_forward import ClassicalSource, TimeDomainTrace, simulate_classical_fringes
from qoct.utilities_preprocess import RotatedSpectrum
from qoct.utilities_reconstruct import (
    ArtefactReport,
    ascan_2dft_diagonal,
    ascan_batch,
    ascan_row_average,
    classical_ascan,
    falloff_analysis,
    fourier_map,
    match_artefacts,
    measure_peak,
    predict_artefacts,
    suppression_factor,
    trace_to_ascan,
)
from qoct.utilities_validation import EmptyFrameError, InvalidArgumentError


def _random_rotated(rng, n=64):
    values = rng.random((n, n))
    mask = rng.random((n, n)) < 0.2
    axis = np.linspace(-5.0, 5.0, n)
    return RotatedSpectrum(values, axis, axis + 380.0, mask)


@pytest.mark.parametrize('dc_removal, window', [(True, None), (False, None), (True, 'hann')])
def test_row_average_and_2dft_agree(dc_removal, window):
    rng = np.random.default_rng(7)
    for _ in range(100):
        rot = _random_rotated(rng)
        direct = ascan_row_average(rot, dc_removal=dc_removal, window=window)
        diagonal = ascan_2dft_diagonal(rot, dc_removal=dc_removal, window=window)
        np.testing.assert_array_equal(direct.depth_axis, diagonal.depth_axis)
        np.testing.assert_allclose(diagonal.amplitude, direct.amplitude,
                                   rtol=0, atol=1e-10 * direct.amplitude.max())


def test_ascan_options_are_checked():
    rot = _random_rotated(np.random.default_rng(1), 16)
    with pytest.raises(InvalidArgumentError):
        ascan_row_average(rot, window='hamming')
    masked = RotatedSpectrum(np.ones((16, 16)), rot.u_axis, rot.v_axis, np.ones((16, 16), bool))
    with pytest.raises(EmptyFrameError):
        ascan_row_average(masked)


def test_ascan_batch_keeps_order():
    rng = np.random.default_rng(3)
    rotated = [_random_rotated(rng, 32) for _ in range(5)]
    pooled = ascan_batch(rotated, threads=3)
    single = [ascan_row_average(rot) for rot in rotated]
    for a, b in zip(pooled, single):
        np.testing.assert_array_equal(a.amplitude, b.amplitude)
    with pytest.raises(InvalidArgumentError):
        ascan_batch(rotated, method='fastest')


def test_mirror_peak_sits_at_its_depth(fd_ascan, source, grid):
    ascan = fd_ascan(source, mirror(78.0), grid)
    assert ascan.source_kind == 'fd_qoct'
    assert ascan.depth_axis[0] == 0.0
    peak = measure_peak(ascan, (60.0, 100.0))
    assert peak.position == pytest.approx(78.0, abs=0.5)


def test_fourier_map_places_the_mirror_on_the_depth_axis(source, linear_detection, grid):
    from qoct.utilities_forward import SimulationRequest, simulate_joint_spectrum
    from qoct.utilities_preprocess import rotate45

    rot = rotate45(simulate_joint_spectrum(SimulationRequest(source, mirror(78.0), linear_detection, 0.0, grid)))
    fmap = fourier_map(rot, dc_removal=True)
    assert fmap.values.shape == rot.shape
    columns = fmap.u_depth > 30.0
    row, column = np.unravel_index(np.argmax(fmap.values[:, columns]), fmap.values[:, columns].shape)
    bin_width = fmap.u_depth[1] - fmap.u_depth[0]
    assert fmap.u_depth[columns][column] == pytest.approx(78.0, abs=bin_width)
    assert abs(fmap.v_depth[row]) <= fmap.v_depth[1] - fmap.v_depth[0]
    # real input: the mirror image at negative depth has the same magnitude
    assert fmap.values[:, fmap.u_depth < -30.0].max() == pytest.approx(fmap.values[:, columns].max(), rel=1e-9)


def test_classical_ascan_finds_the_mirror():
    grid = make_grid(1550.0, 400.0, 4096)
    spectrum = simulate_classical_fringes(ClassicalSource.from_bandwidth(1550.0, 7.6), mirror(78.0), 0.0, grid)
    ascan = classical_ascan(spectrum)
    assert ascan.source_kind == 'classical'
    assert measure_peak(ascan, (60.0, 100.0)).position == pytest.approx(78.0, abs=0.5)


def test_trace_to_ascan_sorts_and_levels():
    trace = TimeDomainTrace([3.0, 1.0, 2.0, 4.0, 5.0], [10.0, 10.0, 4.0, 10.0, 10.0])
    ascan = trace_to_ascan(trace)
    np.testing.assert_array_equal(ascan.depth_axis, [1.0, 2.0, 3.0, 4.0, 5.0])
    np.testing.assert_array_equal(ascan.amplitude, [0.0, 6.0, 0.0, 0.0, 0.0])
    assert ascan.source_kind == 'td_qoct'
    np.testing.assert_array_equal(trace_to_ascan(trace, baseline=11.0).amplitude, [1.0, 7.0, 1.0, 1.0, 1.0])


def _gaussian_ascan(peaks, width=10.0, stop=500.0, step=0.5):
    depth = np.arange(0.0, stop + step / 2.0, step)
    amplitude = np.zeros_like(depth)
    for position, height in peaks:
        amplitude += height * np.exp(-4.0 * np.log(2.0) * (depth - position) ** 2 / width ** 2)
    return AScan(depth, amplitude)


def test_measure_peak_on_a_gaussian():
    peak = measure_peak(_gaussian_ascan([(80.25, 1.0)]), (50.0, 110.0))
    assert peak.position == pytest.approx(80.25, abs=0.05)
    assert peak.height == pytest.approx(1.0, abs=1e-3)
    assert peak.fwhm == pytest.approx(10.0, abs=0.05)
    assert peak.asymmetry == pytest.approx(1.0, rel=0.05)


def test_measure_peak_sees_a_trailing_shoulder():
    peak = measure_peak(_gaussian_ascan([(80.0, 1.0), (92.0, 0.3)]), (50.0, 130.0))
    assert peak.asymmetry > 2.0


def test_measure_peak_without_a_peak():
    ascan = _gaussian_ascan([(80.0, 1.0)])
    with pytest.raises(InvalidArgumentError):
        measure_peak(ascan, (150.0, 200.0))
    with pytest.raises(InvalidArgumentError):
        measure_peak(ascan, (600.0, 700.0))


FALLOFF_DEPTHS = np.arange(40.0, 361.0, 20.0)


def test_exponential_falloff_range():
    ascans = [(z, _gaussian_ascan([(z, np.exp(-z / 200.0))])) for z in FALLOFF_DEPTHS]
    report = falloff_analysis(ascans)
    # 6 dB below the height at 40 um
    assert report.six_db_range == pytest.approx(40.0 + 6.0 * 200.0 / (20.0 * np.log10(np.e)), abs=0.5)
    assert report.six_db_range == pytest.approx(178.15, abs=0.5)
    assert not report.censored
    assert report.flags == ()
    assert report.heights_db[0] == pytest.approx(0.0)


def test_flat_falloff_is_censored():
    ascans = [(z, _gaussian_ascan([(z, 1.0)])) for z in FALLOFF_DEPTHS[:5]]
    report = falloff_analysis(ascans)
    assert report.six_db_range == np.inf
    assert report.censored
    first = falloff_analysis(ascans, reference_height=10.0)
    assert first.six_db_range == FALLOFF_DEPTHS[0]
    assert first.flags == ('below_threshold_at_first_depth',)


def test_non_monotonic_falloff_is_flagged():
    heights = [1.0, 0.8, 0.4, 0.9]
    ascans = [(z, _gaussian_ascan([(z, h)])) for z, h in zip(FALLOFF_DEPTHS, heights)]
    report = falloff_analysis(ascans)
    assert 60.0 < report.six_db_range < 80.0
    assert report.censored
    assert report.flags == ('non_monotonic',)


def test_falloff_input_checks():
    ascan = _gaussian_ascan([(40.0, 1.0)])
    with pytest.raises(InvalidArgumentError):
        falloff_analysis([(40.0, ascan), (60.0, ascan)])
    with pytest.raises(InvalidArgumentError):
        falloff_analysis([(60.0, ascan), (40.0, ascan), (80.0, ascan)])


def test_suppression_factor():
    assert suppression_factor(0.7986, 0.0) == pytest.approx(1.0)
    # glass (100 um) and plastic (260 um) layers for the default pair source
    delta = SourceSpec().antidiagonal_frequency_fwhm
    assert suppression_factor(delta, 100.0 / 299.792458) == pytest.approx(0.777, abs=2e-3)
    assert suppression_factor(delta, 260.0 / 299.792458) == pytest.approx(0.181, abs=2e-3)


def test_two_interface_prediction():
    report = predict_artefacts(layered_object([50.0, 200.0], 0.2), SourceSpec(), 0.0)
    assert isinstance(report, ArtefactReport)
    assert [entry.position for entry in report.structural] == [50.0, 200.0]
    assert [entry.predicted_height for entry in report.structural] == pytest.approx([0.01, 0.01])
    (midpoint,), (stationary,) = report.midpoint, report.stationary
    assert midpoint.position == pytest.approx(125.0)
    assert stationary.position == pytest.approx(75.0)
    assert midpoint.suppression == pytest.approx(0.5665, abs=1e-3)
    assert midpoint.predicted_height == pytest.approx(0.01078, rel=1e-2)
    assert stationary.predicted_height == pytest.approx(midpoint.predicted_height)
    assert midpoint.interfaces == stationary.interfaces == (0, 1)


def test_prediction_counts_grow_with_pairs():
    report = predict_artefacts(layered_object([35.0, 185.0, 215.0, 365.0], 0.2), SourceSpec(), 0.0)
    assert len(report.structural) == 4
    assert len(report.midpoint) == len(report.stationary) == 6
    assert len(report.entries) == 16


def test_matching_marks_missing_peaks():
    report = predict_artefacts(layered_object([50.0, 200.0], 0.2), SourceSpec(), 0.0)
    ascan = _gaussian_ascan([(50.3, 1.0), (200.0, 1.0), (124.6, 0.5)])
    matched = match_artefacts(report, ascan)
    found = {match.entry.kind: match.found for match in matched.matches if match.entry.kind != 'structural'}
    assert found == {'midpoint': True, 'stationary': False}
    structural = [match for match in matched.matches if match.entry.kind == 'structural']
    assert all(match.found for match in structural)
    assert structural[0].measured_position == pytest.approx(50.5)
    assert match_artefacts(report, ascan, tolerance=0.1).matches[0].found is False
