import numpy as np
import pytest

from qoct.config import default_coincidence_window, default_frame_span
from qoct.utilities_acquisition import (
    Frame,
    StitchPlan,
    calibrate_effective_dispersion,
    calibrate_histogram,
    default_fibre,
    estimate_normalisation,
    frame_interior_mask,
    frames_for_span,
    group_delay,
    histogram_events,
    overlap_weights,
    plan_antidiagonal_frames,
    select_frame,
    stitch_frames,
    to_time_histogram,
    wavelength_from_arrival,
)
from qoct.utilities_core import DetectionSpec, FibreSpec, SourceSpec, make_grid, mirror
from qoct.utilities_download import EVENT_DTYPE
from qoct.utilities_forward import SimulationRequest, simulate_joint_spectrum
from qoct.utilities_validation import EmptyFrameError, InvalidArgumentError, OutOfWindowError


def test_group_delay_of_linear_fibre():
    fibre = FibreSpec(5.0, (10.0, 122.5))
    assert group_delay(fibre, 1560.0) == pytest.approx(10.0 + 1225.0)
    np.testing.assert_allclose(group_delay(fibre, np.array([1550.0, 1540.0])), [10.0, 10.0 - 1225.0])
    with pytest.raises(InvalidArgumentError):
        group_delay(fibre, 3000.0)


def test_default_fibre_reproduces_the_frame_span():
    fibre = default_fibre()
    assert fibre.linear_dispersion == pytest.approx(12500.0 / 102.0)
    assert calibrate_effective_dispersion(102.0, 12500.0) == pytest.approx(122.549, rel=1e-5)
    span = group_delay(fibre, 1601.0) - group_delay(fibre, 1499.0)
    # the quadratic term is symmetric about lambda_ref and cancels in the span
    assert span == pytest.approx(12500.0)


def test_fibre_inversion():
    fibre = default_fibre()
    for wavelength in (1480.25, 1550.0, 1580.3):
        assert wavelength_from_arrival(fibre, group_delay(fibre, wavelength)) == pytest.approx(wavelength, abs=1e-6)
    with pytest.raises(OutOfWindowError):
        wavelength_from_arrival(fibre, 1.0e9)


@pytest.mark.parametrize('overlap', [60, 61, 62, 63, 64, 65])
def test_nine_frames_cover_the_whole_spectrum(overlap):
    assert frames_for_span(398.0, 102.0, overlap) == 9


def test_frames_for_span_edges():
    assert frames_for_span(80.0, 102.0, 10.0) == 1
    with pytest.raises(InvalidArgumentError):
        frames_for_span(398.0, 102.0, 102.0)


def test_overlap_weights_conserve_counts():
    weights = overlap_weights(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 0.5, 1.5, 3.0]))
    np.testing.assert_allclose(weights.sum(axis=0), 1.0)
    np.testing.assert_allclose(weights[:, 1], [0.0, 0.5, 0.5])
    # reversed source edges give the same shares
    reversed_weights = overlap_weights(np.array([3.0, 2.0, 1.0, 0.0]), np.array([0.0, 0.5, 1.5, 3.0]))
    np.testing.assert_allclose(reversed_weights[:, ::-1], weights)


def _spectrum(grid, source=None, position=78.0):
    source = source or SourceSpec()
    return simulate_joint_spectrum(SimulationRequest(source, mirror(position), DetectionSpec(), 0.0, grid))


def test_time_histogram_conserves_counts():
    js = _spectrum(make_grid(1550.0, 160.0, 128))
    hist = to_time_histogram(js, DetectionSpec())
    assert hist.axis1.axis_kind == 'arrival_time'
    assert hist.axis1.step == pytest.approx(24.0)
    assert hist.values.sum() == pytest.approx(js.values.sum(), rel=1e-9)
    assert hist.provenance[-1] == 'to_time_histogram {"time_bin": 24.0}'
    # bin edges sit on multiples of the time bin
    assert (hist.axis1.start - 12.0) / 24.0 == pytest.approx(round((hist.axis1.start - 12.0) / 24.0))
    with pytest.raises(InvalidArgumentError):
        to_time_histogram(hist, DetectionSpec())


def test_select_frame_crops_one_window():
    hist = to_time_histogram(_spectrum(make_grid(1550.0, 160.0, 128)), DetectionSpec())
    frame = select_frame(hist, (-6250.0, -6250.0), 12500.0, index=3, coincidence_window=12500.0)
    assert isinstance(frame, Frame)
    n = frame.histogram.shape[0]
    assert abs(n - 12500.0 / 24.0) <= 1
    assert frame.histogram.axis1.start >= -6250.0
    assert frame.histogram.frame_meta.window == 12500.0
    assert frame.histogram.provenance[-1].startswith('select_frame')
    assert frame.index == 3

    with pytest.raises(EmptyFrameError):
        select_frame(hist, (1.0e6, 1.0e6), 12500.0)
    with pytest.raises(InvalidArgumentError):
        select_frame(hist, (-6250.0, -6250.0), 20000.0, coincidence_window=12500.0)


def test_linear_calibration_relabels_axes():
    detection = DetectionSpec()
    js = _spectrum(make_grid(1550.0, 160.0, 128))
    hist = to_time_histogram(js, detection)
    calibrated = calibrate_histogram(hist, detection)
    assert calibrated.axis1.axis_kind == 'wavelength'
    assert calibrated.axis1.step == pytest.approx(24.0 / detection.fibre1.linear_dispersion)
    assert calibrated.values.sum() == pytest.approx(hist.values.sum())
    nonlinear = calibrate_histogram(hist, detection, nonlinear=True)
    assert nonlinear.values.sum() == pytest.approx(hist.values.sum(), rel=1e-9)
    assert nonlinear.provenance[-1] == 'calibrate_histogram {"nonlinear": true}'


def test_nonlinear_calibration_recovers_the_ridge_center():
    detection = DetectionSpec()
    grid = make_grid(1550.0, 160.0, 256)
    source = SourceSpec(antidiagonal_fwhm=1.0)
    js = _spectrum(grid, source)
    calibrated = calibrate_histogram(to_time_histogram(js, detection), detection, nonlinear=True)
    weights = calibrated.values.sum(axis=1)
    centroid = np.sum(weights * calibrated.axis1.values) / weights.sum()
    original = np.sum(js.values.sum(axis=1) * grid.values) / js.values.sum()
    assert centroid == pytest.approx(original, abs=0.5)


@pytest.fixture(scope='module')
def whole_histogram():
    """Whole-spectrum histogram on a lattice that fits 9 frames of 257 bins, 93 bins apart."""
    dispersion = default_coincidence_window / default_frame_span
    fibre = FibreSpec(5.0, (0.0, dispersion))
    detection = DetectionSpec(fibre, fibre, time_bin=default_coincidence_window / 257.0)
    source = SourceSpec(diagonal_fwhm=22.8)
    grid = make_grid(1550.0, 398.0, 1001)
    js = simulate_joint_spectrum(SimulationRequest(source, mirror(78.0), detection, 0.0, grid))
    return to_time_histogram(js, detection)


def _frames(hist, n_frames=9, frame_bins=257, step_bins=93):
    delays, window = plan_antidiagonal_frames(hist, n_frames, frame_bins, step_bins)
    return [select_frame(hist, d, window, index) for index, d in enumerate(delays)]


def test_stitching_reproduces_the_whole_spectrum(whole_histogram):
    hist = whole_histogram
    frames = _frames(hist)
    assert all(frame.histogram.shape == (257, 257) for frame in frames)
    plan = StitchPlan(frames, overlap_bins=100)
    stitched = stitch_frames(plan)
    n1, n2 = stitched.shape
    union_nm = n1 * stitched.axis1.step / (default_coincidence_window / default_frame_span)
    assert union_nm == pytest.approx(398.0, abs=4.0)

    interior = frame_interior_mask(plan, margin=2)
    direct = np.asarray(hist.values)[:n1, :n2]
    np.testing.assert_allclose(stitched.values[interior], direct[interior], rtol=1e-6,
                               atol=1e-9 * direct.max())
    assert np.all(stitched.values[~frame_interior_mask(plan)] == 0.0)
    assert stitched.provenance[-1] == 'stitch_frames {"frames": 9}'


def test_stitching_ignores_frame_order(whole_histogram):
    frames = _frames(whole_histogram)
    forward = stitch_frames(StitchPlan(frames))
    backward = stitch_frames(StitchPlan(frames[::-1]))
    np.testing.assert_array_equal(forward.values, backward.values)


def test_gain_mismatch_is_normalised(whole_histogram):
    frames = _frames(whole_histogram)
    bright = frames[1].histogram
    frames[1] = Frame(bright.derive(bright.values * 2.0, 'gain'), frames[1].delays, frames[1].window, 1)
    plan = estimate_normalisation(StitchPlan(frames))
    assert plan.normalisation[1] == pytest.approx(0.5, rel=1e-9)
    assert plan.normalisation[4] == 1.0
    reference = stitch_frames(StitchPlan(_frames(whole_histogram)))
    np.testing.assert_allclose(stitch_frames(plan).values, reference.values, rtol=1e-9,
                               atol=1e-12 * reference.values.max())


def test_insufficient_overlap_is_rejected(whole_histogram):
    with pytest.raises(InvalidArgumentError):
        stitch_frames(StitchPlan(_frames(whole_histogram), overlap_bins=200))
    with pytest.raises(InvalidArgumentError):
        plan_antidiagonal_frames(whole_histogram, 9, 257, 200)


def test_event_stream_histogram():
    events = np.array([
        (0, 0), (1, 100), (2, 300), (1, 150),
        (0, 12500), (1, 12700), (2, 12900),
        (0, 25000), (1, 25100),
    ], dtype=EVENT_DTYPE)
    hist = histogram_events(events[::-1], 50.0, 1000.0)
    assert hist.shape == (20, 20)
    assert hist.values.sum() == 2.0
    assert hist.values[2, 6] == 1.0
    assert hist.values[4, 8] == 1.0
    with pytest.raises(InvalidArgumentError):
        histogram_events(events[events['channel'] != 0], 50.0, 1000.0)
