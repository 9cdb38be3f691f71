# utilities_acquisition.py
# Detection chain: dispersive fibres, arrival-time histograms, frames and stitching

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import polynomial
from scipy.optimize import bisect

from qoct.config import (
    default_frame_span,
    default_coincidence_window,
    default_fibre_length,
    default_fibre_dispersion_per_km,
    default_fibre_slope_per_km,
    default_center_wavelength,
    fibre_inversion_tolerance,
    stitch_offset_tolerance,
)
from qoct.utilities_core import (
    FibreSpec,
    FrameMeta,
    JointSpectrum,
    grid_from_start,
    provenance_entry,
)
from qoct.utilities_validation import (
    fail,
    InvalidArgumentError,
    OutOfWindowError,
    EmptyFrameError,
    require_positive,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Frame:
    histogram: JointSpectrum
    delays: tuple     # (d1, d2) ps, window start per channel
    window: float     # ps
    index: int = 0

    def __post_init__(self):
        if self.histogram.axis1.axis_kind != 'arrival_time' or self.histogram.axis2.axis_kind != 'arrival_time':
            fail(InvalidArgumentError, "Frames hold arrival-time histograms.")


@dataclass(frozen=True)
class StitchPlan:
    """
    Frames to merge. `overlap_bins` is either one minimum for every adjacent
    pair or one value per pair (frames ordered by position). `normalisation`
    holds per-frame gains once estimated.
    """
    frames: tuple
    overlap_bins: object = 0
    normalisation: tuple = None

    def __post_init__(self):
        object.__setattr__(self, 'frames', tuple(self.frames))
        overlaps = np.atleast_1d(np.asarray(self.overlap_bins))
        if np.any(overlaps < 0):
            fail(InvalidArgumentError, "Overlap bins must be non-negative.")
        if self.normalisation is not None:
            scales = tuple(float(s) for s in self.normalisation)
            if len(scales) != len(self.frames) or any(s <= 0 for s in scales):
                fail(InvalidArgumentError, "Need one positive scale factor per frame.")
            object.__setattr__(self, 'normalisation', scales)


# ---------------------------------------------------------------------------
# Fibres
# ---------------------------------------------------------------------------

def group_delay(fibre, wavelength):
    """
    Group delay of a fibre in ps.

    Parameters:
    ----------
    fibre : FibreSpec
    wavelength : float or np.ndarray
        nm, inside fibre.valid_range.

    Returns:
    -------
    float or np.ndarray
    """
    wavelength = np.asarray(wavelength, dtype=float)
    lo, hi = fibre.valid_range
    if np.any(wavelength < lo) or np.any(wavelength > hi):
        fail(InvalidArgumentError,
             f"Wavelengths must lie in the fibre's monotonic range {lo:.1f}-{hi:.1f} nm.")
    result = polynomial.polyval(wavelength - fibre.lambda_ref, fibre.group_delay_coeffs)
    return float(result) if np.ndim(result) == 0 else result


def calibrate_effective_dispersion(frame_span, window):
    """
    Effective dispersion (ps/nm) that maps `frame_span` nm onto one window.

    Parameters:
    ----------
    frame_span : float
        Wavelength range per frame, nm.
    window : float
        Coincidence window, ps.
    """
    require_positive(frame_span, 'frame_span')
    require_positive(window, 'window')
    return window / frame_span


def frames_for_span(total_span, frame_span, overlap):
    """
    Number of frames of `frame_span` with `overlap` (same units) needed to cover `total_span`.
    """
    require_positive(total_span, 'total_span')
    require_positive(frame_span, 'frame_span')
    if not 0 <= overlap < frame_span:
        fail(InvalidArgumentError, "Overlap must be non-negative and smaller than the frame span.")
    if total_span <= frame_span:
        return 1
    return math.ceil((total_span - frame_span) / (frame_span - overlap) - 1e-12) + 1


def default_fibre(t0=0.0, length=default_fibre_length, lambda_ref=default_center_wavelength,
                  frame_span=default_frame_span, window=default_coincidence_window,
                  slope_per_km=default_fibre_slope_per_km):
    """
    Fibre whose linear dispersion reproduces the frame span of one coincidence window.

    The quadratic term is the datasheet dispersion slope times the spool length.
    """
    effective = calibrate_effective_dispersion(frame_span, window)
    textbook = default_fibre_dispersion_per_km * length
    log.debug("Effective dispersion %.2f ps/nm against %.2f ps/nm for %.1f km of SMF.",
              effective, textbook, length)
    return FibreSpec(length, (t0, effective, slope_per_km * length / 2.0), lambda_ref)


def wavelength_from_arrival(fibre, arrival_time):
    """
    Inverts the group-delay polynomial by bisection.

    Parameters:
    ----------
    fibre : FibreSpec
    arrival_time : float
        ps.

    Returns:
    -------
    float
        Wavelength in nm, accurate to 1e-6 nm.

    Raises:
    ------
    OutOfWindowError
        When the time is outside the image of the valid wavelength range.
    """
    lo, hi = fibre.valid_range
    t_lo, t_hi = group_delay(fibre, lo), group_delay(fibre, hi)
    if not min(t_lo, t_hi) <= arrival_time <= max(t_lo, t_hi):
        fail(OutOfWindowError,
             f"Arrival time {arrival_time:.3f} ps is outside the fibre range "
             f"{min(t_lo, t_hi):.3f}-{max(t_lo, t_hi):.3f} ps.")
    coeffs = fibre.group_delay_coeffs

    def residual(wavelength):
        return polynomial.polyval(wavelength - fibre.lambda_ref, coeffs) - arrival_time

    if residual(lo) == 0:
        return lo
    if residual(hi) == 0:
        return hi
    return bisect(residual, lo, hi, xtol=fibre_inversion_tolerance, maxiter=200)


def _check_monotonic(times, channel):
    steps = np.diff(times)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        fail(InvalidArgumentError, f"Group delay of fibre {channel} is not monotonic over the grid.")


def overlap_weights(source_edges, target_edges):
    """
    Fraction of each source bin falling into each target bin.

    Parameters:
    ----------
    source_edges : np.ndarray
        n_source + 1 edges, either order.
    target_edges : np.ndarray
        n_target + 1 increasing edges.

    Returns:
    -------
    np.ndarray
        (n_target, n_source) matrix; columns sum to 1 for source bins inside the target range.
    """
    lo = np.minimum(source_edges[:-1], source_edges[1:])
    hi = np.maximum(source_edges[:-1], source_edges[1:])
    overlap = (np.minimum(hi[None, :], target_edges[1:, None])
               - np.maximum(lo[None, :], target_edges[:-1, None]))
    return np.clip(overlap, 0.0, None) / (hi - lo)[None, :]


def _time_axis(times, time_bin):
    # edges sit on multiples of the bin so histograms of different frames share one lattice
    first = math.floor(times.min() / time_bin)
    last = math.ceil(times.max() / time_bin)
    n = max(last - first, 8)
    edges = (first + np.arange(n + 1)) * time_bin
    grid = grid_from_start((first + 0.5) * time_bin, time_bin, n, 'arrival_time')
    return edges, grid


def to_time_histogram(js, detection, time_bin=None):
    """
    Rebins a wavelength joint spectrum onto arrival-time axes.

    Each wavelength bin is mapped through its fibre's group delay and its
    content shared between the overlapped time bins, so counts are conserved.
    Nonlinear fibre terms bend the joint spectrum.

    Parameters:
    ----------
    js : JointSpectrum
        Wavelength axes.
    detection : DetectionSpec
    time_bin : float, optional
        ps; detection.time_bin when omitted.

    Returns:
    -------
    JointSpectrum
        Arrival-time axes aligned to multiples of the time bin.
    """
    if js.axis1.axis_kind != 'wavelength' or js.axis2.axis_kind != 'wavelength':
        fail(InvalidArgumentError, "Time histograms are built from wavelength spectra.")
    time_bin = require_positive(time_bin if time_bin is not None else detection.time_bin, 'time_bin')

    edges1 = group_delay(detection.fibre1, js.axis1.edges)
    edges2 = group_delay(detection.fibre2, js.axis2.edges)
    _check_monotonic(edges1, 1)
    _check_monotonic(edges2, 2)

    target1, axis1 = _time_axis(edges1, time_bin)
    target2, axis2 = _time_axis(edges2, time_bin)
    weights1 = overlap_weights(edges1, target1)
    weights2 = overlap_weights(edges2, target2)
    values = weights1 @ js.values @ weights2.T
    log.debug("Time histogram %dx%d at %.3f ps per bin.", axis1.n_points, axis2.n_points, time_bin)
    return js.derive(np.clip(values, 0.0, None), provenance_entry('to_time_histogram', time_bin=time_bin),
                     axis1=axis1, axis2=axis2)


def _window_slice(axis, start, window):
    centers = axis.values
    # half-open window, tiny tolerance for centers sitting on a bin lattice
    tol = 1e-9 * max(axis.step, 1.0)
    inside = np.nonzero((centers >= start - tol) & (centers < start + window - tol))[0]
    if inside.size == 0:
        return None
    return slice(int(inside[0]), int(inside[-1]) + 1)


def select_frame(hist, delays, window, index=0, coincidence_window=None):
    """
    Crops a time-time histogram to one coincidence frame.

    Bins whose centers fall in [d1, d1 + window) x [d2, d2 + window) are kept;
    photons outside the window are dropped.

    Parameters:
    ----------
    hist : JointSpectrum
        Arrival-time axes.
    delays : tuple of float
        (d1, d2) window starts, ps.
    window : float
        ps.
    index : int
        Frame number carried on the result.
    coincidence_window : float, optional
        Upper bound for `window`.

    Returns:
    -------
    Frame
    """
    window = require_positive(window, 'window')
    if coincidence_window is not None and window > coincidence_window * (1 + 1e-9):
        fail(InvalidArgumentError, f"Frame window {window} ps exceeds the coincidence window.")
    if hist.axis1.axis_kind != 'arrival_time':
        fail(InvalidArgumentError, "Frames are selected from arrival-time histograms.")
    d1, d2 = float(delays[0]), float(delays[1])
    rows = _window_slice(hist.axis1, d1, window)
    cols = _window_slice(hist.axis2, d2, window)
    if rows is None or cols is None:
        fail(EmptyFrameError, f"Frame at delays ({d1:.1f}, {d2:.1f}) ps selects no bins.")
    n_rows, n_cols = rows.stop - rows.start, cols.stop - cols.start
    if n_rows < 8 or n_cols < 8:
        fail(EmptyFrameError, f"Frame at delays ({d1:.1f}, {d2:.1f}) ps selects fewer than 8 bins per axis.")
    axis1 = grid_from_start(hist.axis1.value_at(rows.start), hist.axis1.step, n_rows, 'arrival_time')
    axis2 = grid_from_start(hist.axis2.value_at(cols.start), hist.axis2.step, n_cols, 'arrival_time')
    cropped = hist.derive(
        hist.values[rows, cols],
        provenance_entry('select_frame', delays=[d1, d2], window=window, index=int(index)),
        axis1=axis1, axis2=axis2, frame_meta=FrameMeta(d1, d2, window),
    )
    return Frame(cropped, (d1, d2), window, int(index))


def plan_antidiagonal_frames(hist, n_frames, frame_bins, step_bins):
    """
    Window starts for frames walking along the anti-diagonal ridge.

    Frame k starts `k * step_bins` bins into channel 1 and
    `(n_frames - 1 - k) * step_bins` bins into channel 2, so with equal-sign
    fibre dispersion the frames follow nu1 + nu2 = const.

    Returns:
    -------
    tuple
        (list of (d1, d2) delays, window in ps).
    """
    if n_frames < 1 or frame_bins < 8 or step_bins < 1:
        fail(InvalidArgumentError, "Need at least one frame of 8 bins and a positive step.")
    step1, step2 = hist.axis1.step, hist.axis2.step
    span_bins = (n_frames - 1) * step_bins + frame_bins
    if span_bins > min(hist.axis1.n_points, hist.axis2.n_points):
        fail(InvalidArgumentError, f"{n_frames} frames need {span_bins} bins per axis.")
    start1 = hist.axis1.start - step1 / 2.0
    start2 = hist.axis2.start - step2 / 2.0
    delays = [(start1 + k * step_bins * step1, start2 + (n_frames - 1 - k) * step_bins * step2)
              for k in range(n_frames)]
    return delays, frame_bins * step1


def calibrate_histogram(hist, detection, nonlinear=False):
    """
    Maps arrival-time axes back to wavelength.

    Parameters:
    ----------
    hist : JointSpectrum
        Arrival-time axes.
    detection : DetectionSpec
    nonlinear : bool
        False relabels each axis with the linear part of the fibre's group delay
        (lambda = lambda_ref + (t - t0) / D); higher orders stay visible as a
        bent ridge. True inverts the full polynomial and rebins onto a uniform
        wavelength grid, conserving counts.

    Returns:
    -------
    JointSpectrum
        Wavelength axes.
    """
    if hist.axis1.axis_kind != 'arrival_time' or hist.axis2.axis_kind != 'arrival_time':
        fail(InvalidArgumentError, "Only arrival-time histograms can be calibrated.")
    values = np.asarray(hist.values)
    axes = []
    matrices = []
    for axis, fibre in ((hist.axis1, detection.fibre1), (hist.axis2, detection.fibre2)):
        t0, dispersion = fibre.group_delay_coeffs[0], fibre.group_delay_coeffs[1]
        if not nonlinear:
            start = fibre.lambda_ref + (axis.start - t0) / dispersion
            step = axis.step / dispersion
            if step < 0:
                start, step = start + step * (axis.n_points - 1), -step
                matrices.append(np.eye(axis.n_points)[::-1])
            else:
                matrices.append(None)
            axes.append(grid_from_start(start, step, axis.n_points, 'wavelength'))
            continue
        edges = np.array([wavelength_from_arrival(fibre, t) for t in axis.edges])
        lo, hi = edges.min(), edges.max()
        step = (hi - lo) / axis.n_points
        target_edges = lo + step * np.arange(axis.n_points + 1)
        target_edges[-1] = hi
        matrices.append(overlap_weights(edges, target_edges))
        axes.append(grid_from_start(lo + step / 2.0, step, axis.n_points, 'wavelength'))

    if matrices[0] is not None:
        values = matrices[0] @ values
    if matrices[1] is not None:
        values = values @ matrices[1].T
    return hist.derive(np.clip(values, 0.0, None),
                       provenance_entry('calibrate_histogram', nonlinear=bool(nonlinear)),
                       axis1=axes[0], axis2=axes[1])


# ---------------------------------------------------------------------------
# Event streams
# ---------------------------------------------------------------------------

def histogram_events(events, time_bin, window, trigger_channel=0, channels=(1, 2)):
    """
    Builds an arrival-time joint histogram from a time-tag stream.

    Arrival times are taken relative to the latest trigger. The first event of
    each detection channel after a trigger forms the pair for that pulse;
    pulses missing either photon are dropped.

    Parameters:
    ----------
    events : np.ndarray
        Structured array with 'channel' and 'timestamp' (ps) fields.
    time_bin : float
        ps.
    window : float
        ps, histogram extent per channel.

    Returns:
    -------
    JointSpectrum
        Counts on [0, window) x [0, window).
    """
    time_bin = require_positive(time_bin, 'time_bin')
    window = require_positive(window, 'window')
    order = np.argsort(events['timestamp'], kind='stable')
    channel = events['channel'][order]
    stamps = events['timestamp'][order].astype(np.int64)

    triggers = stamps[channel == trigger_channel]
    if triggers.size == 0:
        fail(InvalidArgumentError, "The event stream contains no trigger events.")

    pairs = []
    for detector in channels:
        detector_stamps = stamps[channel == detector]
        pulse = np.searchsorted(triggers, detector_stamps, side='right') - 1
        keep = pulse >= 0
        pulse, detector_stamps = pulse[keep], detector_stamps[keep]
        first_pulse, first_index = np.unique(pulse, return_index=True)
        pairs.append((first_pulse, (detector_stamps[first_index] - triggers[first_pulse]).astype(float)))

    common, index1, index2 = np.intersect1d(pairs[0][0], pairs[1][0], return_indices=True)
    t1 = pairs[0][1][index1]
    t2 = pairs[1][1][index2]

    n_bins = int(round(window / time_bin))
    if n_bins < 8:
        fail(InvalidArgumentError, "The window must span at least 8 time bins.")
    edges = np.arange(n_bins + 1) * time_bin
    counts, _, _ = np.histogram2d(t1, t2, bins=[edges, edges])
    axis = grid_from_start(time_bin / 2.0, time_bin, n_bins, 'arrival_time')
    log.info("Histogrammed %d coincidences from %d pulses.", common.size, triggers.size)
    return JointSpectrum(axis, axis, counts, provenance=(provenance_entry('histogram_events', time_bin=time_bin),))


# ---------------------------------------------------------------------------
# Stitching
# ---------------------------------------------------------------------------

def _frame_offsets(frames):
    step1 = frames[0].histogram.axis1.step
    step2 = frames[0].histogram.axis2.step
    for frame in frames:
        axes = frame.histogram.axis1, frame.histogram.axis2
        if not (np.isclose(axes[0].step, step1, rtol=1e-9) and np.isclose(axes[1].step, step2, rtol=1e-9)):
            fail(InvalidArgumentError, "Frames have inconsistent bin sizes.")
    origin1 = min(frame.histogram.axis1.start for frame in frames)
    origin2 = min(frame.histogram.axis2.start for frame in frames)
    offsets = []
    for frame in frames:
        raw = ((frame.histogram.axis1.start - origin1) / step1, (frame.histogram.axis2.start - origin2) / step2)
        rounded = (int(round(raw[0])), int(round(raw[1])))
        if abs(raw[0] - rounded[0]) > stitch_offset_tolerance or abs(raw[1] - rounded[1]) > stitch_offset_tolerance:
            fail(InvalidArgumentError, "Frames do not share a common bin lattice.")
        offsets.append(rounded)
    return offsets, (origin1, origin2), (step1, step2)


def _processing_order(frames, offsets, extent):
    centers = [(o[0] + f.histogram.shape[0] / 2.0, o[1] + f.histogram.shape[1] / 2.0)
               for f, o in zip(frames, offsets)]
    middle = (extent[0] / 2.0, extent[1] / 2.0)
    reference = min(range(len(frames)),
                    key=lambda i: (np.hypot(centers[i][0] - middle[0], centers[i][1] - middle[1]), offsets[i]))
    order = sorted(range(len(frames)),
                   key=lambda i: (np.hypot(centers[i][0] - centers[reference][0],
                                           centers[i][1] - centers[reference][1]), offsets[i]))
    return order


def _check_overlaps(plan, frames, offsets):
    position_order = sorted(range(len(frames)), key=lambda i: offsets[i])
    required = np.atleast_1d(np.asarray(plan.overlap_bins))
    for pair, (a, b) in enumerate(zip(position_order[:-1], position_order[1:])):
        need = int(required[pair] if required.size > 1 else required[0])
        overlap = []
        for axis in (0, 1):
            lo = max(offsets[a][axis], offsets[b][axis])
            hi = min(offsets[a][axis] + frames[a].histogram.shape[axis],
                     offsets[b][axis] + frames[b].histogram.shape[axis])
            overlap.append(hi - lo)
        if need > 0 and min(overlap) < need:
            fail(InvalidArgumentError,
                 f"Frames {frames[a].index} and {frames[b].index} overlap by {min(overlap)} bins, "
                 f"{need} required.")


def _union(frames):
    offsets, origin, steps = _frame_offsets(frames)
    extent = (max(o[0] + f.histogram.shape[0] for f, o in zip(frames, offsets)),
              max(o[1] + f.histogram.shape[1] for f, o in zip(frames, offsets)))
    return offsets, origin, steps, extent


def estimate_normalisation(plan):
    """
    Least-squares gain of every frame against the frames already merged.

    The frame nearest the union center is the reference (gain 1). The others
    follow in order of distance from it, each scaled to best match the running
    average on its overlap; frames without overlap keep gain 1.

    Returns:
    -------
    StitchPlan
        Copy of the plan with `normalisation` filled in.
    """
    frames = plan.frames
    if not frames:
        fail(InvalidArgumentError, "Stitching needs at least one frame.")
    offsets, _, _, extent = _union(frames)
    _check_overlaps(plan, frames, offsets)

    total = np.zeros(extent)
    count = np.zeros(extent)
    gains = [1.0] * len(frames)
    for position, i in enumerate(_processing_order(frames, offsets, extent)):
        values = np.asarray(frames[i].histogram.values)
        r0, c0 = offsets[i]
        block = (slice(r0, r0 + values.shape[0]), slice(c0, c0 + values.shape[1]))
        covered = count[block] > 0
        if position > 0 and np.any(covered):
            merged = total[block][covered] / count[block][covered]
            own = values[covered]
            denominator = np.dot(own, own)
            if denominator > 0:
                gains[i] = float(np.dot(merged, own) / denominator)
        if gains[i] <= 0:
            log.warning("Frame %d has a non-positive gain estimate; keeping 1.", frames[i].index)
            gains[i] = 1.0
        total[block] += gains[i] * values
        count[block] += 1
    return replace(plan, normalisation=tuple(gains))


def stitch_frames(plan):
    """
    Merges gain-matched frames into one arrival-time histogram.

    Overlapping bins are averaged; bins no frame covers are zero. The result
    does not depend on the order frames are listed in.

    Parameters:
    ----------
    plan : StitchPlan

    Returns:
    -------
    JointSpectrum
        Covers the union of the frame extents.
    """
    if plan.normalisation is None:
        plan = estimate_normalisation(plan)
    frames = plan.frames
    offsets, origin, steps, extent = _union(frames)
    _check_overlaps(plan, frames, offsets)

    total = np.zeros(extent)
    count = np.zeros(extent)
    # fixed summation order keeps the result independent of how frames are listed
    for i in sorted(range(len(frames)), key=lambda k: offsets[k]):
        frame, (r0, c0), gain = frames[i], offsets[i], plan.normalisation[i]
        values = np.asarray(frame.histogram.values)
        total[r0:r0 + values.shape[0], c0:c0 + values.shape[1]] += gain * values
        count[r0:r0 + values.shape[0], c0:c0 + values.shape[1]] += 1
    merged = np.divide(total, count, out=np.zeros(extent), where=count > 0)

    axis1 = grid_from_start(origin[0], steps[0], extent[0], 'arrival_time')
    axis2 = grid_from_start(origin[1], steps[1], extent[1], 'arrival_time')
    first = min(frames, key=lambda f: f.index).histogram
    provenance = tuple(p for p in first.provenance if not p.startswith('select_frame'))
    log.info("Stitched %d frames into %dx%d bins.", len(frames), extent[0], extent[1])
    return JointSpectrum(axis1, axis2, merged,
                         provenance=provenance + (provenance_entry('stitch_frames', frames=len(frames)),))


def frame_interior_mask(plan, margin=0):
    """Boolean mask over the stitched union marking bins inside at least one frame, `margin` bins from its edge."""
    offsets, _, _, extent = _union(plan.frames)
    mask = np.zeros(extent, dtype=bool)
    for frame, (r0, c0) in zip(plan.frames, offsets):
        n1, n2 = frame.histogram.shape
        mask[r0 + margin:r0 + n1 - margin, c0 + margin:c0 + n2 - margin] = True
    return mask

