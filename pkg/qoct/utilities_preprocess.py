# utilities_preprocess.py
# 45-degree rotation of joint spectra and the two dispersion compensations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import gaussian_filter1d

from qoct.config import (
    speed_of_light_nm_ps,
    pad_factor as default_pad_factor,
    baseline_sigma as default_baseline_sigma,
    envelope_threshold as default_envelope_threshold,
    confidence_threshold as default_confidence_threshold,
    min_fringe_frequency,
    energy_floor,
    reference_tie_tolerance,
)
from qoct.utilities_core import (
    JointSpectrum,
    Dispersion,
    wavelength_to_frequency,
    delay_from_depth,
    provenance_entry,
)
from qoct.utilities_validation import fail, InvalidArgumentError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RotatedSpectrum:
    """
    Joint spectrum resampled onto difference frequency u = nu1 - nu2 (columns)
    and sum frequency v = nu1 + nu2 (rows), both uniform in THz. Bins outside
    the measured footprint are masked and hold 0.
    """
    values: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    mask: np.ndarray
    provenance: tuple = ()
    flags: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        u_axis = np.asarray(self.u_axis, dtype=float)
        v_axis = np.asarray(self.v_axis, dtype=float)
        if values.shape != (v_axis.size, u_axis.size) or mask.shape != values.shape:
            fail(InvalidArgumentError, "Rotated values, mask and axes disagree in shape.")
        if not np.all(np.isfinite(values)):
            fail(InvalidArgumentError, "Rotated values must be finite.")
        for name, axis in (('u', u_axis), ('v', v_axis)):
            steps = np.diff(axis)
            if axis.size < 2 or np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                fail(InvalidArgumentError, f"The {name} axis must be uniform and increasing.")
        values[mask] = 0.0
        for array in (values, mask, u_axis, v_axis):
            array.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'mask', mask)
        object.__setattr__(self, 'u_axis', u_axis)
        object.__setattr__(self, 'v_axis', v_axis)
        object.__setattr__(self, 'provenance', tuple(self.provenance))
        object.__setattr__(self, 'flags', tuple(self.flags))

    @property
    def du(self):
        return float(self.u_axis[1] - self.u_axis[0])

    @property
    def dv(self):
        return float(self.v_axis[1] - self.v_axis[0])

    @property
    def shape(self):
        return self.values.shape

    def derive(self, values, step, mask=None):
        return RotatedSpectrum(values, self.u_axis, self.v_axis,
                               self.mask if mask is None else mask,
                               self.provenance + (step,), self.flags)


@dataclass(frozen=True, eq=False)
class ShiftVector:
    shifts: np.ndarray   # integer cyclic roll per column, in row bins

    def __post_init__(self):
        shifts = np.asarray(self.shifts)
        if shifts.ndim != 1 or not np.all(np.equal(np.mod(shifts, 1), 0)):
            fail(InvalidArgumentError, "Shift vectors hold one integer per column.")
        object.__setattr__(self, 'shifts', shifts.astype(int))


@dataclass(frozen=True, eq=False)
class RowFrequencyProfile:
    """Per-row fringe frequency (ps, i.e. cycles/THz), confidence in [0, 1] and fringe energy."""
    frequencies: np.ndarray
    confidence: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        frequencies = np.asarray(self.frequencies, dtype=float)
        confidence = np.asarray(self.confidence, dtype=float)
        energy = np.asarray(self.energy, dtype=float)
        if not frequencies.shape == confidence.shape == energy.shape:
            fail(InvalidArgumentError, "Row profile arrays must have equal lengths.")
        if np.any(frequencies < 0) or np.any((confidence < 0) | (confidence > 1)):
            fail(InvalidArgumentError, "Row frequencies must be >= 0 and confidences in [0, 1].")
        object.__setattr__(self, 'frequencies', frequencies)
        object.__setattr__(self, 'confidence', confidence)
        object.__setattr__(self, 'energy', energy)

    @property
    def reference_row(self):
        """Highest-confidence row; near ties go to the row with the most fringe energy."""
        best = self.confidence.max()
        if best <= 0:
            fail(InvalidArgumentError, "No row carries a detectable fringe.")
        tied = np.nonzero(self.confidence >= best * (1.0 - reference_tie_tolerance))[0]
        return int(tied[np.argmax(self.energy[tied])])


@dataclass(frozen=True)
class PumpModel:
    """
    Known interferometer imbalance used for model-driven pump compensation.

    calibration_depth is the (signed) depth of the mirror whose fringes the
    stretch factors are computed for, in um.
    """
    arm_imbalance: Dispersion
    center_frequency: float
    calibration_depth: float


# ---------------------------------------------------------------------------
# Rotation
# ---------------------------------------------------------------------------

def _ascending_frequency_axes(js):
    if js.axis1.axis_kind != 'wavelength' or js.axis2.axis_kind != 'wavelength':
        fail(InvalidArgumentError, "Rotation needs wavelength axes; calibrate arrival-time histograms first.")
    nu1 = wavelength_to_frequency(js.axis1.values)[::-1]
    nu2 = wavelength_to_frequency(js.axis2.values)[::-1]
    return nu1, nu2, np.asarray(js.values)[::-1, ::-1]


def rotate45(js, n_rows=None, n_cols=None):
    """
    Resamples a wavelength joint spectrum onto difference/sum frequency axes.

    The wavelength axes are converted to frequency and the spectrum is
    bilinearly interpolated at nu1 = (v + u)/2, nu2 = (v - u)/2, which is the
    45-degree rotation that puts the depth fringes along the rows. Points
    outside the measured footprint are masked.

    Parameters:
    ----------
    js : JointSpectrum
        Wavelength axes with frequency spans within a factor 2 of each other.
    n_rows, n_cols : int, optional
        Output size, the input size by default.

    Returns:
    -------
    RotatedSpectrum
    """
    nu1, nu2, values = _ascending_frequency_axes(js)
    span1, span2 = nu1[-1] - nu1[0], nu2[-1] - nu2[0]
    if min(span1, span2) <= 0 or max(span1, span2) > 2.0 * min(span1, span2):
        fail(InvalidArgumentError, f"Degenerate grid for rotation: spans {span1:.3f} and {span2:.3f} THz.")
    n_rows = int(n_rows or js.axis1.n_points)
    n_cols = int(n_cols or js.axis2.n_points)
    if n_rows < 2 or n_cols < 2:
        fail(InvalidArgumentError, "Rotated spectra need at least two rows and columns.")

    u_axis = np.linspace(nu1[0] - nu2[-1], nu1[-1] - nu2[0], n_cols)
    v_axis = np.linspace(nu1[0] + nu2[0], nu1[-1] + nu2[-1], n_rows)
    v_grid, u_grid = np.meshgrid(v_axis, u_axis, indexing='ij')
    interpolator = RegularGridInterpolator((nu1, nu2), values, method='linear',
                                           bounds_error=False, fill_value=np.nan)
    rotated = interpolator(np.stack([(v_grid + u_grid) / 2.0, (v_grid - u_grid) / 2.0], axis=-1))
    mask = np.isnan(rotated)
    rotated[mask] = 0.0
    log.debug("Rotated %s spectrum onto %dx%d (u, v) bins, %.1f%% masked.",
              js.shape, n_rows, n_cols, 100.0 * mask.mean())
    return RotatedSpectrum(rotated, u_axis, v_axis, mask,
                           js.provenance + (provenance_entry('rotate45'),), js.flags)


def unrotate45(rot, axis1, axis2):
    """
    Resamples a rotated spectrum back onto wavelength axes.

    Parameters:
    ----------
    rot : RotatedSpectrum
    axis1, axis2 : SpectralGrid
        Target wavelength grids.

    Returns:
    -------
    JointSpectrum
        Bins that map outside the unmasked rotated footprint are 0.
    """
    nu1 = wavelength_to_frequency(axis1.values)
    nu2 = wavelength_to_frequency(axis2.values)
    source = np.where(rot.mask, np.nan, rot.values)
    interpolator = RegularGridInterpolator((rot.v_axis, rot.u_axis), source, method='linear',
                                           bounds_error=False, fill_value=np.nan)
    n1, n2 = np.meshgrid(nu1, nu2, indexing='ij')
    values = interpolator(np.stack([n1 + n2, n1 - n2], axis=-1))
    values = np.clip(np.nan_to_num(values, nan=0.0), 0.0, None)
    return JointSpectrum(axis1, axis2, values,
                         provenance=rot.provenance + (provenance_entry('unrotate45'),), flags=rot.flags)


# ---------------------------------------------------------------------------
# Fibre compensation
# ---------------------------------------------------------------------------

def _labelled_frequency(fibre, wavelength):
    # frequency the linear calibration assigns to a photon of true `wavelength`
    t0, dispersion = fibre.group_delay_coeffs[0], fibre.group_delay_coeffs[1]
    delta = wavelength - fibre.lambda_ref
    residual = np.polynomial.polynomial.polyval(delta, fibre.group_delay_coeffs) - (t0 + dispersion * delta)
    return speed_of_light_nm_ps / (wavelength + residual / dispersion)


def fibre_ridge_offset(detection, u_axis, ridge_sum_frequency=None):
    """
    Sum-frequency offset (THz) of the ridge per column caused by the nonlinear
    part of the fibre group delays after a linear calibration.

    Parameters:
    ----------
    detection : DetectionSpec
    u_axis : np.ndarray
        Difference frequencies of the columns, THz.
    ridge_sum_frequency : float, optional
        True sum frequency of the ridge; the fibres' reference frequencies by default.
    """
    if ridge_sum_frequency is None:
        ridge_sum_frequency = (wavelength_to_frequency(detection.fibre1.lambda_ref)
                               + wavelength_to_frequency(detection.fibre2.lambda_ref))
    u_axis = np.asarray(u_axis, dtype=float)
    nu1 = (ridge_sum_frequency + u_axis) / 2.0
    nu2 = (ridge_sum_frequency - u_axis) / 2.0
    labelled = (_labelled_frequency(detection.fibre1, speed_of_light_nm_ps / nu1)
                + _labelled_frequency(detection.fibre2, speed_of_light_nm_ps / nu2))
    return labelled - ridge_sum_frequency


def fibre_shift_vector(detection, rot, ridge_sum_frequency=None):
    """
    Integer column rolls that straighten the ridge bent by fibre nonlinearity.

    Parameters:
    ----------
    detection : DetectionSpec
    rot : RotatedSpectrum
        Only its axes are used.

    Returns:
    -------
    ShiftVector
        All zeros for purely linear fibres.
    """
    offset = fibre_ridge_offset(detection, rot.u_axis, ridge_sum_frequency)
    shifts = -np.rint(offset / rot.dv)
    if np.any(np.abs(shifts) >= rot.shape[0]):
        fail(InvalidArgumentError, "Fibre bending exceeds the number of rotated rows.")
    return ShiftVector(shifts)


def compensate_fibre(rot, sv):
    """
    Cyclically rolls every column by its shift.

    Column sums, and therefore the row-averaged A-scan, are unchanged.

    Parameters:
    ----------
    rot : RotatedSpectrum
    sv : ShiftVector
        One shift per column, |shift| < rows.

    Returns:
    -------
    RotatedSpectrum
    """
    n_rows, n_cols = rot.shape
    if sv.shifts.size != n_cols:
        fail(InvalidArgumentError, f"Shift vector has {sv.shifts.size} entries for {n_cols} columns.")
    if np.any(np.abs(sv.shifts) >= n_rows):
        fail(InvalidArgumentError, "Shifts must be smaller than the number of rows.")
    rows = (np.arange(n_rows)[:, None] - sv.shifts[None, :]) % n_rows
    cols = np.arange(n_cols)[None, :]
    return rot.derive(rot.values[rows, cols],
                      provenance_entry('compensate_fibre', max_shift=int(np.abs(sv.shifts).max(initial=0))),
                      mask=rot.mask[rows, cols])


# ---------------------------------------------------------------------------
# Pump compensation
# ---------------------------------------------------------------------------

def next_power_of_two(n):
    return 1 << int(np.ceil(np.log2(max(int(n), 1))))


def remove_baseline(signal, step, sigma=default_baseline_sigma, axis=-1, weights=None):
    """
    Subtracts a Gaussian-smoothed copy of the signal (the slowly varying envelope).

    With `weights` the envelope is a normalised convolution,
    G(signal * weights) / G(weights), so masked or empty samples do not pull
    the envelope towards zero near the edges of the valid region.

    Parameters:
    ----------
    signal : np.ndarray
    step : float
        Sample spacing along `axis`, THz.
    sigma : float
        Smoothing width in THz. Fringes faster than about 1/sigma survive.
    weights : np.ndarray, optional
        Per-sample weights broadcastable to `signal`, e.g. the valid-bin mask.
    """
    width = sigma / step
    if weights is None:
        return signal - gaussian_filter1d(signal, width, axis=axis, mode='nearest')
    weights = np.broadcast_to(np.asarray(weights, dtype=float), np.shape(signal))
    smoothed = gaussian_filter1d(signal * weights, width, axis=axis, mode='constant')
    coverage = gaussian_filter1d(weights, width, axis=axis, mode='constant')
    baseline = np.divide(smoothed, coverage, out=np.zeros_like(smoothed), where=coverage > 1e-12)
    return signal - baseline


def _quadratic_vertex(left, center, right):
    denominator = left - 2.0 * center + right
    if denominator == 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denominator, -0.5, 0.5))


def _row_frequency(row, du, pad, min_frequency):
    n_fft = next_power_of_two(pad * row.size)
    spectrum = np.abs(np.fft.rfft(row, n_fft))
    frequencies = np.fft.rfftfreq(n_fft, du)
    search = np.nonzero(frequencies >= min_frequency)[0]
    if search.size < 3:
        return 0.0, 0.0
    k = int(search[np.argmax(spectrum[search])])
    delta = 0.0
    if search[0] < k < spectrum.size - 1:
        delta = _quadratic_vertex(spectrum[k - 1], spectrum[k], spectrum[k + 1])
    frequency = frequencies[k] + delta * (frequencies[1] - frequencies[0])

    # main lobe: walk downhill either side of the peak
    lo = k
    while lo > search[0] and spectrum[lo - 1] < spectrum[lo]:
        lo -= 1
    hi = k
    while hi < spectrum.size - 1 and spectrum[hi + 1] < spectrum[hi]:
        hi += 1
    power = spectrum[search] ** 2
    total = power.sum()
    confidence = float(np.sum(spectrum[lo:hi + 1] ** 2) / total) if total > 0 else 0.0
    return max(frequency, 0.0), min(confidence, 1.0)


def estimate_row_frequencies(rot, pad_factor=default_pad_factor, min_frequency=min_fringe_frequency,
                             baseline_sigma=default_baseline_sigma):
    """
    Dominant fringe frequency of every rotated row.

    Each row has its envelope removed, is zero padded and Fourier transformed;
    the magnitude peak above `min_frequency` is refined with a 3-point
    quadratic. Confidence is the share of the spectral energy held by the
    peak's main lobe. Rows that are constant or carry less than a 1e-6
    fraction of the strongest row's fringe energy get confidence 0.

    Parameters:
    ----------
    rot : RotatedSpectrum
    pad_factor : int
    min_frequency : float
        ps; excludes the envelope residue near zero delay.

    Returns:
    -------
    RowFrequencyProfile
    """
    n_rows = rot.shape[0]
    values = np.asarray(rot.values)
    fringes = np.zeros_like(values)
    for row in range(n_rows):
        valid = ~rot.mask[row]
        if valid.sum() < 4:
            continue
        data = values[row]
        if np.ptp(data[valid]) <= 1e-12 * max(np.abs(data[valid]).max(), 1e-300):
            continue
        cleaned = remove_baseline(data, rot.du, baseline_sigma, weights=valid)
        cleaned[~valid] = 0.0
        fringes[row] = cleaned
    energy = np.sum(fringes ** 2, axis=1)

    frequencies = np.zeros(n_rows)
    confidence = np.zeros(n_rows)
    floor = energy_floor * energy.max() if energy.max() > 0 else np.inf
    for row in np.nonzero(energy > floor)[0]:
        frequencies[row], confidence[row] = _row_frequency(fringes[row], rot.du, pad_factor, min_frequency)
    log.debug("Estimated fringe frequencies on %d of %d rows.", int(np.sum(confidence > 0)), n_rows)
    return RowFrequencyProfile(frequencies, confidence, energy)


def model_row_frequencies(rot, model):
    """
    Analytic fringe frequency per row for a mirror at the calibration depth.

    With beta2/beta3 imbalance the fringe delay of a row at sum frequency v
    shifts by 2 pi beta2 x + 2 pi^2 beta3 x^2, x = (v - 2 nu0)/2. The cubic
    term in u that beta3 also produces is not a delay and is left alone.

    Returns:
    -------
    RowFrequencyProfile
        Confidence 1 on every row.
    """
    x = (rot.v_axis - 2.0 * model.center_frequency) / 2.0
    beta2 = model.arm_imbalance.beta2 * 1e-6   # ps^2
    beta3 = model.arm_imbalance.beta3 * 1e-9   # ps^3
    shift = 2.0 * np.pi * beta2 * x + 2.0 * np.pi ** 2 * beta3 * x ** 2
    frequencies = np.abs(delay_from_depth(model.calibration_depth) + shift)
    # all rows tie on confidence; the weight makes the row nearest the pump center the reference
    weight = 1.0 / (1.0 + np.abs(x))
    return RowFrequencyProfile(frequencies, np.ones_like(frequencies), weight)


def _stretch(u, row, center, factor, lo, hi, split):
    out = row.copy()
    if split:
        left = np.arange(lo, hi + 1)[u[lo:hi + 1] <= center]
        right = np.arange(lo, hi + 1)[u[lo:hi + 1] >= center]
        for half in (left, right):
            if half.size < 2:
                continue
            targets = center + (u[half] - center) * factor
            out[half] = np.interp(targets, u[half], row[half], left=0.0, right=0.0)
    else:
        span = np.arange(lo, hi + 1)
        targets = center + (u[span] - center) * factor
        out[span] = np.interp(targets, u[span], row[span], left=0.0, right=0.0)
    return out


def compensate_pump(rot, profile, envelope_threshold=default_envelope_threshold,
                    confidence_threshold=default_confidence_threshold, continuous=False):
    """
    Equalises the fringe frequency of every row to that of the reference row.

    Each row's fringe region (columns above `envelope_threshold` of the row
    maximum) is split at the zero-delay column and each half is linearly
    resampled about it by f_ref / f_row, then the row is rescaled to keep its
    sum. Rows weaker than `envelope_threshold` of the strongest row, or less
    confident than `confidence_threshold`, are passed through.

    Parameters:
    ----------
    rot : RotatedSpectrum
    profile : RowFrequencyProfile
        From estimate_row_frequencies (data-driven) or model_row_frequencies.
    continuous : bool
        Resample the whole fringe region in one piece instead of two halves.

    Returns:
    -------
    RotatedSpectrum
    """
    n_rows = rot.shape[0]
    if profile.frequencies.size != n_rows:
        fail(InvalidArgumentError, "The frequency profile does not match the rotated rows.")
    values = np.array(rot.values)
    u = rot.u_axis
    reference = profile.reference_row
    f_ref = profile.frequencies[reference]
    if f_ref <= 0:
        fail(InvalidArgumentError, "The reference row has zero fringe frequency.")

    row_sums = values.sum(axis=1)
    strongest = row_sums.max()
    center = 0.0 if u[0] <= 0.0 <= u[-1] else None
    changed = 0
    for row in range(n_rows):
        if row_sums[row] < envelope_threshold * strongest or profile.confidence[row] < confidence_threshold:
            continue
        f_row = profile.frequencies[row]
        if f_row <= 0:
            fail(InvalidArgumentError, f"Row {row} is confident but has zero fringe frequency.")
        data = values[row]
        region = np.nonzero((data >= envelope_threshold * data.max()) & ~rot.mask[row])[0]
        if region.size < 2:
            continue
        lo, hi = int(region[0]), int(region[-1])
        row_center = center if center is not None else 0.5 * (u[lo] + u[hi])
        stretched = _stretch(u, data, row_center, f_ref / f_row, lo, hi, split=not continuous)
        total = stretched.sum()
        if total > 0:
            stretched *= row_sums[row] / total
        values[row] = stretched
        changed += 1
    log.info("Pump compensation resampled %d of %d rows against row %d (%.4f ps).",
             changed, n_rows, reference, f_ref)
    mode = 'continuous' if continuous else 'split'
    return rot.derive(values, provenance_entry('compensate_pump', reference_row=reference, mode=mode))
