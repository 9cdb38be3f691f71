# utilities_reconstruct.py
# A-scans, 2D Fourier maps, peak metrology, fall-off and artefact bookkeeping

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import interp1d
from scipy.signal import find_peaks

from qoct.config import (
    speed_of_light_um_ps,
    pad_factor as default_pad_factor,
    baseline_sigma as default_baseline_sigma,
    peak_noise_factor,
    falloff_db_drop,
    falloff_window,
)
from qoct.utilities_core import AScan, wavelength_to_frequency
from qoct.utilities_forward import FOUR_LN2
from qoct.utilities_preprocess import next_power_of_two, remove_baseline
from qoct.utilities_validation import (
    fail,
    QOCTError,
    InvalidArgumentError,
    EmptyFrameError,
    thread_count,
)

log = logging.getLogger(__name__)

WINDOWS = (None, 'hann')


@dataclass(frozen=True, eq=False)
class FourierMap:
    """Centred 2D transform magnitude; u_depth labels columns, v_depth rows, both um."""
    values: np.ndarray
    u_depth: np.ndarray
    v_depth: np.ndarray


@dataclass(frozen=True)
class PeakReport:
    position: float    # um
    height: float
    fwhm: float        # um
    asymmetry: float   # right/left tail energy beyond the half-maximum points

    def __post_init__(self):
        if not self.fwhm > 0 or not self.height > 0:
            fail(InvalidArgumentError, "A peak needs positive height and width.")


@dataclass(frozen=True)
class FalloffReport:
    depths: tuple
    peaks: tuple            # PeakReport or None where no peak was found
    heights_db: tuple
    six_db_range: float     # um, inf when censored without a crossing
    censored: bool
    flags: tuple = ()


@dataclass(frozen=True)
class ArtefactEntry:
    kind: str               # 'structural', 'midpoint' or 'stationary'
    position: float         # um
    predicted_height: float
    interfaces: tuple       # indices into the object's interfaces
    suppression: float = 1.0


@dataclass(frozen=True)
class ArtefactMatch:
    entry: ArtefactEntry
    measured_position: float = None
    measured_height: float = None

    @property
    def found(self):
        return self.measured_position is not None


@dataclass(frozen=True)
class ArtefactReport:
    structural: tuple
    midpoint: tuple
    stationary: tuple
    matches: tuple = ()

    @property
    def entries(self):
        return self.structural + self.midpoint + self.stationary


# ---------------------------------------------------------------------------
# A-scans
# ---------------------------------------------------------------------------

def _depth_axis(n_fft, step):
    # conjugate of THz is ps; depth is c t / 2
    return speed_of_light_um_ps / 2.0 * np.fft.rfftfreq(n_fft, step)


def _check_window(window):
    if window not in WINDOWS:
        fail(InvalidArgumentError, f"Unknown window '{window}', expected one of {WINDOWS}.")


def _occupied_rows(rot):
    # unmasked rows of the fullest column; invariant under column rolls
    occupied = int(np.max(np.sum(~rot.mask, axis=0)))
    if occupied == 0:
        fail(EmptyFrameError, "The rotated spectrum is fully masked.")
    return occupied


def _column_profile(rot, occupied, dc_removal, baseline_sigma):
    profile = np.asarray(rot.values).sum(axis=0) / occupied
    baseline = np.zeros_like(profile)
    if dc_removal:
        baseline = profile - remove_baseline(profile, rot.du, baseline_sigma)
    return profile, baseline


def ascan_row_average(rot, dc_removal=True, window=None, pad_factor=default_pad_factor,
                      baseline_sigma=default_baseline_sigma):
    """
    A-scan from the row-averaged rotated spectrum.

    Rows are summed and divided by the number of unmasked rows in the fullest
    column.
    The smoothed envelope of that profile is subtracted so only the fringes are
    transformed, then the profile is zero padded to the next power of two of
    `pad_factor` times its length.

    Parameters:
    ----------
    rot : RotatedSpectrum
    dc_removal : bool
        Subtract the envelope; False keeps the zero-depth peak.
    window : None or 'hann'
    pad_factor : int
    baseline_sigma : float
        Envelope smoothing width, THz.

    Returns:
    -------
    AScan
        Positive-delay half, depth from 0 in um.
    """
    _check_window(window)
    occupied = _occupied_rows(rot)
    profile, baseline = _column_profile(rot, occupied, dc_removal, baseline_sigma)
    fringes = profile - baseline
    if window == 'hann':
        fringes = fringes * np.hanning(fringes.size)
    n_fft = next_power_of_two(pad_factor * fringes.size)
    amplitude = np.abs(np.fft.rfft(fringes, n_fft))
    return AScan(_depth_axis(n_fft, rot.du), amplitude, 'fd_qoct')


def ascan_2dft_diagonal(rot, dc_removal=True, window=None, pad_factor=default_pad_factor,
                        baseline_sigma=default_baseline_sigma):
    """
    A-scan as half of the central row of the 2D transform of the rotated spectrum.

    The central (zero sum-frequency delay) row of the 2D transform equals the
    transform of the column sums, so this matches ascan_row_average.
    """
    _check_window(window)
    occupied = _occupied_rows(rot)
    n_rows, n_cols = rot.shape
    _, baseline = _column_profile(rot, occupied, dc_removal, baseline_sigma)
    values = np.asarray(rot.values) - baseline[None, :] * occupied / n_rows
    if window == 'hann':
        values = values * np.hanning(n_cols)[None, :]
    n_fft = next_power_of_two(pad_factor * n_cols)
    transform = np.fft.fft2(values, s=(n_rows, n_fft))
    amplitude = np.abs(transform[0, :n_fft // 2 + 1]) / occupied
    return AScan(_depth_axis(n_fft, rot.du), amplitude, 'fd_qoct')


ASCAN_METHODS = {
    'row_average': ascan_row_average,
    '2dft_diagonal': ascan_2dft_diagonal,
}


def ascan_batch(rotated, method='row_average', threads=None, **options):
    """
    A-scans of several rotated spectra on a thread pool.

    Parameters:
    ----------
    rotated : list of RotatedSpectrum
    method : str
        Key of ASCAN_METHODS.
    threads : int, optional
        QOCT_THREADS when omitted.
    **options
        Passed to the A-scan function.

    Returns:
    -------
    list of AScan
        In input order.
    """
    if method not in ASCAN_METHODS:
        fail(InvalidArgumentError, f"Unknown A-scan method '{method}'.")
    compute = ASCAN_METHODS[method]
    workers = threads or thread_count()
    if workers > 1 and len(rotated) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda rot: compute(rot, **options), rotated))
    return [compute(rot, **options) for rot in rotated]


def fourier_map(rot, dc_removal=False, baseline_sigma=default_baseline_sigma):
    """
    Magnitude of the centred 2D transform of a rotated spectrum.

    Parameters:
    ----------
    rot : RotatedSpectrum
    dc_removal : bool
        Subtract the row-averaged envelope from every row first.

    Returns:
    -------
    FourierMap
        Column axis in depth along the difference frequency, row axis along the
        sum frequency; both centred on zero.
    """
    values = np.asarray(rot.values)
    if not np.all(np.isfinite(values)):
        fail(InvalidArgumentError, "Fourier maps need finite input.")
    if dc_removal:
        occupied = _occupied_rows(rot)
        _, baseline = _column_profile(rot, occupied, True, baseline_sigma)
        values = values - baseline[None, :] * occupied / rot.shape[0]
    n_rows, n_cols = values.shape
    magnitude = np.abs(np.fft.fftshift(np.fft.fft2(values)))
    u_depth = speed_of_light_um_ps / 2.0 * np.fft.fftshift(np.fft.fftfreq(n_cols, rot.du))
    v_depth = speed_of_light_um_ps / 2.0 * np.fft.fftshift(np.fft.fftfreq(n_rows, rot.dv))
    return FourierMap(magnitude, u_depth, v_depth)


def classical_ascan(spec, dc_removal=True, window=None, pad_factor=default_pad_factor,
                    baseline_sigma=default_baseline_sigma):
    """
    Spectral-domain OCT A-scan.

    The spectrometer trace, uniform in wavelength, is cubic-interpolated onto a
    uniform frequency grid, the smoothed source envelope is removed and the
    result is Fourier transformed.

    Parameters:
    ----------
    spec : ClassicalSpectrum

    Returns:
    -------
    AScan
    """
    _check_window(window)
    frequency = wavelength_to_frequency(spec.grid.values)[::-1]
    intensity = spec.intensity[::-1]
    uniform = np.linspace(frequency[0], frequency[-1], frequency.size)
    # pin the end points so the cubic never evaluates outside its data
    uniform[0], uniform[-1] = frequency[0], frequency[-1]
    resampled = interp1d(frequency, intensity, kind='cubic')(uniform)
    step = uniform[1] - uniform[0]
    if dc_removal:
        resampled = remove_baseline(resampled, step, baseline_sigma)
    if window == 'hann':
        resampled = resampled * np.hanning(resampled.size)
    n_fft = next_power_of_two(pad_factor * resampled.size)
    amplitude = np.abs(np.fft.rfft(resampled, n_fft))
    return AScan(_depth_axis(n_fft, step), amplitude, 'classical')


def trace_to_ascan(trace, baseline=None):
    """
    Time-domain trace as an A-scan: deviation of each point from the baseline.

    Parameters:
    ----------
    trace : TimeDomainTrace
    baseline : float, optional
        Coincidence level away from any feature; the median of the trace by default.

    Returns:
    -------
    AScan
        Depth axis equal to the (sorted) stage positions.
    """
    order = np.argsort(trace.stage_positions)
    rates = trace.coincidence_rate[order]
    level = float(np.median(rates)) if baseline is None else float(baseline)
    return AScan(trace.stage_positions[order], np.abs(rates - level), 'td_qoct')


# ---------------------------------------------------------------------------
# Peak metrology
# ---------------------------------------------------------------------------

def _half_crossing(amplitude, depth, start, half, direction):
    index = start
    while 0 <= index + direction < amplitude.size:
        following = index + direction
        if amplitude[following] < half:
            fraction = (amplitude[index] - half) / (amplitude[index] - amplitude[following])
            return depth[index] + fraction * (depth[following] - depth[index]), following
        index = following
    return None, None


def measure_peak(ascan, search_window, noise_factor=peak_noise_factor):
    """
    Position, height, FWHM and tail asymmetry of the strongest peak in a depth window.

    Parameters:
    ----------
    ascan : AScan
    search_window : tuple of float
        (low, high) depth in um.
    noise_factor : float
        The peak must exceed this multiple of the A-scan median.

    Returns:
    -------
    PeakReport
        Position and height refined with a 3-point quadratic; FWHM from linear
        interpolation at half height; asymmetry is the ratio of amplitude
        energy right and left of the half-maximum points within the window.
    """
    low, high = sorted(float(edge) for edge in search_window)
    depth, amplitude = ascan.depth_axis, ascan.amplitude
    inside = np.nonzero((depth >= low) & (depth <= high))[0]
    if inside.size == 0:
        fail(InvalidArgumentError, f"No A-scan samples between {low} and {high} um.")
    k = int(inside[np.argmax(amplitude[inside])])
    floor = noise_factor * float(np.median(amplitude))
    is_local_max = ((k == 0 or amplitude[k] >= amplitude[k - 1])
                    and (k == amplitude.size - 1 or amplitude[k] >= amplitude[k + 1]))
    if not is_local_max or amplitude[k] <= floor or amplitude[k] <= 0:
        fail(InvalidArgumentError, f"No peak above the noise floor between {low} and {high} um.")

    position, height = depth[k], amplitude[k]
    if 0 < k < amplitude.size - 1:
        left, center, right = amplitude[k - 1:k + 2]
        denominator = left - 2.0 * center + right
        if denominator < 0:
            delta = np.clip(0.5 * (left - right) / denominator, -0.5, 0.5)
            position = depth[k] + delta * (depth[k + 1] - depth[k] if delta > 0 else depth[k] - depth[k - 1])
            height = center - 0.25 * (left - right) * delta

    half = height / 2.0
    left_edge, left_index = _half_crossing(amplitude, depth, k, half, -1)
    right_edge, right_index = _half_crossing(amplitude, depth, k, half, +1)
    if left_edge is None or right_edge is None:
        fail(InvalidArgumentError, "The peak does not fall to half height inside the A-scan.")

    left_tail = amplitude[inside[0]:left_index + 1] ** 2 if left_index >= inside[0] else np.zeros(1)
    right_tail = amplitude[right_index:inside[-1] + 1] ** 2 if right_index <= inside[-1] else np.zeros(1)
    left_energy, right_energy = float(left_tail.sum()), float(right_tail.sum())
    if left_energy == 0.0:
        asymmetry = 1.0 if right_energy == 0.0 else np.inf
    else:
        asymmetry = right_energy / left_energy
    return PeakReport(float(position), float(height), float(right_edge - left_edge), float(asymmetry))


def falloff_analysis(ascans, reference_height=None, window=falloff_window, db_drop=falloff_db_drop):
    """
    Peak height against depth and the depth where it has dropped by 6 dB.

    Parameters:
    ----------
    ascans : list of (float, AScan)
        True depth and its A-scan, at least 3, depths increasing.
    reference_height : float, optional
        0 dB level; the first measured height by default. Curves of the same
        sweep with and without pump compensation share one level, the best
        shallow height, so the uncompensated curve reaches -6 dB earlier.
    window : float
        Half width of the peak search window around each true depth, um.
    db_drop : float

    Returns:
    -------
    FalloffReport
        six_db_range is interpolated linearly in dB against depth; it is inf and
        the report censored when the curve never drops far enough.
    """
    if len(ascans) < 3:
        fail(InvalidArgumentError, "Fall-off analysis needs at least 3 depths.")
    depths = np.array([float(depth) for depth, _ in ascans])
    if np.any(np.diff(depths) <= 0):
        fail(InvalidArgumentError, "Fall-off depths must be strictly increasing.")

    peaks = []
    for depth, ascan in ascans:
        try:
            peaks.append(measure_peak(ascan, (depth - window, depth + window)))
        except QOCTError:
            log.warning("No fall-off peak found near %.1f um.", depth)
            peaks.append(None)
    heights = np.array([peak.height if peak else 0.0 for peak in peaks])
    reference = reference_height if reference_height is not None else heights[0]
    if not reference > 0:
        fail(InvalidArgumentError, "The fall-off reference height must be positive.")
    with np.errstate(divide='ignore'):
        heights_db = 20.0 * np.log10(heights / reference)

    flags = []
    below = np.nonzero(heights_db <= -db_drop)[0]
    if below.size == 0:
        six_db_range, censored = np.inf, True
    elif below[0] == 0:
        six_db_range, censored = float(depths[0]), True
        flags.append('below_threshold_at_first_depth')
    else:
        i = int(below[0])
        fraction = (heights_db[i - 1] + db_drop) / (heights_db[i - 1] - heights_db[i])
        six_db_range = float(depths[i - 1] + fraction * (depths[i] - depths[i - 1]))
        censored = bool(np.any(heights_db[i + 1:] > -db_drop))
        if censored:
            flags.append('non_monotonic')
    log.info("Fall-off over %d depths: range %.1f um%s.", depths.size, six_db_range,
             ' (censored)' if censored else '')
    return FalloffReport(tuple(depths), tuple(peaks), tuple(heights_db), six_db_range, censored, tuple(flags))


# ---------------------------------------------------------------------------
# Artefacts
# ---------------------------------------------------------------------------

def suppression_factor(delta_nu_a, delta_tau):
    """
    Residual height of a pair artefact after averaging over the sum frequency.

    Parameters:
    ----------
    delta_nu_a : float
        Anti-diagonal frequency FWHM, THz.
    delta_tau : float or np.ndarray
        Optical delay separation of the interface pair, ps.
    """
    return np.exp(-(np.pi * delta_nu_a * np.asarray(delta_tau)) ** 2 / FOUR_LN2)


def predict_artefacts(obj, source, reference_delay):
    """
    Expected structural peaks and the two pair artefacts of every interface pair.

    Heights are relative to a perfect mirror's peak of 1/4 at visibility 1:
    structural V r_k^2 / 4, midpoint V r_i r_j S |cos| / 2 and stationary
    r_i r_j S |cos| / 2, where S is the anti-diagonal suppression and the
    cosine carries the pump-center phase of the pair delay.

    Parameters:
    ----------
    obj : LayeredObject
    source : SourceSpec
    reference_delay : float
        um.

    Returns:
    -------
    ArtefactReport
    """
    positions, reflectivities = obj.positions, obj.reflectivities
    if positions.size == 0:
        fail(InvalidArgumentError, "An object needs at least one interface.")
    visibility = source.hom_visibility
    delta_nu_a = source.antidiagonal_frequency_fwhm
    nu0 = source.center_frequency

    structural = tuple(
        ArtefactEntry('structural', float(abs(z - reference_delay)), visibility * r ** 2 / 4.0, (k,))
        for k, (z, r) in enumerate(zip(positions, reflectivities)))
    midpoint, stationary = [], []
    for i, j in itertools.combinations(range(positions.size), 2):
        separation = abs(positions[j] - positions[i])
        delta_tau = separation / speed_of_light_um_ps
        suppression = float(suppression_factor(delta_nu_a, delta_tau))
        phase = abs(np.cos(2.0 * np.pi * nu0 * 2.0 * delta_tau))
        pair = reflectivities[i] * reflectivities[j] * suppression * phase
        midpoint.append(ArtefactEntry('midpoint', float(abs((positions[i] + positions[j]) / 2.0 - reference_delay)),
                                      visibility * pair / 2.0, (i, j), suppression))
        stationary.append(ArtefactEntry('stationary', float(separation / 2.0), pair / 2.0, (i, j), suppression))
    return ArtefactReport(structural, tuple(midpoint), tuple(stationary))


def match_artefacts(report, ascan, tolerance=None, noise_factor=peak_noise_factor):
    """
    Associates predicted entries with local maxima of a measured A-scan.

    Parameters:
    ----------
    report : ArtefactReport
    ascan : AScan
    tolerance : float, optional
        Largest position error in um; two depth bins or 1 um, whichever is larger, by default.

    Returns:
    -------
    ArtefactReport
        Copy of the report with one ArtefactMatch per entry.
    """
    if tolerance is None:
        tolerance = max(2.0 * ascan.step, 1.0)
    floor = noise_factor * float(np.median(ascan.amplitude))
    indices, _ = find_peaks(ascan.amplitude, height=floor)
    found = ascan.depth_axis[indices]
    matches = []
    for entry in report.entries:
        if found.size:
            nearest = int(np.argmin(np.abs(found - entry.position)))
            if abs(found[nearest] - entry.position) <= tolerance:
                matches.append(ArtefactMatch(entry, float(found[nearest]),
                                             float(ascan.amplitude[indices[nearest]])))
                continue
        matches.append(ArtefactMatch(entry))
    log.debug("Matched %d of %d predicted peaks.", sum(m.found for m in matches), len(matches))
    return replace(report, matches=tuple(matches))
