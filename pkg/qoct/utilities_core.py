# utilities_core.py
# Domain types, unit conversions and spectral grids shared by every stage.
#
# Units: wavelengths nm, frequencies THz, times ps, depths um (one-way optical
# path in air). Matrices are row-major with axis1 = rows = channel 1.

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from qoct.config import (
    speed_of_light_nm_ps,
    speed_of_light_um_ps,
    default_center_wavelength,
    default_diagonal_fwhm,
    default_antidiagonal_fwhm,
    default_pump_center,
    default_pump_fwhm,
    default_pair_rate,
    default_hom_visibility,
    default_coincidence_window,
    default_fibre_length,
    fibre_search_half_width,
)
from qoct.utilities_validation import (
    fail,
    InvalidArgumentError,
    require_positive,
    require_non_negative,
)

log = logging.getLogger(__name__)

AXIS_KINDS = ('wavelength', 'difference_frequency', 'sum_frequency', 'arrival_time')
ASCAN_KINDS = ('fd_qoct', 'td_qoct', 'classical')


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralGrid:
    """
    Uniformly sampled axis.

    For wavelength grids center and span are in nm; arrival-time grids use ps
    and the frequency kinds THz.
    """
    center: float
    span: float
    n_points: int
    axis_kind: str = 'wavelength'

    def __post_init__(self):
        if self.axis_kind not in AXIS_KINDS:
            fail(InvalidArgumentError, f"Unknown axis kind '{self.axis_kind}'.")
        if int(self.n_points) != self.n_points or self.n_points < 8:
            fail(InvalidArgumentError, f"A grid needs at least 8 points, got {self.n_points}.")
        if not np.isfinite(self.span) or self.span <= 0:
            fail(InvalidArgumentError, f"Grid span must be positive, got {self.span}.")
        if not np.isfinite(self.center):
            fail(InvalidArgumentError, f"Grid center must be finite, got {self.center}.")
        if self.axis_kind == 'wavelength' and self.center - self.span / 2.0 <= 0:
            fail(InvalidArgumentError,
                 f"Wavelength grid must stay positive: center {self.center} nm, span {self.span} nm.")

    @property
    def step(self):
        return self.span / (self.n_points - 1)

    @property
    def start(self):
        return self.center - self.span / 2.0

    @property
    def stop(self):
        return self.center + self.span / 2.0

    @property
    def values(self):
        return np.linspace(self.start, self.stop, self.n_points)

    @property
    def edges(self):
        """Bin edges half a step either side of each sample."""
        return np.linspace(self.start - self.step / 2.0, self.stop + self.step / 2.0, self.n_points + 1)

    def index_of(self, value):
        """Fractional index of a coordinate value."""
        return (np.asarray(value, dtype=float) - self.start) / self.step

    def value_at(self, index):
        """Coordinate value of a (fractional) index."""
        return self.start + np.asarray(index, dtype=float) * self.step


def make_grid(center, span, n, axis_kind='wavelength'):
    """
    Builds a uniform grid.

    Parameters:
    ----------
    center : float
        Grid center (nm for wavelength grids).
    span : float
        Distance between the first and last sample.
    n : int
        Number of samples, at least 8.
    axis_kind : str
        One of AXIS_KINDS.

    Returns:
    -------
    SpectralGrid
    """
    if axis_kind == 'wavelength' and (center is None or center <= 0):
        fail(InvalidArgumentError, f"Grid center must be positive, got {center}.")
    return SpectralGrid(float(center), float(span), int(n), axis_kind)


def grid_from_start(start, step, n, axis_kind):
    """Builds a grid from its first sample and step instead of center and span."""
    span = step * (n - 1)
    return make_grid(start + span / 2.0, span, n, axis_kind)


# ---------------------------------------------------------------------------
# Unit conversions
# ---------------------------------------------------------------------------

def wavelength_to_frequency(wavelength):
    """
    Converts wavelength in nm to optical frequency in THz.

    Parameters:
    ----------
    wavelength : float or np.ndarray
        Strictly positive wavelengths in nm.

    Returns:
    -------
    float or np.ndarray
        Frequencies in THz.
    """
    wavelength = np.asarray(wavelength, dtype=float)
    if np.any(~np.isfinite(wavelength)) or np.any(wavelength <= 0):
        fail(InvalidArgumentError, "Wavelengths must be finite and positive.")
    result = speed_of_light_nm_ps / wavelength
    return float(result) if result.ndim == 0 else result


def frequency_to_wavelength(frequency):
    """Converts optical frequency in THz to wavelength in nm."""
    frequency = np.asarray(frequency, dtype=float)
    if np.any(~np.isfinite(frequency)) or np.any(frequency <= 0):
        fail(InvalidArgumentError, "Frequencies must be finite and positive.")
    result = speed_of_light_nm_ps / frequency
    return float(result) if result.ndim == 0 else result


def bandwidth_to_frequency(center_wavelength, wavelength_fwhm):
    """
    Converts a wavelength FWHM around a center wavelength into a frequency FWHM.

    The band edges center -/+ fwhm/2 are converted exactly, so the result is not
    the small-bandwidth approximation c*dl/l^2.
    """
    half = wavelength_fwhm / 2.0
    return wavelength_to_frequency(center_wavelength - half) - wavelength_to_frequency(center_wavelength + half)


def frequency_to_bandwidth(center_wavelength, frequency_fwhm):
    """Inverse of bandwidth_to_frequency, in nm."""
    nu0 = wavelength_to_frequency(center_wavelength)
    half = frequency_fwhm / 2.0
    return frequency_to_wavelength(nu0 - half) - frequency_to_wavelength(nu0 + half)


def delay_from_depth(depth):
    """Round-trip delay in ps of a one-way optical path in um."""
    return 2.0 * np.asarray(depth, dtype=float) / speed_of_light_um_ps


def depth_from_delay(delay):
    """One-way optical path in um of a round-trip delay in ps."""
    return speed_of_light_um_ps * np.asarray(delay, dtype=float) / 2.0


# ---------------------------------------------------------------------------
# Provenance
# ---------------------------------------------------------------------------

def provenance_entry(name, **params):
    """
    Formats one provenance step as 'name' or 'name {json params}'.

    Parameters are serialised with sorted keys so equal steps give equal text.
    """
    if not params:
        return name
    return f"{name} {json.dumps(params, sort_keys=True)}"


def parse_provenance_entry(entry):
    """Splits a provenance entry back into its name and parameter dict."""
    name, _, payload = entry.partition(' ')
    return name, (json.loads(payload) if payload else {})


def replay(raw, provenance, registry):
    """
    Re-applies recorded steps to a stored raw spectrum.

    Parameters:
    ----------
    raw : JointSpectrum
        The spectrum the recorded steps started from. Its own provenance is a
        prefix of `provenance`.
    provenance : sequence of str
        Full provenance of the result to reproduce.
    registry : dict
        Maps step names to callables f(spectrum, **params).

    Returns:
    -------
    JointSpectrum
    """
    provenance = tuple(provenance)
    prefix = tuple(raw.provenance)
    if provenance[:len(prefix)] != prefix:
        fail(InvalidArgumentError, "The raw spectrum is not an ancestor of the recorded provenance.")
    result = raw
    for entry in provenance[len(prefix):]:
        name, params = parse_provenance_entry(entry)
        if name not in registry:
            fail(InvalidArgumentError, f"No replay rule for provenance step '{name}'.")
        result = registry[name](result, **params)
    return result


# ---------------------------------------------------------------------------
# Joint spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameMeta:
    delay1: float
    delay2: float
    window: float


@dataclass(frozen=True, eq=False)
class JointSpectrum:
    """
    Coincidence rate (or counts) over two axes; rows follow axis1.

    `flags` carries non-fatal warnings raised while the spectrum was produced.
    """
    axis1: SpectralGrid
    axis2: SpectralGrid
    values: np.ndarray
    frame_meta: FrameMeta = None
    provenance: tuple = ()
    flags: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.axis1.n_points, self.axis2.n_points):
            fail(InvalidArgumentError,
                 f"Values of shape {values.shape} do not match axes "
                 f"({self.axis1.n_points}, {self.axis2.n_points}).")
        if not np.all(np.isfinite(values)):
            fail(InvalidArgumentError, "Joint spectrum values must be finite.")
        if np.any(values < 0):
            fail(InvalidArgumentError, "Joint spectrum values must be non-negative.")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'provenance', tuple(self.provenance))
        object.__setattr__(self, 'flags', tuple(self.flags))

    @property
    def shape(self):
        return self.values.shape

    def derive(self, values, step, axis1=None, axis2=None, frame_meta=None, flags=()):
        """
        Returns a new spectrum with `step` appended to the provenance.

        Axes and frame metadata are inherited unless given.
        """
        return JointSpectrum(
            axis1=axis1 if axis1 is not None else self.axis1,
            axis2=axis2 if axis2 is not None else self.axis2,
            values=values,
            frame_meta=frame_meta if frame_meta is not None else self.frame_meta,
            provenance=self.provenance + (step,),
            flags=self.flags + tuple(flags),
        )


# ---------------------------------------------------------------------------
# Objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dispersion:
    """Polynomial phase coefficients: beta2 in fs^2, beta3 in fs^3."""
    beta2: float = 0.0
    beta3: float = 0.0


@dataclass(frozen=True)
class Interface:
    position: float      # um, one-way optical path from the reference-arm zero
    reflectivity: float  # amplitude reflectivity in (0, 1]


@dataclass(frozen=True)
class LayeredObject:
    """
    Ordered reflecting interfaces.

    `segment_dispersion` has one entry per gap between neighbouring interfaces;
    an interface accumulates the phase of every gap in front of it. An empty
    tuple means dispersion-free gaps. `arm_imbalance` applies to the whole
    sample arm.
    """
    interfaces: tuple
    segment_dispersion: tuple = ()
    arm_imbalance: Dispersion = field(default_factory=Dispersion)

    def __post_init__(self):
        interfaces = tuple(self.interfaces)
        if not interfaces:
            fail(InvalidArgumentError, "A layered object needs at least one interface.")
        positions = np.array([interface.position for interface in interfaces], dtype=float)
        reflectivities = np.array([interface.reflectivity for interface in interfaces], dtype=float)
        if not np.all(np.isfinite(positions)):
            fail(InvalidArgumentError, "Interface positions must be finite.")
        if np.any(np.diff(positions) <= 0):
            fail(InvalidArgumentError, "Interface positions must be strictly increasing.")
        if np.any(reflectivities <= 0) or np.any(reflectivities > 1):
            fail(InvalidArgumentError, "Interface reflectivities must lie in (0, 1].")
        segments = tuple(self.segment_dispersion)
        if segments and len(segments) != len(interfaces) - 1:
            fail(InvalidArgumentError,
                 f"Expected {len(interfaces) - 1} segment dispersion entries, got {len(segments)}.")
        object.__setattr__(self, 'interfaces', interfaces)
        object.__setattr__(self, 'segment_dispersion', segments)
        if np.sum(reflectivities ** 2) > 1.0:
            log.warning("Sum of squared reflectivities %.3f exceeds 1.", np.sum(reflectivities ** 2))

    @property
    def positions(self):
        return np.array([interface.position for interface in self.interfaces], dtype=float)

    @property
    def reflectivities(self):
        return np.array([interface.reflectivity for interface in self.interfaces], dtype=float)

    @property
    def flags(self):
        if np.sum(self.reflectivities ** 2) > 1.0:
            return ('energy_bound_exceeded',)
        return ()

    def cumulative_dispersion(self):
        """
        Dispersion accumulated in front of each interface.

        Returns:
        -------
        tuple of (np.ndarray, np.ndarray)
            beta2 and beta3 per interface, fs^2 and fs^3.
        """
        n = len(self.interfaces)
        beta2 = np.zeros(n)
        beta3 = np.zeros(n)
        for index, segment in enumerate(self.segment_dispersion):
            beta2[index + 1:] += segment.beta2
            beta3[index + 1:] += segment.beta3
        return beta2, beta3


def mirror(position, reflectivity=1.0, arm_imbalance=None):
    """Single-interface object."""
    return LayeredObject(
        interfaces=(Interface(float(position), float(reflectivity)),),
        arm_imbalance=arm_imbalance or Dispersion(),
    )


def layered_object(positions, reflectivity, arm_imbalance=None):
    """Object with equal reflectivity at every listed position."""
    return LayeredObject(
        interfaces=tuple(Interface(float(position), float(reflectivity)) for position in positions),
        arm_imbalance=arm_imbalance or Dispersion(),
    )


# ---------------------------------------------------------------------------
# Source and detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceSpec:
    center_wavelength: float = default_center_wavelength
    diagonal_fwhm: float = default_diagonal_fwhm          # THz, single-photon intensity FWHM
    antidiagonal_fwhm: float = default_antidiagonal_fwhm  # nm at the photon wavelength
    pump_center: float = default_pump_center
    pump_fwhm: float = default_pump_fwhm
    pair_rate: float = default_pair_rate
    hom_visibility: float = default_hom_visibility

    def __post_init__(self):
        require_positive(self.center_wavelength, 'center_wavelength')
        require_positive(self.diagonal_fwhm, 'diagonal_fwhm')
        require_positive(self.antidiagonal_fwhm, 'antidiagonal_fwhm')
        require_positive(self.pump_center, 'pump_center')
        require_positive(self.pump_fwhm, 'pump_fwhm')
        require_non_negative(self.pair_rate, 'pair_rate')
        if not 0.0 <= self.hom_visibility <= 1.0:
            fail(InvalidArgumentError, f"HOM visibility must lie in [0, 1], got {self.hom_visibility}.")
        half = self.center_wavelength / 2.0
        if abs(self.pump_center - half) > 0.1 * half:
            fail(InvalidArgumentError,
                 f"Pump center {self.pump_center} nm is not within 10% of half the photon "
                 f"wavelength ({half} nm).")

    @property
    def center_frequency(self):
        """Photon center frequency nu0 in THz."""
        return wavelength_to_frequency(self.center_wavelength)

    @property
    def pump_frequency_fwhm(self):
        """Pump spectral FWHM in THz; the pump frequency is the pair's sum frequency."""
        return speed_of_light_nm_ps * self.pump_fwhm / self.pump_center ** 2

    @property
    def antidiagonal_frequency_fwhm(self):
        """
        FWHM of the envelope in the sum frequency nu1 + nu2, in THz.

        Along the nu1 = nu2 cut the sum frequency is 2*nu, so a wavelength FWHM
        of antidiagonal_fwhm on that cut corresponds to twice its frequency
        width in the sum coordinate. The phase-matching width set by
        antidiagonal_fwhm is multiplied by the Gaussian pump spectrum, so the
        two widths add as inverse squares and pump_fwhm -> 0 collapses the
        spectrum onto a single anti-diagonal.
        """
        matching = 2.0 * speed_of_light_nm_ps * self.antidiagonal_fwhm / self.center_wavelength ** 2
        pump = self.pump_frequency_fwhm
        return matching * pump / np.hypot(matching, pump)


@dataclass(frozen=True)
class FibreSpec:
    """
    Dispersive fibre: group delay polynomial in (lambda - lambda_ref).

    Coefficients are ascending [t0 ps, D ps/nm, S/2 ps/nm^2, ...].
    """
    length: float = default_fibre_length
    group_delay_coeffs: tuple = (0.0, 85.0)
    lambda_ref: float = default_center_wavelength

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.group_delay_coeffs)
        if len(coeffs) < 2 or coeffs[1] == 0:
            fail(InvalidArgumentError, "A fibre needs a non-zero linear dispersion coefficient.")
        object.__setattr__(self, 'group_delay_coeffs', coeffs)
        require_non_negative(self.length, 'length')
        require_positive(self.lambda_ref, 'lambda_ref')

    @property
    def linear_dispersion(self):
        return self.group_delay_coeffs[1]

    @property
    def valid_range(self):
        """
        Wavelength interval (nm) around lambda_ref where the group delay is monotonic.

        Bounded by the nearest real roots of the derivative and by
        fibre_search_half_width either side of lambda_ref.
        """
        lo = max(self.lambda_ref - fibre_search_half_width, 1e-3)
        hi = self.lambda_ref + fibre_search_half_width
        derivative = np.polynomial.polynomial.polyder(np.array(self.group_delay_coeffs))
        if len(derivative) > 1:
            roots = np.polynomial.polynomial.polyroots(derivative)
            for root in roots[np.abs(roots.imag) < 1e-12].real:
                if root < 0:
                    lo = max(lo, self.lambda_ref + root)
                elif root > 0:
                    hi = min(hi, self.lambda_ref + root)
        return lo, hi


@dataclass(frozen=True)
class PumpLeak:
    channel: int
    rate: float                # counts/s spread along the leak line
    wavelength: float = None   # nm in the leaking channel, defaults to the source center

    def __post_init__(self):
        if self.channel not in (1, 2):
            fail(InvalidArgumentError, f"Pump leak channel must be 1 or 2, got {self.channel}.")
        require_non_negative(self.rate, 'pump_leak.rate')


@dataclass(frozen=True)
class DetectionSpec:
    fibre1: FibreSpec = field(default_factory=FibreSpec)
    fibre2: FibreSpec = field(default_factory=FibreSpec)
    time_bin: float = 24.0
    coincidence_window: float = default_coincidence_window
    spectral_resolution_fwhm: float = 0.0
    background_rate: float = 0.0
    pump_leak: PumpLeak = None

    def __post_init__(self):
        require_positive(self.time_bin, 'time_bin')
        require_positive(self.coincidence_window, 'coincidence_window')
        if self.coincidence_window < self.time_bin:
            fail(InvalidArgumentError, "The coincidence window must be at least one time bin.")
        require_non_negative(self.spectral_resolution_fwhm, 'spectral_resolution_fwhm')
        require_non_negative(self.background_rate, 'background_rate')


# ---------------------------------------------------------------------------
# A-scans
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AScan:
    """
    Depth profile. FD and classical scans start at zero depth on a uniform
    axis; time-domain scans use the stage positions as their axis.
    """
    depth_axis: np.ndarray
    amplitude: np.ndarray
    source_kind: str = 'fd_qoct'

    def __post_init__(self):
        if self.source_kind not in ASCAN_KINDS:
            fail(InvalidArgumentError, f"Unknown A-scan kind '{self.source_kind}'.")
        depth = np.array(self.depth_axis, dtype=float)
        amplitude = np.array(self.amplitude, dtype=float)
        if depth.shape != amplitude.shape or depth.ndim != 1 or depth.size < 2:
            fail(InvalidArgumentError, "Depth axis and amplitude must be equal-length vectors.")
        if np.any(np.diff(depth) <= 0):
            fail(InvalidArgumentError, "A-scan depth axis must be strictly increasing.")
        if self.source_kind != 'td_qoct' and depth[0] != 0.0:
            fail(InvalidArgumentError, "Fourier-domain A-scans start at zero depth.")
        if not np.all(np.isfinite(amplitude)) or np.any(amplitude < 0):
            fail(InvalidArgumentError, "A-scan amplitudes must be finite and non-negative.")
        depth.setflags(write=False)
        amplitude.setflags(write=False)
        object.__setattr__(self, 'depth_axis', depth)
        object.__setattr__(self, 'amplitude', amplitude)

    @property
    def step(self):
        return float(self.depth_axis[1] - self.depth_axis[0])

    def normalised(self):
        peak = self.amplitude.max()
        return replace(self, amplitude=self.amplitude / peak if peak > 0 else self.amplitude)
