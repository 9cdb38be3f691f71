# utilities_forward.py
# Physics forward model: joint spectra, time-domain traces, classical fringes, shot noise

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from qoct.config import (
    speed_of_light_nm_ps,
    fwhm_to_sigma,
    frequency_range,
)
from qoct.utilities_core import (
    JointSpectrum,
    SpectralGrid,
    make_grid,
    wavelength_to_frequency,
    delay_from_depth,
    provenance_entry,
)
from qoct.utilities_validation import (
    fail,
    InvalidArgumentError,
    require_non_negative,
    thread_count,
)

log = logging.getLogger(__name__)

FOUR_LN2 = 4.0 * np.log(2.0)


@dataclass(frozen=True)
class SimulationRequest:
    source: object
    object: object
    detection: object
    reference_delay: float   # um, reference arm offset as one-way optical path
    grid: SpectralGrid
    integration_time: float = 1.0
    seed: int = None

    def __post_init__(self):
        require_non_negative(self.integration_time, 'integration_time')
        if self.grid.axis_kind != 'wavelength':
            fail(InvalidArgumentError, "Simulations run on wavelength grids.")


@dataclass(frozen=True, eq=False)
class TimeDomainTrace:
    stage_positions: np.ndarray
    coincidence_rate: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.stage_positions, dtype=float)
        rate = np.asarray(self.coincidence_rate, dtype=float)
        if positions.shape != rate.shape:
            fail(InvalidArgumentError, "Stage positions and rates must have equal lengths.")
        if not np.all(np.isfinite(rate)) or np.any(rate < 0):
            fail(InvalidArgumentError, "Coincidence rates must be finite and non-negative.")
        object.__setattr__(self, 'stage_positions', positions)
        object.__setattr__(self, 'coincidence_rate', rate)


@dataclass(frozen=True)
class ClassicalSource:
    center: float                      # nm
    fwhm: float                        # nm
    reference_reflectivity: float = 1.0

    @classmethod
    def from_bandwidth(cls, center, frequency_fwhm, reference_reflectivity=1.0):
        """Builds a source whose frequency FWHM is exactly `frequency_fwhm` THz."""
        return cls(center, frequency_fwhm * center ** 2 / speed_of_light_nm_ps, reference_reflectivity)

    @property
    def frequency_fwhm(self):
        return speed_of_light_nm_ps * self.fwhm / self.center ** 2


@dataclass(frozen=True, eq=False)
class ClassicalSpectrum:
    grid: SpectralGrid
    intensity: np.ndarray

    def __post_init__(self):
        intensity = np.asarray(self.intensity, dtype=float)
        if intensity.shape != (self.grid.n_points,):
            fail(InvalidArgumentError, "Classical intensity must match its grid.")
        if not np.all(np.isfinite(intensity)) or np.any(intensity < 0):
            fail(InvalidArgumentError, "Classical intensity must be finite and non-negative.")
        object.__setattr__(self, 'intensity', intensity)


def dispersion_phase(beta2, beta3, detuning):
    """
    Polynomial spectral phase in radians.

    Parameters:
    ----------
    beta2 : float or np.ndarray
        fs^2.
    beta3 : float or np.ndarray
        fs^3.
    detuning : np.ndarray
        nu - nu0 in THz.
    """
    omega = 2.0 * np.pi * detuning   # rad/ps
    return 0.5 * beta2 * 1e-6 * omega ** 2 + beta3 * 1e-9 / 6.0 * omega ** 3


def joint_envelope_values(source, nu1, nu2):
    """
    Gaussian pair envelope on arbitrary frequency arrays (broadcast), peak 1.

    Sum frequency width comes from the anti-diagonal FWHM, difference frequency
    width from twice the single-photon diagonal FWHM.
    """
    nu0 = source.center_frequency
    sum_term = (nu1 + nu2 - 2.0 * nu0) ** 2 / source.antidiagonal_frequency_fwhm ** 2
    difference_term = (nu1 - nu2) ** 2 / (2.0 * source.diagonal_fwhm) ** 2
    return np.exp(-FOUR_LN2 * (sum_term + difference_term))


def _edge_flags(envelope):
    edge = max(envelope[0, :].max(), envelope[-1, :].max(), envelope[:, 0].max(), envelope[:, -1].max())
    if edge > 0.5:
        log.warning("Envelope reaches %.2f at the grid edge; the grid is too narrow.", edge)
        return ('grid_too_narrow',)
    return ()


def joint_envelope(source, grid, grid2=None):
    """
    Evaluates the pair envelope on a wavelength grid.

    Parameters:
    ----------
    source : SourceSpec
    grid : SpectralGrid
        Channel-1 wavelength axis (and channel 2 unless `grid2` is given).

    Returns:
    -------
    JointSpectrum
        Envelope normalised to max 1, flagged 'grid_too_narrow' when it exceeds
        0.5 on the grid boundary.
    """
    grid2 = grid2 or grid
    nu1 = wavelength_to_frequency(grid.values)
    nu2 = wavelength_to_frequency(grid2.values)
    envelope = joint_envelope_values(source, nu1[:, None], nu2[None, :])
    peak = envelope.max()
    if peak > 0:
        envelope = envelope / peak
    return JointSpectrum(grid, grid2, envelope,
                         provenance=(provenance_entry('joint_envelope'),),
                         flags=_edge_flags(envelope))


def object_transfer(obj, nu, reference_frequency=None):
    """
    Complex reflectance H(nu) of a layered object.

    H = arm_phase(nu) * sum_k r_k exp(i[2 pi 2 nu z_k / c + psi_k(nu)])

    Parameters:
    ----------
    obj : LayeredObject
    nu : float or np.ndarray
        Frequencies in THz within the sanity range.
    reference_frequency : float, optional
        Expansion point of the dispersion polynomials, THz. Defaults to 1550 nm.

    Returns:
    -------
    np.ndarray
        Complex reflectance, same shape as `nu`.
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < frequency_range[0]) or np.any(nu > frequency_range[1]):
        fail(InvalidArgumentError,
             f"Frequencies must lie within {frequency_range[0]}-{frequency_range[1]} THz.")
    if reference_frequency is None:
        reference_frequency = wavelength_to_frequency(1550.0)
    detuning = nu - reference_frequency
    delays = delay_from_depth(obj.positions)
    beta2, beta3 = obj.cumulative_dispersion()

    # interfaces along the last axis, summed out
    phase = (2.0 * np.pi * nu[..., None] * delays
             + dispersion_phase(beta2, beta3, detuning[..., None]))
    transfer = np.sum(obj.reflectivities * np.exp(1j * phase), axis=-1)
    arm = obj.arm_imbalance
    if arm.beta2 or arm.beta3:
        transfer = transfer * np.exp(1j * dispersion_phase(arm.beta2, arm.beta3, detuning))
    return transfer


def coincidence_rate(source, obj, nu1, nu2, reference_delay):
    """
    Noise-free, unblurred two-photon coincidence term on arbitrary frequencies.

    C = env * (|H1|^2 + |H2|^2 - 2 V Re{H1 H2* exp(-i 2 pi (nu1 - nu2) tau)}) / 4

    Parameters broadcast against each other; reference_delay is in um.
    """
    nu1 = np.asarray(nu1, dtype=float)
    nu2 = np.asarray(nu2, dtype=float)
    tau = delay_from_depth(reference_delay)
    nu0 = source.center_frequency
    h1 = object_transfer(obj, nu1, nu0)
    h2 = object_transfer(obj, nu2, nu0)
    exchange = h1 * np.conj(h2) * np.exp(-2j * np.pi * (nu1 - nu2) * tau)
    bracket = np.abs(h1) ** 2 + np.abs(h2) ** 2 - 2.0 * source.hom_visibility * exchange.real
    return joint_envelope_values(source, nu1, nu2) * bracket / 4.0


def _blur_sigma_bins(grid, fwhm):
    return fwhm * fwhm_to_sigma / grid.step


def simulate_joint_spectrum(request):
    """
    Expected coincidence counts of an Fd-Q-OCT acquisition on a wavelength grid.

    The exchange term is evaluated as an outer product of per-channel factors,
    then blurred with the separable Gaussian detection kernel and scaled so
    that the envelope integrates to pair_rate * integration_time. Accidental
    background and the optional pump-leak line are added last.

    Parameters:
    ----------
    request : SimulationRequest

    Returns:
    -------
    JointSpectrum
        Expected counts, provenance ('simulate_joint_spectrum',).
    """
    source, obj, detection, grid = request.source, request.object, request.detection, request.grid
    nu = wavelength_to_frequency(grid.values)
    nu0 = source.center_frequency
    tau = delay_from_depth(request.reference_delay)

    transfer = object_transfer(obj, nu, nu0)
    weighted = transfer * np.exp(-2j * np.pi * nu * tau)
    power = np.abs(transfer) ** 2
    exchange = np.outer(weighted, np.conj(weighted)).real

    envelope = joint_envelope_values(source, nu[:, None], nu[None, :])
    flags = _edge_flags(envelope / envelope.max()) if envelope.max() > 0 else ('envelope_outside_grid',)
    values = envelope * (power[:, None] + power[None, :] - 2.0 * source.hom_visibility * exchange) / 4.0

    if detection.spectral_resolution_fwhm > 0:
        sigma = _blur_sigma_bins(grid, detection.spectral_resolution_fwhm)
        values = gaussian_filter1d(values, sigma, axis=0, mode='reflect')
        values = gaussian_filter1d(values, sigma, axis=1, mode='reflect')

    norm = envelope.sum()
    if norm <= 0:
        norm = 1.0
    values = values * (source.pair_rate * request.integration_time / norm)

    if detection.background_rate > 0:
        values = values + detection.background_rate * request.integration_time / values.size
    leak = detection.pump_leak
    if leak is not None and leak.rate > 0:
        wavelength = leak.wavelength if leak.wavelength is not None else source.center_wavelength
        index = int(np.clip(np.rint(grid.index_of(wavelength)), 0, grid.n_points - 1))
        line = leak.rate * request.integration_time / grid.n_points
        values = values.copy()
        if leak.channel == 1:
            values[index, :] += line
        else:
            values[:, index] += line

    # rounding at perfect HOM suppression can leave tiny negatives
    values = np.clip(values, 0.0, None)
    log.debug("Simulated %dx%d joint spectrum, reference delay %.3f um.",
              grid.n_points, grid.n_points, request.reference_delay)
    return JointSpectrum(grid, grid, values,
                         provenance=(provenance_entry('simulate_joint_spectrum'),),
                         flags=flags + obj.flags)


def default_time_domain_grid(source, n_points=256, coverage=4.0):
    """Wavelength grid covering `coverage` diagonal FWHMs, used when no grid is given."""
    nu0 = source.center_frequency
    half = coverage * source.diagonal_fwhm / 2.0
    span = speed_of_light_nm_ps / (nu0 - half) - speed_of_light_nm_ps / (nu0 + half)
    return make_grid(source.center_wavelength, span, n_points)


def _poisson_row(seed, row, expected):
    generator = np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(row), 0, 0]))
    return np.asarray(generator.poisson(expected), dtype=float)


def simulate_time_domain(source, obj, detection, stage_positions, integration_time, seed=None,
                         grid=None, threads=None):
    """
    Time-domain Q-OCT: total coincidences per reference stage position.

    Every point is the grid sum of simulate_joint_spectrum at that reference
    delay, so the trace and the Fourier-domain model agree by construction.

    Parameters:
    ----------
    stage_positions : sequence of float
        Reference delays in um.
    integration_time : float
        Seconds per stage position.
    seed : int, optional
        Poisson-sample each point when given.
    grid : SpectralGrid, optional
        Internal wavelength grid; default_time_domain_grid otherwise.
    threads : int, optional
        Worker count; QOCT_THREADS when omitted.

    Returns:
    -------
    TimeDomainTrace
    """
    positions = np.asarray(stage_positions, dtype=float).ravel()
    if positions.size == 0:
        fail(InvalidArgumentError, "At least one stage position is required.")
    if not np.all(np.isfinite(positions)):
        fail(InvalidArgumentError, "Stage positions must be finite.")
    grid = grid or default_time_domain_grid(source)

    def total(position):
        request = SimulationRequest(source, obj, detection, float(position), grid, integration_time)
        return simulate_joint_spectrum(request).values.sum()

    workers = threads or thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rates = np.array(list(pool.map(total, positions)))
    else:
        rates = np.array([total(position) for position in positions])

    if seed is not None:
        rates = np.array([_poisson_row(seed, index, rate) for index, rate in enumerate(rates)])
    log.info("Time-domain trace over %d stage positions.", positions.size)
    return TimeDomainTrace(positions, rates)


def simulate_classical_fringes(classical_source, obj, reference_delay, grid):
    """
    Spectral-domain OCT interferogram.

    S(nu) = S0(nu) |r_ref + H(nu) exp(-i 2 pi nu tau)|^2 with a Gaussian S0.

    Parameters:
    ----------
    classical_source : ClassicalSource
    obj : LayeredObject
    reference_delay : float
        um.
    grid : SpectralGrid
        Wavelength grid of the spectrometer.

    Returns:
    -------
    ClassicalSpectrum
    """
    nu = wavelength_to_frequency(grid.values)
    nu_c = wavelength_to_frequency(classical_source.center)
    envelope = np.exp(-FOUR_LN2 * (nu - nu_c) ** 2 / classical_source.frequency_fwhm ** 2)
    tau = delay_from_depth(reference_delay)
    field = classical_source.reference_reflectivity + object_transfer(obj, nu, nu_c) * np.exp(-2j * np.pi * nu * tau)
    return ClassicalSpectrum(grid, envelope * np.abs(field) ** 2)


def apply_shot_noise(js, seed, threads=None):
    """
    Poisson-samples every bin of an expected-count spectrum.

    Each row draws from its own Philox stream keyed by the seed and the row
    index, so the result does not depend on the order rows are processed in.

    Parameters:
    ----------
    js : JointSpectrum
        Expected counts.
    seed : int

    Returns:
    -------
    JointSpectrum
        Integer counts stored as float64.
    """
    if seed is None:
        fail(InvalidArgumentError, "Shot noise needs a seed.")
    expected = np.asarray(js.values)
    if np.any(expected < 0):
        fail(InvalidArgumentError, "Expected counts must be non-negative.")

    workers = threads or thread_count()
    rows = range(expected.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(lambda row: _poisson_row(seed, row, expected[row]), rows))
    else:
        counts = [_poisson_row(seed, row, expected[row]) for row in rows]
    return js.derive(np.vstack(counts), provenance_entry('apply_shot_noise', seed=int(seed)))


def expected_total_counts(js):
    """Total expected counts of a spectrum (rate x time already applied)."""
    return float(np.sum(js.values))


def acquisition_time_for_counts(request, target_counts):
    """
    Integration time needed to collect `target_counts` coincidences on average.

    Parameters:
    ----------
    request : SimulationRequest
        Its own integration_time is ignored.
    target_counts : float

    Returns:
    -------
    float
        Seconds.
    """
    rate = expected_total_counts(simulate_joint_spectrum(replace(request, integration_time=1.0)))
    if rate <= 0:
        fail(InvalidArgumentError, "The configuration produces no coincidences.")
    return float(target_counts) / rate
