# pipeline.py
# Run configurations, presets and the stage orchestration behind `qoct run`

import copy
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from qoct import __version__
from qoct.config import preset_directory, preset_aliases, default_frame_span, default_coincidence_window
from qoct.utilities_core import (
    SourceSpec,
    DetectionSpec,
    FibreSpec,
    PumpLeak,
    Dispersion,
    Interface,
    LayeredObject,
    make_grid,
)
from qoct.utilities_forward import (
    SimulationRequest,
    ClassicalSource,
    simulate_joint_spectrum,
    simulate_time_domain,
    simulate_classical_fringes,
    apply_shot_noise,
)
from qoct.utilities_acquisition import (
    StitchPlan,
    default_fibre,
    group_delay,
    to_time_histogram,
    select_frame,
    plan_antidiagonal_frames,
    calibrate_histogram,
    stitch_frames,
)
from qoct.utilities_preprocess import (
    PumpModel,
    rotate45,
    fibre_shift_vector,
    compensate_fibre,
    estimate_row_frequencies,
    model_row_frequencies,
    compensate_pump,
)
from qoct.utilities_reconstruct import (
    ASCAN_METHODS,
    ascan_batch,
    fourier_map,
    classical_ascan,
    trace_to_ascan,
    falloff_analysis,
    predict_artefacts,
    match_artefacts,
)
from qoct import utilities_download as download
from qoct import utilities_figure as figure
from qoct.utilities_validation import (
    fail,
    current_timestamp,
    QOCTError,
    ConfigError,
    StageError,
)

log = logging.getLogger(__name__)

SCAN_MODES = ('fd_single_frame', 'fd_whole', 'td', 'classical')
PUMP_MODES = ('off', 'data', 'model')
OUTPUT_KINDS = ('joint_spectrum', 'rotated', 'fourier_map', 'ascan', 'falloff', 'artefacts')
OUTPUT_FORMATS = ('qjs', 'csv')

# outputs each scan mode can produce
MODE_OUTPUTS = {
    'fd_single_frame': OUTPUT_KINDS,
    'fd_whole': OUTPUT_KINDS,
    'td': ('ascan', 'artefacts'),
    'classical': ('ascan',),
}

TOP_LEVEL_KEYS = ('name', 'description', 'source', 'object', 'detection', 'grid', 'scan',
                  'acquisition', 'processing', 'classical', 'outputs')


@dataclass(frozen=True)
class ScanConfig:
    mode: str
    reference_delay: float = 0.0
    stage_positions: tuple = None
    integration_time: float = 1.0
    seed: int = None
    sweep: tuple = None


@dataclass(frozen=True)
class AcquisitionConfig:
    n_frames: int = 9
    frame_bins: int = None
    step_bins: int = None
    nonlinear_calibration: bool = False


@dataclass(frozen=True)
class ProcessingConfig:
    fibre_comp: bool = True
    pump_comp: str = 'off'
    pump_continuous: bool = False
    dc_removal: bool = True
    window: str = None
    ascan_method: str = 'row_average'
    calibration_depth: float = None


@dataclass(frozen=True)
class OutputSpec:
    kind: str
    path: str


@dataclass(frozen=True)
class PipelineConfig:
    source: SourceSpec
    object: LayeredObject
    detection: DetectionSpec
    grid: object
    scan: ScanConfig
    acquisition: AcquisitionConfig
    processing: ProcessingConfig
    classical: ClassicalSource
    outputs: tuple
    name: str = ''
    document: dict = field(default=None, compare=False, repr=False)

    @property
    def checksum(self):
        return download.document_checksum(self.document)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    created: str
    outputs: dict = field(default_factory=dict)     # path -> sha256
    plots: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)     # stage -> seconds
    results: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            'config_hash': self.config_hash,
            'version': self.version,
            'created': self.created,
            'outputs': dict(self.outputs),
            'plots': list(self.plots),
            'timings': {stage: round(seconds, 6) for stage, seconds in self.timings.items()},
        }


# ---------------------------------------------------------------------------
# Configuration parsing
# ---------------------------------------------------------------------------

def _section(document, path, allowed):
    if not isinstance(document, dict):
        fail(ConfigError, f"'{path}' must be an object.", field=path)
    unknown = sorted(set(document) - set(allowed))
    if unknown:
        name = f"{path}.{unknown[0]}" if path else unknown[0]
        fail(ConfigError, f"Unknown configuration key '{name}'.", field=name)
    return document


def _number(document, key, path, default=None, integer=False):
    value = document.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        fail(ConfigError, f"'{path}.{key}' must be a number, got {value!r}.", field=f"{path}.{key}")
    if integer:
        if int(value) != value:
            fail(ConfigError, f"'{path}.{key}' must be an integer, got {value!r}.", field=f"{path}.{key}")
        return int(value)
    return float(value)


def _flag(document, key, path, default):
    value = document.get(key, default)
    if not isinstance(value, bool):
        fail(ConfigError, f"'{path}.{key}' must be true or false.", field=f"{path}.{key}")
    return value


def _choice(document, key, path, choices, default):
    value = document.get(key, default)
    if value not in choices:
        fail(ConfigError, f"'{path}.{key}' must be one of {choices}, got {value!r}.", field=f"{path}.{key}")
    return value


def _build(path, factory, *args, **kwargs):
    # domain validation errors become config errors pointing at the section
    try:
        return factory(*args, **kwargs)
    except QOCTError as error:
        fail(ConfigError, f"{path}: {error}", field=path)


def _positions(value, path):
    """A list of numbers or a {start, stop, step} range (stop inclusive)."""
    if isinstance(value, dict):
        _section(value, path, ('start', 'stop', 'step'))
        start, stop, step = (_number(value, key, path) for key in ('start', 'stop', 'step'))
        if None in (start, stop, step) or step <= 0 or stop < start:
            fail(ConfigError, f"'{path}' needs start <= stop and a positive step.", field=path)
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return tuple(float(start + index * step) for index in range(count))
    if not isinstance(value, list) or not value:
        fail(ConfigError, f"'{path}' must be a non-empty list or a range object.", field=path)
    for index, item in enumerate(value):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            fail(ConfigError, f"'{path}[{index}]' must be a number.", field=f"{path}[{index}]")
    return tuple(float(item) for item in value)


def _parse_dispersion(document, path):
    _section(document, path, ('beta2', 'beta3'))
    return Dispersion(_number(document, 'beta2', path, 0.0), _number(document, 'beta3', path, 0.0))


def _parse_source(document):
    path = 'source'
    _section(document, path, ('center_wavelength', 'diagonal_fwhm', 'antidiagonal_fwhm', 'pump_center',
                              'pump_fwhm', 'pair_rate', 'hom_visibility'))
    defaults = SourceSpec()
    values = {key: _number(document, key, path, getattr(defaults, key)) for key in document}
    if 'center_wavelength' in values and 'pump_center' not in values:
        values['pump_center'] = values['center_wavelength'] / 2.0
    return _build(path, SourceSpec, **values)


def _parse_object(document):
    path = 'object'
    _section(document, path, ('interfaces', 'positions', 'reflectivity', 'segment_dispersion', 'arm_imbalance'))
    if 'interfaces' in document and 'positions' in document:
        fail(ConfigError, "Give either 'object.interfaces' or 'object.positions', not both.", field=path)
    interfaces = []
    if 'interfaces' in document:
        if not isinstance(document['interfaces'], list):
            fail(ConfigError, "'object.interfaces' must be a list.", field='object.interfaces')
        for index, entry in enumerate(document['interfaces']):
            entry_path = f"object.interfaces[{index}]"
            _section(entry, entry_path, ('position', 'reflectivity'))
            position = _number(entry, 'position', entry_path)
            if position is None:
                fail(ConfigError, f"'{entry_path}.position' is required.", field=f"{entry_path}.position")
            interfaces.append(Interface(position, _number(entry, 'reflectivity', entry_path, 1.0)))
    else:
        reflectivity = _number(document, 'reflectivity', path, 1.0)
        positions = _positions(document.get('positions', [0.0]), 'object.positions')
        interfaces = [Interface(position, reflectivity) for position in positions]
    segments = tuple(_parse_dispersion(entry, f"object.segment_dispersion[{index}]")
                     for index, entry in enumerate(document.get('segment_dispersion', [])))
    arm = _parse_dispersion(document.get('arm_imbalance', {}), 'object.arm_imbalance')
    return _build(path, LayeredObject, tuple(interfaces), segments, arm)


def _parse_fibre(document, path, frame_span, window):
    _section(document, path, ('length', 'lambda_ref', 't0', 'group_delay_coeffs', 'slope_per_km'))
    defaults = FibreSpec()
    length = _number(document, 'length', path, defaults.length)
    lambda_ref = _number(document, 'lambda_ref', path, defaults.lambda_ref)
    if 'group_delay_coeffs' in document:
        coeffs = _positions(document['group_delay_coeffs'], f"{path}.group_delay_coeffs")
        return _build(path, FibreSpec, length, coeffs, lambda_ref)
    kwargs = dict(t0=_number(document, 't0', path, 0.0), length=length, lambda_ref=lambda_ref,
                  frame_span=frame_span, window=window)
    if 'slope_per_km' in document:
        kwargs['slope_per_km'] = _number(document, 'slope_per_km', path)
    return _build(path, default_fibre, **kwargs)


def _parse_detection(document, source):
    path = 'detection'
    _section(document, path, ('fibre1', 'fibre2', 'time_bin', 'coincidence_window', 'frame_span',
                              'spectral_resolution_fwhm', 'background_rate', 'pump_leak'))
    defaults = DetectionSpec()
    window = _number(document, 'coincidence_window', path, default_coincidence_window)
    frame_span = _number(document, 'frame_span', path, default_frame_span)
    fibres = [_parse_fibre(document.get(name, {'lambda_ref': source.center_wavelength}), f"{path}.{name}",
                           frame_span, window)
              for name in ('fibre1', 'fibre2')]
    leak = None
    if document.get('pump_leak') is not None:
        leak_doc = _section(document['pump_leak'], f"{path}.pump_leak", ('channel', 'rate', 'wavelength'))
        leak = _build(f"{path}.pump_leak", PumpLeak,
                      _number(leak_doc, 'channel', f"{path}.pump_leak", 1, integer=True),
                      _number(leak_doc, 'rate', f"{path}.pump_leak", 0.0),
                      _number(leak_doc, 'wavelength', f"{path}.pump_leak"))
    return _build(path, DetectionSpec, fibres[0], fibres[1],
                  _number(document, 'time_bin', path, defaults.time_bin), window,
                  _number(document, 'spectral_resolution_fwhm', path, 0.0),
                  _number(document, 'background_rate', path, 0.0), leak)


def _parse_grid(document, source):
    path = 'grid'
    _section(document, path, ('center', 'span', 'n'))
    return _build(path, make_grid,
                  _number(document, 'center', path, source.center_wavelength),
                  _number(document, 'span', path, 160.0),
                  _number(document, 'n', path, 512, integer=True))


def _parse_scan(document):
    path = 'scan'
    _section(document, path, ('mode', 'reference_delay', 'stage_positions', 'integration_time', 'seed', 'sweep'))
    mode = _choice(document, 'mode', path, SCAN_MODES, 'fd_single_frame')
    stage_positions = None
    if document.get('stage_positions') is not None:
        stage_positions = _positions(document['stage_positions'], 'scan.stage_positions')
    if mode == 'td' and stage_positions is None:
        fail(ConfigError, "Time-domain scans need 'scan.stage_positions'.", field='scan.stage_positions')
    sweep = None
    if document.get('sweep') is not None:
        sweep = _positions(document['sweep'], 'scan.sweep')
    seed = _number(document, 'seed', path, None, integer=True)
    if seed is not None and seed < 0:
        fail(ConfigError, "'scan.seed' must be non-negative.", field='scan.seed')
    integration_time = _number(document, 'integration_time', path, 1.0)
    if integration_time < 0:
        fail(ConfigError, "'scan.integration_time' must be non-negative.", field='scan.integration_time')
    return ScanConfig(mode, _number(document, 'reference_delay', path, 0.0), stage_positions,
                      integration_time, seed, sweep)


def _parse_acquisition(document):
    path = 'acquisition'
    _section(document, path, ('n_frames', 'frame_bins', 'step_bins', 'nonlinear_calibration'))
    acquisition = AcquisitionConfig(
        _number(document, 'n_frames', path, 9, integer=True),
        _number(document, 'frame_bins', path, None, integer=True),
        _number(document, 'step_bins', path, None, integer=True),
        _flag(document, 'nonlinear_calibration', path, False),
    )
    if acquisition.n_frames < 1:
        fail(ConfigError, "'acquisition.n_frames' must be at least 1.", field='acquisition.n_frames')
    return acquisition


def _parse_processing(document):
    path = 'processing'
    _section(document, path, ('fibre_comp', 'pump_comp', 'pump_continuous', 'dc_removal', 'window',
                              'ascan_method', 'calibration_depth'))
    return ProcessingConfig(
        _flag(document, 'fibre_comp', path, True),
        _choice(document, 'pump_comp', path, PUMP_MODES, 'off'),
        _flag(document, 'pump_continuous', path, False),
        _flag(document, 'dc_removal', path, True),
        _choice(document, 'window', path, (None, 'hann'), None),
        _choice(document, 'ascan_method', path, tuple(ASCAN_METHODS), 'row_average'),
        _number(document, 'calibration_depth', path, None),
    )


def _parse_classical(document, source):
    path = 'classical'
    _section(document, path, ('center', 'frequency_fwhm', 'reference_reflectivity'))
    return _build(path, ClassicalSource.from_bandwidth,
                  _number(document, 'center', path, source.center_wavelength),
                  _number(document, 'frequency_fwhm', path, source.diagonal_fwhm),
                  _number(document, 'reference_reflectivity', path, 1.0))


def _parse_outputs(entries, scan):
    if not isinstance(entries, list):
        fail(ConfigError, "'outputs' must be a list.", field='outputs')
    outputs = []
    for index, entry in enumerate(entries):
        path = f"outputs[{index}]"
        _section(entry, path, ('kind', 'path'))
        kind = _choice(entry, 'kind', path, OUTPUT_KINDS, None)
        if kind not in MODE_OUTPUTS[scan.mode]:
            fail(ConfigError, f"Output '{kind}' is not available in {scan.mode} mode.", field=f"{path}.kind")
        if kind == 'falloff' and not scan.sweep:
            fail(ConfigError, "Fall-off outputs need 'scan.sweep'.", field='scan.sweep')
        target = entry.get('path')
        if not isinstance(target, str) or not target:
            fail(ConfigError, f"'{path}.path' must be a non-empty string.", field=f"{path}.path")
        outputs.append(OutputSpec(kind, target))
    return tuple(outputs)


def parse_config(document):
    """
    Validates a configuration document and applies defaults.

    Parameters:
    ----------
    document : dict
        Parsed JSON.

    Returns:
    -------
    PipelineConfig

    Raises:
    ------
    ConfigError
        With the dotted path of the offending field.
    """
    _section(document, '', TOP_LEVEL_KEYS)
    source = _parse_source(document.get('source', {}))
    scan = _parse_scan(document.get('scan', {}))
    return PipelineConfig(
        source=source,
        object=_parse_object(document.get('object', {})),
        detection=_parse_detection(document.get('detection', {}), source),
        grid=_parse_grid(document.get('grid', {}), source),
        scan=scan,
        acquisition=_parse_acquisition(document.get('acquisition', {})),
        processing=_parse_processing(document.get('processing', {})),
        classical=_parse_classical(document.get('classical', {}), source),
        outputs=_parse_outputs(document.get('outputs', []), scan),
        name=str(document.get('name', '')),
        document=copy.deepcopy(document),
    )


def load_config(path):
    """
    Reads and validates a JSON run configuration.

    Raises:
    ------
    ConfigError
        Carrying the line of a parse error or the field path of a validation error.
    """
    try:
        with open(path) as handle:
            text = handle.read()
    except OSError as error:
        fail(ConfigError, f"Cannot read configuration {path}: {error}")
    try:
        document = json.loads(text)
    except json.JSONDecodeError as error:
        fail(ConfigError, f"{path}: {error.msg} at line {error.lineno}.", line=error.lineno)
    log.info("Loaded configuration %s.", path)
    return parse_config(document)


def list_presets():
    return sorted(name[:-5] for name in os.listdir(preset_directory) if name.endswith('.json'))


def load_preset(name):
    name = preset_aliases.get(name, name)
    path = os.path.join(preset_directory, f"{name}.json")
    if not os.path.exists(path):
        fail(ConfigError, f"Unknown preset '{name}'. Available: {', '.join(list_presets())}.", field='preset')
    return load_config(path)


def load_target(target):
    """A configuration file when `target` names an existing path, a preset otherwise."""
    if os.path.exists(target):
        return load_config(target)
    return load_preset(target)


def with_overrides(config, seed=None, grid_points=None):
    """Re-validates the configuration with a CLI seed or grid size applied."""
    if seed is None and grid_points is None:
        return config
    document = copy.deepcopy(config.document)
    if seed is not None:
        document.setdefault('scan', {})['seed'] = int(seed)
    if grid_points is not None:
        document.setdefault('grid', {})['n'] = int(grid_points)
    return parse_config(document)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

@contextmanager
def _stage(name, timings):
    started = time.perf_counter()
    log.debug("Stage %s started.", name)
    try:
        yield
    except StageError:
        raise
    except QOCTError as error:
        log.error("Stage %s failed: %s", name, error)
        raise StageError(name, error) from error
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - started


def replay_registry(detection):
    """Replay rules for the provenance steps between a raw simulation and a calibrated spectrum."""
    return {
        'apply_shot_noise': lambda js, seed: apply_shot_noise(js, seed),
        'to_time_histogram': lambda js, time_bin: to_time_histogram(js, detection, time_bin),
        'select_frame': lambda js, delays, window, index: select_frame(js, delays, window, index).histogram,
        'calibrate_histogram': lambda js, nonlinear: calibrate_histogram(js, detection, nonlinear),
    }


def _central_frame(hist, config):
    detection, window = config.detection, config.detection.coincidence_window
    extent = min(hist.axis1.span, hist.axis2.span) + hist.axis1.step
    if extent <= window:
        return hist
    center = config.source.center_wavelength
    delays = (group_delay(detection.fibre1, center) - window / 2.0,
              group_delay(detection.fibre2, center) - window / 2.0)
    return select_frame(hist, delays, window, 0, detection.coincidence_window).histogram


def _stitched_frames(hist, config):
    acquisition = config.acquisition
    n_bins = min(hist.axis1.n_points, hist.axis2.n_points)
    # widest frame that still fits in one coincidence window
    frame_bins = acquisition.frame_bins or int(config.detection.coincidence_window // hist.axis1.step)
    frame_bins = min(frame_bins, n_bins)
    step_bins = acquisition.step_bins
    if step_bins is None:
        step_bins = max((n_bins - frame_bins) // max(acquisition.n_frames - 1, 1), 1)
    delays, window = plan_antidiagonal_frames(hist, acquisition.n_frames, frame_bins, step_bins)
    frames = [select_frame(hist, d, window, index, config.detection.coincidence_window)
              for index, d in enumerate(delays)]
    return stitch_frames(StitchPlan(frames))


def acquire(config, obj, reference_delay, timings, seed=None):
    """
    Simulated acquisition down to a calibrated wavelength joint spectrum.

    Simulation, arrival-time histogram, shot noise, frame selection (one
    central frame or stitched anti-diagonal frames) and calibration.
    """
    detection = config.detection
    with _stage('simulate', timings):
        request = SimulationRequest(config.source, obj, detection, reference_delay, config.grid,
                                    config.scan.integration_time)
        js = simulate_joint_spectrum(request)
    with _stage('histogram', timings):
        hist = to_time_histogram(js, detection)
    if seed is not None:
        with _stage('noise', timings):
            hist = apply_shot_noise(hist, seed)
    with _stage('frames', timings):
        if config.scan.mode == 'fd_whole':
            hist = _stitched_frames(hist, config)
        else:
            hist = _central_frame(hist, config)
    with _stage('calibrate', timings):
        return calibrate_histogram(hist, detection, config.acquisition.nonlinear_calibration)


def preprocess(config, js, obj, reference_delay, timings):
    """Rotation followed by the configured fibre and pump compensation."""
    processing = config.processing
    with _stage('rotate', timings):
        rot = rotate45(js)
    if processing.fibre_comp:
        with _stage('compensate_fibre', timings):
            shifts = fibre_shift_vector(config.detection, rot, 2.0 * config.source.center_frequency)
            rot = compensate_fibre(rot, shifts)
    if processing.pump_comp != 'off':
        with _stage('compensate_pump', timings):
            if processing.pump_comp == 'data':
                profile = estimate_row_frequencies(rot)
            else:
                depth = processing.calibration_depth
                if depth is None:
                    depth = float(obj.positions[0]) - reference_delay
                model = PumpModel(obj.arm_imbalance, config.source.center_frequency, depth)
                profile = model_row_frequencies(rot, model)
            rot = compensate_pump(rot, profile, continuous=processing.pump_continuous)
    return rot


def _ascan_options(processing):
    return {'dc_removal': processing.dc_removal, 'window': processing.window}


def _sweep_object(obj):
    # fall-off sweeps move the reference arm against a mirror at zero depth
    return LayeredObject((Interface(0.0, obj.interfaces[0].reflectivity),),
                         arm_imbalance=obj.arm_imbalance)


def _run_fourier_domain(config, timings, results):
    obj, delay, seed = config.object, config.scan.reference_delay, config.scan.seed
    kinds = {output.kind for output in config.outputs}
    single_kinds = kinds - {'falloff'}
    if single_kinds or not kinds:
        js = acquire(config, obj, delay, timings, seed)
        rot = preprocess(config, js, obj, delay, timings)
        results['joint_spectrum'], results['rotated'] = js, rot
        with _stage('reconstruct', timings):
            results['ascan'] = ascan_batch([rot], config.processing.ascan_method, threads=1,
                                           **_ascan_options(config.processing))[0]
            if 'fourier_map' in kinds:
                results['fourier_map'] = fourier_map(rot)
        if 'artefacts' in kinds:
            with _stage('analyse', timings):
                report = predict_artefacts(obj, config.source, delay)
                results['artefacts'] = match_artefacts(report, results['ascan'])

    if 'falloff' in kinds:
        mirror_object = _sweep_object(obj)
        rotated = []
        for index, depth in enumerate(config.scan.sweep):
            depth_seed = None if seed is None else seed + index
            js = acquire(config, mirror_object, depth, timings, depth_seed)
            rotated.append(preprocess(config, js, mirror_object, depth, timings))
        with _stage('reconstruct', timings):
            ascans = ascan_batch(rotated, config.processing.ascan_method, **_ascan_options(config.processing))
        with _stage('analyse', timings):
            results['falloff'] = falloff_analysis(list(zip(config.scan.sweep, ascans)))
        results['falloff_ascans'] = ascans


def _run_time_domain(config, timings, results):
    with _stage('simulate', timings):
        trace = simulate_time_domain(config.source, config.object, config.detection, config.scan.stage_positions,
                                     config.scan.integration_time, config.scan.seed, config.grid)
    results['trace'] = trace
    with _stage('reconstruct', timings):
        results['ascan'] = trace_to_ascan(trace)
    if any(output.kind == 'artefacts' for output in config.outputs):
        with _stage('analyse', timings):
            report = predict_artefacts(config.object, config.source, config.scan.reference_delay)
            results['artefacts'] = match_artefacts(report, results['ascan'])


def _run_classical(config, timings, results):
    with _stage('simulate', timings):
        spectrum = simulate_classical_fringes(config.classical, config.object, config.scan.reference_delay,
                                              config.grid)
    results['classical_spectrum'] = spectrum
    with _stage('reconstruct', timings):
        results['ascan'] = classical_ascan(spectrum, **_ascan_options(config.processing))


def _write_output(output, results, target, output_format, plot):
    kind = output.kind
    plots = []
    if kind == 'joint_spectrum':
        writer = download.write_joint_spectrum_csv if output_format == 'csv' else download.write_joint_spectrum
        written = writer(results['joint_spectrum'], target)
        if plot:
            plots.append(figure.write_figure_html(
                figure.generate_joint_spectrum_figure(results['joint_spectrum']), f"{target}.html"))
    elif kind == 'rotated':
        written = download.write_rotated(results['rotated'], target)
        if plot:
            plots.append(figure.write_figure_html(
                figure.generate_rotated_figure(results['rotated']), f"{target}.html"))
    elif kind == 'fourier_map':
        fmap = results['fourier_map']
        sidecar = figure.write_pgm(fmap.values, target, bit_depth=16, axes={
            'rows': {'kind': 'depth_sum_frequency', 'unit': 'um', 'start': float(fmap.v_depth[0]),
                     'step': float(fmap.v_depth[1] - fmap.v_depth[0]), 'count': int(fmap.v_depth.size)},
            'columns': {'kind': 'depth_difference_frequency', 'unit': 'um', 'start': float(fmap.u_depth[0]),
                        'step': float(fmap.u_depth[1] - fmap.u_depth[0]), 'count': int(fmap.u_depth.size)},
        })
        written = [target, sidecar]
        if plot:
            plots.append(figure.write_figure_html(figure.generate_fourier_map_figure(fmap), f"{target}.html"))
    elif kind == 'ascan':
        written = download.write_ascan_csv(results['ascan'], target)
        if plot:
            plots.append(figure.write_figure_html(
                figure.generate_ascan_figure({'A-scan': results['ascan']}), f"{target}.html"))
    elif kind == 'falloff':
        written = download.write_falloff_csv(results['falloff'], target)
        if plot:
            plots.append(figure.write_figure_html(
                figure.generate_falloff_figure({'Fall-off': results['falloff']}), f"{target}.html"))
    else:
        written = download.write_artefacts_csv(results['artefacts'], target)
    return written, plots


def _prepare_directory(config, out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as error:
        fail(ConfigError, f"Cannot create output directory {out_dir}: {error}", field='outputs')
    for index, output in enumerate(config.outputs):
        directory = os.path.dirname(os.path.join(out_dir, output.path)) or '.'
        os.makedirs(directory, exist_ok=True)
        if not os.access(directory, os.W_OK):
            fail(ConfigError, f"Output directory {directory} is not writable.", field=f"outputs[{index}].path")


def run(config, out_dir='.', output_format='qjs', plot=False):
    """
    Runs every stage of a configuration and writes the requested outputs.

    Parameters:
    ----------
    config : PipelineConfig
    out_dir : str
        Output paths are relative to this directory; manifest.json goes here too.
    output_format : str
        'qjs' or 'csv' for joint-spectrum outputs.
    plot : bool
        Also write an HTML figure next to each output.

    Returns:
    -------
    RunManifest
        Checksums of every data output, stage timings and the in-memory results.

    Raises:
    ------
    StageError
        Naming the stage that failed.
    """
    if output_format not in OUTPUT_FORMATS:
        fail(ConfigError, f"Unknown output format '{output_format}'.", field='format')
    _prepare_directory(config, out_dir)
    manifest = RunManifest(config.checksum, __version__, current_timestamp())
    log.info("Running %s (%s mode, config %s).", config.name or 'configuration', config.scan.mode,
             manifest.config_hash[:12])

    results = {}
    if config.scan.mode == 'td':
        _run_time_domain(config, manifest.timings, results)
    elif config.scan.mode == 'classical':
        _run_classical(config, manifest.timings, results)
    else:
        _run_fourier_domain(config, manifest.timings, results)
    manifest.results = results

    with _stage('write', manifest.timings):
        for output in config.outputs:
            target = os.path.join(out_dir, output.path)
            written, plots = _write_output(output, results, target, output_format, plot)
            for path in written:
                manifest.outputs[os.path.relpath(path, out_dir)] = download.file_checksum(path)
            manifest.plots.extend(os.path.relpath(path, out_dir) for path in plots)
        download.write_manifest(manifest, os.path.join(out_dir, 'manifest.json'))
    log.info("Run finished: %d outputs in %.2f s.", len(manifest.outputs), sum(manifest.timings.values()))
    return manifest
