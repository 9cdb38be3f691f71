# utilities_download.py
# On-disk formats: QJS1 joint spectra, rotated spectra, CSV tables, event streams and run manifests

import hashlib
import json
import logging
import os

import numpy as np
import pandas as pd

from qoct.config import qjs_format_name, qjs_format_version, axis_units
from qoct.utilities_core import JointSpectrum, FrameMeta, AScan, make_grid, AXIS_KINDS
from qoct.utilities_preprocess import RotatedSpectrum
from qoct.utilities_validation import fail, FormatError

log = logging.getLogger(__name__)

PAYLOAD_DTYPE = np.dtype('<f8')
MASK_DTYPE = np.dtype('u1')
EVENT_DTYPE = np.dtype([('channel', '<u1'), ('timestamp', '<u8')])   # 9 bytes, packed


# ---------------------------------------------------------------------------
# QJS1 joint spectra
# ---------------------------------------------------------------------------

def axis_header(grid):
    """Header entry of one SpectralGrid."""
    return {
        'kind': grid.axis_kind,
        'unit': axis_units[grid.axis_kind],
        'center': grid.center,
        'span': grid.span,
        'count': grid.n_points,
        'start': grid.start,
        'step': grid.step,
    }


def grid_from_header(entry):
    if entry.get('kind') not in AXIS_KINDS:
        fail(FormatError, f"Unknown axis kind in header: {entry.get('kind')}.")
    return make_grid(entry['center'], entry['span'], entry['count'], entry['kind'])


def _payload_path(path, suffix='.bin'):
    return f"{path}{suffix}"


def _write_payload(array, path, dtype):
    np.ascontiguousarray(array, dtype=dtype).tofile(path)


def _read_payload(path, dtype, shape):
    if not os.path.exists(path):
        fail(FormatError, f"Payload file {path} is missing.")
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        fail(FormatError, f"Payload {path} holds {actual} bytes, the header expects {expected}.")
    return np.fromfile(path, dtype=dtype).reshape(shape)


def _read_header(path, content_type):
    try:
        with open(path) as handle:
            header = json.load(handle)
    except (OSError, json.JSONDecodeError) as error:
        fail(FormatError, f"Cannot read header {path}: {error}")
    if header.get('format') != qjs_format_name:
        fail(FormatError, f"{path} is not a {qjs_format_name} file.")
    if header.get('version') != qjs_format_version:
        fail(FormatError, f"{path} has version {header.get('version')}, expected {qjs_format_version}.")
    if header.get('content', 'joint_spectrum') != content_type:
        fail(FormatError, f"{path} holds a {header.get('content')}, expected a {content_type}.")
    return header


def write_joint_spectrum(js, path):
    """
    Writes a joint spectrum as a QJS1 header plus a raw little-endian float64 payload.

    Parameters:
    ----------
    js : JointSpectrum
    path : str
        Header path; the payload goes to `path + '.bin'`.

    Returns:
    -------
    list of str
        Header and payload paths.
    """
    payload = _payload_path(path)
    header = {
        'format': qjs_format_name,
        'version': qjs_format_version,
        'content': 'joint_spectrum',
        'axes': [axis_header(js.axis1), axis_header(js.axis2)],
        'provenance': list(js.provenance),
        'flags': list(js.flags),
        'frame_meta': None if js.frame_meta is None else {
            'delay1': js.frame_meta.delay1, 'delay2': js.frame_meta.delay2, 'window': js.frame_meta.window},
        'payload': os.path.basename(payload),
        'dtype': PAYLOAD_DTYPE.str,
        'shape': list(js.shape),
    }
    with open(path, 'w') as handle:
        json.dump(header, handle, indent=2)
    _write_payload(js.values, payload, PAYLOAD_DTYPE)
    log.info("Joint spectrum %s written to %s.", js.shape, path)
    return [path, payload]


def read_joint_spectrum(path):
    """
    Reads a QJS1 joint spectrum.

    Raises FormatError on a wrong format name or version and when the payload
    size does not match the header.
    """
    header = _read_header(path, 'joint_spectrum')
    axis1, axis2 = (grid_from_header(entry) for entry in header['axes'])
    shape = (axis1.n_points, axis2.n_points)
    if list(shape) != header.get('shape'):
        fail(FormatError, f"Header shape {header.get('shape')} disagrees with its axes {shape}.")
    payload = os.path.join(os.path.dirname(path), header['payload'])
    values = _read_payload(payload, np.dtype(header['dtype']), shape)
    meta = header.get('frame_meta')
    return JointSpectrum(axis1, axis2, values,
                         frame_meta=FrameMeta(**meta) if meta else None,
                         provenance=tuple(header.get('provenance', ())),
                         flags=tuple(header.get('flags', ())))


def write_rotated(rot, path):
    """
    Writes a rotated spectrum as QJS1: float64 values plus a uint8 mask payload.

    Returns:
    -------
    list of str
        Header, value payload and mask payload paths.
    """
    payload = _payload_path(path)
    mask_payload = _payload_path(path, '.mask.bin')
    axes = []
    for kind, axis in (('sum_frequency', rot.v_axis), ('difference_frequency', rot.u_axis)):
        axes.append({'kind': kind, 'unit': axis_units[kind], 'start': float(axis[0]), 'stop': float(axis[-1]),
                     'count': int(axis.size), 'step': float(axis[1] - axis[0])})
    header = {
        'format': qjs_format_name,
        'version': qjs_format_version,
        'content': 'rotated',
        'axes': axes,
        'provenance': list(rot.provenance),
        'flags': list(rot.flags),
        'payload': os.path.basename(payload),
        'mask_payload': os.path.basename(mask_payload),
        'dtype': PAYLOAD_DTYPE.str,
        'shape': list(rot.shape),
    }
    with open(path, 'w') as handle:
        json.dump(header, handle, indent=2)
    _write_payload(rot.values, payload, PAYLOAD_DTYPE)
    _write_payload(rot.mask, mask_payload, MASK_DTYPE)
    log.info("Rotated spectrum %s written to %s.", rot.shape, path)
    return [path, payload, mask_payload]


def read_rotated(path):
    header = _read_header(path, 'rotated')
    v_entry, u_entry = header['axes']
    v_axis = np.linspace(v_entry['start'], v_entry['stop'], v_entry['count'])
    u_axis = np.linspace(u_entry['start'], u_entry['stop'], u_entry['count'])
    shape = (v_axis.size, u_axis.size)
    directory = os.path.dirname(path)
    values = _read_payload(os.path.join(directory, header['payload']), np.dtype(header['dtype']), shape)
    mask = _read_payload(os.path.join(directory, header['mask_payload']), MASK_DTYPE, shape).astype(bool)
    return RotatedSpectrum(values, u_axis, v_axis, mask,
                           tuple(header.get('provenance', ())), tuple(header.get('flags', ())))


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def joint_spectrum_to_dataframe(js):
    """Rows indexed by axis1 values, columns by axis2 values; the index name records both axis kinds."""
    df = pd.DataFrame(np.asarray(js.values), index=js.axis1.values, columns=js.axis2.values)
    df.index.name = f"{js.axis1.axis_kind}/{js.axis2.axis_kind}"
    return df


def write_joint_spectrum_csv(js, path):
    joint_spectrum_to_dataframe(js).to_csv(path, float_format='%.17g')
    log.info("Joint spectrum %s exported to %s.", js.shape, path)
    return [path]


def _grid_from_samples(samples, kind):
    samples = np.asarray(samples, dtype=float)
    return make_grid((samples[0] + samples[-1]) / 2.0, samples[-1] - samples[0], samples.size, kind)


def read_joint_spectrum_csv(path):
    """
    Imports a joint spectrum written by write_joint_spectrum_csv.

    Axes are rebuilt from the first and last sample of each; provenance is not
    carried by the CSV format.
    """
    df = pd.read_csv(path, index_col=0, float_precision='round_trip')
    kinds = str(df.index.name or '').split('/')
    if len(kinds) != 2 or any(kind not in AXIS_KINDS for kind in kinds):
        fail(FormatError, f"{path} does not name its axis kinds in the index header.")
    axis1 = _grid_from_samples(df.index.to_numpy(dtype=float), kinds[0])
    axis2 = _grid_from_samples(df.columns.to_numpy(dtype=float), kinds[1])
    return JointSpectrum(axis1, axis2, df.to_numpy(dtype=float),
                         provenance=("read_joint_spectrum_csv",))


def ascan_to_dataframe(ascan):
    return pd.DataFrame({'depth_um': ascan.depth_axis, 'amplitude': ascan.amplitude})


def write_ascan_csv(ascan, path):
    ascan_to_dataframe(ascan).to_csv(path, index=False, float_format='%.17g')
    return [path]


def read_ascan_csv(path, source_kind='fd_qoct'):
    df = pd.read_csv(path, float_precision='round_trip')
    return AScan(df['depth_um'].to_numpy(), df['amplitude'].to_numpy(), source_kind)


def falloff_to_dataframe(report):
    rows = []
    for depth, peak, height_db in zip(report.depths, report.peaks, report.heights_db):
        rows.append({
            'depth_um': depth,
            'position_um': peak.position if peak else np.nan,
            'height': peak.height if peak else 0.0,
            'height_db': height_db,
            'fwhm_um': peak.fwhm if peak else np.nan,
            'asymmetry': peak.asymmetry if peak else np.nan,
        })
    df = pd.DataFrame(rows)
    return df


def write_falloff_csv(report, path):
    """Per-depth table; the 6-dB range and censoring go to a '#' comment line at the top."""
    with open(path, 'w') as handle:
        handle.write(f"# six_db_range_um={report.six_db_range!r} censored={report.censored}\n")
        falloff_to_dataframe(report).to_csv(handle, index=False, float_format='%.17g')
    return [path]


def artefacts_to_dataframe(report):
    matches = report.matches or (None,) * len(report.entries)
    rows = []
    for entry, match in zip(report.entries, matches):
        rows.append({
            'kind': entry.kind,
            'interfaces': '-'.join(str(index) for index in entry.interfaces),
            'position_um': entry.position,
            'predicted_height': entry.predicted_height,
            'suppression': entry.suppression,
            'measured_position_um': match.measured_position if match and match.found else np.nan,
            'measured_height': match.measured_height if match and match.found else np.nan,
        })
    return pd.DataFrame(rows)


def write_artefacts_csv(report, path):
    artefacts_to_dataframe(report).to_csv(path, index=False, float_format='%.17g')
    return [path]


# ---------------------------------------------------------------------------
# Event streams
# ---------------------------------------------------------------------------

def write_event_stream(path, channels, timestamps):
    """Writes time tags as packed 9-byte records: channel u8, timestamp u64 little-endian (ps)."""
    events = np.empty(len(channels), dtype=EVENT_DTYPE)
    events['channel'] = channels
    events['timestamp'] = timestamps
    events.tofile(path)
    return [path]


def read_event_stream(path):
    """
    Reads a packed time-tag stream.

    Returns:
    -------
    np.ndarray
        Structured array with 'channel' and 'timestamp' fields.
    """
    size = os.path.getsize(path)
    if size % EVENT_DTYPE.itemsize:
        fail(FormatError, f"{path} is {size} bytes, not a whole number of {EVENT_DTYPE.itemsize}-byte records.")
    return np.fromfile(path, dtype=EVENT_DTYPE)


# ---------------------------------------------------------------------------
# Checksums and manifests
# ---------------------------------------------------------------------------

def canonical_json(document):
    return json.dumps(document, sort_keys=True, separators=(',', ':'))


def document_checksum(document):
    return hashlib.sha256(canonical_json(document).encode('utf-8')).hexdigest()


def file_checksum(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(manifest, path):
    with open(path, 'w') as handle:
        json.dump(manifest.to_dict(), handle, indent=2)
    log.info("Run manifest written to %s.", path)
    return path
