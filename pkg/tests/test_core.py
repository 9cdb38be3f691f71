import numpy as np
import pytest

from qoct.utilities_core import (
    AScan,
    DetectionSpec,
    Dispersion,
    FibreSpec,
    JointSpectrum,
    LayeredObject,
    Interface,
    SourceSpec,
    bandwidth_to_frequency,
    delay_from_depth,
    depth_from_delay,
    frequency_to_bandwidth,
    frequency_to_wavelength,
    layered_object,
    make_grid,
    mirror,
    parse_provenance_entry,
    provenance_entry,
    replay,
    wavelength_to_frequency,
)
from qoct.utilities_validation import InvalidArgumentError, QOCTError


def test_grid_geometry():
    grid = make_grid(1550.0, 160.0, 9)
    assert grid.step == pytest.approx(20.0)
    assert grid.start == pytest.approx(1470.0)
    assert grid.stop == pytest.approx(1630.0)
    assert grid.values[4] == pytest.approx(1550.0)
    assert grid.edges.size == 10
    assert grid.index_of(1490.0) == pytest.approx(1.0)
    assert grid.value_at(2.5) == pytest.approx(1520.0)


@pytest.mark.parametrize('center, span, n', [(1550.0, 160.0, 4), (1550.0, 0.0, 64), (50.0, 200.0, 64)])
def test_invalid_grids(center, span, n):
    with pytest.raises(InvalidArgumentError):
        make_grid(center, span, n)


def test_unit_conversions():
    assert wavelength_to_frequency(1550.0) == pytest.approx(193.41449, rel=1e-7)
    assert frequency_to_wavelength(wavelength_to_frequency(1310.0)) == pytest.approx(1310.0)
    values = wavelength_to_frequency(np.array([1500.0, 1600.0]))
    assert values.shape == (2,)
    with pytest.raises(InvalidArgumentError):
        wavelength_to_frequency(0.0)
    with pytest.raises(InvalidArgumentError):
        frequency_to_wavelength(np.array([190.0, np.nan]))


def test_bandwidth_close_to_small_bandwidth_formula():
    exact = bandwidth_to_frequency(1550.0, 3.2)
    assert exact == pytest.approx(299792.458 * 3.2 / 1550.0 ** 2, rel=1e-4)
    assert bandwidth_to_frequency(1580.0, 63.0) == pytest.approx(7.6, rel=0.01)
    assert frequency_to_bandwidth(1550.0, exact) == pytest.approx(3.2, rel=1e-5)


def test_depth_delay_round_trip():
    assert float(delay_from_depth(299.792458 / 2.0)) == pytest.approx(1.0)
    assert float(depth_from_delay(delay_from_depth(78.0))) == pytest.approx(78.0)


def test_errors_are_value_errors():
    assert issubclass(QOCTError, ValueError)
    with pytest.raises(ValueError):
        make_grid(1550.0, -1.0, 64)


def test_provenance_entries_are_canonical():
    entry = provenance_entry('select_frame', window=12500.0, delays=[0.0, 1.0])
    assert entry == 'select_frame {"delays": [0.0, 1.0], "window": 12500.0}'
    assert parse_provenance_entry(entry) == ('select_frame', {'delays': [0.0, 1.0], 'window': 12500.0})
    assert parse_provenance_entry('rotate45') == ('rotate45', {})


def test_replay_reapplies_recorded_steps():
    grid = make_grid(1550.0, 20.0, 8)
    raw = JointSpectrum(grid, grid, np.ones((8, 8)), provenance=('simulate_joint_spectrum',))
    doubled = raw.derive(raw.values * 2.0, provenance_entry('scale', factor=2.0))
    registry = {'scale': lambda js, factor: js.derive(js.values * factor, provenance_entry('scale', factor=factor))}
    replayed = replay(raw, doubled.provenance, registry)
    np.testing.assert_array_equal(replayed.values, doubled.values)
    assert replayed.provenance == doubled.provenance

    with pytest.raises(InvalidArgumentError):
        replay(raw, doubled.provenance, {})
    with pytest.raises(InvalidArgumentError):
        replay(doubled, ('other',), registry)


def test_joint_spectrum_validation():
    grid = make_grid(1550.0, 20.0, 8)
    with pytest.raises(InvalidArgumentError):
        JointSpectrum(grid, grid, np.ones((8, 9)))
    with pytest.raises(InvalidArgumentError):
        JointSpectrum(grid, grid, -np.ones((8, 8)))
    with pytest.raises(InvalidArgumentError):
        JointSpectrum(grid, grid, np.full((8, 8), np.inf))

    js = JointSpectrum(grid, grid, np.ones((8, 8)), provenance=['a'])
    assert js.provenance == ('a',)
    with pytest.raises(ValueError):
        js.values[0, 0] = 5.0
    derived = js.derive(np.zeros((8, 8)), 'b', flags=('grid_too_narrow',))
    assert derived.provenance == ('a', 'b')
    assert derived.flags == ('grid_too_narrow',)
    assert derived.axis1 is grid


def test_layered_object_validation():
    with pytest.raises(InvalidArgumentError):
        LayeredObject(())
    with pytest.raises(InvalidArgumentError):
        layered_object([50.0, 50.0], 0.2)
    with pytest.raises(InvalidArgumentError):
        mirror(10.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        mirror(10.0, 1.5)
    with pytest.raises(InvalidArgumentError):
        LayeredObject((Interface(0.0, 0.5), Interface(10.0, 0.5)), segment_dispersion=(Dispersion(), Dispersion()))


def test_energy_bound_is_flagged_not_rejected():
    obj = layered_object([0.0, 10.0], 0.8)
    assert obj.flags == ('energy_bound_exceeded',)
    assert layered_object([0.0, 10.0], 0.2).flags == ()


def test_cumulative_dispersion():
    obj = LayeredObject(
        (Interface(0.0, 0.2), Interface(100.0, 0.2), Interface(200.0, 0.2)),
        segment_dispersion=(Dispersion(100.0, 0.0), Dispersion(50.0, 10.0)),
    )
    beta2, beta3 = obj.cumulative_dispersion()
    np.testing.assert_allclose(beta2, [0.0, 100.0, 150.0])
    np.testing.assert_allclose(beta3, [0.0, 0.0, 10.0])


def test_source_spec():
    source = SourceSpec()
    assert source.center_frequency == pytest.approx(193.41449, rel=1e-7)
    matching, pump = 2 * 299792.458 * 3.2 / 1550.0 ** 2, 299792.458 * 10.0 / 775.0 ** 2
    assert source.pump_frequency_fwhm == pytest.approx(pump)
    assert source.antidiagonal_frequency_fwhm == pytest.approx((matching ** -2 + pump ** -2) ** -0.5)
    assert SourceSpec(pump_fwhm=1e-3).antidiagonal_frequency_fwhm == pytest.approx(299792.458e-3 / 775.0 ** 2, rel=1e-3)
    with pytest.raises(InvalidArgumentError):
        SourceSpec(center_wavelength=1310.0)
    assert SourceSpec(center_wavelength=1310.0, pump_center=655.0).center_wavelength == 1310.0
    with pytest.raises(InvalidArgumentError):
        SourceSpec(hom_visibility=1.2)


def test_fibre_valid_range():
    fibre = FibreSpec(5.0, (0.0, 122.5, 0.14))
    lo, hi = fibre.valid_range
    assert lo == pytest.approx(1550.0 - 122.5 / 0.28)
    assert hi == pytest.approx(2050.0)
    with pytest.raises(InvalidArgumentError):
        FibreSpec(5.0, (0.0, 0.0))


def test_detection_window_covers_a_bin():
    with pytest.raises(InvalidArgumentError):
        DetectionSpec(time_bin=50.0, coincidence_window=10.0)


def test_ascan_invariants():
    depth = np.linspace(0.0, 10.0, 11)
    ascan = AScan(depth, np.arange(11.0))
    assert ascan.step == pytest.approx(1.0)
    assert ascan.normalised().amplitude.max() == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        AScan(depth + 1.0, np.ones(11))
    assert AScan(depth + 1.0, np.ones(11), 'td_qoct').depth_axis[0] == 1.0
    with pytest.raises(InvalidArgumentError):
        AScan(depth, -np.ones(11))
    with pytest.raises(InvalidArgumentError):
        AScan(depth, np.ones(11), 'ultrasound')
