import numpy as np
import pytest

from spinsense.errors import InvalidInputError, SingularityError
from spinsense.field import (
    MU_0,
    CpwGeometry,
    NvOrientation,
    FieldSample,
    PhysicalConstants,
    biot_savart_field,
    drive_amplitude,
    field_from_rabi,
    field_profile,
    longitudinal_path,
    project_orthogonal_to_nv,
    rabi_from_field,
    rabi_vs_power_scaling,
    segment_field,
    transverse_path,
)

NV = NvOrientation.from_tilt(30.0)


def phase_grid_amplitude(b, n=3600):
    """Brute-force drive amplitude: max over phase of |Re(e^{i phi} b)|."""
    phases = np.exp(1j * np.linspace(0.0, 2 * np.pi, n, endpoint=False))
    return max(np.linalg.norm(np.real(p * np.asarray(b, complex))) for p in phases)


class TestSegmentField:
    def test_matches_infinite_wire_closed_form(self):
        current, distance = 2.0, 1e-5
        b = segment_field([0.0, -1e3, 0.0], [0.0, 1e3, 0.0], current, [0.0, 0.0, distance])
        expected = MU_0 * current / (2 * np.pi * distance)
        assert np.linalg.norm(b) == pytest.approx(expected, rel=1e-9)
        # right-hand rule: current along +y, point above in z -> field along +x
        assert b[0] > 0 and abs(b[1]) < 1e-20 and abs(b[2]) < 1e-20

    def test_on_axis_raises(self):
        with pytest.raises(SingularityError):
            segment_field([0.0, -1.0, 0.0], [0.0, 1.0, 0.0], 1.0, [0.0, 0.5, 0.0])


class TestBiotSavart:
    def test_degenerate_single_filament_matches_textbook(self):
        geom = CpwGeometry(line_width=1e-9, line_length=2e3, ground_gap=1e3,
                           ground_width=1e-3, current_amplitude=1.0, discretization=1)
        d = 1e-5
        b = biot_savart_field(geom, [0.0, 0.0, d])
        expected = MU_0 * 1.0 / (2 * np.pi * d)
        assert drive_amplitude(b) == pytest.approx(expected, rel=1e-6)

    def test_linear_in_current(self):
        geom = CpwGeometry(current_amplitude=0.05)
        doubled = CpwGeometry(current_amplitude=0.10)
        for point in ([0.0, 0.0, 10e-6], [40e-6, 1e-3, 5e-6], [-120e-6, 0.0, 20e-6]):
            b1 = biot_savart_field(geom, point)
            b2 = biot_savart_field(doubled, point)
            np.testing.assert_allclose(b2, 2.0 * b1, rtol=1e-12)

    def test_self_convergence_64_vs_512_filaments(self):
        point = [0.0, 0.0, 10e-6]
        coarse = drive_amplitude(biot_savart_field(CpwGeometry(discretization=64), point))
        fine = drive_amplitude(biot_savart_field(CpwGeometry(discretization=512), point))
        assert abs(coarse - fine) / fine <= 0.01

    def test_refinement_errors_shrink(self):
        point = [30e-6, 0.0, 8e-6]
        reference = biot_savart_field(CpwGeometry(discretization=2048), point).real
        errors = []
        for n in (32, 64, 128, 256):
            b = biot_savart_field(CpwGeometry(discretization=n), point).real
            errors.append(np.linalg.norm(b - reference))
        assert all(b < a for a, b in zip(errors, errors[1:]))

    def test_vectorized_field_equals_segment_superposition(self):
        geom = CpwGeometry(discretization=16)
        half = geom.line_length / 2
        rng = np.random.default_rng(0)
        points = [rng.uniform([-3e-4, -3e-3, 2e-6], [3e-4, 3e-3, 1e-4]) for _ in range(5)]
        points.append(np.array([1e-5, 4e-3, 1e-5]))  # beyond the line ends
        for point in points:
            reference = sum(
                segment_field([x, -half, 0.0], [x, half, 0.0], current, point)
                for x, current in geom.filaments()
            )
            result = biot_savart_field(geom, point).real
            np.testing.assert_allclose(
                result, reference, rtol=1e-9, atol=1e-12 * np.linalg.norm(reference)
            )

    def test_field_vanishes_far_away(self):
        geom = CpwGeometry()
        near = drive_amplitude(biot_savart_field(geom, [0.0, 0.0, 10e-6]))
        far = drive_amplitude(biot_savart_field(geom, [0.0, 0.0, 100 * geom.line_width]))
        assert far < 0.01 * near

    def test_point_on_filament_raises(self):
        geom = CpwGeometry()
        x0, _ = geom.filaments()[0]
        with pytest.raises(SingularityError):
            biot_savart_field(geom, [x0, 0.0, 0.0])

    def test_point_hugging_filament_raises(self):
        geom = CpwGeometry()
        x0, _ = geom.filaments()[0]
        with pytest.raises(SingularityError):
            biot_savart_field(geom, [x0, 0.0, 0.2 * geom.filament_pitch])

    def test_return_current_balances(self):
        geom = CpwGeometry()
        total = sum(current for _, current in geom.filaments())
        assert total == pytest.approx(0.0, abs=1e-12 * geom.current_amplitude)

    def test_field_sample_validation(self):
        with pytest.raises(InvalidInputError):
            FieldSample(np.zeros(3), np.array([np.inf, 0, 0], dtype=complex))


class TestProjection:
    def test_parallel_field_projects_to_zero(self):
        b = (3e-4 * NV.axis).astype(complex)
        assert project_orthogonal_to_nv(b, NV) == pytest.approx(0.0, abs=1e-18)

    def test_real_orthogonal_field_projects_to_norm(self):
        perp = np.array([-NV.axis[2], 0.0, NV.axis[0]])  # in-plane, orthogonal
        b = (2e-4 * perp).astype(complex)
        assert project_orthogonal_to_nv(b, NV) == pytest.approx(2e-4, rel=1e-12)

    def test_circular_polarization_amplitude(self):
        # Circularly polarized in the plane orthogonal to the axis: the drive
        # amplitude equals the per-axis amplitude.
        axis = NV.axis
        e1 = np.array([-axis[2], 0.0, axis[0]])
        e2 = np.cross(axis, e1)
        amp = 1.7e-4
        b = amp * (e1 + 1j * e2)
        result = project_orthogonal_to_nv(b, NV)
        assert result == pytest.approx(amp, rel=1e-12)
        assert result == pytest.approx(phase_grid_amplitude(b), rel=1e-6)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_phase_grid_oracle(self, seed):
        rng = np.random.default_rng(seed)
        b = rng.normal(size=3) + 1j * rng.normal(size=3)
        b_perp = b - np.dot(b, NV.axis) * NV.axis
        assert project_orthogonal_to_nv(b, NV) == pytest.approx(
            phase_grid_amplitude(b_perp), rel=1e-6
        )

    def test_projection_never_exceeds_total(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            b = rng.normal(size=3) + 1j * rng.normal(size=3)
            assert project_orthogonal_to_nv(b, NV) <= drive_amplitude(b) * (1 + 1e-12)

    def test_orientation_must_be_unit(self):
        with pytest.raises(InvalidInputError):
            NvOrientation(np.array([1.0, 1.0, 0.0]))

    def test_default_tilt(self):
        assert NV.axis[2] == pytest.approx(0.5, rel=1e-12)  # sin 30 deg
        assert np.linalg.norm(NV.axis) == pytest.approx(1.0, abs=1e-15)


class TestRabiConversion:
    def test_zero_maps_to_zero(self):
        assert rabi_from_field(0.0) == 0.0
        assert field_from_rabi(0.0) == 0.0

    def test_reference_value_at_point_one_millitesla(self):
        assert rabi_from_field(1e-4) == pytest.approx(1.40e6, rel=5e-3)

    def test_round_trip_identity(self):
        for b in (1e-6, 1e-4, 3.7e-3):
            assert field_from_rabi(rabi_from_field(b)) == pytest.approx(b, rel=1e-12)
        for rabi in (1.40e6, 2.2e7):
            assert rabi_from_field(field_from_rabi(rabi)) == pytest.approx(rabi, rel=1e-12)

    def test_linearity(self):
        assert field_from_rabi(2.8e6) == pytest.approx(2 * field_from_rabi(1.4e6), rel=1e-12)

    def test_custom_constants(self):
        constants = PhysicalConstants(g_factor=2.0)
        assert rabi_from_field(1e-4, constants) < rabi_from_field(1e-4)

    def test_negative_inputs_rejected(self):
        with pytest.raises(InvalidInputError):
            rabi_from_field(-1e-4)
        with pytest.raises(InvalidInputError):
            field_from_rabi(-1.0)


class TestFieldProfile:
    def test_transverse_mirror_symmetry(self):
        geom = CpwGeometry()
        profile = field_profile(geom, NV, transverse_path(250e-6, 10e-6, 41))
        totals = np.array([p[1] for p in profile])
        np.testing.assert_allclose(totals, totals[::-1], rtol=1e-9)

    def test_longitudinal_uniformity(self):
        geom = CpwGeometry()
        # central 80% of the 5 mm line at a 10 um working height
        profile = field_profile(geom, NV, longitudinal_path(0.4 * geom.line_length, 10e-6, 81))
        totals = np.array([p[1] for p in profile])
        assert (totals.max() - totals.min()) / totals.max() <= 0.10

    def test_projected_rabi_bounded_by_total(self):
        geom = CpwGeometry()
        profile = field_profile(geom, NV, transverse_path(200e-6, 12e-6, 31))
        for _, b_total, rabi in profile:
            assert rabi <= rabi_from_field(b_total) * (1 + 1e-12)

    def test_singularity_reports_offending_index(self):
        geom = CpwGeometry()
        x0, _ = geom.filaments()[0]
        path = [[0.0, 0.0, 10e-6], [x0, 0.0, 0.0]]
        with pytest.raises(SingularityError) as excinfo:
            field_profile(geom, NV, path)
        assert excinfo.value.index == 1


class TestPowerScaling:
    def test_quadrupling_power_doubles_rabi(self):
        geom = CpwGeometry()
        scan = rabi_vs_power_scaling(geom, [10.0, 10.0 + 10 * np.log10(4.0)],
                                     [0.0, 0.0, 10e-6], NV)
        assert scan[1][1] == pytest.approx(2.0 * scan[0][1], rel=1e-12)

    def test_zero_power_zero_rabi(self):
        geom = CpwGeometry()
        scan = rabi_vs_power_scaling(geom, [-np.inf], [0.0, 0.0, 10e-6], NV)
        assert scan[0] == (0.0, 0.0)

    def test_collinear_through_origin(self):
        geom = CpwGeometry()
        scan = rabi_vs_power_scaling(geom, list(np.linspace(0.0, 25.0, 12)),
                                     [10e-6, 0.0, 8e-6], NV)
        roots = np.array([s[0] for s in scan])
        rabis = np.array([s[1] for s in scan])
        slope = np.sum(roots * rabis) / np.sum(roots * roots)
        ss_res = np.sum((rabis - slope * roots) ** 2)
        ss_tot = np.sum((rabis - rabis.mean()) ** 2)
        assert 1.0 - ss_res / ss_tot >= 1.0 - 1e-12

    def test_subset_slopes_agree(self):
        geom = CpwGeometry()
        scan = rabi_vs_power_scaling(geom, list(np.linspace(2.0, 24.0, 10)),
                                     [0.0, 0.0, 15e-6], NV)
        slopes = [rabi / root for root, rabi in scan]
        assert max(slopes) - min(slopes) <= 1e-9 * max(slopes)

    def test_empty_powers_rejected(self):
        with pytest.raises(InvalidInputError):
            rabi_vs_power_scaling(CpwGeometry(), [], [0.0, 0.0, 10e-6], NV)
