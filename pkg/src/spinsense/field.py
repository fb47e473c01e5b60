"""Microwave magnetic field around the coplanar waveguide and conversion to
NV Rabi rates.

The delivery line is modeled magnetoquasistatically: each conductor is a
uniform current sheet discretized into straight filaments, superposed with the
finite-segment Biot-Savart closed form. Valid because the imaging region is
far smaller than the free-space wavelength at the spin resonance (~10 cm at
2.87 GHz). Resistive current taper along the line is not modeled, so computed
profiles are shape-accurate, not absolutely calibrated against measured maps.

Geometry convention: the line runs along y, conductor widths extend along x,
and the metal layer sits at z = 0. The center conductor carries
+current_amplitude; each of the two ground returns carries half of it back.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, SingularityError

__all__ = [
    "MU_0",
    "PhysicalConstants",
    "CpwGeometry",
    "NvOrientation",
    "FieldSample",
    "drive_amplitude",
    "segment_field",
    "biot_savart_field",
    "project_orthogonal_to_nv",
    "rabi_from_field",
    "field_from_rabi",
    "field_profile",
    "rabi_vs_power_scaling",
    "transverse_path",
    "longitudinal_path",
    "write_profile_csv",
]

MU_0 = 4.0e-7 * np.pi  # T*m/A


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA constants used in the spin-drive relation (g is the NV value)."""

    mu_b: float = 9.2740100783e-24  # J/T
    g_factor: float = 2.0028
    hbar: float = 1.054571817e-34  # J*s


@dataclass(frozen=True)
class CpwGeometry:
    """Coplanar-waveguide sample region: a center line flanked by two grounds.

    ``ground_gap`` is the clear (edge-to-edge) spacing between the center line
    and each ground plane; ``discretization`` is the number of filaments each
    conductor is split into. ``current_amplitude`` is the peak drive current;
    power-scaling helpers treat it as the current at ``reference_power_dbm``.
    """

    line_width: float = 50e-6  # m
    line_length: float = 5e-3  # m
    ground_gap: float = 70e-6  # m
    ground_width: float = 150e-6  # m
    current_amplitude: float = 0.063  # A, ~= peak current of a 100 mW wave on 50 ohm
    discretization: int = 64
    reference_power_dbm: float = 20.0

    def __post_init__(self):
        for name in ("line_width", "line_length", "ground_gap", "ground_width"):
            if not (getattr(self, name) > 0):
                raise InvalidInputError(f"{name} must be > 0")
        if not (self.discretization >= 1):
            raise InvalidInputError("discretization must be >= 1")

    def filaments(self) -> list[tuple[float, float]]:
        """(x_position, current) of every filament; returns sum to -center sum."""
        n = self.discretization
        out: list[tuple[float, float]] = []

        def sheet(x_left: float, width: float, total_current: float):
            pitch = width / n
            for i in range(n):
                out.append((x_left + (i + 0.5) * pitch, total_current / n))

        sheet(-self.line_width / 2, self.line_width, self.current_amplitude)
        ground_left = self.line_width / 2 + self.ground_gap
        sheet(ground_left, self.ground_width, -self.current_amplitude / 2)
        sheet(-ground_left - self.ground_width, self.ground_width, -self.current_amplitude / 2)
        return out

    @property
    def filament_pitch(self) -> float:
        """Spacing between filaments within the narrowest conductor."""
        return min(self.line_width, self.ground_width) / self.discretization


@dataclass(frozen=True)
class NvOrientation:
    """Unit vector along the NV symmetry axis."""

    axis: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", axis)
        if axis.shape != (3,):
            raise InvalidInputError("axis must be a 3-vector")
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise InvalidInputError("axis must have unit norm within 1e-12")

    @classmethod
    def from_tilt(cls, tilt_deg: float = 30.0) -> "NvOrientation":
        """Axis tilted ``tilt_deg`` from the sample plane, in the plane
        perpendicular to the line direction (the xz-plane)."""
        tilt = np.deg2rad(tilt_deg)
        return cls(np.array([np.cos(tilt), 0.0, np.sin(tilt)]))


@dataclass(frozen=True)
class FieldSample:
    """Complex field vector (per-component amplitude and phase) at a point."""

    position: np.ndarray  # m, shape (3,)
    b_field: np.ndarray  # T, complex, shape (3,)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        b = np.asarray(self.b_field, dtype=complex)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "b_field", b)
        if pos.shape != (3,) or b.shape != (3,):
            raise InvalidInputError("position and b_field must be 3-vectors")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(b.view(float)))):
            raise InvalidInputError("field sample components must be finite")


def drive_amplitude(b: np.ndarray) -> float:
    """Maximum over drive phase of |Re(e^{i phi} b)| for a complex vector b.

    This is the semi-major axis of the polarization ellipse:
    sqrt((|b|^2 + |b.b|) / 2), where b.b is the unconjugated self-product.
    Reduces to the Euclidean norm for a real vector.
    """
    b = np.asarray(b, dtype=complex)
    norm_sq = float(np.sum(np.abs(b) ** 2))
    self_prod = abs(complex(np.sum(b * b)))
    return float(np.sqrt((norm_sq + self_prod) / 2.0))


def segment_field(
    start: np.ndarray, end: np.ndarray, current: float, point: np.ndarray
) -> np.ndarray:
    """Biot-Savart field of a straight finite segment at one point (real 3-vector).

    Closed form B = mu0 I / (4 pi d) * (cos t1 - cos t2) (u x d_hat), with u the
    segment direction and d the perpendicular distance from the segment's line.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    point = np.asarray(point, dtype=float)
    seg = end - start
    length = np.linalg.norm(seg)
    if length == 0.0:
        raise InvalidInputError("segment has zero length")
    u = seg / length
    r1 = point - start
    r2 = point - end
    d_vec = r1 - np.dot(r1, u) * u
    d = np.linalg.norm(d_vec)
    if d == 0.0:
        raise SingularityError("field point lies on the filament axis")
    cos1 = np.dot(u, r1) / np.linalg.norm(r1)
    cos2 = np.dot(u, r2) / np.linalg.norm(r2)
    return MU_0 * current / (4.0 * np.pi * d) * (cos1 - cos2) * np.cross(u, d_vec / d)


def biot_savart_field(geom: CpwGeometry, point: Sequence[float]) -> np.ndarray:
    """Complex B vector at ``point`` from all waveguide filaments.

    All filaments are driven in phase (no resistive taper), so the returned
    vector is real-valued up to sign; it is typed complex to carry per-component
    phase through downstream coherent sums.

    The filaments all run along y, which lets the segment closed form evaluate
    vectorized over filaments; it agrees with summing ``segment_field`` calls.
    """
    point = np.asarray(point, dtype=float)
    if point.shape != (3,):
        raise InvalidInputError("point must be a 3-vector")
    half = geom.line_length / 2.0
    guard = geom.filament_pitch / 2.0
    filaments = geom.filaments()
    x_pos = np.array([x for x, _ in filaments])
    currents = np.array([i for _, i in filaments])

    dx = point[0] - x_pos
    dz = point[2]
    d_sq = dx * dx + dz * dz
    # distance to the finite segment: perpendicular within the span, else
    # distance to the nearest end
    if -half <= point[1] <= half:
        seg_dist_sq = d_sq
    else:
        overhang = min(abs(point[1] + half), abs(point[1] - half))
        seg_dist_sq = d_sq + overhang * overhang
    if np.any(seg_dist_sq < guard * guard):
        raise SingularityError(
            f"point {point.tolist()} is within half a filament spacing of a conductor"
        )
    y1 = point[1] + half  # along-line offsets from both ends
    y2 = point[1] - half
    cos1 = y1 / np.sqrt(d_sq + y1 * y1)
    cos2 = y2 / np.sqrt(d_sq + y2 * y2)
    # u x d_vec with u = +y and d_vec = (dx, 0, dz) is (dz, 0, -dx)
    scale = MU_0 * currents / (4.0 * np.pi * d_sq) * (cos1 - cos2)
    total = np.array([np.sum(scale * dz), 0.0, np.sum(scale * -dx)])
    return total.astype(complex)


def project_orthogonal_to_nv(b: np.ndarray, nv: NvOrientation) -> float:
    """Drive amplitude of the field component orthogonal to the NV axis.

    Removes the complex component along the axis, then coherently evaluates the
    remaining elliptical polarization and returns its maximum amplitude over
    phase. This is the field magnitude that sets the spin rotation rate.
    """
    b = np.asarray(b, dtype=complex)
    axis = nv.axis
    b_perp = b - np.dot(b, axis) * axis
    return drive_amplitude(b_perp)


def rabi_from_field(b_perp: float, constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Spin rotation rate in Hz for a drive field b_perp orthogonal to the axis:
    Omega/2pi = mu_B g b_perp / (4 pi hbar)."""
    if b_perp < 0:
        raise InvalidInputError(f"b_perp must be >= 0, got {b_perp}")
    return constants.mu_b * constants.g_factor * b_perp / (4.0 * np.pi * constants.hbar)


def field_from_rabi(rabi: float, constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Exact inverse of rabi_from_field."""
    if rabi < 0:
        raise InvalidInputError(f"rabi must be >= 0, got {rabi}")
    return rabi * 4.0 * np.pi * constants.hbar / (constants.mu_b * constants.g_factor)


def field_profile(
    geom: CpwGeometry,
    nv: NvOrientation,
    path: Sequence[Sequence[float]],
    constants: PhysicalConstants = PhysicalConstants(),
) -> list[tuple[np.ndarray, float, float]]:
    """Per-point (position, total drive amplitude in T, projected Rabi rate in Hz).

    A singularity at any path point is re-raised with the offending index.
    """
    out = []
    for i, point in enumerate(path):
        try:
            b = biot_savart_field(geom, point)
        except SingularityError as exc:
            raise SingularityError(f"path point {i}: {exc}", index=i) from exc
        b_total = drive_amplitude(b)
        rabi = rabi_from_field(project_orthogonal_to_nv(b, nv), constants)
        out.append((np.asarray(point, dtype=float), b_total, rabi))
    return out


def transverse_path(extent: float, height: float, n_points: int) -> np.ndarray:
    """Cross-section through the line center: x in [-extent, extent] at y = 0."""
    xs = np.linspace(-extent, extent, n_points)
    return np.column_stack([xs, np.zeros(n_points), np.full(n_points, height)])


def longitudinal_path(extent: float, height: float, n_points: int) -> np.ndarray:
    """Along the line above its center: y in [-extent, extent] at x = 0."""
    ys = np.linspace(-extent, extent, n_points)
    return np.column_stack([np.zeros(n_points), ys, np.full(n_points, height)])


def write_profile_csv(
    path: str | Path, profile: Sequence[tuple[np.ndarray, float, float]]
) -> None:
    from .config import format_float

    lines = ["x_m,y_m,z_m,b_total_T,rabi_Hz"]
    for position, b_total, rabi in profile:
        fields = [format_float(v) for v in (*position, b_total, rabi)]
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def rabi_vs_power_scaling(
    geom: CpwGeometry,
    powers_dbm: Sequence[float],
    point: Sequence[float],
    nv: NvOrientation,
    constants: PhysicalConstants = PhysicalConstants(),
) -> list[tuple[float, float]]:
    """(sqrt of power in mW, Rabi rate in Hz) at one point for each drive power.

    The filament current scales as the square root of linear power relative to
    the geometry's reference power, so the returned points are collinear
    through the origin.
    """
    if len(powers_dbm) == 0:
        raise InvalidInputError("powers_dbm must not be empty")
    b_ref = biot_savart_field(geom, point)
    rabi_ref = rabi_from_field(project_orthogonal_to_nv(b_ref, nv), constants)
    ref_mw = 10.0 ** (geom.reference_power_dbm / 10.0)
    out = []
    for p in powers_dbm:
        mw = 10.0 ** (p / 10.0)
        scale = np.sqrt(mw / ref_mw)
        out.append((float(np.sqrt(mw)), float(rabi_ref * scale)))
    return out
