"""Worm morphometry: background subtraction, segmentation, skeleton length,
ellipsoid volume, and fluorescence normalization.

The measurement chain mirrors the imaging workflow: reconstruct a smooth
background from the lowest-frequency cosine-transform modes and subtract it,
threshold the difference image, keep the largest connected blob, thin it to a
one-pixel skeleton, and take the longest endpoint-to-endpoint geodesic as the
body length. Body volume treats the worm as a radially symmetric ellipsoid:
V = (8 / 3 pi) A^2 / l, equivalently (4 pi / 3) a^2 (l / 2) with A = pi a l / 2.

Thinning is delegated to scikit-image's medial-axis thinning (Lee et al.),
which preserves topology and yields one-pixel-wide, 8-connected skeletons.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft as _fft
from scipy import ndimage
from skimage.morphology import skeletonize as _skimage_skeletonize

from .errors import EmptyMaskError, InvalidInputError

__all__ = [
    "GrayImage",
    "BinaryMask",
    "Skeleton",
    "WormMeasurement",
    "DisconnectedSkeletonWarning",
    "dct_background_subtract",
    "otsu_threshold",
    "threshold_segment",
    "skeletonize",
    "longest_geodesic",
    "worm_volume",
    "normalized_stress",
    "measure_worm",
    "sum_zstack",
    "write_measurements_csv",
]

_EIGHT_CONN = np.ones((3, 3), dtype=int)


class DisconnectedSkeletonWarning(UserWarning):
    """Raised when a geodesic is computed on a multi-component skeleton."""


@dataclass(frozen=True)
class GrayImage:
    """Grayscale image with a physical pixel size.

    Values must be finite. Ingested images are nonnegative; difference images
    produced by background subtraction may carry negative values.
    """

    values: np.ndarray  # (height, width) float
    pixel_size: float = 1.0  # um per pixel

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.size == 0:
            raise InvalidInputError("image must be a non-empty 2-d array")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("image values must be finite")
        if not (self.pixel_size > 0):
            raise InvalidInputError("pixel_size must be > 0")

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray  # (height, width) bool
    pixel_size: float = 1.0

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        if bits.ndim != 2 or bits.size == 0:
            raise InvalidInputError("mask must be a non-empty 2-d array")

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def area(self) -> float:
        """Foreground area in um^2."""
        return self.pixel_count * self.pixel_size**2


@dataclass(frozen=True)
class Skeleton:
    """One-pixel-wide 8-connected skeleton with its endpoints.

    Endpoints are skeleton pixels with exactly one 8-neighbor; an isolated
    single-pixel skeleton therefore has an empty endpoint list.
    """

    bits: np.ndarray  # bool grid, subset of the source mask
    pixel_size: float = 1.0

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        if bits.ndim != 2:
            raise InvalidInputError("skeleton grid must be 2-d")

    @property
    def pixels(self) -> list[tuple[int, int]]:
        return [tuple(p) for p in np.argwhere(self.bits)]

    @property
    def endpoints(self) -> list[tuple[int, int]]:
        neighbor_count = ndimage.convolve(
            self.bits.astype(int), _EIGHT_CONN, mode="constant"
        ) - self.bits.astype(int)
        return [tuple(p) for p in np.argwhere(self.bits & (neighbor_count == 1))]


@dataclass(frozen=True)
class WormMeasurement:
    """Geometry and fluorescence summary of one specimen.

    ``volume`` is always the ellipsoid formula applied to length and area;
    ``volume_override`` records a hand-corrected value (imaging artefacts) and
    takes precedence in ``effective_volume``.
    """

    length_l: float  # um
    area_a: float  # um^2
    half_width_a: float  # um
    volume: float  # um^3
    total_fluorescence: float
    normalized_stress: float = math.nan
    specimen_id: str = ""
    volume_override: float | None = None

    def __post_init__(self):
        for name in ("length_l", "area_a", "volume"):
            if not (getattr(self, name) > 0):
                raise InvalidInputError(f"{name} must be > 0")
        expected = worm_volume(self.length_l, self.area_a)
        if abs(self.volume - expected) > 1e-9 * expected:
            raise InvalidInputError(
                "volume must equal (8/(3 pi)) A^2 / l within 1e-9 relative"
            )

    @property
    def effective_volume(self) -> float:
        return self.volume if self.volume_override is None else self.volume_override


def dct_background_subtract(image: GrayImage, modes: int = 10) -> GrayImage:
    """Subtract the low-frequency background reconstructed from the lowest
    ``modes`` x ``modes`` block of the image's 2-d cosine transform.

    The result is a signed difference image; reapplying the operation is a
    no-op because the retained modes of the difference are zero.
    """
    if not (1 <= modes <= min(image.width, image.height)):
        raise InvalidInputError(
            f"modes must be in [1, {min(image.width, image.height)}], got {modes}"
        )
    coeffs = _fft.dctn(image.values, norm="ortho")
    background_coeffs = np.zeros_like(coeffs)
    background_coeffs[:modes, :modes] = coeffs[:modes, :modes]
    background = _fft.idctn(background_coeffs, norm="ortho")
    return GrayImage(image.values - background, image.pixel_size)


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Between-class-variance-maximizing threshold over a ``bins``-level
    histogram of the value range. Returns a cut such that foreground is
    strictly above it."""
    flat = np.asarray(values, dtype=float).ravel()
    vmin, vmax = float(flat.min()), float(flat.max())
    if vmin == vmax:
        raise EmptyMaskError("constant image cannot be thresholded")
    hist, edges = np.histogram(flat, bins=bins, range=(vmin, vmax))
    prob = hist / flat.size
    omega = np.cumsum(prob)
    centers = (edges[:-1] + edges[1:]) / 2.0
    mu = np.cumsum(prob * centers)
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = -np.inf
    best = int(np.argmax(sigma_b[:-1]))  # last bin cannot be a split
    return float(edges[best + 1])


def threshold_segment(image: GrayImage, threshold: float | str = "otsu") -> BinaryMask:
    """Binary mask of pixels above the threshold, reduced to the largest
    8-connected component. ``threshold="otsu"`` picks the cut automatically."""
    if isinstance(threshold, str):
        if threshold != "otsu":
            raise InvalidInputError(f"unknown threshold mode {threshold!r}")
        cut = otsu_threshold(image.values)
    else:
        cut = float(threshold)
    bits = image.values > cut
    if not bits.any():
        raise EmptyMaskError(f"no pixels above threshold {cut}")
    labels, n_labels = ndimage.label(bits, structure=_EIGHT_CONN)
    if n_labels > 1:
        sizes = ndimage.sum_labels(bits, labels, index=np.arange(1, n_labels + 1))
        bits = labels == (int(np.argmax(sizes)) + 1)
    return BinaryMask(bits, image.pixel_size)


def skeletonize(mask: BinaryMask) -> Skeleton:
    """Topology-preserving medial-axis thinning of the mask."""
    if not mask.bits.any():
        raise EmptyMaskError("cannot skeletonize an empty mask")
    thin = _skimage_skeletonize(mask.bits, method="lee")
    return Skeleton(np.asarray(thin, dtype=bool), mask.pixel_size)


_STEPS = [
    (-1, -1, math.sqrt(2)), (-1, 0, 1.0), (-1, 1, math.sqrt(2)),
    (0, -1, 1.0), (0, 1, 1.0),
    (1, -1, math.sqrt(2)), (1, 0, 1.0), (1, 1, math.sqrt(2)),
]


def _dijkstra(bits: np.ndarray, source: tuple[int, int]):
    """Pixel-step distances (1 axial, sqrt(2) diagonal) and predecessors."""
    dist = {source: 0.0}
    prev: dict[tuple[int, int], tuple[int, int]] = {}
    heap = [(0.0, source)]
    h, w = bits.shape
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist.get(node, math.inf):
            continue
        r, c = node
        for dr, dc, weight in _STEPS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and bits[rr, cc]:
                nd = d + weight
                if nd < dist.get((rr, cc), math.inf):
                    dist[(rr, cc)] = nd
                    prev[(rr, cc)] = node
                    heapq.heappush(heap, (nd, (rr, cc)))
    return dist, prev


def longest_geodesic(skeleton: Skeleton) -> tuple[float, list[tuple[int, int]]]:
    """Longest endpoint-to-endpoint path length within the skeleton graph.

    Distances step 1 pixel axially and sqrt(2) diagonally, scaled by the pixel
    size; the maximum over all endpoint pairs is returned with its path. A
    disconnected skeleton is reduced to its largest component (with a
    warning); skeletons with fewer than two endpoints yield a zero-length
    path at a representative pixel.
    """
    bits = skeleton.bits
    if not bits.any():
        raise InvalidInputError("skeleton has no pixels")
    labels, n_labels = ndimage.label(bits, structure=_EIGHT_CONN)
    if n_labels > 1:
        warnings.warn(
            f"skeleton has {n_labels} components; using the largest",
            DisconnectedSkeletonWarning,
            stacklevel=2,
        )
        sizes = ndimage.sum_labels(bits, labels, index=np.arange(1, n_labels + 1))
        bits = labels == (int(np.argmax(sizes)) + 1)
        skeleton = Skeleton(bits, skeleton.pixel_size)
    endpoints = skeleton.endpoints
    if len(endpoints) < 2:
        anchor = endpoints[0] if endpoints else tuple(np.argwhere(bits)[0])
        return 0.0, [anchor]
    best_len = -math.inf
    best_pair = None
    best_prev = None
    for i, source in enumerate(endpoints[:-1]):
        dist, prev = _dijkstra(bits, source)
        for target in endpoints[i + 1:]:
            d = dist.get(target)
            if d is not None and d > best_len:
                best_len = d
                best_pair = (source, target)
                best_prev = prev
    path = [best_pair[1]]
    while path[-1] != best_pair[0]:
        path.append(best_prev[path[-1]])
    path.reverse()
    return best_len * skeleton.pixel_size, path


def worm_volume(length_l: float, area_a: float) -> float:
    """Radially symmetric ellipsoid volume from body length and projected
    cross-sectional area: V = (8 / (3 pi)) A^2 / l."""
    if not (length_l > 0):
        raise InvalidInputError(f"length must be > 0, got {length_l}")
    if not (area_a > 0):
        raise InvalidInputError(f"area must be > 0, got {area_a}")
    return 8.0 / (3.0 * math.pi) * area_a**2 / length_l


def normalized_stress(
    zstack_sum: GrayImage,
    measurement: WormMeasurement,
    control_mean: float,
    threshold: float | str = "otsu",
) -> float:
    """Volume-normalized, control-subtracted fluorescence of the z-sum image.

    Background pixels are removed by thresholding the z-sum; the remaining
    intensity sum is divided by the worm volume, then the control-group mean
    (in the same intensity-per-volume units) is subtracted.
    """
    if isinstance(threshold, str):
        if threshold != "otsu":
            raise InvalidInputError(f"unknown threshold mode {threshold!r}")
        cut = otsu_threshold(zstack_sum.values)
    else:
        cut = float(threshold)
    total = float(np.sum(zstack_sum.values[zstack_sum.values > cut]))
    return total / measurement.effective_volume - control_mean


def sum_zstack(slices: Sequence[GrayImage]) -> GrayImage:
    """Pixelwise sum of z-stack slices (all must share shape and pixel size)."""
    if len(slices) == 0:
        raise InvalidInputError("z-stack must contain at least one slice")
    first = slices[0]
    total = np.zeros_like(first.values)
    for img in slices:
        if img.values.shape != first.values.shape:
            raise InvalidInputError("z-stack slices must share dimensions")
        if img.pixel_size != first.pixel_size:
            raise InvalidInputError("z-stack slices must share pixel size")
        total += img.values
    return GrayImage(total, first.pixel_size)


def measure_worm(
    image: GrayImage,
    modes: int = 10,
    threshold: float | str = "otsu",
    fluorescence_image: GrayImage | None = None,
    control_mean: float = 0.0,
    specimen_id: str = "",
) -> WormMeasurement:
    """Run the full measurement chain on one specimen image.

    ``image`` drives the geometry (background subtraction, segmentation,
    skeleton length, area). Fluorescence is summed from
    ``fluorescence_image`` (default: the geometry image itself) over its
    above-threshold pixels, then normalized by volume and the control mean.
    """
    difference = dct_background_subtract(image, modes)
    mask = threshold_segment(difference, threshold)
    skeleton = skeletonize(mask)
    length, _ = longest_geodesic(skeleton)
    if length <= 0:
        raise InvalidInputError("skeleton too short to measure a body length")
    area = mask.area
    volume = worm_volume(length, area)
    half_width = 2.0 * area / (math.pi * length)
    fluor = fluorescence_image if fluorescence_image is not None else image
    fluor_cut = (
        otsu_threshold(fluor.values) if isinstance(threshold, str) else float(threshold)
    )
    total_fluor = float(np.sum(fluor.values[fluor.values > fluor_cut]))
    measurement = WormMeasurement(
        length_l=length,
        area_a=area,
        half_width_a=half_width,
        volume=volume,
        total_fluorescence=total_fluor,
        specimen_id=specimen_id,
    )
    stress = total_fluor / measurement.effective_volume - control_mean
    return WormMeasurement(
        length_l=length,
        area_a=area,
        half_width_a=half_width,
        volume=volume,
        total_fluorescence=total_fluor,
        normalized_stress=stress,
        specimen_id=specimen_id,
    )


def write_measurements_csv(path: str | Path, measurements: Sequence[WormMeasurement]) -> None:
    from .config import format_float

    lines = ["specimen_id,length_um,area_um2,volume_um3,total_fluor,normalized_stress"]
    for m in measurements:
        lines.append(
            f"{m.specimen_id},{format_float(m.length_l)},{format_float(m.area_a)},"
            f"{format_float(m.effective_volume)},{format_float(m.total_fluorescence)},"
            f"{format_float(m.normalized_stress)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
