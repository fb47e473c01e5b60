"""Mean-squared-displacement analysis of particle trajectories and
ensemble viability classification.

The MSD estimator is the time-averaged overlapping-pair form: every pair of
samples separated by the lag contributes, which is the standard choice for
short single-particle tracks. Trajectories with dropped frames are split at
the gaps by the CSV loader instead of interpolated, because interpolation
biases the MSD downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FileFormatError, InvalidInputError, NoPairsError

__all__ = [
    "DEFAULT_FRAME_PERIOD",
    "Trajectory",
    "MsdCurve",
    "WindowStats",
    "ViabilityReport",
    "msd",
    "msd_curve",
    "ensemble_viability",
    "read_trajectories_csv",
    "write_trajectories_csv",
]

# Widefield acquisition ran at 0.68 frames per second.
DEFAULT_FRAME_PERIOD = 1.0 / 0.68  # s

_TIME_TOL = 1e-6  # s


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled planar positions of one tracked particle."""

    times: np.ndarray  # s
    x: np.ndarray  # um
    y: np.ndarray  # um
    frame_period: float = DEFAULT_FRAME_PERIOD
    track_id: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if times.ndim != 1 or times.shape != x.shape or times.shape != y.shape:
            raise InvalidInputError("times, x, y must be equal-length 1-d arrays")
        if times.size < 2:
            raise InvalidInputError("trajectory needs at least 2 points")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise InvalidInputError("times must be strictly increasing")
        if np.any(np.abs(steps - self.frame_period) > _TIME_TOL):
            raise InvalidInputError(
                "frame spacing must be uniform within 1e-6 s; split tracks at gaps"
            )

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass(frozen=True)
class MsdCurve:
    """MSD evaluated at every frame multiple up to a maximum lag."""

    taus: np.ndarray  # s
    msd_values: np.ndarray  # um^2
    counts: np.ndarray  # pairs averaged per tau

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        values = np.asarray(self.msd_values, dtype=float)
        counts = np.asarray(self.counts, dtype=int)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "msd_values", values)
        object.__setattr__(self, "counts", counts)
        if not (taus.shape == values.shape == counts.shape):
            raise InvalidInputError("taus, msd_values, counts must have equal length")
        if np.any(np.diff(taus) <= 0):
            raise InvalidInputError("taus must be strictly increasing")
        if np.any(values < 0):
            raise InvalidInputError("msd values must be >= 0")
        if np.any(counts < 1):
            raise InvalidInputError("each reported tau needs at least one pair")

    def to_csv(self, path: str | Path) -> None:
        from .config import format_float

        lines = ["tau_s,msd_um2,count"]
        for tau, value, count in zip(self.taus, self.msd_values, self.counts):
            lines.append(f"{format_float(tau)},{format_float(value)},{int(count)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class WindowStats:
    start: float  # s
    end: float  # s
    msd_mean: float  # um^2
    msd_std: float  # um^2
    n_trajectories: int
    verdict: str  # healthy | impaired | below-floor | skipped
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class ViabilityReport:
    windows: tuple[WindowStats, ...]
    tau: float
    noise_floor: float
    baseline_mean: float


def _lag_steps(tau: float, frame_period: float) -> int:
    steps = round(tau / frame_period)
    if steps < 1 or abs(steps * frame_period - tau) > _TIME_TOL:
        raise InvalidInputError(
            f"tau={tau} s is not a positive multiple of the frame period {frame_period} s"
        )
    return steps


def msd(trajectory: Trajectory, tau: float) -> float:
    """Time-averaged squared planar displacement at lag ``tau``.

    ``tau`` must be an integer multiple of the frame period (within 1e-6 s)
    and no longer than the trajectory span.
    """
    m = _lag_steps(tau, trajectory.frame_period)
    n = len(trajectory)
    if m > n - 1:
        raise NoPairsError(
            f"tau={tau} s exceeds the trajectory span {trajectory.span} s"
        )
    dx = trajectory.x[m:] - trajectory.x[:-m]
    dy = trajectory.y[m:] - trajectory.y[:-m]
    return float(np.mean(dx * dx + dy * dy))


def msd_curve(trajectory: Trajectory, max_tau: float) -> MsdCurve:
    """MSD at every frame multiple up to ``max_tau``, with pair counts."""
    if max_tau > trajectory.span + _TIME_TOL:
        raise NoPairsError(
            f"max_tau={max_tau} s exceeds the trajectory span {trajectory.span} s"
        )
    max_steps = int(math.floor(max_tau / trajectory.frame_period + _TIME_TOL))
    if max_steps < 1:
        raise InvalidInputError("max_tau must cover at least one frame period")
    n = len(trajectory)
    taus, values, counts = [], [], []
    for m in range(1, max_steps + 1):
        dx = trajectory.x[m:] - trajectory.x[:-m]
        dy = trajectory.y[m:] - trajectory.y[:-m]
        taus.append(m * trajectory.frame_period)
        values.append(float(np.mean(dx * dx + dy * dy)))
        counts.append(n - m)
    return MsdCurve(np.array(taus), np.array(values), np.array(counts))


def _windowed_msd(trajectory: Trajectory, tau: float, start: float, end: float) -> float | None:
    """MSD over pairs whose starting sample falls in [start, end), or None."""
    m = _lag_steps(tau, trajectory.frame_period)
    n = len(trajectory)
    if m > n - 1:
        return None
    t_start = trajectory.times[:-m]
    mask = (t_start >= start - _TIME_TOL) & (t_start < end - _TIME_TOL)
    if not np.any(mask):
        return None
    dx = trajectory.x[m:][mask] - trajectory.x[:-m][mask]
    dy = trajectory.y[m:][mask] - trajectory.y[:-m][mask]
    return float(np.mean(dx * dx + dy * dy))


def ensemble_viability(
    trajectories: Sequence[Trajectory],
    tau: float = 10.0,
    window: float = 300.0,
    noise_floor: float = 1e-3,
    impaired_fraction: float = 0.5,
) -> ViabilityReport:
    """Windowed ensemble MSD at one lag, classified against a baseline.

    Each window's value is the across-trajectory mean of the windowed MSD at
    ``tau``. The first populated window sets the baseline; later windows are
    "impaired" when their mean drops below ``impaired_fraction`` of it and
    "below-floor" when the mean is within the tracking noise floor. Windows
    with no overlapping trajectory are kept in the report but flagged skipped.
    Sums across trajectories use exact accumulation, so results do not depend
    on trajectory ordering.
    """
    if len(trajectories) == 0:
        raise InvalidInputError("at least one trajectory is required")
    if not (window > 0):
        raise InvalidInputError("window must be > 0")
    t0 = min(float(tr.times[0]) for tr in trajectories)
    t1 = max(float(tr.times[-1]) for tr in trajectories)
    n_windows = max(1, int(math.ceil((t1 - t0) / window - _TIME_TOL)))

    windows: list[WindowStats] = []
    baseline_mean = math.nan
    for j in range(n_windows):
        lo = t0 + j * window
        hi = lo + window
        values = []
        for tr in trajectories:
            value = _windowed_msd(tr, tau, lo, hi)
            if value is not None:
                values.append(value)
        if not values:
            windows.append(WindowStats(lo, hi, math.nan, math.nan, 0, "skipped", ("no-overlap",)))
            continue
        mean = math.fsum(values) / len(values)
        flags: tuple[str, ...] = ()
        if len(values) == 1:
            std = 0.0
            flags = ("single-sample",)
        else:
            std = math.sqrt(
                math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
            )
        if math.isnan(baseline_mean):
            baseline_mean = mean
        if mean <= noise_floor:
            verdict = "below-floor"
        elif mean < impaired_fraction * baseline_mean:
            verdict = "impaired"
        else:
            verdict = "healthy"
        windows.append(WindowStats(lo, hi, mean, std, len(values), verdict, flags))
    return ViabilityReport(tuple(windows), tau, noise_floor, baseline_mean)


def read_trajectories_csv(
    path: str | Path, frame_period: float = DEFAULT_FRAME_PERIOD
) -> list[Trajectory]:
    """Load TrackMate-style exports: ``track_id,frame,time_s,x_um,y_um``.

    Rows are grouped by track and sorted by frame; tracks with missing frames
    are split into separate gap-free segments (ids get a ``#<n>`` suffix).
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "track_id,frame,time_s,x_um,y_um":
        raise FileFormatError(
            f"{path}: expected header 'track_id,frame,time_s,x_um,y_um'"
        )
    rows: dict[str, list[tuple[int, float, float, float]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise FileFormatError(f"{path}:{lineno}: expected five columns")
        try:
            track = parts[0].strip()
            frame = int(parts[1])
            t, x, y = float(parts[2]), float(parts[3]), float(parts[4])
        except ValueError as exc:
            raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
        rows.setdefault(track, []).append((frame, t, x, y))

    trajectories: list[Trajectory] = []
    for track in sorted(rows):
        samples = sorted(rows[track])
        segments: list[list[tuple[int, float, float, float]]] = [[samples[0]]]
        for prev, cur in zip(samples, samples[1:]):
            if cur[0] == prev[0] + 1 and abs((cur[1] - prev[1]) - frame_period) <= _TIME_TOL:
                segments[-1].append(cur)
            else:
                segments[-1:] = [segments[-1], [cur]]
        multi = len(segments) > 1
        for idx, seg in enumerate(segments):
            if len(seg) < 2:
                continue
            seg_id = f"{track}#{idx}" if multi else track
            trajectories.append(
                Trajectory(
                    times=np.array([s[1] for s in seg]),
                    x=np.array([s[2] for s in seg]),
                    y=np.array([s[3] for s in seg]),
                    frame_period=frame_period,
                    track_id=seg_id,
                )
            )
    if not trajectories:
        raise FileFormatError(f"{path}: no usable trajectories (all segments < 2 points)")
    return trajectories


def write_trajectories_csv(path: str | Path, trajectories: Sequence[Trajectory]) -> None:
    from .config import format_float

    lines = ["track_id,frame,time_s,x_um,y_um"]
    for tr in trajectories:
        for i in range(len(tr)):
            lines.append(
                f"{tr.track_id},{i},{format_float(tr.times[i])},"
                f"{format_float(tr.x[i])},{format_float(tr.y[i])}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
