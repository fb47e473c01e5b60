"""Chip thermal dynamics: RTD thermometry, lumped plant model, PID control,
microwave dielectric heating, and liquid-addition transients.

The plant is a single thermal node,

    C_v dT/dt = e V0^2 / R_heater - k (T - T0),

which is linear in T, so every step uses the exact exponential update; there
is no integrator stability constraint on dt. The explicit-Euler stability
guard dt <= C_v/(10 k) is documented here only as the fallback bound if the
update scheme is ever swapped for forward Euler.

Simulations are conduction-only: convective losses that appear at high
heater drive are deliberately not modeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import FitFailureError, DomainError, InvalidInputError

__all__ = [
    "RtdCalibration",
    "ThermalPlant",
    "PidController",
    "MicrowaveHeatingModel",
    "TemperatureTrace",
    "HeatingRun",
    "LiquidAddition",
    "PlantFitResult",
    "rtd_temperature_from_resistance",
    "rtd_resistance_from_temperature",
    "plant_step",
    "simulate_heating_curve",
    "fit_plant_parameters",
    "pid_update",
    "run_closed_loop",
    "dbm_to_milliwatts",
    "effective_temperature",
    "fit_microwave_heating",
    "liquid_addition_transient",
    "SAFE_MICROWAVE_POWER_DBM",
    "LETHAL_MICROWAVE_POWER_DBM",
]

# Reference power thresholds from the worm lethality assays: exposure at or
# below the safe level showed no detectable stress response; the lethal level
# killed every specimen. Stored for reporting only; nothing here models biology.
SAFE_MICROWAVE_POWER_DBM = 21.5
LETHAL_MICROWAVE_POWER_DBM = 22.3

# Default plant parameters from fitting heater ramp curves, and the default
# RTD coefficient (the gold temperature-coefficient value is configurable;
# only its cross-chip spread is characterized experimentally).
DEFAULT_C_V = 0.26  # J/K
DEFAULT_K = 0.0175  # J/K/s
DEFAULT_ETA = 0.002  # 1/K


@dataclass(frozen=True)
class RtdCalibration:
    """Linear gold-resistance thermometry law R(T)/R(T_ref) = eta*(T - T_ref) + 1."""

    eta: float = DEFAULT_ETA  # 1/K
    r_ref: float = 100.0  # ohm
    t_ref: float = 20.0  # degC

    def __post_init__(self):
        if not (self.eta > 0):
            raise InvalidInputError(f"eta must be > 0, got {self.eta}")
        if not (self.r_ref > 0):
            raise InvalidInputError(f"r_ref must be > 0, got {self.r_ref}")


@dataclass(frozen=True)
class ThermalPlant:
    """Lumped single-node model of the chip plus liquid load.

    Attributes
    ----------
    c_v : heat capacity of the loaded chip, J/K.
    k : conductive loss rate to ambient, J/K/s.
    r_heater : heater resistance, ohm.
    t_ambient : ambient (room) temperature T0, degC.
    temperature : current node temperature, degC.
    duty_cycle : heater drive duty cycle e in [0, 1].
    """

    c_v: float = DEFAULT_C_V
    k: float = DEFAULT_K
    r_heater: float = 100.0
    t_ambient: float = 22.0
    temperature: float = 22.0
    duty_cycle: float = 1.0

    def __post_init__(self):
        if not (self.c_v > 0):
            raise InvalidInputError(f"c_v must be > 0, got {self.c_v}")
        if not (self.k > 0):
            raise InvalidInputError(f"k must be > 0, got {self.k}")
        if not (self.r_heater > 0):
            raise InvalidInputError(f"r_heater must be > 0, got {self.r_heater}")
        if not (0.0 <= self.duty_cycle <= 1.0):
            raise InvalidInputError(f"duty_cycle must be in [0, 1], got {self.duty_cycle}")

    def heater_power(self, v0: float) -> float:
        """Joule heating e*V0^2/R_heater in watts."""
        return self.duty_cycle * v0 * v0 / self.r_heater

    def equilibrium_temperature(self, v0: float) -> float:
        """Steady-state temperature T0 + e*V0^2/(R_heater*k)."""
        return self.t_ambient + self.heater_power(v0) / self.k

    @property
    def time_constant(self) -> float:
        """Relaxation time constant C_v/k in seconds."""
        return self.c_v / self.k


@dataclass(frozen=True)
class PidController:
    """Positional-form PID with output clamping and frozen-integral anti-windup.

    The derivative acts on the measurement (not the error) so setpoint steps do
    not kick the output. Gains are in volts per kelvin (per kelvin-second for
    ki, volt-seconds per kelvin for kd). Defaults were tuned by step response
    on the default plant.
    """

    kp: float = 3.0
    ki: float = 0.5
    kd: float = 0.0
    output_min: float = 0.0
    output_max: float = 10.0
    integral_state: float = 0.0  # K*s
    previous_error: float = 0.0  # K
    previous_measurement: float | None = None

    def __post_init__(self):
        if not (self.output_min < self.output_max):
            raise InvalidInputError("output_min must be < output_max")


@dataclass(frozen=True)
class MicrowaveHeatingModel:
    """Steady-state dielectric heating, linear in delivered power in milliwatts."""

    slope: float  # K/mW
    t_baseline: float  # degC, room temperature at exposure time

    def __post_init__(self):
        if not (self.slope >= 0):
            raise InvalidInputError(f"slope must be >= 0, got {self.slope}")


@dataclass(frozen=True)
class TemperatureTrace:
    """Uniformly sampled temperature time series."""

    times: np.ndarray  # s
    temperatures: np.ndarray  # degC
    sample_period: float  # s

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        temps = np.asarray(self.temperatures, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "temperatures", temps)
        if times.ndim != 1 or times.shape != temps.shape:
            raise InvalidInputError("times and temperatures must be equal-length 1-d arrays")
        if times.size == 0:
            raise InvalidInputError("trace must contain at least one sample")
        if times.size > 1:
            dt = np.diff(times)
            if np.any(dt <= 0):
                raise InvalidInputError("times must be strictly increasing")
            if np.any(np.abs(dt - self.sample_period) > 1e-9):
                raise InvalidInputError("sample spacing must equal sample_period within 1e-9 s")

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.temperatures.tolist()))

    def to_csv(self, path: str | Path) -> None:
        from .config import format_float

        lines = ["time_s,temperature_C"]
        for t, temp in zip(self.times, self.temperatures):
            lines.append(f"{format_float(t)},{format_float(temp)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path) -> "TemperatureTrace":
        from .errors import FileFormatError

        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != "time_s,temperature_C":
            raise FileFormatError(f"{path}: expected header 'time_s,temperature_C'")
        times, temps = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FileFormatError(f"{path}:{lineno}: expected two columns")
            try:
                times.append(float(parts[0]))
                temps.append(float(parts[1]))
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
        if len(times) < 2:
            raise FileFormatError(f"{path}: trace needs at least two samples")
        period = times[1] - times[0]
        return cls(np.array(times), np.array(temps), period)


@dataclass(frozen=True)
class HeatingRun:
    """A measured or simulated heating curve together with its drive metadata."""

    trace: TemperatureTrace
    v0: float  # volts across heater
    duty_cycle: float = 1.0
    r_heater: float = 100.0
    t_ambient: float = 22.0


@dataclass(frozen=True)
class LiquidAddition:
    """Scheduled addition of liquid during a closed-loop run."""

    time: float  # s
    added_volume: float  # uL
    added_temp: float  # degC
    sample_volume: float  # uL


class PlantFitResult(NamedTuple):
    c_v: float
    k: float
    rms_residual: float


def rtd_temperature_from_resistance(r: float, cal: RtdCalibration) -> float:
    """Invert the RTD law: T = T_ref + (R/R_ref - 1)/eta."""
    if not (r > 0):
        raise InvalidInputError(f"resistance must be > 0, got {r}")
    return cal.t_ref + (r / cal.r_ref - 1.0) / cal.eta


def rtd_resistance_from_temperature(t: float, cal: RtdCalibration) -> float:
    """Evaluate the RTD law: R = R_ref * (eta*(T - T_ref) + 1)."""
    ratio = cal.eta * (t - cal.t_ref) + 1.0
    if ratio <= 0:
        raise DomainError(
            f"temperature {t} degC maps to non-positive resistance ratio {ratio}"
        )
    return cal.r_ref * ratio


def plant_step(plant: ThermalPlant, v0: float, dt: float) -> ThermalPlant:
    """Advance the plant by dt seconds under constant heater voltage v0.

    Uses the exact solution of the linear node ODE over the step:
    T' = T_inf + (T - T_inf) exp(-k dt / C_v) with T_inf the equilibrium
    temperature at this drive, so the result is exact for any dt > 0.
    """
    if not (dt > 0):
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    t_inf = plant.equilibrium_temperature(v0)
    decay = math.exp(-plant.k * dt / plant.c_v)
    new_temp = t_inf + (plant.temperature - t_inf) * decay
    return replace(plant, temperature=new_temp)


def simulate_heating_curve(
    plant: ThermalPlant, v0: float, duration: float, sample_period: float
) -> TemperatureTrace:
    """Simulate a constant-voltage heating ramp, sampled at sample_period.

    The first sample is the initial state at t = 0; samples continue at every
    multiple of sample_period up to and including duration.
    """
    if not (duration > 0):
        raise InvalidInputError(f"duration must be > 0, got {duration}")
    if not (sample_period > 0):
        raise InvalidInputError(f"sample_period must be > 0, got {sample_period}")
    n_steps = int(math.floor(duration / sample_period + 1e-9))
    times = [0.0]
    temps = [plant.temperature]
    state = plant
    for i in range(1, n_steps + 1):
        state = plant_step(state, v0, sample_period)
        times.append(i * sample_period)
        temps.append(state.temperature)
    return TemperatureTrace(np.array(times), np.array(temps), sample_period)


def _ramp_model(t: np.ndarray, c_v: float, k: float, power: float, t0: float) -> np.ndarray:
    return t0 + power / k * (1.0 - np.exp(-k * t / c_v))


def fit_plant_parameters(runs: Sequence[HeatingRun]) -> PlantFitResult:
    """Jointly fit C_v and k to one or more heating ramps.

    Each run is modeled by the ramp solution starting from its own ambient
    temperature; drive power comes from the run metadata. Returns least-squares
    estimates and the RMS residual in kelvin.
    """
    if len(runs) == 0:
        raise InvalidInputError("at least one heating run is required")
    for run in runs:
        if len(run.trace) < 10:
            raise FitFailureError(
                f"run with {len(run.trace)} samples is underdetermined (need >= 10)"
            )
    all_temps = np.concatenate([run.trace.temperatures for run in runs])
    if np.ptp(all_temps) == 0.0:
        raise FitFailureError(
            "degenerate data: all samples equal, no thermal response to fit",
            diagnostics={"temperature": float(all_temps[0])},
        )

    # Seed k from the final rise and C_v from the 63.2% crossing time.
    k_guesses, tau_guesses = [], []
    for run in runs:
        power = run.duty_cycle * run.v0 * run.v0 / run.r_heater
        trace = run.trace
        rel_t = trace.times - trace.times[0]
        rise = trace.temperatures - run.t_ambient
        final = float(np.mean(rise[-max(1, len(trace) // 10):]))
        if power > 0 and final > 0:
            k_guesses.append(power / final)
            crossing = np.nonzero(rise >= 0.632 * final)[0]
            if crossing.size:
                tau_guesses.append(max(float(rel_t[crossing[0]]), trace.sample_period))
    k0 = float(np.mean(k_guesses)) if k_guesses else 0.01
    tau0 = float(np.mean(tau_guesses)) if tau_guesses else 10.0
    x0 = np.array([max(k0 * tau0, 1e-9), max(k0, 1e-9)])

    def residuals(params: np.ndarray) -> np.ndarray:
        c_v, k = params
        res = []
        for run in runs:
            power = run.duty_cycle * run.v0 * run.v0 / run.r_heater
            rel_t = run.trace.times - run.trace.times[0]
            res.append(_ramp_model(rel_t, c_v, k, power, run.t_ambient) - run.trace.temperatures)
        return np.concatenate(res)

    result = least_squares(
        residuals, x0, bounds=([1e-12, 1e-12], [np.inf, np.inf]),
        xtol=1e-15, ftol=1e-15, gtol=1e-15,
    )
    if not result.success:
        raise FitFailureError(
            f"plant fit did not converge: {result.message}",
            diagnostics={"x": result.x.tolist(), "cost": float(result.cost)},
        )
    rms = float(np.sqrt(np.mean(result.fun**2)))
    return PlantFitResult(float(result.x[0]), float(result.x[1]), rms)


def pid_update(
    controller: PidController, setpoint: float, measured: float, dt: float
) -> tuple[float, PidController]:
    """One PID update; returns the clamped output and the advanced controller.

    The integral is only committed when the resulting output stays inside
    [output_min, output_max]; while saturated it is frozen at its last value.
    """
    if not (dt > 0):
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    error = setpoint - measured
    if controller.previous_measurement is None:
        derivative = 0.0
    else:
        derivative = -controller.kd * (measured - controller.previous_measurement) / dt
    candidate_integral = controller.integral_state + error * dt
    output = controller.kp * error + controller.ki * candidate_integral + derivative
    if controller.output_min <= output <= controller.output_max:
        integral = candidate_integral
    else:
        integral = controller.integral_state
        output = controller.kp * error + controller.ki * integral + derivative
        output = min(controller.output_max, max(controller.output_min, output))
    new_controller = replace(
        controller,
        integral_state=integral,
        previous_error=error,
        previous_measurement=measured,
    )
    return output, new_controller


def run_closed_loop(
    plant: ThermalPlant,
    controller: PidController,
    setpoint_schedule: Sequence[tuple[float, float]],
    sensor_noise_sigma: float,
    duration: float,
    dt: float,
    seed: int = 0,
    liquid_additions: Sequence[LiquidAddition] = (),
) -> TemperatureTrace:
    """Run the PID loop against the simulated plant and record measured temperature.

    ``setpoint_schedule`` is a list of (time_s, setpoint_C) pairs with
    nondecreasing times; each setpoint holds until the next entry. Sensor noise
    is Gaussian with the given sigma, drawn from a generator seeded with
    ``seed`` so runs are reproducible. Scheduled liquid additions are applied
    as instantaneous mixing events at the first step at or after their time.
    """
    if not (dt > 0):
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    if not setpoint_schedule:
        raise InvalidInputError("setpoint schedule must not be empty")
    sched_times = [t for t, _ in setpoint_schedule]
    if any(b < a for a, b in zip(sched_times, sched_times[1:])):
        raise InvalidInputError("schedule times must be nondecreasing")
    rng = np.random.default_rng(seed)
    pending = sorted(liquid_additions, key=lambda ev: ev.time)
    n_steps = int(math.floor(duration / dt + 1e-9))
    times = np.empty(n_steps)
    measured_trace = np.empty(n_steps)
    state = plant
    ctrl = controller
    sched_idx = 0
    for i in range(n_steps):
        t = i * dt
        while sched_idx + 1 < len(setpoint_schedule) and setpoint_schedule[sched_idx + 1][0] <= t:
            sched_idx += 1
        setpoint = setpoint_schedule[sched_idx][1]
        while pending and pending[0].time <= t:
            ev = pending.pop(0)
            state = liquid_addition_transient(
                state, ev.added_volume, ev.added_temp, ev.sample_volume
            )
        measured = state.temperature + (
            rng.normal(0.0, sensor_noise_sigma) if sensor_noise_sigma > 0 else 0.0
        )
        drive, ctrl = pid_update(ctrl, setpoint, measured, dt)
        state = plant_step(state, drive, dt)
        times[i] = t
        measured_trace[i] = measured
    return TemperatureTrace(times, measured_trace, dt)


def dbm_to_milliwatts(p: float) -> float:
    """Convert power in dBm to milliwatts: 10^(p/10). -inf maps to 0 mW."""
    return 10.0 ** (p / 10.0)


def effective_temperature(model: MicrowaveHeatingModel, power: float) -> float:
    """Baseline temperature plus the steady microwave rise at ``power`` dBm."""
    return model.t_baseline + model.slope * dbm_to_milliwatts(power)


def fit_microwave_heating(points: Sequence[tuple[float, float]]) -> MicrowaveHeatingModel:
    """Least-squares line through (power dBm, temperature degC) points,
    with power converted to milliwatts before fitting."""
    if len(points) < 2:
        raise FitFailureError(f"need at least 2 points, got {len(points)}")
    mw = np.array([dbm_to_milliwatts(p) for p, _ in points])
    temps = np.array([t for _, t in points])
    if np.ptp(mw) == 0.0:
        raise FitFailureError("all powers equal: slope is unconstrained")
    design = np.column_stack([mw, np.ones_like(mw)])
    (slope, baseline), *_ = np.linalg.lstsq(design, temps, rcond=None)
    return MicrowaveHeatingModel(slope=float(slope), t_baseline=float(baseline))


def liquid_addition_transient(
    plant: ThermalPlant, added_volume: float, added_temp: float, sample_volume: float
) -> ThermalPlant:
    """Instantaneous volume-weighted mixing of added liquid into the sample.

    Only the node temperature changes; relaxation back to the loop setpoint is
    left to subsequent plant_step / PID updates.
    """
    if not (added_volume > 0):
        raise InvalidInputError(f"added_volume must be > 0, got {added_volume}")
    if not (sample_volume > 0):
        raise InvalidInputError(f"sample_volume must be > 0, got {sample_volume}")
    mixed = (sample_volume * plant.temperature + added_volume * added_temp) / (
        sample_volume + added_volume
    )
    return replace(plant, temperature=mixed)
