"""Junction measurement: compliance-limited IV sweep, resistance fit, critical current.

A bipolar current sweep is sourced through both probes (two-point, so the
fitted resistance includes twice the per-probe contact resistance).  Voltage
and current are both hard-capped to protect the junction; samples that hit the
voltage cap are flagged and excluded from the fit.  The normal-state
resistance is the slope of an ordinary least-squares line through the
unclamped points, and the critical current follows from the
Ambegaokar-Baratoff relation I_c * R = pi * gap / (2e).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StationError, ValidationError

ELEMENTARY_CHARGE = 1.602176634e-19   # C, exact
HBAR = 1.054571817e-34                # J*s

# Aluminium-scale superconducting gap; a configuration value, not a measured one.
DEFAULT_GAP_JOULES = 2.88e-23

OPEN_CIRCUIT_RESISTANCE = 1e12        # ohm, stands in for "effectively infinite"


class InsufficientData(StationError):
    code = "insufficient-data"


@dataclass(frozen=True)
class DutModel:
    """The simulated junction seen through two tungsten probes.

    When both probes make proper contact the measured network is
    true_resistance + 2 * contact_resistance; with a lifted probe the circuit
    is open and every sourced point rails at the voltage cap.
    """

    true_resistance: float = 10500.0      # ohm
    contact_resistance: float = 0.25      # ohm per probe
    voltage_noise_sigma: float = 0.0      # V

    def __post_init__(self) -> None:
        if self.true_resistance <= 0:
            raise ValidationError("true_resistance must be > 0")
        if self.contact_resistance < 0:
            raise ValidationError("contact_resistance must be >= 0")
        if self.voltage_noise_sigma < 0:
            raise ValidationError("voltage_noise_sigma must be >= 0")

    @property
    def network_resistance(self) -> float:
        return self.true_resistance + 2.0 * self.contact_resistance

    def to_dict(self) -> dict:
        return {
            "true_resistance": self.true_resistance,
            "contact_resistance": self.contact_resistance,
            "voltage_noise_sigma": self.voltage_noise_sigma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DutModel":
        return cls(**data)


def default_current_points(n: int = 21, i_span: float = 5e-6) -> tuple[float, ...]:
    """Bipolar linear grid, -i_span .. +i_span amps."""
    return tuple(float(i) for i in np.linspace(-i_span, i_span, n))


@dataclass(frozen=True)
class IVSweepConfig:
    """Sourced current points plus the protection limits.

    Defaults: 21 points over +/-5 uA, 10 mV / 10 uA compliance, and a dwell
    chosen so a full sweep advances the clock by 20 s.
    """

    current_points: tuple[float, ...] = field(default_factory=default_current_points)
    v_max: float = 0.010      # V
    i_max: float = 10e-6      # A
    dwell: float = 20.0 / 21.0  # s per point

    def __post_init__(self) -> None:
        if len(self.current_points) < 2:
            raise ValidationError("need at least 2 current points")
        if self.v_max <= 0 or self.i_max <= 0:
            raise ValidationError("compliance limits must be > 0")
        if self.dwell <= 0:
            raise ValidationError("dwell must be > 0")
        for i in self.current_points:
            if not math.isfinite(i) or abs(i) > self.i_max:
                raise ValidationError(f"sourced current {i} exceeds i_max {self.i_max}")

    def to_dict(self) -> dict:
        return {
            "current_points": list(self.current_points),
            "v_max": self.v_max,
            "i_max": self.i_max,
            "dwell": self.dwell,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IVSweepConfig":
        kwargs = dict(data)
        if "current_points" in kwargs:
            kwargs["current_points"] = tuple(kwargs["current_points"])
        return cls(**kwargs)


@dataclass(frozen=True)
class IVSample:
    current: float
    voltage: float
    clamped: bool

    def to_dict(self) -> dict:
        return {"current": self.current, "voltage": self.voltage, "clamped": self.clamped}


@dataclass(frozen=True)
class MeasurementResult:
    resistance: float          # ohm, fitted slope
    intercept: float           # V
    rms_residual: float        # V
    critical_current: float    # A
    josephson_energy: float    # J
    samples: tuple[IVSample, ...]
    elapsed: float             # s

    def to_dict(self) -> dict:
        return {
            "resistance": self.resistance,
            "intercept": self.intercept,
            "rms_residual": self.rms_residual,
            "critical_current": self.critical_current,
            "josephson_energy": self.josephson_energy,
            "samples": [s.to_dict() for s in self.samples],
            "elapsed": self.elapsed,
        }


def run_iv_sweep(
    cfg: IVSweepConfig,
    dut: DutModel,
    closed: bool = True,
    rng: np.random.Generator | None = None,
    on_sample=None,
) -> list[IVSample]:
    """Source each current point and record the measured voltage.

    A point whose voltage would exceed v_max is clamped: the source rails at
    +/-v_max, the delivered current collapses to v_max/R, and the sample is
    flagged.  An open circuit (a lifted probe) therefore rails every point.
    on_sample(sample, dwell) is invoked per point so callers can advance the
    clock and stream telemetry.
    """
    r_network = dut.network_resistance if closed else OPEN_CIRCUIT_RESISTANCE
    samples: list[IVSample] = []
    for i_src in cfg.current_points:
        noise = float(rng.normal(0.0, dut.voltage_noise_sigma)) if rng is not None else 0.0
        v_pred = i_src * r_network + noise
        if abs(v_pred) > cfg.v_max:
            v = math.copysign(cfg.v_max, v_pred if v_pred != 0 else i_src)
            sample = IVSample(current=v / r_network, voltage=v, clamped=True)
        else:
            sample = IVSample(current=i_src, voltage=v_pred, clamped=False)
        samples.append(sample)
        if on_sample is not None:
            on_sample(sample, cfg.dwell)
    return samples


def fit_resistance(samples: list[IVSample]) -> tuple[float, float, float]:
    """Ordinary least-squares V-vs-I over the unclamped samples.

    Returns (resistance, intercept, rms_residual).  Requires at least two
    unclamped points with distinct currents.
    """
    usable = [s for s in samples if not s.clamped]
    if len(usable) < 2:
        raise InsufficientData(f"only {len(usable)} unclamped samples")
    currents = [s.current for s in usable]
    volts = [s.voltage for s in usable]
    mi = math.fsum(currents) / len(currents)
    mv = math.fsum(volts) / len(volts)
    sxx = math.fsum((i - mi) ** 2 for i in currents)
    if sxx == 0.0:
        raise InsufficientData("zero current variance")
    sxy = math.fsum((i - mi) * (v - mv) for i, v in zip(currents, volts))
    slope = sxy / sxx
    intercept = mv - slope * mi
    rms = math.sqrt(
        math.fsum((v - slope * i - intercept) ** 2 for i, v in zip(currents, volts))
        / len(usable)
    )
    return slope, intercept, rms


def critical_current(resistance: float, gap_joules: float = DEFAULT_GAP_JOULES) -> tuple[float, float]:
    """Ambegaokar-Baratoff critical current and the Josephson energy.

    I_c = pi * gap / (2 e R); E_J = hbar * I_c / (2 e).  The E_J relation is
    the standard one for a Josephson element, included for convenience.
    """
    if not (resistance > 0 and math.isfinite(resistance)):
        raise ValidationError("resistance must be > 0")
    if not (gap_joules > 0 and math.isfinite(gap_joules)):
        raise ValidationError("gap must be > 0")
    i_c = math.pi * gap_joules / (2.0 * ELEMENTARY_CHARGE) / resistance
    e_j = HBAR * i_c / (2.0 * ELEMENTARY_CHARGE)
    return i_c, e_j


def build_result(
    samples: list[IVSample], elapsed: float, gap_joules: float = DEFAULT_GAP_JOULES
) -> MeasurementResult:
    resistance, intercept, rms = fit_resistance(samples)
    if resistance <= 0:
        raise InsufficientData(f"non-physical fitted resistance {resistance}")
    i_c, e_j = critical_current(resistance, gap_joules)
    return MeasurementResult(
        resistance=resistance,
        intercept=intercept,
        rms_residual=rms,
        critical_current=i_c,
        josephson_energy=e_j,
        samples=tuple(samples),
        elapsed=elapsed,
    )


def timing_savings(
    auto: tuple[float, float], manual: tuple[float, float]
) -> tuple[int, int]:
    """Percent time saved by the automated flow, as an integer interval.

    Worst case pairs the slowest auto run with the fastest manual one and vice
    versa; both ends round half-up to whole percent.
    """
    a_lo, a_hi = auto
    m_lo, m_hi = manual
    for lo, hi, name in ((a_lo, a_hi, "auto"), (m_lo, m_hi, "manual")):
        if not (0 < lo <= hi) or not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValidationError(f"{name} interval must satisfy 0 < min <= max")
    low = 100.0 * (m_lo - a_hi) / m_lo
    high = 100.0 * (m_hi - a_lo) / m_hi
    return int(math.floor(low + 0.5)), int(math.floor(high + 0.5))
