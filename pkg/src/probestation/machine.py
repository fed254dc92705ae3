"""Machine geometry: configuration, kinematic state, and camera/machine frame conversions.

The station is a belt-driven XY(+screw Z) carriage carrying a downward-looking
camera and two probe stages.  One probe rides a single Z stage ("Z probe"), the
other rides Y and Z stages ("YZ probe").  The device under test sits on a
force-sensing platform with a motorised rotation stage.  All positions are in
millimetres, angles in degrees, times in simulated seconds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import EStopError, LimitError, ValidationError

JOG_AXES = ("x", "y", "z")

# Axis-limit keys: carriage x/y/z, the YZ probe's motorised Y offset, both
# probes' Z offsets (shared range), and the rotation stage angle.
LIMIT_KEYS = ("x", "y", "z", "yz_y", "probe_z", "rotation")


def _default_axis_limits() -> dict[str, tuple[float, float]]:
    return {
        "x": (0.0, 220.0),
        "y": (0.0, 220.0),
        "z": (0.0, 100.0),
        "yz_y": (0.2, 25.0),
        "probe_z": (-8.0, 0.0),
        "rotation": (-720.0, 720.0),
    }


class WorldPoint(NamedTuple):
    """A point in the bed (machine XY) frame, millimetres."""

    x: float
    y: float


class PixelPoint(NamedTuple):
    """A point or delta in the camera frame, pixels (u right, v down)."""

    u: float
    v: float


@dataclass(frozen=True)
class MachineConfig:
    """Static machine parameters.

    pixel_scale is the experimentally calibrated mm-per-pixel factor that maps
    camera-frame distances to carriage moves; it is a single isotropic scalar
    because camera height (and therefore magnification) never changes.
    """

    pixel_scale: float = 0.01            # mm per pixel
    y_mirrored: bool = True              # camera view is vertically mirrored vs machine Y
    jog_step: float = 0.1                # mm per jog click
    carriage_speed: float = 10.0         # mm/s, rapid moves and jogs
    default_feed: float = 600.0          # mm/min when a move carries no F word
    stage_step_pitch: float = 1.0 / 4096.0   # mm of stage travel per motor step
    stage_step_rate: float = 600.0       # motor steps per second
    rotation_steps_per_rev: int = 2048   # geared stepper, full revolution
    force_sample_rate: float = 80.0      # Hz, load-cell sampling cadence
    force_gain: float = 5.0 / 2 ** 23    # N per ADC count (+/-5 N over signed 24-bit)
    slip_fraction_range: tuple[float, float] = (0.0, 0.25)
    axis_limits: dict[str, tuple[float, float]] = field(default_factory=_default_axis_limits)
    z_probe_mount_y: float = -1.0        # fixed Y offset of the Z probe adaptor, mm
    probe_clearance: float = 0.625       # raise target above the chip surface, mm
    home_position: tuple[float, float, float] = (0.0, 0.0, 10.0)
    start_carriage: tuple[float, float, float] = (109.2, 110.6, 10.0)
    start_yz_probe: tuple[float, float] = (1.0, -4.375)
    start_z_probe: float = -4.375
    start_rotation: float = 0.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not (math.isfinite(self.pixel_scale) and self.pixel_scale > 0):
            raise ValidationError("pixel_scale must be > 0")
        if not (math.isfinite(self.jog_step) and self.jog_step > 0):
            raise ValidationError("jog_step must be > 0")
        if self.carriage_speed <= 0 or self.default_feed <= 0:
            raise ValidationError("speeds must be > 0")
        if self.stage_step_pitch <= 0 or self.stage_step_rate <= 0:
            raise ValidationError("stage step pitch/rate must be > 0")
        if self.rotation_steps_per_rev < 1:
            raise ValidationError("rotation_steps_per_rev must be >= 1")
        if self.force_sample_rate <= 0 or self.force_gain <= 0:
            raise ValidationError("force sampling parameters must be > 0")
        lo, hi = self.slip_fraction_range
        if not (0.0 <= lo <= hi < 1.0):
            raise ValidationError("slip_fraction_range must lie within [0, 1)")
        for key in LIMIT_KEYS:
            if key not in self.axis_limits:
                raise ValidationError(f"axis_limits missing {key!r}")
            mn, mx = self.axis_limits[key]
            if not (math.isfinite(mn) and math.isfinite(mx) and mn < mx):
                raise ValidationError(f"axis_limits[{key!r}] must have min < max")
        if self.probe_clearance <= 0:
            raise ValidationError("probe_clearance must be > 0")

    def to_dict(self) -> dict:
        return {
            "pixel_scale": self.pixel_scale,
            "y_mirrored": self.y_mirrored,
            "jog_step": self.jog_step,
            "carriage_speed": self.carriage_speed,
            "default_feed": self.default_feed,
            "stage_step_pitch": self.stage_step_pitch,
            "stage_step_rate": self.stage_step_rate,
            "rotation_steps_per_rev": self.rotation_steps_per_rev,
            "force_sample_rate": self.force_sample_rate,
            "force_gain": self.force_gain,
            "slip_fraction_range": list(self.slip_fraction_range),
            "axis_limits": {k: list(v) for k, v in self.axis_limits.items()},
            "z_probe_mount_y": self.z_probe_mount_y,
            "probe_clearance": self.probe_clearance,
            "home_position": list(self.home_position),
            "start_carriage": list(self.start_carriage),
            "start_yz_probe": list(self.start_yz_probe),
            "start_z_probe": self.start_z_probe,
            "start_rotation": self.start_rotation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MachineConfig":
        kwargs = dict(data)
        if "slip_fraction_range" in kwargs:
            kwargs["slip_fraction_range"] = tuple(kwargs["slip_fraction_range"])
        if "axis_limits" in kwargs:
            kwargs["axis_limits"] = {k: tuple(v) for k, v in kwargs["axis_limits"].items()}
        for key in ("home_position", "start_carriage", "start_yz_probe"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown machine config keys: {sorted(unknown)}")
        return cls(**kwargs)


def load_config(path: str | Path) -> MachineConfig:
    """Load a MachineConfig from a JSON file; missing keys take defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        return MachineConfig.from_dict(json.load(fh))


def save_config(cfg: MachineConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class MachineState:
    """Authoritative kinematic snapshot.  Immutable; mutators return new states.

    carriage y holds the Y coordinate of the camera/probe head relative to the
    bed; bed_y is retained for completeness but stays constant because only the
    relative coordinate matters to alignment and contact.
    """

    carriage: tuple[float, float, float]
    bed_y: float
    yz_probe: tuple[float, float]    # (y_offset, z_offset) relative to carriage
    z_probe: float                   # z_offset relative to carriage
    rotation_stage: float            # degrees
    sim_clock: float
    estop_latched: bool

    @classmethod
    def initial(cls, cfg: MachineConfig) -> "MachineState":
        state = cls(
            carriage=tuple(cfg.start_carriage),
            bed_y=0.0,
            yz_probe=tuple(cfg.start_yz_probe),
            z_probe=cfg.start_z_probe,
            rotation_stage=cfg.start_rotation,
            sim_clock=0.0,
            estop_latched=False,
        )
        check_limits(state, cfg)
        return state

    def positions(self) -> tuple:
        """Every position field, for bit-identity comparisons."""
        return (self.carriage, self.bed_y, self.yz_probe, self.z_probe, self.rotation_stage)


def check_limits(state: MachineState, cfg: MachineConfig) -> None:
    lim = cfg.axis_limits
    cx, cy, cz = state.carriage
    checks = (
        ("x", cx), ("y", cy), ("z", cz),
        ("yz_y", state.yz_probe[0]),
        ("probe_z", state.yz_probe[1]),
        ("probe_z", state.z_probe),
        ("rotation", state.rotation_stage),
    )
    for key, value in checks:
        mn, mx = lim[key]
        if not (mn <= value <= mx):
            raise LimitError(f"{key}={value:.6f} outside [{mn}, {mx}]")


def probe_tips(state: MachineState, cfg: MachineConfig) -> dict[str, tuple[float, float, float]]:
    """World-frame (x, y, z) of both probe tips.

    Both probes share the carriage X; the Z probe sits at a fixed adaptor Y
    offset while the YZ probe's Y offset is motorised.
    """
    cx, cy, cz = state.carriage
    return {
        "z": (cx, cy + cfg.z_probe_mount_y, cz + state.z_probe),
        "yz": (cx, cy + state.yz_probe[0], cz + state.yz_probe[1]),
    }


def _require_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValidationError(f"non-finite value {v!r}")


def pixel_delta_to_machine_delta(delta: PixelPoint, cfg: MachineConfig) -> tuple[float, float]:
    """Convert a camera-frame displacement to the carriage move that closes it.

    The Y sign flips when the camera image is vertically mirrored relative to
    the machine's +Y direction.
    """
    _require_finite(delta.u, delta.v)
    dx = delta.u * cfg.pixel_scale
    dy = (-delta.v if cfg.y_mirrored else delta.v) * cfg.pixel_scale
    return dx, dy


def machine_delta_to_pixel_delta(dx: float, dy: float, cfg: MachineConfig) -> PixelPoint:
    """Inverse of pixel_delta_to_machine_delta."""
    _require_finite(dx, dy)
    du = dx / cfg.pixel_scale
    dv = (-dy if cfg.y_mirrored else dy) / cfg.pixel_scale
    return PixelPoint(du, dv)


def apply_jog(state: MachineState, axis: str, sign: int, cfg: MachineConfig) -> MachineState:
    """One jog click: exactly +/-jog_step on a carriage axis.

    Refused (state unchanged) on a latched e-stop or when the step would leave
    the axis limits.
    """
    if axis not in JOG_AXES:
        raise ValidationError(f"unknown jog axis {axis!r}")
    if sign not in (1, -1):
        raise ValidationError("jog sign must be +1 or -1")
    if state.estop_latched:
        raise EStopError("jog refused: emergency stop latched")
    cx, cy, cz = state.carriage
    delta = sign * cfg.jog_step
    target = {
        "x": (cx + delta, cy, cz),
        "y": (cx, cy + delta, cz),
        "z": (cx, cy, cz + delta),
    }[axis]
    moved = replace(
        state,
        carriage=target,
        sim_clock=state.sim_clock + cfg.jog_step / cfg.carriage_speed,
    )
    check_limits(moved, cfg)
    return moved


def move_carriage(
    state: MachineState,
    cfg: MachineConfig,
    deltas: Iterable[float],
    duration: float,
) -> MachineState:
    """Apply an (dx, dy, dz) carriage displacement taking `duration` seconds.

    Limits are checked on the end point; a breach raises with nothing moved.
    """
    dx, dy, dz = deltas
    _require_finite(dx, dy, dz, duration)
    if state.estop_latched:
        raise EStopError("move refused: emergency stop latched")
    cx, cy, cz = state.carriage
    moved = replace(
        state,
        carriage=(cx + dx, cy + dy, cz + dz),
        sim_clock=state.sim_clock + duration,
    )
    check_limits(moved, cfg)
    return moved
