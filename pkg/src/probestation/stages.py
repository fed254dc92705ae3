"""Stepper-driven probe stages and the load-cell force model.

Wire grammar (one reply line per command):

    MOVE <target> <steps>     target in {YZ_Y, YZ_Z, Z_Z, ROTATION, ALL_Z}
    STOP
    STATUS

Motion executes one motor step at a time so a STOP or e-stop can land between
steps; at most one further step runs after either.  Screw-driven stages have
no slip: a +n/-n pair restores the offset bit-exactly (the default pitch is a
dyadic rational, so step arithmetic is exact in binary floating point).

The force sensor is a strain-gauge load cell behind a 24-bit HX711-class ADC.
Contact is linear-elastic per probe: F = stiffness * penetration, summed over
probes, then quantized to ADC counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import StationError, ValidationError
from .machine import MachineConfig, MachineState, probe_tips

TARGETS = ("YZ_Y", "YZ_Z", "Z_Z", "ROTATION", "ALL_Z")
MAX_STEPS = 10_000_000


class StageVerb(Enum):
    MOVE = "MOVE"
    STOP = "STOP"
    STATUS = "STATUS"


@dataclass(frozen=True)
class StageCommand:
    verb: StageVerb
    target: str | None = None
    steps: int = 0

    def __post_init__(self) -> None:
        if self.verb is StageVerb.MOVE:
            if self.target not in TARGETS:
                raise UnknownTarget(f"unknown target {self.target!r}")
            if self.steps == 0:
                raise ZeroSteps("MOVE requires nonzero steps")
            if abs(self.steps) > MAX_STEPS:
                raise StepOverflow(f"|steps| > {MAX_STEPS}")
        elif self.target is not None or self.steps:
            raise ValidationError(f"{self.verb.value} takes no arguments")


class StageParseError(StationError):
    code = "stage"


class UnknownTarget(StageParseError):
    code = "unknown-target"


class ZeroSteps(StageParseError):
    code = "zero-steps"


class StepOverflow(StageParseError):
    code = "step-overflow"


class BadStepCount(StageParseError):
    code = "bad-steps"


class MalformedCommand(StageParseError):
    code = "malformed"


def parse_stage_command(line: str) -> StageCommand:
    """Parse one stage-controller line into a StageCommand."""
    tokens = line.split()
    if not tokens:
        raise MalformedCommand("empty command")
    verb = tokens[0].upper()
    if verb == "STOP":
        if len(tokens) != 1:
            raise MalformedCommand("STOP takes no arguments")
        return StageCommand(StageVerb.STOP)
    if verb == "STATUS":
        if len(tokens) != 1:
            raise MalformedCommand("STATUS takes no arguments")
        return StageCommand(StageVerb.STATUS)
    if verb == "MOVE":
        if len(tokens) != 3:
            raise MalformedCommand("usage: MOVE <target> <steps>")
        target = tokens[1].upper()
        if target not in TARGETS:
            raise UnknownTarget(f"unknown target {tokens[1]!r}")
        try:
            steps = int(tokens[2], 10)
        except ValueError:
            raise BadStepCount(f"bad step count {tokens[2]!r}") from None
        if steps == 0:
            raise ZeroSteps("MOVE requires nonzero steps")
        if abs(steps) > MAX_STEPS:
            raise StepOverflow(f"|steps| > {MAX_STEPS}")
        return StageCommand(StageVerb.MOVE, target=target, steps=steps)
    raise MalformedCommand(f"unknown command {tokens[0]!r}")


def serialize_stage_command(cmd: StageCommand) -> str:
    if cmd.verb is StageVerb.MOVE:
        return f"MOVE {cmd.target} {cmd.steps}"
    return cmd.verb.value


# -- contact & force ------------------------------------------------------


@dataclass(frozen=True)
class ContactModel:
    """Linear-elastic probe/surface contact.

    surface_z is the chip top surface in the machine frame.  Force from each
    probe is stiffness * max(0, surface_z - tip_z): zero above the surface and
    strictly increasing with penetration.
    """

    surface_z: float = 5.0
    stiffness_z: float = 0.5      # N/mm, Z probe
    stiffness_yz: float = 0.5     # N/mm, YZ probe

    def __post_init__(self) -> None:
        if self.stiffness_z <= 0 or self.stiffness_yz <= 0:
            raise ValidationError("stiffness must be > 0")
        if not math.isfinite(self.surface_z):
            raise ValidationError("surface_z must be finite")

    def to_dict(self) -> dict:
        return {
            "surface_z": self.surface_z,
            "stiffness_z": self.stiffness_z,
            "stiffness_yz": self.stiffness_yz,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContactModel":
        return cls(**data)


@dataclass(frozen=True)
class ForceReading:
    """One quantized load-cell sample; newtons == raw_counts * gain exactly."""

    newtons: float
    raw_counts: int
    timestamp: float


def penetrations(state: MachineState, cfg: MachineConfig, model: ContactModel) -> dict[str, float]:
    """Per-probe penetration depth below the surface, mm (0 when above)."""
    tips = probe_tips(state, cfg)
    return {
        "z": max(0.0, model.surface_z - tips["z"][2]),
        "yz": max(0.0, model.surface_z - tips["yz"][2]),
    }


def contact_force(state: MachineState, cfg: MachineConfig, model: ContactModel) -> float:
    """Exact (unquantized) total normal force, N."""
    pen = penetrations(state, cfg, model)
    return model.stiffness_z * pen["z"] + model.stiffness_yz * pen["yz"]


def sample_force(
    state: MachineState, cfg: MachineConfig, model: ContactModel, timestamp: float | None = None
) -> ForceReading:
    """Quantize the current contact force to ADC counts.

    Quantization error is at most half a count; newtons is reconstructed from
    the integer counts so the reading is exactly representable.
    """
    exact = contact_force(state, cfg, model)
    raw = round(exact / cfg.force_gain)
    t = state.sim_clock if timestamp is None else timestamp
    return ForceReading(newtons=raw * cfg.force_gain, raw_counts=raw, timestamp=t)


# -- stage motion ----------------------------------------------------------


class StageController:
    """Sequential command executor for all motorised stages.

    MOVE runs step-by-step through the station so the clock advances
    1/step_rate per step and a STOP or e-stop halts within one step.  Limit
    breaches truncate at the boundary and are reported in the reply.
    """

    def __init__(self, station):
        self._station = station

    def submit(self, line: str) -> str:
        try:
            cmd = parse_stage_command(line)
        except StageParseError as err:
            return f"ERR {err.code} {err}"
        return self.execute(cmd)

    def execute(self, cmd: StageCommand) -> str:
        station = self._station
        if cmd.verb is StageVerb.STOP:
            station.request_stage_stop()
            return "OK"
        if cmd.verb is StageVerb.STATUS:
            s = station.state
            return (
                f"OK YZ_Y={s.yz_probe[0]:.6f} YZ_Z={s.yz_probe[1]:.6f} "
                f"Z_Z={s.z_probe:.6f} ROT={s.rotation_stage:.4f}"
            )
        if station.state.estop_latched:
            return "ERR estop emergency stop latched"
        executed, truncated, estopped = self.run_move(cmd.target, cmd.steps)
        if estopped:
            return f"ERR estop halted after {executed}"
        if truncated:
            return f"OK {executed} LIMIT"
        return f"OK {executed}"

    def run_move(self, target: str, steps: int) -> tuple[int, bool, bool]:
        """Execute a MOVE one motor step at a time.

        Returns (executed_steps, truncated_at_limit, halted_by_estop).
        """
        station = self._station
        station.clear_stage_stop()
        sign = 1 if steps > 0 else -1
        executed = 0
        for _ in range(abs(steps)):
            if station.state.estop_latched:
                return executed, False, True
            if station.stage_stop_requested:
                break
            if not station.apply_stage_step(target, sign):
                return executed, True, False
            executed += 1
            if station.state.estop_latched:
                # Latched while this step's time elapsed: that step was the
                # one permitted overrun; nothing further moves.
                return executed, False, True
        return executed, False, False
