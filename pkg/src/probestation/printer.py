"""Virtual 3D printer: executes the G-code dialect against the machine state.

Models the one physical defect that matters to closed-loop alignment: belt
slip on the X and Y axes.  A commanded delta d travels d*(1-s); Z runs on
screw rods and is exact.  The printer is a sequential device with exactly one
reply line per submitted command ("ok" on success).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from . import gcode
from .errors import ValidationError
from .machine import MachineConfig

OK = "ok"


@dataclass(frozen=True)
class SlipModel:
    """Belt under-travel on the X/Y axes.

    slip_x / slip_y may reach 1.0 (a fully slipping belt) for fault injection;
    the stochastic draw range from MachineConfig stays strictly below 1.
    """

    slip_x: float = 0.0
    slip_y: float = 0.0
    mode: str = "deterministic"     # or "stochastic"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("deterministic", "stochastic"):
            raise ValidationError(f"unknown slip mode {self.mode!r}")
        for s in (self.slip_x, self.slip_y):
            if not (0.0 <= s <= 1.0):
                raise ValidationError("slip fractions must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "slip_x": self.slip_x,
            "slip_y": self.slip_y,
            "mode": self.mode,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SlipModel":
        return cls(**data)


class VirtualPrinter:
    """Marlin-flavoured executor bound to a Station.

    Keeps the device-local modal state (positioning mode, last feed rate) and
    routes every motion through the station so the simulation clock, limits,
    and the e-stop latch stay authoritative.
    """

    def __init__(self, station, slip: SlipModel | None = None):
        self._station = station
        self.slip = slip if slip is not None else SlipModel()
        lo, hi = station.cfg.slip_fraction_range
        self._rng = random.Random(self.slip.rng_seed)
        self._slip_range = (lo, hi)
        self.absolute_mode = True
        self.feed = station.cfg.default_feed   # mm/min, modal

    # -- wire protocol ---------------------------------------------------

    def submit(self, line: str) -> str:
        """Execute one command line, returning exactly one reply line."""
        try:
            cmd = gcode.parse_line(line)
        except gcode.GCodeError as err:
            return f"error:{err.code}:{err.offset}: {err}"
        return self.execute(cmd)

    # -- execution -------------------------------------------------------

    def execute(self, cmd: gcode.GCodeCommand) -> str:
        station = self._station
        cfg: MachineConfig = station.cfg

        if cmd.verb is gcode.Verb.EMERGENCY_STOP:
            station.latch_estop()
            return OK

        if station.state.estop_latched:
            return "error:estop: emergency stop latched"

        if cmd.verb is gcode.Verb.SET_ABSOLUTE:
            self.absolute_mode = True
            return OK
        if cmd.verb is gcode.Verb.SET_RELATIVE:
            self.absolute_mode = False
            return OK
        if cmd.verb is gcode.Verb.REPORT_POSITION:
            x, y, z = station.state.carriage
            return f"X:{x:.4f} Y:{y:.4f} Z:{z:.4f}"
        if cmd.verb is gcode.Verb.HOME:
            return self._home(cmd)
        return self._move(cmd)

    def _home(self, cmd: gcode.GCodeCommand) -> str:
        station = self._station
        cfg = station.cfg
        cx, cy, cz = station.state.carriage
        hx, hy, hz = cfg.home_position
        axes = cmd.home_axes or frozenset({"x", "y", "z"})
        dx = hx - cx if "x" in axes else 0.0
        dy = hy - cy if "y" in axes else 0.0
        dz = hz - cz if "z" in axes else 0.0
        # Homing drives to endstops: exact, no belt slip.
        duration = math.sqrt(dx * dx + dy * dy + dz * dz) / cfg.carriage_speed
        return station.apply_carriage_move((dx, dy, dz), duration)

    def _sample_slip(self, axis: str) -> float:
        if self.slip.mode == "stochastic":
            return self._rng.uniform(*self._slip_range)
        return self.slip.slip_x if axis == "x" else self.slip.slip_y

    def _move(self, cmd: gcode.GCodeCommand) -> str:
        station = self._station
        cfg = station.cfg
        cx, cy, cz = station.state.carriage

        if cmd.f is not None:
            self.feed = cmd.f
        if self.absolute_mode:
            dx = (cmd.x - cx) if cmd.x is not None else 0.0
            dy = (cmd.y - cy) if cmd.y is not None else 0.0
            dz = (cmd.z - cz) if cmd.z is not None else 0.0
        else:
            dx = cmd.x or 0.0
            dy = cmd.y or 0.0
            dz = cmd.z or 0.0

        # Refuse on the commanded target, before slip shortens the travel.
        lim = cfg.axis_limits
        for key, value in (("x", cx + dx), ("y", cy + dy), ("z", cz + dz)):
            mn, mx = lim[key]
            if not (mn <= value <= mx):
                return f"error:limit: {key}={value:.4f} outside [{mn}, {mx}]"

        actual_dx = dx * (1.0 - self._sample_slip("x")) if dx else 0.0
        actual_dy = dy * (1.0 - self._sample_slip("y")) if dy else 0.0

        # Motor time follows the commanded path, not the slipped one.
        path = math.sqrt(dx * dx + dy * dy + dz * dz)
        if cmd.verb is gcode.Verb.RAPID_MOVE:
            speed = cfg.carriage_speed
        else:
            speed = self.feed / 60.0
        duration = path / speed if path else 0.0
        return station.apply_carriage_move((actual_dx, actual_dy, dz), duration)
