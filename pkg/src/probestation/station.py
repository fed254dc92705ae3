"""Simulation core: one authoritative machine, the sim clock, and telemetry.

All mutation is serialized through this object (single writer); reads hand out
the immutable state snapshot.  Advancing the clock is the only way time
passes, and it is also where periodic telemetry (force samples at the ADC
rate, state snapshots at 10 Hz) and scheduled fault triggers (e-stop, stage
stop) fire, so every module sees one consistent timeline.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import replace

import numpy as np

from . import telemetry
from .errors import LimitError
from .machine import MachineConfig, MachineState, apply_jog, check_limits, probe_tips
from .printer import SlipModel, VirtualPrinter
from .scene import Scene, standard_scene
from .stages import StageController, contact_force, penetrations, sample_force
from .vision import detect_frame

SNAPSHOT_RATE = 10.0   # Hz, machine-state telemetry


class Station:
    """A complete virtual probe station.

    Owns the machine state, the scene, the printer and stage devices, seeded
    RNG streams, and the telemetry bus.  `pace` (sim-seconds per wall-second
    factor, None for as-fast-as-possible) lets `serve` run in real time while
    tests and batch runs execute instantly.
    """

    def __init__(
        self,
        cfg: MachineConfig | None = None,
        scene: Scene | None = None,
        seed: int = 0,
        slip: SlipModel | None = None,
        pace: float | None = None,
    ):
        self.cfg = cfg if cfg is not None else MachineConfig()
        self.scene = scene if scene is not None else standard_scene()
        self.seed = seed
        self.pace = pace

        self._lock = threading.RLock()
        self._state = MachineState.initial(self.cfg)
        self.bus = telemetry.TelemetryBus()

        if slip is None:
            slip = SlipModel(rng_seed=seed)
        self.printer = VirtualPrinter(self, slip)
        self.stages = StageController(self)

        self.meas_rng = np.random.default_rng([seed, 2])
        self._reset_vision_rng()
        self.frame_index = 0

        # Session-start tare: the zero offset is captured before any contact.
        self.tared = True
        self.tips_equalized = False

        self._stage_stop = False
        self._estop_at: float | None = None
        self._stage_stop_at: float | None = None

        # Periodic telemetry grids tracked by integer index to avoid drift.
        self._force_k = 1
        self._snap_k = 1

    # -- state access ------------------------------------------------------

    @property
    def state(self) -> MachineState:
        with self._lock:
            return self._state

    # -- clock -------------------------------------------------------------

    def now(self) -> float:
        return self.state.sim_clock

    def advance_clock(self, dt: float) -> None:
        """Advance simulated time, firing grid telemetry and scheduled triggers.

        At a shared instant, grid telemetry emits before scheduled triggers
        fire: a stop recorded at a sample boundary then interleaves the same
        way on replay as it did live.
        """
        if dt < 0:
            raise ValueError("cannot advance the clock backwards")
        if dt == 0:
            return
        with self._lock:
            target = self._state.sim_clock + dt
            while True:
                next_force = self._force_k / self.cfg.force_sample_rate
                next_snap = self._snap_k / SNAPSHOT_RATE
                trigger = self._next_trigger(target)
                upcoming = min(next_force, next_snap, trigger if trigger is not None else math.inf)
                if upcoming > target:
                    break
                self._set_clock(upcoming)
                if next_force <= upcoming:
                    self._emit_force(next_force)
                    self._force_k += 1
                if next_snap <= upcoming:
                    self._emit_snapshot(next_snap)
                    self._snap_k += 1
                if trigger is not None and trigger <= upcoming:
                    self._fire_triggers(upcoming)
            self._set_clock(target)
        if self.pace is not None and self.pace > 0:
            time.sleep(dt / self.pace)

    def _set_clock(self, t: float) -> None:
        if t > self._state.sim_clock:
            self._state = replace(self._state, sim_clock=t)

    def _next_trigger(self, horizon: float) -> float | None:
        times = [t for t in (self._estop_at, self._stage_stop_at) if t is not None]
        if not times:
            return None
        t = min(times)
        return t if t <= horizon else None

    def _fire_triggers(self, t: float) -> None:
        if self._estop_at is not None and t >= self._estop_at:
            self._estop_at = None
            if not self._state.estop_latched:
                self._state = replace(self._state, estop_latched=True)
                self.bus.emit(telemetry.KIND_PROCEDURE, self._state.sim_clock,
                              {"event": "estop_latched"})
        if self._stage_stop_at is not None and t >= self._stage_stop_at:
            self._stage_stop_at = None
            self._stage_stop = True

    def wait_fresh_sample(self):
        """Advance to the next load-cell sample instant and return that reading."""
        with self._lock:
            rate = self.cfg.force_sample_rate
            target = self._force_k / rate
            self.advance_clock(target - self._state.sim_clock)
            return sample_force(self._state, self.cfg, self.scene.contact, target)

    # -- periodic telemetry --------------------------------------------------

    def _emit_force(self, t: float) -> None:
        reading = sample_force(self._state, self.cfg, self.scene.contact, t)
        self.bus.emit(telemetry.KIND_FORCE, t, {
            "newtons": reading.newtons,
            "raw_counts": reading.raw_counts,
        })

    def _emit_snapshot(self, t: float) -> None:
        self.bus.emit(telemetry.KIND_STATE, t, self.state_payload())

    def state_payload(self) -> dict:
        s = self._state
        tips = probe_tips(s, self.cfg)
        return {
            "carriage": list(s.carriage),
            "yz_probe": list(s.yz_probe),
            "z_probe": s.z_probe,
            "rotation_stage": s.rotation_stage,
            "estop_latched": s.estop_latched,
            "tip_z": list(tips["z"]),
            "tip_yz": list(tips["yz"]),
            "force_newtons": sample_force(s, self.cfg, self.scene.contact).newtons,
        }

    # -- e-stop and stage stop ------------------------------------------------

    def latch_estop(self) -> None:
        """Latch now: all further position changes are refused."""
        with self._lock:
            if not self._state.estop_latched:
                self._state = replace(self._state, estop_latched=True)
                self.bus.emit(telemetry.KIND_PROCEDURE, self._state.sim_clock,
                              {"event": "estop_latched"})

    def schedule_estop(self, at_t: float) -> None:
        """Latch when the clock reaches at_t (deterministic fault injection)."""
        with self._lock:
            if at_t <= self._state.sim_clock:
                self.latch_estop()
            else:
                self._estop_at = at_t if self._estop_at is None else min(self._estop_at, at_t)

    def request_stage_stop(self) -> None:
        with self._lock:
            self._stage_stop = True

    def schedule_stage_stop(self, at_t: float) -> None:
        with self._lock:
            if at_t <= self._state.sim_clock:
                self._stage_stop = True
            else:
                self._stage_stop_at = (
                    at_t if self._stage_stop_at is None else min(self._stage_stop_at, at_t)
                )

    def clear_stage_stop(self) -> None:
        with self._lock:
            self._stage_stop = False

    @property
    def stage_stop_requested(self) -> bool:
        with self._lock:
            return self._stage_stop

    # -- motion primitives ------------------------------------------------------

    def jog(self, axis: str, sign: int) -> None:
        """One jog click; raises on limit breach or latched e-stop."""
        with self._lock:
            jogged = apply_jog(self._state, axis, sign, self.cfg)
            self._state = replace(self._state, carriage=jogged.carriage)
            self.advance_clock(self.cfg.jog_step / self.cfg.carriage_speed)

    def apply_carriage_move(self, deltas, duration: float) -> str:
        """Move the carriage, honouring limits and a mid-move e-stop trigger.

        Returns the printer-style reply line.  A scheduled e-stop inside the
        move window truncates the travel at the trigger instant exactly.
        """
        dx, dy, dz = deltas
        with self._lock:
            if self._state.estop_latched:
                return "error:estop: emergency stop latched"
            start = self._state.sim_clock
            end = start + duration
            cut = self._estop_at if self._estop_at is not None and self._estop_at < end else None
            frac = 1.0 if cut is None else (cut - start) / duration if duration > 0 else 0.0
            cx, cy, cz = self._state.carriage
            moved = replace(
                self._state,
                carriage=(cx + dx * frac, cy + dy * frac, cz + dz * frac),
            )
            try:
                check_limits(moved, self.cfg)
            except LimitError as err:
                return f"error:limit: {err}"
            self._state = moved
            self.advance_clock((cut if cut is not None else end) - start)
            if cut is not None:
                # advance_clock latched the e-stop at the cut instant.
                return "error:estop: emergency stop latched"
            return "ok"

    def apply_stage_step(self, target: str, sign: int) -> bool:
        """Execute one motor step on a stage; False when the limit blocks it."""
        cfg = self.cfg
        pitch = cfg.stage_step_pitch * sign
        with self._lock:
            if self._state.estop_latched:
                return False
            s = self._state
            if target == "YZ_Y":
                candidate = replace(s, yz_probe=(s.yz_probe[0] + pitch, s.yz_probe[1]))
            elif target == "YZ_Z":
                candidate = replace(s, yz_probe=(s.yz_probe[0], s.yz_probe[1] + pitch))
            elif target == "Z_Z":
                candidate = replace(s, z_probe=s.z_probe + pitch)
            elif target == "ALL_Z":
                candidate = replace(
                    s,
                    yz_probe=(s.yz_probe[0], s.yz_probe[1] + pitch),
                    z_probe=s.z_probe + pitch,
                )
            elif target == "ROTATION":
                step_deg = 360.0 / cfg.rotation_steps_per_rev * sign
                candidate = replace(s, rotation_stage=s.rotation_stage + step_deg)
            else:
                raise ValueError(f"unknown stage target {target!r}")
            try:
                check_limits(candidate, cfg)
            except LimitError:
                # The limit switch halts instantly; a blocked step costs no time.
                return False
            self._state = candidate
            self.advance_clock(1.0 / cfg.stage_step_rate)
            return True

    # -- vision ------------------------------------------------------------------

    def _reset_vision_rng(self) -> None:
        self.vision_rng = np.random.default_rng([self.scene.detector.rng_seed, 1])

    def detect(self) -> list:
        """Take one detector frame, charging the model latency to the clock."""
        self.advance_clock(self.scene.detector.detect_latency)
        with self._lock:
            dets = detect_frame(
                self.scene.detector, self._state, self.cfg,
                rng=self.vision_rng, frame_index=self.frame_index,
            )
            self.frame_index += 1
            t = self._state.sim_clock
        self.bus.emit(telemetry.KIND_DETECTIONS, t, {
            "frame_index": self.frame_index - 1,
            "detections": [d.to_dict() for d in dets],
        })
        return dets

    # -- scene & sensors ------------------------------------------------------------

    def load_scene(self, scene: Scene, reseed_vision: bool = True) -> None:
        with self._lock:
            self.scene = scene
            if reseed_vision:
                self._reset_vision_rng()

    def apply_scene_overrides(self, overrides: dict) -> None:
        with self._lock:
            old_seed = self.scene.detector.rng_seed
            self.scene = self.scene.with_overrides(overrides)
            if self.scene.detector.rng_seed != old_seed:
                self._reset_vision_rng()

    def tare(self) -> None:
        """Capture the load-cell zero offset (required before lowering)."""
        with self._lock:
            self.tared = True
        self.bus.emit(telemetry.KIND_PROCEDURE, self.now(), {"event": "tared"})

    def current_force(self):
        with self._lock:
            return sample_force(self._state, self.cfg, self.scene.contact)

    def current_penetrations(self) -> dict[str, float]:
        with self._lock:
            return penetrations(self._state, self.cfg, self.scene.contact)

    def exact_force(self) -> float:
        with self._lock:
            return contact_force(self._state, self.cfg, self.scene.contact)
