"""Command dispatch, procedure lifecycle, and session recording for one station.

The service validates wire commands, appends them to the session log before
anything executes (write-ahead), and routes them to the owning module.
Procedures are mutually exclusive and normally run on a single worker thread;
`synchronous=True` runs them inline, which replay and batch execution use so
sessions re-run deterministically.  StopAll is accepted from any context and
preempts whatever is running.
"""

from __future__ import annotations

import threading
from pathlib import Path

from . import control, session
from .control import (
    AlignmentParams,
    BatchPlan,
    LoweringParams,
    LoweringProcedure,
)
from .errors import BusyError, StationError, ValidationError
from .machine import MachineConfig
from .measurement import DEFAULT_GAP_JOULES, IVSweepConfig
from .printer import SlipModel
from .scene import Scene
from .station import Station

ROTATE_CLICK_STEPS = 16   # rotation stage steps per +c/-c click

# The full command surface: every operator-panel control plus batch/automation.
COMMANDS = (
    "jog",
    "gcode",
    "stage_move",
    "rotate",
    "stop_all",
    "tare",
    "auto_align",
    "auto_lower_sequential",
    "auto_lower_joint",
    "run_sweep",
    "run_batch",
    "get_state",
    "advance",        # internal: idle clock movement, logged so replays reproduce it
)

_PROCEDURES = ("auto_align", "auto_lower_sequential", "auto_lower_joint",
               "run_sweep", "run_batch")


def build_station_from_meta(meta: dict, pace: float | None = None) -> Station:
    """Reconstruct a station exactly as a logged session started."""
    cfg = MachineConfig.from_dict(meta.get("config", {}))
    scn = Scene.from_dict(meta.get("scene", {}))
    slip = SlipModel.from_dict(meta.get("slip", {}))
    return Station(cfg=cfg, scene=scn, seed=meta.get("seed", 0), slip=slip, pace=pace)


class StationService:
    """One station, one command queue, one append-only session log."""

    def __init__(
        self,
        station: Station,
        log_path: str | Path | None = None,
        synchronous: bool = False,
        gap_joules: float = DEFAULT_GAP_JOULES,
        manual_interval: tuple[float, float] = (40.0, 55.0),
    ):
        self.station = station
        self.synchronous = synchronous
        self.gap_joules = gap_joules
        self.manual_interval = manual_interval

        self._dispatch_lock = threading.Lock()
        self._busy: str | None = None
        self._worker: threading.Thread | None = None

        self._log: session.SessionWriter | None = None
        if log_path is not None:
            self._log = session.SessionWriter(log_path, self.session_meta())
            station.bus.add_tap(self._log.record_event)

    def session_meta(self) -> dict:
        return {
            "seed": self.station.seed,
            "config": self.station.cfg.to_dict(),
            "scene": self.station.scene.to_dict(),
            "slip": self.station.printer.slip.to_dict(),
        }

    # -- command intake ------------------------------------------------------

    def handle_command(self, cmd: str, args: dict | None = None) -> dict:
        """Validate, log (write-ahead), then execute or launch one command."""
        args = args or {}
        if cmd not in COMMANDS:
            return self._error(ValidationError(f"unknown command {cmd!r}"))
        try:
            self._validate_args(cmd, args)
        except StationError as err:
            return self._error(err)

        with self._dispatch_lock:
            accepted = True
            reason = None
            if cmd == "stop_all":
                pass   # always accepted, even mid-procedure
            elif self._busy is not None and cmd not in ("get_state",):
                accepted = False
                reason = f"procedure {self._busy} running"
            self._log_command(cmd, args, accepted, reason)
            if not accepted:
                return self._error(BusyError(reason))

            if cmd == "stop_all":
                return self._ack(self._do_stop_all())
            if cmd in _PROCEDURES and not self.synchronous:
                self._busy = cmd
                self._worker = threading.Thread(
                    target=self._run_procedure, args=(cmd, args), daemon=True
                )
                self._worker.start()
                return {"ok": True, "result": {"started": cmd}}
            if cmd in _PROCEDURES:
                self._busy = cmd

        try:
            result = self.execute_command(cmd, args)
            return self._ack(result)
        except StationError as err:
            return self._error(err)
        finally:
            if cmd in _PROCEDURES:
                with self._dispatch_lock:
                    self._busy = None

    def _run_procedure(self, cmd: str, args: dict) -> None:
        try:
            self.execute_command(cmd, args)
        except StationError:
            pass   # outcome already captured in the procedure's stopped event
        finally:
            with self._dispatch_lock:
                self._busy = None

    def wait_idle(self, timeout: float = 60.0) -> None:
        worker = self._worker
        if worker is not None:
            worker.join(timeout)

    @property
    def busy(self) -> str | None:
        with self._dispatch_lock:
            return self._busy

    # -- execution -------------------------------------------------------------

    def execute_command(self, cmd: str, args: dict):
        """Synchronously execute one validated command against the station."""
        station = self.station
        if cmd == "jog":
            station.jog(args["axis"], 1 if args["sign"] in (1, "+", "+1") else -1)
            return {"carriage": list(station.state.carriage)}
        if cmd == "gcode":
            return {"reply": station.printer.submit(args["line"])}
        if cmd == "stage_move":
            return {"reply": station.stages.submit(
                f"MOVE {args['target']} {int(args['steps'])}")}
        if cmd == "rotate":
            sign = 1 if args["sign"] in (1, "+", "+1", "+c") else -1
            steps = int(args.get("steps", ROTATE_CLICK_STEPS))
            return {"reply": station.stages.submit(f"MOVE ROTATION {sign * steps}")}
        if cmd == "stop_all":
            return self._do_stop_all()
        if cmd == "tare":
            station.tare()
            return {"tared": True}
        if cmd == "get_state":
            return {"sim_clock": station.now(), "busy": self._busy,
                    "state": station.state_payload()}
        if cmd == "advance":
            station.advance_clock(float(args["dt"]))
            return {"sim_clock": station.now()}
        if cmd == "auto_align":
            params = AlignmentParams(**args.get("params", {}))
            return control.auto_align(station, params).to_dict()
        if cmd == "auto_lower_sequential":
            params = LoweringParams(**args.get("params", {}))
            return LoweringProcedure(station, params, "sequential").run().to_dict()
        if cmd == "auto_lower_joint":
            params = LoweringParams(**args.get("params", {}))
            return LoweringProcedure(station, params, "joint").run().to_dict()
        if cmd == "run_sweep":
            cfg = IVSweepConfig.from_dict(args.get("config", {}))
            run = control.run_sweep(station, cfg, self.gap_joules)
            if run.result is not None:
                return {"ok": True, "measurement": run.result.to_dict()}
            return {"ok": False, "error": run.error,
                    "samples": [s.to_dict() for s in run.samples]}
        if cmd == "run_batch":
            plan = BatchPlan.from_dict(args["plan"])
            records = control.run_batch(
                station, plan,
                align_params=AlignmentParams(**args.get("align_params", {})),
                lowering_params=LoweringParams(**args.get("lowering_params", {})),
                sweep_cfg=IVSweepConfig.from_dict(args.get("sweep_config", {})),
                gap_joules=self.gap_joules,
            )
            return {"records": records}
        raise ValidationError(f"unknown command {cmd!r}")

    def _do_stop_all(self) -> dict:
        self.station.latch_estop()
        self.station.request_stage_stop()
        return {"stopped": True}

    # -- helpers -------------------------------------------------------------------

    def _validate_args(self, cmd: str, args: dict) -> None:
        if cmd == "jog":
            if args.get("axis") not in ("x", "y", "z"):
                raise ValidationError("jog axis must be x, y, or z")
            if args.get("sign") not in (1, -1, "+", "-", "+1", "-1"):
                raise ValidationError("jog sign must be + or -")
        elif cmd == "gcode":
            if not isinstance(args.get("line"), str):
                raise ValidationError("gcode needs a line string")
        elif cmd == "stage_move":
            if args.get("target") not in ("YZ_Y", "YZ_Z", "Z_Z", "ROTATION", "ALL_Z"):
                raise ValidationError(f"unknown stage target {args.get('target')!r}")
            if not isinstance(args.get("steps"), int) or args["steps"] == 0:
                raise ValidationError("stage_move needs nonzero integer steps")
        elif cmd == "rotate":
            if args.get("sign") not in (1, -1, "+", "-", "+1", "-1", "+c", "-c"):
                raise ValidationError("rotate sign must be + or -")
        elif cmd == "advance":
            dt = args.get("dt")
            if not isinstance(dt, (int, float)) or dt < 0:
                raise ValidationError("advance needs dt >= 0")
        elif cmd == "run_batch":
            if "plan" not in args:
                raise ValidationError("run_batch needs a plan")

    def _log_command(self, cmd: str, args: dict, accepted: bool, reason: str | None) -> None:
        if self._log is None:
            return
        payload = {"cmd": cmd, "args": args, "accepted": accepted}
        if reason:
            payload["reason"] = reason
        self._log.append(session.KIND_COMMAND, self.station.now(), payload)

    @staticmethod
    def _ack(result) -> dict:
        return {"ok": True, "result": result}

    @staticmethod
    def _error(err: StationError) -> dict:
        return {"ok": False, "error": {"code": err.code, "message": str(err)}}

    def close(self) -> None:
        self.wait_idle()
        if self._log is not None:
            self._log.close()
