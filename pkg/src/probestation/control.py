"""Automation procedures: alignment loop, lowering state machines, batch runs.

Alignment repeatedly detects the scene, converts the pixel gap between each
probe tip and its pad target into a carriage move, sends it as G-code, and
re-detects to confirm, until both gaps are inside tolerance.  With a belt
slipping by fraction s the residual decays geometrically as error_0 * s^n.

Lowering is a state machine that advances one motor step at a time and waits
for at least one fresh force sample between step increments, so no reading
can overshoot a threshold by more than stiffness * increment.  Sequential
mode lands the Z probe at the first force limit, then the YZ probe at the
second; joint mode steps both stages together against the joint limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from . import gcode, telemetry
from .errors import StationError, ValidationError
from .machine import PixelPoint, pixel_delta_to_machine_delta, probe_tips
from .measurement import (
    DEFAULT_GAP_JOULES,
    InsufficientData,
    IVSweepConfig,
    MeasurementResult,
    build_result,
    run_iv_sweep,
)
from .station import Station
from .vision import MissingDetection, locate_targets


def _emit_proc(station: Station, procedure: str, event: str, **extra) -> None:
    payload = {"procedure": procedure, "event": event}
    payload.update(extra)
    station.bus.emit(telemetry.KIND_PROCEDURE, station.now(), payload)


class Outcome(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    ESTOP = "estop"
    LIMIT_TRUNCATED = "limit_truncated"


@dataclass(frozen=True)
class AlignmentParams:
    tolerance: float = 0.05        # mm, per-probe acceptance radius
    max_iterations: int = 10       # corrective moves
    settle: int = 3                # frames averaged per error estimate
    detect_retries: int = 10       # extra frames allowed for dropped detections
    min_confidence: float = 0.5    # detections below this are ignored

    def __post_init__(self) -> None:
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.settle < 1:
            raise ValidationError("settle must be >= 1")
        if self.detect_retries < 0:
            raise ValidationError("detect_retries must be >= 0")


@dataclass(frozen=True)
class LoweringParams:
    first_limit: float = 0.05      # N, Z probe stops above this
    second_limit: float = 0.1      # N, YZ probe stops above this (total force)
    joint_limit: float = 0.1       # N, both probes together
    step_size: int = 16            # motor steps per increment

    def __post_init__(self) -> None:
        if not (0 < self.first_limit < self.second_limit):
            raise ValidationError("need 0 < first_limit < second_limit")
        if self.joint_limit <= 0:
            raise ValidationError("joint_limit must be > 0")
        if self.step_size < 1:
            raise ValidationError("step_size must be >= 1")


@dataclass(frozen=True)
class ProcedureResult:
    outcome: Outcome
    iterations: int
    elapsed: float
    residual_error: float | None = None   # mm, alignment
    final_force: float | None = None      # N, lowering
    details: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.outcome is Outcome.CONVERGED

    def to_dict(self) -> dict:
        out = {
            "outcome": self.outcome.value,
            "iterations": self.iterations,
            "elapsed": self.elapsed,
        }
        if self.residual_error is not None:
            out["residual_error"] = self.residual_error
        if self.final_force is not None:
            out["final_force"] = self.final_force
        if self.details:
            out["details"] = self.details
        return out


# -- alignment ---------------------------------------------------------------


class _DetectionStarved(StationError):
    code = "detection-starved"


def _estimate_errors(station: Station, params: AlignmentParams) -> tuple:
    """Average per-probe (pad target - tip) machine-frame errors over frames.

    Collects `settle` frames in which all three labels are present with
    acceptable confidence; raises after the retry budget is spent.
    """
    pad_span = station.scene.detector.pad_span
    collected = 0
    attempts = 0
    sum_z = [0.0, 0.0]
    sum_yz = [0.0, 0.0]
    while collected < params.settle:
        if attempts >= params.settle + params.detect_retries:
            raise _DetectionStarved(f"no full detection in {attempts} frames")
        attempts += 1
        dets = [d for d in station.detect() if d.confidence >= params.min_confidence]
        try:
            targets = locate_targets(dets, station.cfg, pad_span)
        except MissingDetection:
            continue
        for tip, pad, acc in (
            (targets.z_tip, targets.pad_for_z, sum_z),
            (targets.yz_tip, targets.pad_for_yz, sum_yz),
        ):
            dx, dy = pixel_delta_to_machine_delta(
                PixelPoint(pad.u - tip.u, pad.v - tip.v), station.cfg
            )
            acc[0] += dx
            acc[1] += dy
        collected += 1
    err_z = (sum_z[0] / collected, sum_z[1] / collected)
    err_yz = (sum_yz[0] / collected, sum_yz[1] / collected)
    return err_z, err_yz


def auto_align(station: Station, params: AlignmentParams | None = None) -> ProcedureResult:
    """Drive the carriage until both probe tips sit over their pad targets."""
    params = params or AlignmentParams()
    t0 = station.now()
    residuals: list[float] = []
    moves = 0
    _emit_proc(station, "auto_align", "started")

    def result(outcome: Outcome, residual: float | None, **extra) -> ProcedureResult:
        details = {"residuals": residuals}
        details.update(extra)
        res = ProcedureResult(
            outcome=outcome,
            iterations=moves,
            elapsed=station.now() - t0,
            residual_error=residual,
            details=details,
        )
        _emit_proc(station, "auto_align", "stopped", result=res.to_dict())
        return res

    while True:
        if station.state.estop_latched:
            return result(Outcome.ESTOP, residuals[-1] if residuals else None)
        try:
            err_z, err_yz = _estimate_errors(station, params)
        except _DetectionStarved as err:
            return result(Outcome.MAX_ITERATIONS, residuals[-1] if residuals else None,
                          reason=str(err))
        residual = max(math.hypot(*err_z), math.hypot(*err_yz))
        residuals.append(residual)
        if residual <= params.tolerance:
            return result(Outcome.CONVERGED, residual)
        if moves >= params.max_iterations:
            return result(Outcome.MAX_ITERATIONS, residual)

        # One carriage move can serve both probes; with spacing and angle
        # pre-adjusted the two errors agree and the mean is exact.
        dx = (err_z[0] + err_yz[0]) / 2.0
        dy = (err_z[1] + err_yz[1]) / 2.0
        cx, cy, _ = station.state.carriage
        reply = station.printer.execute(gcode.GCodeCommand(
            gcode.Verb.LINEAR_MOVE, x=cx + dx, y=cy + dy,
        ))
        moves += 1
        _emit_proc(station, "auto_align", "iteration",
                   iteration=moves, residual=residual, reply=reply)
        if reply != "ok":
            outcome = Outcome.ESTOP if "estop" in reply else Outcome.MAX_ITERATIONS
            return result(outcome, residual, reply=reply)


# -- lowering -----------------------------------------------------------------


@dataclass(frozen=True)
class _Phase:
    target: str            # stage target moved downward
    threshold: float       # N, strict: stop on the first sample above this


class LoweringProcedure:
    """Tick-granular lowering FSM.

    Each tick performs exactly one motor step (during an increment) or one
    sample wait (between increments), so an e-stop can halt the descent with
    at most one step of overrun from any state.  Thresholds are strict
    comparisons on quantized readings.
    """

    def __init__(self, station: Station, params: LoweringParams, mode: str):
        if mode == "sequential":
            phases = [
                _Phase("Z_Z", params.first_limit),
                _Phase("YZ_Z", params.second_limit),
            ]
        elif mode == "joint":
            phases = [_Phase("ALL_Z", params.joint_limit)]
        else:
            raise ValidationError(f"unknown lowering mode {mode!r}")
        if not station.tared:
            raise ValidationError("force sensor must be tared before lowering")
        if mode == "joint":
            tips = probe_tips(station.state, station.cfg)
            mismatch = abs(tips["z"][2] - tips["yz"][2])
            if mismatch > params.step_size * station.cfg.stage_step_pitch + 1e-12:
                raise ValidationError(
                    f"joint lowering needs equalized tips (|dz|={mismatch:.4f} mm); "
                    "run a sequential lowering first"
                )
        self.station = station
        self.params = params
        self.mode = mode
        self.phases = phases
        self.phase_idx = 0
        self.steps_left = 0
        self.increments = 0
        self.last_reading = None
        self.outcome: Outcome | None = None
        self.t0 = station.now()

    @property
    def finished(self) -> bool:
        return self.outcome is not None

    def tick(self) -> None:
        """Advance the FSM by one motor step or one sample wait."""
        if self.finished:
            return
        station = self.station
        if station.state.estop_latched:
            self.outcome = Outcome.ESTOP
            return

        if self.steps_left > 0:
            if not station.apply_stage_step(self.phases[self.phase_idx].target, -1):
                if station.state.estop_latched:
                    self.outcome = Outcome.ESTOP
                else:
                    # Axis limit reached before contact force built up.
                    self.outcome = Outcome.LIMIT_TRUNCATED
                return
            self.steps_left -= 1
            if station.state.estop_latched:
                self.outcome = Outcome.ESTOP
            return

        reading = station.wait_fresh_sample()
        self.last_reading = reading
        if station.state.estop_latched:
            self.outcome = Outcome.ESTOP
            return
        phase = self.phases[self.phase_idx]
        if reading.newtons > phase.threshold:
            self.phase_idx += 1
            if self.phase_idx >= len(self.phases):
                self.outcome = Outcome.CONVERGED
            return
        self.steps_left = self.params.step_size
        self.increments += 1

    def run(self) -> ProcedureResult:
        _emit_proc(self.station, f"auto_lower_{self.mode}", "started")
        while not self.finished:
            self.tick()
        if self.outcome is Outcome.CONVERGED:
            self.station.tips_equalized = True
        res = ProcedureResult(
            outcome=self.outcome,
            iterations=self.increments,
            elapsed=self.station.now() - self.t0,
            final_force=self.last_reading.newtons if self.last_reading else 0.0,
            details={"mode": self.mode},
        )
        _emit_proc(self.station, f"auto_lower_{self.mode}", "stopped", result=res.to_dict())
        return res


def auto_lower_sequential(station: Station, params: LoweringParams | None = None) -> ProcedureResult:
    """Land the Z probe at the first force limit, then the YZ probe at the second."""
    return LoweringProcedure(station, params or LoweringParams(), "sequential").run()


def auto_lower_joint(station: Station, params: LoweringParams | None = None) -> ProcedureResult:
    """Lower both probes together until total force exceeds the joint limit."""
    return LoweringProcedure(station, params or LoweringParams(), "joint").run()


def raise_probes(station: Station) -> ProcedureResult:
    """Lift both probes to the configured clearance above the chip surface."""
    cfg = station.cfg
    surface = station.scene.contact.surface_z
    target_tip = surface + cfg.probe_clearance
    t0 = station.now()
    tips = probe_tips(station.state, cfg)
    total = 0
    for stage_target, tip in (("Z_Z", tips["z"]), ("YZ_Z", tips["yz"])):
        steps = round((target_tip - tip[2]) / cfg.stage_step_pitch)
        if steps == 0:
            continue
        executed, truncated, estopped = station.stages.run_move(stage_target, steps)
        total += executed
        if estopped:
            return ProcedureResult(Outcome.ESTOP, total, station.now() - t0)
        if truncated:
            return ProcedureResult(Outcome.LIMIT_TRUNCATED, total, station.now() - t0)
    return ProcedureResult(Outcome.CONVERGED, total, station.now() - t0)


# -- pre-alignment helpers -----------------------------------------------------


def adjust_probe_spacing(station: Station, params: AlignmentParams | None = None) -> ProcedureResult:
    """Set the YZ probe Y offset so the tip separation matches the pad span."""
    params = params or AlignmentParams()
    t0 = station.now()
    try:
        err_z, err_yz = _estimate_errors(station, params)
    except _DetectionStarved as err:
        return ProcedureResult(Outcome.MAX_ITERATIONS, 0, station.now() - t0,
                               details={"reason": str(err)})
    # The differential Y error between the probes is exactly the spacing error.
    spacing_error = err_yz[1] - err_z[1]
    steps = round(spacing_error / station.cfg.stage_step_pitch)
    if steps:
        executed, truncated, estopped = station.stages.run_move("YZ_Y", steps)
        if estopped:
            return ProcedureResult(Outcome.ESTOP, 0, station.now() - t0)
        if truncated:
            return ProcedureResult(Outcome.LIMIT_TRUNCATED, executed, station.now() - t0)
    return ProcedureResult(
        Outcome.CONVERGED, abs(steps), station.now() - t0,
        residual_error=abs(spacing_error) - abs(steps) * station.cfg.stage_step_pitch,
    )


def _jj_box_width(station: Station, params: AlignmentParams) -> float:
    """Pad-box extent perpendicular to the inter-probe axis, px."""
    for _ in range(1 + params.detect_retries):
        dets = [d for d in station.detect() if d.confidence >= params.min_confidence]
        for det in dets:
            if det.label == "JJ":
                return det.box[2] - det.box[0]
    raise _DetectionStarved("junction box never detected")


def adjust_rotation(station: Station, params: AlignmentParams | None = None) -> ProcedureResult:
    """Zero the angle between the pad axis and the probes.

    The pad box narrows to twice the detector margin when the pads lie along
    the inter-probe axis; the residual width gives the angle magnitude and a
    trial rotation resolves its sign.
    """
    params = params or AlignmentParams()
    t0 = station.now()
    cfg = station.cfg
    scene = station.scene.detector
    step_deg = 360.0 / cfg.rotation_steps_per_rev
    span_px = scene.pad_span / cfg.pixel_scale

    def angle_estimate() -> float:
        width = _jj_box_width(station, params)
        ratio = min(1.0, max(0.0, (width - 2.0 * scene.pad_margin_px) / span_px))
        return math.degrees(math.asin(ratio))

    try:
        magnitude = angle_estimate()
        steps_total = 0
        for _ in range(3):
            if magnitude < step_deg:
                break
            steps = max(1, round(magnitude / step_deg))
            executed, truncated, estopped = station.stages.run_move("ROTATION", -steps)
            steps_total += executed
            if estopped:
                return ProcedureResult(Outcome.ESTOP, steps_total, station.now() - t0)
            if truncated:
                return ProcedureResult(Outcome.LIMIT_TRUNCATED, steps_total, station.now() - t0)
            new_magnitude = angle_estimate()
            if new_magnitude > magnitude:
                # Wrong sign: swing back through zero.
                executed, truncated, estopped = station.stages.run_move("ROTATION", 2 * steps)
                steps_total += executed
                if estopped:
                    return ProcedureResult(Outcome.ESTOP, steps_total, station.now() - t0)
                new_magnitude = angle_estimate()
            magnitude = new_magnitude
        return ProcedureResult(
            Outcome.CONVERGED, steps_total, station.now() - t0, residual_error=magnitude,
        )
    except _DetectionStarved as err:
        return ProcedureResult(Outcome.MAX_ITERATIONS, 0, station.now() - t0,
                               details={"reason": str(err)})


# -- batch ----------------------------------------------------------------------


@dataclass(frozen=True)
class BatchPlan:
    """Fixed slot coordinates for multiple junctions, with per-slot overrides."""

    slots: tuple[tuple[float, float], ...]
    overrides: tuple[dict, ...] = ()

    def __post_init__(self) -> None:
        if not self.slots:
            raise ValidationError("batch plan needs at least one slot")
        if len(set(self.slots)) != len(self.slots):
            raise ValidationError("slot coordinates must be pairwise distinct")
        if self.overrides and len(self.overrides) != len(self.slots):
            raise ValidationError("overrides must match slots 1:1 when present")

    def validate_against(self, cfg) -> None:
        for x, y in self.slots:
            for key, value in (("x", x), ("y", y)):
                mn, mx = cfg.axis_limits[key]
                if not (mn <= value <= mx):
                    raise ValidationError(f"slot {key}={value} outside [{mn}, {mx}]")

    def to_dict(self) -> dict:
        return {
            "slots": [list(s) for s in self.slots],
            "overrides": [dict(o) for o in self.overrides],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BatchPlan":
        return cls(
            slots=tuple(tuple(s) for s in data["slots"]),
            overrides=tuple(data.get("overrides", ())),
        )


def load_batch_plan(path) -> BatchPlan:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        return BatchPlan.from_dict(json.load(fh))


# -- measurement wiring -----------------------------------------------------------


@dataclass(frozen=True)
class SweepRun:
    """One sweep attempt: raw samples plus the fit, if one was possible."""

    samples: tuple
    elapsed: float
    estopped: bool
    result: MeasurementResult | None
    error: str | None

    @property
    def ok(self) -> bool:
        return self.result is not None and not self.estopped


class _EStopAbort(Exception):
    pass


def run_sweep(
    station: Station,
    sweep_cfg: IVSweepConfig | None = None,
    gap_joules: float = DEFAULT_GAP_JOULES,
    contact_threshold: float = 0.1,
) -> SweepRun:
    """Run an IV sweep against the station's device under test.

    The circuit counts as closed only when both probes penetrate the surface
    and the total quantized force exceeds the contact threshold; otherwise the
    sweep runs open and every point rails at the voltage cap.  Samples stream
    to telemetry as they land so the panel can plot live.
    """
    sweep_cfg = sweep_cfg or IVSweepConfig()
    t0 = station.now()
    pen = station.current_penetrations()
    force = station.current_force().newtons
    closed = pen["z"] > 0.0 and pen["yz"] > 0.0 and force > contact_threshold
    _emit_proc(station, "run_sweep", "started", closed=closed)

    collected = []

    def on_sample(sample, dwell: float) -> None:
        collected.append(sample)
        station.advance_clock(dwell)
        station.bus.emit(telemetry.KIND_SWEEP_SAMPLE, station.now(), sample.to_dict())
        if station.state.estop_latched:
            raise _EStopAbort()

    estopped = False
    try:
        run_iv_sweep(sweep_cfg, station.scene.dut, closed=closed,
                     rng=station.meas_rng, on_sample=on_sample)
    except _EStopAbort:
        estopped = True

    elapsed = station.now() - t0
    result = None
    error = None
    if not estopped:
        try:
            result = build_result(collected, elapsed, gap_joules)
        except InsufficientData as err:
            error = f"{err.code}: {err}"
    else:
        error = "estop"

    if result is not None:
        station.bus.emit(telemetry.KIND_MEASUREMENT, station.now(), result.to_dict())
    _emit_proc(station, "run_sweep", "stopped",
               ok=result is not None, error=error, samples=len(collected))
    return SweepRun(
        samples=tuple(collected),
        elapsed=elapsed,
        estopped=estopped,
        result=result,
        error=error,
    )


# -- batch ------------------------------------------------------------------------


def run_batch(
    station: Station,
    plan: BatchPlan,
    align_params: AlignmentParams | None = None,
    lowering_params: LoweringParams | None = None,
    sweep_cfg: IVSweepConfig | None = None,
    gap_joules: float = DEFAULT_GAP_JOULES,
) -> list[dict]:
    """Measure every slot in order, recording failures without aborting.

    Per slot: raise probes, travel to the slot, align, lower (sequential until
    the first successful landing equalizes the tips, joint afterwards), then
    sweep.  Only a latched e-stop stops the batch early.
    """
    plan.validate_against(station.cfg)
    align_params = align_params or AlignmentParams()
    lowering_params = lowering_params or LoweringParams()
    base_scene = station.scene
    records: list[dict] = []
    _emit_proc(station, "run_batch", "started", slots=len(plan.slots))

    for idx, slot in enumerate(plan.slots):
        record: dict = {"slot_index": idx, "slot": list(slot), "ok": False}
        _emit_proc(station, "run_batch", "slot_started", slot_index=idx)

        if station.state.estop_latched:
            record.update(stage="start", error="estop")
            records.append(record)
            break

        overrides = dict(plan.overrides[idx]) if plan.overrides else {}
        detector_over = dict(overrides.get("detector", {}))
        detector_over.setdefault("jj_center", list(slot))
        overrides["detector"] = detector_over
        station.load_scene(
            base_scene.with_overrides(overrides),
            reseed_vision="rng_seed" in detector_over,
        )

        raised = raise_probes(station)
        if not raised.converged:
            record.update(stage="raise", error=raised.outcome.value)
            records.append(record)
            if raised.outcome is Outcome.ESTOP:
                break
            continue

        reply = station.printer.execute(gcode.GCodeCommand(
            gcode.Verb.RAPID_MOVE, x=slot[0], y=slot[1],
        ))
        if reply != "ok":
            record.update(stage="move", error=reply)
            records.append(record)
            if "estop" in reply:
                break
            continue

        align = auto_align(station, align_params)
        record["align"] = align.to_dict()
        if not align.converged:
            record.update(stage="align", error=align.outcome.value)
            records.append(record)
            if align.outcome is Outcome.ESTOP:
                break
            continue

        mode = "sequential" if not station.tips_equalized else "joint"
        lower = LoweringProcedure(station, lowering_params, mode).run()
        record["lower"] = lower.to_dict()
        if not lower.converged:
            record.update(stage="lower", error=lower.outcome.value)
            records.append(record)
            if lower.outcome is Outcome.ESTOP:
                break
            continue

        sweep = run_sweep(station, sweep_cfg, gap_joules,
                          contact_threshold=lowering_params.joint_limit)
        if not sweep.ok:
            record.update(stage="sweep", error=sweep.error or "sweep failed")
            records.append(record)
            if sweep.estopped:
                break
            continue

        record.update(
            ok=True,
            measurement=sweep.result.to_dict(),
            timings={
                "align_s": align.elapsed,
                "lower_s": lower.elapsed,
                "lower_mode": mode,
                "sweep_s": sweep.elapsed,
                "auto_total_s": align.elapsed + lower.elapsed + sweep.elapsed,
            },
        )
        records.append(record)
        _emit_proc(station, "run_batch", "slot_done", slot_index=idx, ok=record["ok"])

    _emit_proc(station, "run_batch", "stopped",
               completed=len(records), ok_count=sum(1 for r in records if r["ok"]))
    return records
