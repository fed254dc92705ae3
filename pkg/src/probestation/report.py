"""Session reports: per-junction timing table, savings interval, CSV exports."""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .errors import ValidationError
from .measurement import timing_savings
from .session import KIND_MEASUREMENT, KIND_PROCEDURE_EVENT, SessionRecord, read_session


def slot_timings(records: list[SessionRecord]) -> list[dict]:
    """Reconstruct per-slot phase durations from batch procedure events.

    Works from the nested procedures' stopped events between slot_started
    markers, so logs from interactive sessions (no batch wrapper) yield no
    rows rather than garbage.
    """
    slots: list[dict] = []
    current: dict | None = None
    for record in records:
        if record.kind == KIND_PROCEDURE_EVENT:
            payload = record.payload
            proc = payload.get("procedure")
            event = payload.get("event")
            if proc == "run_batch" and event == "slot_started":
                if current is not None:
                    slots.append(current)
                current = {"slot_index": payload.get("slot_index"), "ok": False}
            elif current is not None and event == "stopped" and "result" in payload:
                result = payload["result"]
                if proc == "auto_align":
                    current["align_s"] = result.get("elapsed")
                    current["align_outcome"] = result.get("outcome")
                elif proc in ("auto_lower_sequential", "auto_lower_joint"):
                    current["lower_s"] = result.get("elapsed")
                    current["lower_mode"] = result.get("details", {}).get("mode")
            elif current is not None and proc == "run_sweep" and event == "stopped":
                current["sweep_ok"] = payload.get("ok")
        elif record.kind == KIND_MEASUREMENT and current is not None:
            payload = record.payload
            current["sweep_s"] = payload.get("elapsed")
            current["resistance"] = payload.get("resistance")
            current["critical_current"] = payload.get("critical_current")
            current["josephson_energy"] = payload.get("josephson_energy")
            current["rms_residual"] = payload.get("rms_residual")
            if all(k in current for k in ("align_s", "lower_s", "sweep_s")):
                current["auto_total_s"] = (
                    current["align_s"] + current["lower_s"] + current["sweep_s"]
                )
                current["ok"] = True
    if current is not None:
        slots.append(current)
    return slots


def auto_interval(slots: list[dict], joint_only: bool = True) -> tuple[int, int]:
    """Whole-second envelope of the measured per-junction automation times.

    Steady-state throughput is set by joint-lowered junctions; the first
    junction of a session pays the one-by-one landing once.
    """
    totals = [
        s["auto_total_s"] for s in slots
        if s.get("ok") and (not joint_only or s.get("lower_mode") == "joint")
    ]
    if not totals:
        totals = [s["auto_total_s"] for s in slots if s.get("ok")]
    if not totals:
        raise ValidationError("no completed junctions in session")
    return int(math.floor(min(totals))), int(math.ceil(max(totals)))


def render_report(
    log_path: str | Path, manual_interval: tuple[float, float] = (40.0, 55.0)
) -> str:
    """Human-readable timing table plus the savings line."""
    records = read_session(log_path)
    slots = slot_timings(records)
    lines = []
    lines.append(f"session: {log_path}")
    lines.append("")
    lines.append("slot  align_s  lower_mode   lower_s  sweep_s  auto_total_s  R_ohm       Ic_A")
    for s in slots:
        if s.get("ok"):
            lines.append(
                f"{s['slot_index']:>4}  {s['align_s']:>7.3f}  {s['lower_mode']:<10}  "
                f"{s['lower_s']:>7.3f}  {s['sweep_s']:>7.3f}  {s['auto_total_s']:>12.3f}  "
                f"{s['resistance']:<10.4g}  {s['critical_current']:.4g}"
            )
        else:
            lines.append(f"{s.get('slot_index', '?'):>4}  FAILED")
    ok_slots = [s for s in slots if s.get("ok")]
    if ok_slots:
        auto = auto_interval(slots)
        low, high = timing_savings((float(auto[0]), float(auto[1])), manual_interval)
        lines.append("")
        lines.append(f"auto time per junction: [{auto[0]}, {auto[1]}] s")
        lines.append(
            f"manual reference: [{manual_interval[0]:g}, {manual_interval[1]:g}] s"
        )
        lines.append(f"time savings: [{low}%, {high}%]")
    else:
        lines.append("")
        lines.append("no completed junctions; no savings computed")
    return "\n".join(lines) + "\n"


def export_samples_csv(log_path: str | Path, out_path: str | Path) -> int:
    """All sweep samples in the session, one row per point."""
    records = read_session(log_path)
    rows = 0
    slot = -1
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot_index", "t", "current_a", "voltage_v", "clamped"])
        for record in records:
            if record.kind == KIND_PROCEDURE_EVENT:
                if (record.payload.get("procedure") == "run_batch"
                        and record.payload.get("event") == "slot_started"):
                    slot = record.payload.get("slot_index", slot + 1)
            elif record.kind == "telemetry" and record.payload.get("channel") == "sweep_sample":
                writer.writerow([
                    slot, record.t,
                    record.payload["current"], record.payload["voltage"],
                    record.payload["clamped"],
                ])
                rows += 1
    return rows


def export_results_csv(log_path: str | Path, out_path: str | Path) -> int:
    """Per-junction summary: resistance, critical current, Josephson energy."""
    records = read_session(log_path)
    slots = slot_timings(records)
    rows = 0
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "slot_index", "resistance_ohm", "critical_current_a",
            "josephson_energy_j", "rms_residual_v",
            "align_s", "lower_mode", "lower_s", "sweep_s", "auto_total_s",
        ])
        for s in slots:
            if not s.get("ok"):
                writer.writerow([s.get("slot_index"), "FAILED", "", "", "", "", "", "", "", ""])
                continue
            writer.writerow([
                s["slot_index"], s["resistance"], s["critical_current"],
                s["josephson_energy"], s["rms_residual"],
                s["align_s"], s["lower_mode"], s["lower_s"], s["sweep_s"],
                s["auto_total_s"],
            ])
            rows += 1
    return rows
