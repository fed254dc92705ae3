"""Append-only session log: newline-delimited JSON records and deterministic replay.

Every record carries a strictly consecutive sequence number, the sim-clock
time, a kind, and a payload.  The first record ("meta") pins the log format
version, the master seed, the machine config, the scene, and the slip model,
which is everything a fresh simulator needs to re-execute the commands and
reproduce the telemetry bit for bit.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import StationError

LOG_VERSION = 1

KIND_META = "meta"
KIND_COMMAND = "command"
KIND_TELEMETRY = "telemetry"
KIND_PROCEDURE_EVENT = "procedure_event"
KIND_MEASUREMENT = "measurement"

KINDS = (KIND_META, KIND_COMMAND, KIND_TELEMETRY, KIND_PROCEDURE_EVENT, KIND_MEASUREMENT)

# Telemetry bus kinds that are persisted as their own record kinds.
_BUS_KIND_MAP = {
    "procedure": KIND_PROCEDURE_EVENT,
    "measurement": KIND_MEASUREMENT,
}


class SessionLogError(StationError):
    code = "session-log"


@dataclass(frozen=True)
class SessionRecord:
    seq: int
    t: float
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "t": self.t, "kind": self.kind, "payload": self.payload}

    @classmethod
    def from_dict(cls, data: dict) -> "SessionRecord":
        missing = {"seq", "t", "kind", "payload"} - set(data)
        if missing:
            raise SessionLogError(f"record missing fields {sorted(missing)}")
        if data["kind"] not in KINDS:
            raise SessionLogError(f"unknown record kind {data['kind']!r}")
        return cls(seq=data["seq"], t=data["t"], kind=data["kind"], payload=data["payload"])


class SessionWriter:
    """Serializes records to one file, fsyncing on procedure boundaries."""

    def __init__(self, path: str | Path, meta: dict):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._lock = threading.Lock()
        self._seq = 0
        meta_payload = {"version": LOG_VERSION}
        meta_payload.update(meta)
        self.append(KIND_META, 0.0, meta_payload)
        self.flush()

    def append(self, kind: str, t: float, payload: dict) -> int:
        if kind not in KINDS:
            raise SessionLogError(f"unknown record kind {kind!r}")
        with self._lock:
            self._seq += 1
            record = SessionRecord(self._seq, t, kind, payload)
            self._fh.write(json.dumps(record.to_dict(), separators=(",", ":")))
            self._fh.write("\n")
            if kind in (KIND_PROCEDURE_EVENT, KIND_MEASUREMENT):
                self._fh.flush()
                os.fsync(self._fh.fileno())
            return self._seq

    def record_event(self, event) -> int:
        """Persist one telemetry-bus event."""
        kind = _BUS_KIND_MAP.get(event.kind, KIND_TELEMETRY)
        payload = {"channel": event.kind}
        payload.update(event.payload)
        return self.append(kind, event.t, payload)

    def flush(self) -> None:
        with self._lock:
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self.flush()
            self._fh.close()


def read_session(path: str | Path) -> list[SessionRecord]:
    """Load and integrity-check a session log.

    Refuses tampered logs: sequence numbers must start at 1 and increase by
    exactly one, and the first record must be a meta record with a supported
    version.
    """
    records: list[SessionRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as err:
                raise SessionLogError(f"line {line_no}: bad JSON: {err}") from None
            records.append(SessionRecord.from_dict(data))
    if not records:
        raise SessionLogError("empty session log")
    for idx, record in enumerate(records):
        if record.seq != idx + 1:
            raise SessionLogError(
                f"sequence gap: expected seq {idx + 1}, found {record.seq}"
            )
    head = records[0]
    if head.kind != KIND_META:
        raise SessionLogError("first record must be the session meta record")
    version = head.payload.get("version")
    if version != LOG_VERSION:
        raise SessionLogError(
            f"log version {version!r} not supported (expected {LOG_VERSION})"
        )
    return records


@dataclass(frozen=True)
class ReplayReport:
    match: bool
    compared: int
    mismatches: list
    reconstructed: list

    def summary(self) -> str:
        if self.match:
            return f"replay OK: {self.compared} records reproduced bit-identically"
        first = self.mismatches[0] if self.mismatches else "?"
        return (
            f"replay MISMATCH: {len(self.mismatches)} of {self.compared} records differ; "
            f"first: {first}"
        )


def replay_session(path: str | Path) -> ReplayReport:
    """Re-execute a logged session and compare the emitted record stream.

    Rebuilds the station from the meta record, schedules logged stop-all
    commands at their recorded sim times (so mid-procedure stops land on the
    same tick), re-runs every accepted command in order, and compares the
    resulting telemetry/procedure/measurement subsequence against the log.
    """
    from .service import StationService, build_station_from_meta

    records = read_session(path)
    meta = records[0].payload
    station = build_station_from_meta(meta)
    service = StationService(station, log_path=None, synchronous=True)

    # Mid-procedure stops act at a recorded sim time, not a record index.
    for record in records:
        if record.kind == KIND_COMMAND and record.payload.get("cmd") == "stop_all":
            if record.payload.get("accepted", True):
                station.schedule_estop(record.t)
                station.schedule_stage_stop(record.t)

    replayed: list[SessionRecord] = []
    seq = 0

    def tap(event) -> None:
        nonlocal seq
        kind = _BUS_KIND_MAP.get(event.kind, KIND_TELEMETRY)
        payload = {"channel": event.kind}
        payload.update(event.payload)
        seq += 1
        replayed.append(SessionRecord(seq, event.t, kind, payload))

    station.bus.add_tap(tap)

    for record in records:
        if record.kind != KIND_COMMAND:
            continue
        if not record.payload.get("accepted", True):
            continue
        cmd = record.payload["cmd"]
        if cmd == "stop_all":
            continue   # already scheduled at its recorded time
        try:
            service.execute_command(cmd, record.payload.get("args", {}))
        except StationError:
            pass   # refused live too; refusals emit no telemetry

    logged = [r for r in records if r.kind in (KIND_TELEMETRY, KIND_PROCEDURE_EVENT, KIND_MEASUREMENT)]
    mismatches = []
    for idx in range(max(len(logged), len(replayed))):
        if idx >= len(logged):
            mismatches.append(f"extra replayed record at position {idx}")
            continue
        if idx >= len(replayed):
            mismatches.append(f"missing replayed record at position {idx} (seq {logged[idx].seq})")
            continue
        a, b = logged[idx], replayed[idx]
        if (a.kind, a.t, a.payload) != (b.kind, b.t, b.payload):
            mismatches.append(
                f"position {idx}: logged seq {a.seq} kind={a.kind} t={a.t} != "
                f"replayed kind={b.kind} t={b.t}"
            )
    return ReplayReport(
        match=not mismatches,
        compared=len(logged),
        mismatches=mismatches,
        reconstructed=[r.to_dict() for r in replayed],
    )
