"""Telemetry fan-out: sim-time-stamped events with bounded per-subscriber buffers.

Every event is emitted once, in order, to each live subscriber and to any
synchronous taps (the session log is a tap, so log order equals emission
order).  A slow subscriber loses the oldest droppable telemetry, never
procedure events or measurements, and sees a gap marker where data went
missing.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

KIND_FORCE = "force"
KIND_STATE = "state"
KIND_DETECTIONS = "detections"
KIND_PROCEDURE = "procedure"
KIND_SWEEP_SAMPLE = "sweep_sample"
KIND_MEASUREMENT = "measurement"
KIND_GAP = "gap"

# Never dropped under backpressure.
_PRECIOUS = (KIND_PROCEDURE, KIND_MEASUREMENT)


@dataclass(frozen=True)
class TelemetryEvent:
    kind: str
    t: float
    payload: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t": self.t, "payload": self.payload}


class Subscriber:
    """One bounded telemetry consumer."""

    def __init__(self, capacity: int = 1024):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        self.capacity = capacity
        self._items: deque[TelemetryEvent] = deque()
        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self.closed = False

    def _push(self, event: TelemetryEvent) -> None:
        with self._cv:
            if self.closed:
                return
            if len(self._items) >= self.capacity:
                self._drop_oldest()
            self._items.append(event)
            self._cv.notify_all()

    def _drop_oldest(self) -> None:
        # Replace the first droppable event with (or fold it into) a gap marker.
        for idx, item in enumerate(self._items):
            if item.kind in _PRECIOUS:
                continue
            if item.kind == KIND_GAP:
                self._items[idx] = TelemetryEvent(
                    KIND_GAP, item.t, {"dropped": item.payload["dropped"] + 1}
                )
            else:
                self._items[idx] = TelemetryEvent(KIND_GAP, item.t, {"dropped": 1})
            return
        # Only precious events buffered: let the buffer grow rather than lose them.
        self.capacity += 1

    def pop(self, timeout: float | None = None) -> TelemetryEvent | None:
        with self._cv:
            if not self._items:
                self._cv.wait(timeout)
            if not self._items:
                return None
            return self._items.popleft()

    def drain(self) -> list[TelemetryEvent]:
        with self._cv:
            items = list(self._items)
            self._items.clear()
            return items

    def close(self) -> None:
        with self._cv:
            self.closed = True
            self._cv.notify_all()


class TelemetryBus:
    def __init__(self):
        self._subscribers: list[Subscriber] = []
        self._taps: list = []
        self._lock = threading.Lock()

    def subscribe(self, capacity: int = 1024) -> Subscriber:
        sub = Subscriber(capacity)
        with self._lock:
            self._subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscriber) -> None:
        sub.close()
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def add_tap(self, fn) -> None:
        """Register a synchronous callback invoked on every emit, in order."""
        with self._lock:
            self._taps.append(fn)

    def emit(self, kind: str, t: float, payload: dict) -> TelemetryEvent:
        event = TelemetryEvent(kind, t, payload)
        with self._lock:
            taps = list(self._taps)
            subs = list(self._subscribers)
        for tap in taps:
            tap(event)
        for sub in subs:
            sub._push(event)
        return event
