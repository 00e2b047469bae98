# mbmp_sim/events.py
"""Simulation clock, event queue and the line-delimited JSON protocol trace."""
import heapq
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from mbmp_sim.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    """Min-heap keyed on (time, insertion sequence); equal times pop in FIFO order."""

    def __init__(self, end_time=None):
        self.now = 0.0
        self.end_time = end_time
        self._heap = []
        self._seq = itertools.count()

    def __len__(self):
        return len(self._heap)

    def schedule(self, time, kind, payload=None):
        if time < self.now:
            raise InvalidArgumentError(f"event {kind} at {time} is before now={self.now}")
        if self.end_time is not None and time > self.end_time:
            return None
        event = Event(time, next(self._seq), kind, payload)
        heapq.heappush(self._heap, event)
        return event

    def after(self, delay, kind, payload=None):
        return self.schedule(self.now + delay, kind, payload)

    def peek_time(self):
        return self._heap[0].time if self._heap else None

    def pop(self):
        if not self._heap:
            return None
        event = heapq.heappop(self._heap)
        self.now = event.time
        return event


def to_us(seconds):
    return int(round(seconds * 1e6))


def _plain(value):
    """numpy scalars and tuples to JSON-native values."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


class TraceLog:
    """Collects one record per protocol send/receive/decision."""

    def __init__(self, enabled=True):
        self.enabled = enabled
        self.records = []

    def emit(self, time, event, **fields):
        if not self.enabled:
            return
        record = {"t_us": to_us(time), "event": event}
        record.update((k, _plain(v)) for k, v in fields.items())
        self.records.append(record)

    def lines(self):
        return [json.dumps(r, sort_keys=True) for r in self.records]

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def where(self, event=None, **match):
        out = []
        for r in self.records:
            if event is not None and r["event"] != event:
                continue
            if all(r.get(k) == v for k, v in match.items()):
                out.append(r)
        return out
