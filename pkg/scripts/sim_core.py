from __future__ import annotations

import csv
import dataclasses
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import simpy
from scipy.stats import truncnorm

from scripts.utils import CoexSimError, PreconditionError, to_hex

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000
SLOT_NS = 625_000
MAX_TIME_NS = 2 ** 64 - 1


def us(value) -> int:
    return int(round(value * NS_PER_US))


def ms(value) -> int:
    return int(round(value * NS_PER_MS))


def s(value) -> int:
    return int(round(value * NS_PER_S))


def align_up(t: int, period: int, phase: int = 0) -> int:
    """First instant >= t on the grid phase + k * period."""
    k = -(-(t - phase) // period)
    return phase + k * period


def align_down(t: int, period: int, phase: int = 0) -> int:
    return phase + ((t - phase) // period) * period


class Core(str, Enum):
    BLUETOOTH = "bluetooth"
    WIFI = "wifi"


class PastTime(CoexSimError):
    pass


@dataclass(frozen=True)
class Event:
    fire_at: int
    target: str
    payload: Any = None
    seq: int = 0


class EventHandle:
    def __init__(self, event: Event):
        self.event = event
        self.cancelled = False
        self.fired = False

    def cancel(self) -> bool:
        if self.fired:
            return False
        self.cancelled = True
        return True


class RngStreams:
    def __init__(self, seed: int):
        if seed < 0 or seed > MAX_TIME_NS:
            raise PreconditionError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._streams: Dict[str, np.random.Generator] = {}

    def stream(self, stream_id: str) -> np.random.Generator:
        if stream_id not in self._streams:
            entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32, zlib.crc32(stream_id.encode())]
            self._streams[stream_id] = np.random.default_rng(np.random.SeedSequence(entropy))
        return self._streams[stream_id]


def sample_jitter(stream: np.random.Generator, sigma_ns, bound_ns, size=None):
    if bound_ns <= 0:
        raise PreconditionError("bound_ns must be positive")
    if sigma_ns == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    limit = bound_ns / sigma_ns
    draws = truncnorm.rvs(-limit, limit, loc=0.0, scale=sigma_ns, size=size, random_state=stream)
    values = np.clip(np.rint(draws), -bound_ns, bound_ns).astype(np.int64)
    if size is None:
        return int(values)
    return values


class JitterSource:
    def __init__(self, stream: np.random.Generator, sigma_ns, bound_ns, batch: int = 1024):
        self.stream = stream
        self.sigma_ns = sigma_ns
        self.bound_ns = bound_ns
        self.batch = batch
        self._pool: List[int] = []

    def next(self) -> int:
        if self.sigma_ns == 0:
            return 0
        if not self._pool:
            self._pool = list(sample_jitter(self.stream, self.sigma_ns, self.bound_ns, size=self.batch))[::-1]
        return int(self._pool.pop())


def render_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (bytes, bytearray)):
        return to_hex(value)
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


class TraceRecorder:
    def __init__(self):
        self.records: List[Tuple[int, str, Any]] = []

    def record(self, t: int, channel: str, value):
        if self.records and t < self.records[-1][0]:
            raise CoexSimError(f"trace record at {t} ns precedes {self.records[-1][0]} ns on {channel}")
        self.records.append((int(t), channel, value))

    def channel(self, name: str) -> List[Tuple[int, Any]]:
        return [(t, v) for t, c, v in self.records if c == name]

    def channels(self) -> List[str]:
        return sorted({c for _, c, _ in self.records})

    def export_csv(self, path):
        with open(path, "w", newline="") as outfile:
            writer = csv.writer(outfile, lineterminator="\n")
            writer.writerow(["time_ns", "channel", "value"])
            for t, channel, value in self.records:
                writer.writerow([t, channel, render_value(value)])
        return path


class Engine:
    def __init__(self, seed: int = 0, recorder: Optional[TraceRecorder] = None):
        self.env = simpy.Environment(initial_time=0)
        self.seed = seed
        self.rng = RngStreams(seed)
        self.recorder = recorder if recorder is not None else TraceRecorder()
        self._handlers: Dict[str, Callable[[Event], None]] = {"engine.call": self._call}
        self._seq = 0

    @property
    def now(self) -> int:
        return int(self.env.now)

    def register(self, target: str, handler: Callable[[Event], None]):
        self._handlers[target] = handler

    def schedule(self, ev: Event) -> EventHandle:
        if ev.fire_at < self.now:
            raise PastTime(f"event for {ev.target} at {ev.fire_at} ns is before now ({self.now} ns)")
        self._seq += 1
        handle = EventHandle(dataclasses.replace(ev, seq=self._seq))
        timeout = self.env.timeout(ev.fire_at - self.now)
        timeout.callbacks.append(lambda _timeout: self._deliver(handle))
        return handle

    def call_at(self, fire_at: int, fn: Callable, *args) -> EventHandle:
        return self.schedule(Event(fire_at=fire_at, target="engine.call", payload=(fn, args)))

    def call_in(self, delay: int, fn: Callable, *args) -> EventHandle:
        return self.call_at(self.now + delay, fn, *args)

    def _deliver(self, handle: EventHandle):
        if handle.cancelled:
            return
        handle.fired = True
        handler = self._handlers.get(handle.event.target)
        if handler is None:
            raise CoexSimError(f"no handler registered for {handle.event.target}")
        handler(handle.event)

    @staticmethod
    def _call(event: Event):
        fn, args = event.payload
        fn(*args)

    def process(self, generator):
        return self.env.process(generator)

    def timeout(self, delay: int):
        if delay < 0:
            raise PastTime(f"negative delay {delay} ns")
        return self.env.timeout(int(delay))

    def wait_until(self, t: int):
        return self.timeout(t - self.now)

    def run_until(self, t_end: int) -> int:
        if t_end < self.now:
            raise PastTime(f"run_until({t_end}) is before now ({self.now} ns)")
        self.env.timeout(t_end - self.now)
        while self.env.peek() <= t_end:
            self.env.step()
        return self.now

    def record(self, channel: str, value):
        self.recorder.record(self.now, channel, value)
