"""Discrete-event core: integer-microsecond clock, event heap, seeded RNG streams."""
from __future__ import annotations

import heapq
import itertools
import random
import time
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

# SimTime is a plain int counting microseconds since simulation start.
SimTime = int

US = 1
MS = 1_000
S = 1_000_000


def ms(value: float) -> SimTime:
    return round(value * MS)


def seconds(value: float) -> SimTime:
    return round(value * S)


def to_seconds(t: SimTime) -> float:
    return t / S


def to_ms(t: SimTime) -> float:
    return t / MS


# Event kinds.
REQUEST_ARRIVAL = "request-arrival"
SERVICE_COMPLETE = "service-complete"
RESPONSE_DELIVERED = "response-delivered"
TIMEOUT_EXPIRY = "timeout-expiry"
AUTOSCALER_TICK = "autoscaler-tick"
METRIC_SCRAPE = "metric-scrape"
POD_READY = "pod-ready"
ALERT_FIRE = "alert-fire"
CLIENT_RETRY = "client-retry"


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock."""


class SimEvent(NamedTuple):
    fire_at: SimTime
    seq: int
    kind: str
    payload: Any


class EventQueue:
    """Min-heap of events keyed on ``(fire_at, seq)``.

    ``seq`` is drawn from a per-queue counter so it strictly increases in
    insertion order; payloads are never compared.
    """

    def __init__(self) -> None:
        self._heap: list[SimEvent] = []
        self._seq = itertools.count()

    def push(self, fire_at: SimTime, kind: str, payload: Any = None) -> tuple:
        # plain tuples on the heap; SimEvent views are built on the way out
        event = (fire_at, next(self._seq), kind, payload)
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> SimEvent:
        return SimEvent(*heapq.heappop(self._heap))

    def peek(self) -> SimEvent | None:
        return SimEvent(*self._heap[0]) if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)


def rng_stream(seed: int, stream_id: str) -> random.Random:
    """Independent generator for one stochastic subsystem.

    The stream label is folded in with crc32 so the derivation does not depend
    on Python's randomized ``hash``.
    """
    return random.Random((seed & 0xFFFFFFFFFFFFFFFF) << 32 | zlib.crc32(stream_id.encode()))


@dataclass
class RunStats:
    end: SimTime
    events_processed: int
    events_pending: int
    events_scheduled: int
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        # wall time is excluded so serialized output stays deterministic
        return {
            "end_us": self.end,
            "events_processed": self.events_processed,
            "events_pending": self.events_pending,
            "events_scheduled": self.events_scheduled,
        }


class Simulation:
    """Single-threaded event loop.

    Components register one handler per event kind with :meth:`on` and
    schedule work with :meth:`schedule`. Handlers read :attr:`now`.
    """

    def __init__(self, seed: int = 0, trace: bool = False) -> None:
        self.seed = seed
        self.now: SimTime = 0
        self.queue = EventQueue()
        self.handlers: dict[str, Callable[[Any], None]] = {}
        self.events_processed = 0
        self._streams: dict[str, random.Random] = {}
        self.trace: list[tuple[SimTime, int, str]] | None = [] if trace else None

    def on(self, kind: str, handler: Callable[[Any], None]) -> None:
        if kind in self.handlers:
            raise ValueError(f"handler for {kind!r} already registered")
        self.handlers[kind] = handler

    def schedule(self, fire_at: SimTime, kind: str, payload: Any = None) -> tuple:
        if fire_at < self.now:
            raise SchedulingError(
                f"cannot schedule {kind!r} at t={fire_at}us, clock is at t={self.now}us"
            )
        queue = self.queue
        event = (fire_at, next(queue._seq), kind, payload)
        heapq.heappush(queue._heap, event)
        return event

    def schedule_in(self, delay: SimTime, kind: str, payload: Any = None) -> tuple:
        return self.schedule(self.now + delay, kind, payload)

    def rng(self, stream_id: str) -> random.Random:
        stream = self._streams.get(stream_id)
        if stream is None:
            stream = self._streams[stream_id] = rng_stream(self.seed, stream_id)
        return stream

    @property
    def events_scheduled(self) -> int:
        return self.events_processed + len(self.queue)

    def run_until(self, end: SimTime) -> RunStats:
        """Process every event with ``fire_at <= end``; the clock finishes at ``end``."""
        if end < self.now:
            raise SchedulingError(f"run_until({end}) is before the clock ({self.now})")
        started = time.perf_counter()
        heap = self.queue._heap
        handlers = self.handlers
        pop = heapq.heappop
        trace = self.trace
        processed = 0
        try:
            while heap and heap[0][0] <= end:
                fire_at, seq, kind, payload = pop(heap)
                self.now = fire_at
                processed += 1
                if trace is not None:
                    trace.append((fire_at, seq, kind))
                handlers[kind](payload)
        finally:
            self.events_processed += processed
        self.now = end
        return RunStats(
            end=end,
            events_processed=self.events_processed,
            events_pending=len(heap),
            events_scheduled=self.events_scheduled,
            wall_time_s=time.perf_counter() - started,
        )


class DeadlineLane:
    """Fixed-delay timers that expire in insertion order.

    Every entry shares the same delay, so deadlines are monotone and a deque
    replaces per-entry heap events: only the head deadline is armed. Entries
    for which ``is_live`` returns False are discarded without firing.
    """

    def __init__(
        self,
        sim: Simulation,
        kind: str,
        delay: SimTime,
        expire: Callable[[Any], None],
        is_live: Callable[[Any], bool],
    ) -> None:
        self.sim = sim
        self.kind = kind
        self.delay = delay
        self._expire = expire
        self._is_live = is_live
        self._entries: deque[tuple[SimTime, Any]] = deque()
        self._armed = False
        sim.on(kind, self._fire)

    def add(self, item: Any, start: SimTime | None = None) -> SimTime:
        deadline = (self.sim.now if start is None else start) + self.delay
        entries = self._entries
        if entries and deadline < entries[-1][0]:
            raise SchedulingError("deadline lane entries must be added in time order")
        entries.append((deadline, item))
        if not self._armed:
            self._arm()
        return deadline

    def _arm(self) -> None:
        entries = self._entries
        is_live = self._is_live
        while entries and not is_live(entries[0][1]):
            entries.popleft()
        if entries:
            self._armed = True
            self.sim.schedule(max(entries[0][0], self.sim.now), self.kind)
        else:
            self._armed = False

    def _fire(self, _payload: Any) -> None:
        now = self.sim.now
        entries = self._entries
        is_live = self._is_live
        while entries and entries[0][0] <= now:
            _, item = entries.popleft()
            if is_live(item):
                self._expire(item)
        self._arm()

    def __len__(self) -> int:
        return len(self._entries)
