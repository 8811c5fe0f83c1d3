"""Request traffic: wrk-style closed-loop connections and steady open-loop RPS."""
from __future__ import annotations

import enum
from heapq import heappush
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable

from .engine import (
    CLIENT_RETRY,
    MS,
    REQUEST_ARRIVAL,
    RESPONSE_DELIVERED,
    TIMEOUT_EXPIRY,
    DeadlineLane,
    S,
    SimTime,
    Simulation,
)
from .errors import InvalidValueError, SimulationError

if TYPE_CHECKING:
    from .metrics import LatencyHistogram


class Outcome(str, enum.Enum):
    IN_FLIGHT = "in-flight"
    COMPLETED = "completed"
    TIMED_OUT = "timed-out"
    DROPPED_AT_INGRESS = "dropped-at-ingress"
    DROPPED_AT_POD = "dropped-at-pod"


DROPPED = (Outcome.DROPPED_AT_INGRESS, Outcome.DROPPED_AT_POD)
_IN_FLIGHT = Outcome.IN_FLIGHT


class Request:
    """One logical invocation.

    ``issued_at`` is the start of the current attempt and is what latency is
    measured from; ``first_issued_at`` survives retries and anchors the
    client deadline.
    """

    __slots__ = (
        "id", "conn", "first_issued_at", "issued_at", "gateway_enqueued_at", "pod_enqueued_at",
        "dispatched_at", "service_start", "service_end", "pod_exit_at", "completed_at",
        "outcome", "retries", "pod",
    )

    def __init__(self, req_id: int, issued_at: SimTime, conn: int | None = None) -> None:
        self.id = req_id
        self.conn = conn
        self.first_issued_at = issued_at
        self.issued_at = issued_at
        self.gateway_enqueued_at: SimTime | None = None
        self.pod_enqueued_at: SimTime | None = None
        self.dispatched_at: SimTime | None = None
        self.service_start: SimTime | None = None
        self.service_end: SimTime | None = None
        self.pod_exit_at: SimTime | None = None
        self.completed_at: SimTime | None = None
        self.outcome = Outcome.IN_FLIGHT
        self.retries = 0
        self.pod: Any = None

    @property
    def latency(self) -> SimTime | None:
        if self.completed_at is None:
            return None
        return self.completed_at - self.issued_at

    def timestamps(self) -> list[SimTime]:
        order = (self.issued_at, self.gateway_enqueued_at, self.pod_enqueued_at,
                 self.service_start, self.service_end, self.completed_at)
        return [t for t in order if t is not None]

    def __repr__(self) -> str:
        return f"Request(id={self.id}, outcome={self.outcome.value}, retries={self.retries})"


@dataclass
class WorkloadSpec:
    mode: str = "closed-loop"
    connections: int = 1
    rps: float = 0.0
    arrivals: str = "deterministic"
    duration: SimTime = 60 * S
    warmup: SimTime = 0
    request_timeout: SimTime = 10 * S
    retry_delay: SimTime = 1 * MS
    max_retries: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("closed-loop", "open-loop"):
            raise InvalidValueError("mode", "must be 'closed-loop' or 'open-loop'")
        if self.mode == "closed-loop" and self.connections < 1:
            raise InvalidValueError("connections", "closed-loop needs at least one connection")
        if self.mode == "open-loop" and not self.rps > 0:
            raise InvalidValueError("rps", "open-loop needs rps > 0")
        if self.arrivals not in ("deterministic", "poisson"):
            raise InvalidValueError("arrivals", "must be 'deterministic' or 'poisson'")
        if self.duration <= 0:
            raise InvalidValueError("duration", "must be > 0")
        if not 0 <= self.warmup < self.duration:
            raise InvalidValueError("warmup", "must satisfy 0 <= warmup < duration")
        if self.request_timeout <= 0:
            raise InvalidValueError("request_timeout", "must be > 0")
        if self.retry_delay < 0:
            raise InvalidValueError("retry_delay", "must be >= 0")
        if self.max_retries is not None and self.max_retries < 0:
            raise InvalidValueError("max_retries", "must be >= 0")


class LoadGenerator:
    """Issues requests into ``submit`` (the gateway) and tracks their fate.

    Counts are over logical requests: a refused attempt is retried under the
    same id after ``retry_delay`` until the client deadline passes.
    """

    def __init__(
        self,
        sim: Simulation,
        spec: WorkloadSpec,
        histogram: "LatencyHistogram | None" = None,
        keep_requests: bool = False,
    ) -> None:
        self.sim = sim
        self.spec = spec
        self.histogram = histogram
        self.submit: Callable[[Request], Any] = lambda req: None
        self.requests: list[Request] | None = [] if keep_requests else None
        self.issued = 0
        self.completed = 0
        self.timed_out = 0
        self.dropped = 0
        self.refusals = 0
        self.retries = 0
        self.late_responses = 0
        self.outstanding = 0
        self.max_outstanding = 0
        self.completed_in_window = 0
        self.latency_sum_in_window = 0
        self._area = 0
        self._area_t = 0
        self._next_id = 0
        self._retry_delay = spec.retry_delay
        self._closed = spec.mode == "closed-loop"
        self._deadlines = DeadlineLane(
            sim, TIMEOUT_EXPIRY + ":client", spec.request_timeout, self._expire, _in_flight
        )
        sim.on(REQUEST_ARRIVAL, self._on_arrival)
        sim.on(CLIENT_RETRY, self._on_retry)
        sim.on(RESPONSE_DELIVERED, self._on_response_event)
        if spec.arrivals == "poisson":
            self._arrival_rng = sim.rng("workload")

    # -- driving ------------------------------------------------------------

    def start(self) -> None:
        if self.sim.now != 0:
            raise SimulationError("workload must start at t=0")
        spec = self.spec
        if spec.mode == "closed-loop":
            for conn in range(spec.connections):
                self.sim.schedule(0, REQUEST_ARRIVAL, conn)
        else:
            self.sim.schedule(0, REQUEST_ARRIVAL, 0)

    def open_loop_arrival_time(self, k: int) -> SimTime:
        """Deterministic schedule: the k-th arrival at ``round(k / rps)``."""
        return round(k * S / self.spec.rps)

    def _on_arrival(self, payload: int) -> None:
        spec = self.spec
        if spec.mode == "closed-loop":
            self.issue(conn=payload)
            return
        self.issue()
        if spec.arrivals == "deterministic":
            nxt = self.open_loop_arrival_time(payload + 1)
        else:
            nxt = self.sim.now + max(1, round(self._arrival_rng.expovariate(spec.rps) * S))
        if nxt < spec.duration:
            self.sim.schedule(nxt, REQUEST_ARRIVAL, payload + 1)

    def issue(self, conn: int | None = None, accounted: bool = False) -> Request:
        now = self.sim.now
        req = Request(self._next_id, now, conn)
        self._next_id += 1
        self.issued += 1
        if not accounted:
            self._account(+1)
        if self.requests is not None:
            self.requests.append(req)
        self._deadlines.add(req)
        self.submit(req)
        return req

    # -- outcomes -----------------------------------------------------------

    def on_refused(self, req: Request, at: SimTime, outcome: Outcome = Outcome.DROPPED_AT_INGRESS) -> None:
        """The attempt was refused; the client learns at ``at``."""
        if req.outcome is not _IN_FLIGHT:
            return
        self.refusals += 1
        max_retries = self.spec.max_retries
        if max_retries is not None and req.retries >= max_retries:
            req.outcome = outcome
            self.dropped += 1
            self._finish(req)
            return
        req.retries += 1
        self.retries += 1
        if at < self.sim.now:
            raise SimulationError("refusal reported in the past")
        # hot path under retry storms: push straight onto the event heap
        queue = self.sim.queue
        heappush(queue._heap, (at + self._retry_delay, next(queue._seq), CLIENT_RETRY, req))

    def _on_retry(self, req: Request) -> None:
        if req.outcome is not _IN_FLIGHT:
            return
        req.issued_at = self.sim.now
        req.gateway_enqueued_at = req.pod_enqueued_at = req.pod = None
        self.submit(req)

    def _on_response_event(self, req: Request) -> None:
        self.on_response(req, self.sim.now)

    def on_response(self, req: Request, at: SimTime) -> None:
        if req.completed_at is not None:
            raise SimulationError(f"duplicate response for request {req.id}")
        if req.outcome is not Outcome.IN_FLIGHT:
            self.late_responses += 1  # already timed out at the client
            return
        req.completed_at = at
        req.outcome = Outcome.COMPLETED
        self.completed += 1
        if self.spec.warmup < at <= self.spec.duration:
            latency = at - req.issued_at
            self.completed_in_window += 1
            self.latency_sum_in_window += latency
            if self.histogram is not None:
                self.histogram.record(latency)
        self._finish(req)

    def expire(self, req: Request) -> None:
        """Time the request out now (client deadline or gateway queue timeout)."""
        if req.outcome is not Outcome.IN_FLIGHT:
            return
        req.outcome = Outcome.TIMED_OUT
        self.timed_out += 1
        self._finish(req)

    _expire = expire

    def _finish(self, req: Request) -> None:
        if self._closed and self.sim.now < self.spec.duration:
            # the connection's next request replaces this one: outstanding is
            # unchanged, so the in-system integral needs no update
            self.issue(conn=req.conn, accounted=True)
        else:
            self._account(-1)

    def _account(self, delta: int) -> None:
        now = self.sim.now
        warmup = self.spec.warmup
        if now > warmup:
            self._area += self.outstanding * (now - max(self._area_t, warmup))
        self._area_t = now
        self.outstanding += delta
        if self.outstanding > self.max_outstanding:
            self.max_outstanding = self.outstanding

    # -- summaries ----------------------------------------------------------

    @property
    def in_flight(self) -> int:
        return self.outstanding

    def conservation_holds(self) -> bool:
        return self.issued == self.completed + self.timed_out + self.dropped + self.outstanding

    def mean_in_system(self, end: SimTime | None = None) -> float:
        """Time-averaged outstanding requests over the measurement window."""
        end = self.spec.duration if end is None else end
        warmup = self.spec.warmup
        area = self._area
        if end > warmup:
            area += self.outstanding * (end - max(self._area_t, warmup))
        span = end - warmup
        return area / span if span > 0 else 0.0


def _in_flight(req: Request) -> bool:
    return req.outcome is _IN_FLIGHT
