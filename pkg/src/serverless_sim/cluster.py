"""Function pods under the four execution archetypes.

Timing within a pod follows the breakdown measured per platform: a request
that reaches the pod is forwarded to the function (``forward_in``), runs
(``runtime``), and its response leaves the pod (``respond_out``).

Archetypes whose entry process is separate from the function process
(WarmMultiWorker's event listener, SidecarQueue's queue-proxy container)
release the worker as soon as the function returns; the response leaves in
parallel. WatchdogProxy and ForkNoQueue hold the worker until the response
is out.
"""
from __future__ import annotations

import enum
import math
from heapq import heappush
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

from .engine import MS, POD_READY, SERVICE_COMPLETE, S, SimTime, Simulation
from .errors import InvalidValueError, SimulationError
from .workload import Outcome, Request

MiB = 1024 * 1024


class ExecutionKind(str, enum.Enum):
    WARM_MULTI_WORKER = "warm-multi-worker"
    WATCHDOG_PROXY = "watchdog-proxy"
    SIDECAR_QUEUE = "sidecar-queue"
    FORK_NO_QUEUE = "fork-no-queue"


class PodState(str, enum.Enum):
    COLD_STARTING = "cold-starting"
    READY = "ready"
    TERMINATING = "terminating"
    TERMINATED = "terminated"


_READY = PodState.READY
_TERMINATING = PodState.TERMINATING
_IN_FLIGHT = Outcome.IN_FLIGHT


class PodAdmission(str, enum.Enum):
    ACCEPTED = "accepted"
    QUEUED = "queued"
    REFUSED = "refused"


SINGLE_WORKER_KINDS = (ExecutionKind.WATCHDOG_PROXY, ExecutionKind.FORK_NO_QUEUE)


@dataclass
class ExecutionModel:
    """Pod topology and resource knobs.

    ``pod_queue_capacity=None`` means unbounded; ``0`` means no queue.
    ``dispatch`` picks the next queued request: ``fifo`` or ``random``
    (of-watchdog proxies pending connections concurrently, so the function
    process picks among them in no fixed order).
    """

    kind: ExecutionKind
    workers: int = 1
    pod_queue_capacity: int | None = 50_000
    watchdog_mode: str = "http"
    dispatch: str = "fifo"
    cpu_weight: float = 1.0
    mem_base: int = 32 * MiB
    mem_per_queued: int = 4096

    def __post_init__(self) -> None:
        self.kind = ExecutionKind(self.kind)
        if self.workers < 1:
            raise InvalidValueError("workers", "must be >= 1")
        if self.kind in SINGLE_WORKER_KINDS and self.workers != 1:
            raise InvalidValueError("workers", f"{self.kind.value} pods have exactly one worker")
        if self.pod_queue_capacity is not None and self.pod_queue_capacity < 0:
            raise InvalidValueError("pod_queue_capacity", "must be >= 0 or unbounded")
        if self.kind is ExecutionKind.FORK_NO_QUEUE and self.pod_queue_capacity != 0:
            raise InvalidValueError("pod_queue_capacity", "fork-no-queue pods have no queue (use 0)")
        if self.watchdog_mode not in ("http", "fork-per-request"):
            raise InvalidValueError("watchdog_mode", "must be 'http' or 'fork-per-request'")
        if self.dispatch not in ("fifo", "random"):
            raise InvalidValueError("dispatch", "must be 'fifo' or 'random'")
        if self.cpu_weight < 0:
            raise InvalidValueError("cpu_weight", "must be >= 0")
        if self.mem_base < 0 or self.mem_per_queued < 0:
            raise InvalidValueError("mem_base", "memory sizes must be >= 0")

    @property
    def serial(self) -> bool:
        """Forwarding and response both occupy the worker."""
        return self.kind in SINGLE_WORKER_KINDS

    @property
    def forks_per_request(self) -> bool:
        if self.kind is ExecutionKind.FORK_NO_QUEUE:
            return True
        return self.kind is ExecutionKind.WATCHDOG_PROXY and self.watchdog_mode == "fork-per-request"

    @property
    def gateway_queue(self) -> bool:
        return self.kind in (ExecutionKind.WATCHDOG_PROXY, ExecutionKind.SIDECAR_QUEUE)

    @property
    def activator(self) -> bool:
        return self.kind is ExecutionKind.SIDECAR_QUEUE


@dataclass
class ServiceProfile:
    forward_in: SimTime
    runtime: SimTime
    respond_out: SimTime
    fork_cost: SimTime = 0
    jitter: float = 0.0  # uniform multiplicative +-fraction on each phase

    def __post_init__(self) -> None:
        for name in ("forward_in", "runtime", "respond_out", "fork_cost"):
            if getattr(self, name) < 0:
                raise InvalidValueError(name, "must be >= 0")
        if not 0.0 <= self.jitter < 1.0:
            raise InvalidValueError("jitter", "must be in [0, 1)")

    @property
    def in_pod_latency(self) -> SimTime:
        return self.forward_in + self.runtime + self.respond_out


@dataclass
class ColdStartProfile:
    cold_start_delay: SimTime = 0

    def __post_init__(self) -> None:
        if self.cold_start_delay < 0:
            raise InvalidValueError("cold_start_delay", "must be >= 0")


@dataclass
class PlatformProfile:
    execution: ExecutionModel
    service: ServiceProfile
    cold_start: ColdStartProfile

    def copy(self) -> "PlatformProfile":
        return PlatformProfile(replace(self.execution), replace(self.service), replace(self.cold_start))


def _us(value_ms: float) -> SimTime:
    return round(value_ms * MS)


# Per-platform defaults. In-pod timings are the measured breakdown in ms.
# Cold start is 0 for warm-start platforms and 2 s otherwise.
PLATFORM_DEFAULTS: dict[str, PlatformProfile] = {
    "nuclio": PlatformProfile(
        ExecutionModel(ExecutionKind.WARM_MULTI_WORKER, cpu_weight=1.2),
        ServiceProfile(_us(0.63), _us(0.001), _us(0.54)),
        ColdStartProfile(0),
    ),
    "openfaas": PlatformProfile(
        ExecutionModel(ExecutionKind.WATCHDOG_PROXY, dispatch="random", cpu_weight=1.0),
        # fork mode runs ~10x slower than http mode: 9 x 2.251 ms extra per request
        ServiceProfile(_us(1.32), _us(0.001), _us(0.93), fork_cost=_us(20.259)),
        ColdStartProfile(2 * S),
    ),
    "knative": PlatformProfile(
        ExecutionModel(ExecutionKind.SIDECAR_QUEUE, cpu_weight=1.0, mem_base=64 * MiB),
        ServiceProfile(_us(1.30), _us(0.001), _us(0.62)),
        ColdStartProfile(2 * S),
    ),
    "kubeless": PlatformProfile(
        ExecutionModel(ExecutionKind.FORK_NO_QUEUE, pod_queue_capacity=0, cpu_weight=0.45),
        ServiceProfile(_us(4.96), _us(0.001), _us(2.63)),
        ColdStartProfile(2 * S),
    ),
}

PLATFORM_KINDS = {name: profile.execution.kind for name, profile in PLATFORM_DEFAULTS.items()}


class PodInstance:
    __slots__ = (
        "id", "model", "state", "busy_workers", "queue", "created_at", "ready_at",
        "cpu_accumulator", "cpu_since", "last_cpu", "last_mem", "last_sampled_at", "served",
        "workers", "queue_limit",
    )

    def __init__(self, pod_id: int, model: ExecutionModel, created_at: SimTime) -> None:
        self.id = pod_id
        self.model = model
        self.state = PodState.COLD_STARTING
        self.busy_workers = 0
        self.queue: deque[Request] = deque()
        self.created_at = created_at
        self.ready_at: SimTime | None = None
        self.cpu_accumulator = 0
        self.cpu_since = created_at
        self.last_cpu: float | None = None
        self.last_mem: int | None = None
        self.last_sampled_at: SimTime | None = None
        self.served = 0
        # admission limits, copied out of the model for the routing hot path
        self.workers = model.workers
        cap = model.pod_queue_capacity
        self.queue_limit = math.inf if cap is None else cap

    def can_accept(self) -> bool:
        return self.state is _READY and (self.busy_workers < self.workers or len(self.queue) < self.queue_limit)

    @property
    def load(self) -> int:
        return self.busy_workers + len(self.queue)

    @property
    def idle(self) -> bool:
        return self.busy_workers == 0 and not self.queue

    def __repr__(self) -> str:
        return f"PodInstance(id={self.id}, state={self.state.value}, busy={self.busy_workers}, queued={len(self.queue)})"


def sample_pod_resources(pod: PodInstance, window: SimTime) -> tuple[float, int]:
    """CPU fraction and memory over the last ``window``; resets the CPU accumulator."""
    if window <= 0:
        raise ValueError("window must be > 0")
    model = pod.model
    busy = pod.cpu_accumulator / (window * model.workers)
    cpu = min(1.0, busy * model.cpu_weight)
    mem = model.mem_base + len(pod.queue) * model.mem_per_queued
    pod.cpu_accumulator = 0
    return cpu, mem


class Cluster:
    """Replica set for one function.

    The gateway wires three callbacks: ``on_response_out(req)`` when a
    response leaves a pod, ``on_capacity()`` when a worker or queue slot
    frees, and ``on_pod_ready(pod)``.
    """

    def __init__(self, sim: Simulation, profile: PlatformProfile) -> None:
        self.sim = sim
        self.model = profile.execution
        self.service = profile.service
        self.cold_start = profile.cold_start
        self.pods: dict[int, PodInstance] = {}
        self.ready: list[PodInstance] = []
        self.pending = 0
        self.peak_pods = 0
        self.ready_history: list[tuple[SimTime, int]] = []
        self._next_id = 1
        self._jitter_rng = sim.rng("jitter") if self.service.jitter > 0 else None
        self._dispatch_rng = sim.rng("dispatch") if self.model.dispatch == "random" else None
        self._serial = self.model.serial
        self._forks = self.model.forks_per_request
        self.on_response_out: Callable[[Request], None] = lambda req: None
        self.on_capacity: Callable[[], None] = lambda: None
        self.on_pod_ready: Callable[[PodInstance], None] = lambda pod: None
        sim.on(SERVICE_COMPLETE, self._on_service_complete)
        sim.on(POD_READY, self._on_pod_ready)

    # -- replica management -------------------------------------------------

    def provision(self, count: int) -> list[PodInstance]:
        """Pods that exist before the run starts: ready at once, no cold start."""
        pods = []
        for _ in range(count):
            pod = self._new_pod()
            self._mark_ready(pod)
            pods.append(pod)
        return pods

    def spawn_pod(self) -> PodInstance:
        pod = self._new_pod()
        self.pending += 1
        self.sim.schedule_in(self.cold_start.cold_start_delay, POD_READY, pod)
        return pod

    def terminate_pod(self, pod: PodInstance) -> None:
        if pod.state is PodState.COLD_STARTING:
            self.pending -= 1
            self._remove(pod)
        elif pod.state is PodState.READY:
            pod.state = PodState.TERMINATING
            self.ready.remove(pod)
            self.ready_history.append((self.sim.now, len(self.ready)))
            if pod.idle:
                self._remove(pod)

    def pending_pods(self) -> list[PodInstance]:
        return [p for p in self.pods.values() if p.state is PodState.COLD_STARTING]

    def running_pods(self) -> list[PodInstance]:
        return [p for p in self.pods.values() if p.state in (PodState.READY, PodState.TERMINATING)]

    def _new_pod(self) -> PodInstance:
        pod = PodInstance(self._next_id, self.model, self.sim.now)
        self._next_id += 1
        self.pods[pod.id] = pod
        self.peak_pods = max(self.peak_pods, len(self.pods))
        return pod

    def _mark_ready(self, pod: PodInstance) -> None:
        pod.state = PodState.READY
        pod.ready_at = pod.cpu_since = self.sim.now
        pod.cpu_accumulator = 0
        self.ready.append(pod)
        self.ready.sort(key=lambda p: p.id)
        self.ready_history.append((self.sim.now, len(self.ready)))

    def _remove(self, pod: PodInstance) -> None:
        pod.state = PodState.TERMINATED
        del self.pods[pod.id]

    def _on_pod_ready(self, pod: PodInstance) -> None:
        if pod.state is not PodState.COLD_STARTING:
            return  # cancelled while starting
        self.pending -= 1
        self._mark_ready(pod)
        self.on_pod_ready(pod)

    # -- request path -------------------------------------------------------

    def pod_accept(self, pod: PodInstance, req: Request, now: SimTime) -> PodAdmission:
        """Offer ``req`` arriving at ``pod`` at time ``now``."""
        if pod.state is not PodState.READY:
            raise SimulationError(f"request {req.id} offered to non-ready {pod!r}")
        req.pod = pod
        req.pod_enqueued_at = now
        if pod.busy_workers < pod.workers:
            pod.busy_workers += 1
            self._start(pod, req, now)
            return PodAdmission.ACCEPTED
        if len(pod.queue) < pod.queue_limit:
            pod.queue.append(req)
            return PodAdmission.QUEUED
        req.pod = None
        req.pod_enqueued_at = None
        return PodAdmission.REFUSED

    def _start(self, pod: PodInstance, req: Request, at: SimTime) -> None:
        service = self.service
        forward, runtime, out = service.forward_in, service.runtime, service.respond_out
        if self._forks:
            forward += service.fork_cost
        rng = self._jitter_rng
        if rng is not None:
            j = service.jitter
            forward = round(forward * rng.uniform(1 - j, 1 + j))
            runtime = round(runtime * rng.uniform(1 - j, 1 + j))
            out = round(out * rng.uniform(1 - j, 1 + j))
        req.dispatched_at = at
        req.service_start = start = at + forward
        req.service_end = end = start + runtime
        req.pod_exit_at = exit_at = end + out
        # at >= now always holds here, so skip the past-time check
        queue = self.sim.queue
        heappush(queue._heap, (exit_at if self._serial else end, next(queue._seq), SERVICE_COMPLETE, (pod, req)))

    def _on_service_complete(self, payload: tuple[PodInstance, Request]) -> None:
        """pod_complete: the worker frees; the response leaves at ``req.pod_exit_at``.

        The response callback runs after the freed slot has been handed on, so
        requests already waiting are served before the client's next one.
        """
        pod, req = payload
        now = self.sim.now
        pod.cpu_accumulator += req.pod_exit_at - req.dispatched_at
        pod.served += 1
        queue = pod.queue
        while queue:
            if self._dispatch_rng is None:
                nxt = queue.popleft()
            else:
                i = self._dispatch_rng.randrange(len(queue))
                nxt = queue[i]
                del queue[i]
            if nxt.outcome is _IN_FLIGHT:
                enq = nxt.pod_enqueued_at
                self._start(pod, nxt, enq if enq > now else now)
                break
        else:
            pod.busy_workers -= 1
            if pod.busy_workers == 0 and pod.state is _TERMINATING:
                self._remove(pod)
                self.on_response_out(req)
                return
        self.on_capacity()
        self.on_response_out(req)
