"""Service exporting: ingress gateway, NodePort, and the scale-from-zero activator."""
from __future__ import annotations

import bisect
import enum
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

from .cluster import _READY, Cluster, PodAdmission, PodInstance
from .engine import MS, RESPONSE_DELIVERED, TIMEOUT_EXPIRY, DeadlineLane, S, SimTime, Simulation
from .errors import InvalidValueError
from .workload import LoadGenerator, Outcome, Request

LB_POLICIES = ("round-robin", "random", "least-connection")
EXPORT_MODES = ("ingress", "nodeport")


class Admission(str, enum.Enum):
    ROUTED = "routed"
    QUEUED = "queued"
    BUFFERED = "buffered"
    REFUSED = "refused"


@dataclass
class GatewayConfig:
    queue_capacity: int = 50_000
    queue_timeout: SimTime = 10 * S
    lb_policy: str = "round-robin"
    export_mode: str = "ingress"
    extra_hop_delay: SimTime = 50  # 0.05 ms

    def __post_init__(self) -> None:
        if self.queue_capacity < 0:
            raise InvalidValueError("queue_capacity", "must be >= 0")
        if self.queue_timeout <= 0:
            raise InvalidValueError("queue_timeout", "must be > 0")
        if self.lb_policy not in LB_POLICIES:
            raise InvalidValueError("lb_policy", f"must be one of {', '.join(LB_POLICIES)}")
        if self.export_mode not in EXPORT_MODES:
            raise InvalidValueError("export_mode", f"must be one of {', '.join(EXPORT_MODES)}")
        if self.extra_hop_delay < 0:
            raise InvalidValueError("extra_hop_delay", "must be >= 0")


class LoadBalancer:
    """Pod selection over a non-empty, id-ordered pod list."""

    def __init__(self, policy: str, rng=None) -> None:
        if policy not in LB_POLICIES:
            raise ValueError(f"unknown lb policy {policy!r}")
        if policy == "random" and rng is None:
            raise ValueError("random policy needs an rng stream")
        self.policy = policy
        self.rng = rng
        self._last_id = 0
        self._hint = 0

    def select(self, pods: Sequence[PodInstance]) -> PodInstance:
        if not pods:
            raise ValueError("select_pod needs at least one pod")
        if self.policy == "round-robin":
            last = self._last_id
            for pod in pods:
                if pod.id > last:
                    break
            else:
                pod = pods[0]
            self._last_id = pod.id
            return pod
        if self.policy == "random":
            return pods[self.rng.randrange(len(pods))]
        return min(pods, key=lambda p: (p.busy_workers + len(p.queue), p.id))


    def select_accepting(self, pods: Sequence[PodInstance]) -> PodInstance | None:
        """Same choice as ``select`` over the pods that can accept, or None."""
        if self.policy != "round-robin":
            candidates = [p for p in pods if p.can_accept()]
            return self.select(candidates) if candidates else None
        n = len(pods)
        last = self._last_id
        # scan starts at the first pod with id > last, then wraps
        i = self._hint
        if not (i < n and pods[i].id > last and (i == 0 or pods[i - 1].id <= last)):
            i = bisect.bisect_right(pods, last, key=_pod_id)
        for k in range(n):
            j = i + k
            if j >= n:
                j -= n
            pod = pods[j]
            if pod.state is _READY and (pod.busy_workers < pod.workers or len(pod.queue) < pod.queue_limit):
                self._last_id = pod.id
                self._hint = j + 1
                return pod
        return None


def _pod_id(pod: PodInstance) -> int:
    return pod.id


def select_pod(balancer: LoadBalancer, ready_pods: Sequence[PodInstance]) -> PodInstance:
    return balancer.select(ready_pods)


class Gateway:
    """Routes client requests to pods.

    Queue topology follows the execution archetype: WarmMultiWorker queues in
    the pod only, WatchdogProxy and SidecarQueue also queue at the gateway,
    ForkNoQueue queues nowhere. SidecarQueue additionally buffers at an
    activator while no pod is ready.
    """

    def __init__(self, sim: Simulation, config: GatewayConfig, cluster: Cluster, client: LoadGenerator) -> None:
        self.sim = sim
        self.config = config
        self.cluster = cluster
        self.client = client
        model = cluster.model
        self.nodeport = config.export_mode == "nodeport"
        self.queuing = model.gateway_queue and not self.nodeport
        self.activator_enabled = model.activator and not self.nodeport
        if self.nodeport:
            # netfilter DNAT balances at random whatever lb_policy says
            self.balancer = LoadBalancer("random", sim.rng("netfilter"))
        else:
            rng = sim.rng("load-balancer") if config.lb_policy == "random" else None
            self.balancer = LoadBalancer(config.lb_policy, rng)
        self.queue: deque[Request] = deque()
        self.activator: deque[Request] = deque()
        self.scale_from_zero_pending = False
        self.request_scale_from_zero: Callable[[], None] = lambda: None
        self.arrivals = 0
        self.routed = 0
        self.refused = 0
        self.queue_timeouts = 0
        self.max_queue = 0
        self._hop = config.extra_hop_delay
        self._timeouts = DeadlineLane(
            sim, TIMEOUT_EXPIRY + ":gateway", config.queue_timeout, self._on_queue_timeout, _still_queued
        )
        client.submit = self.admit
        cluster.on_response_out = self._on_response_out
        cluster.on_capacity = self._on_capacity
        cluster.on_pod_ready = self._on_pod_ready

    # -- admission ----------------------------------------------------------

    def admit(self, req: Request) -> Admission:
        """gateway_admit: route, queue, buffer at the activator, or refuse."""
        self.arrivals += 1
        ready = self.cluster.ready
        if self.nodeport:
            if not ready:
                return self._refuse(req, Outcome.DROPPED_AT_INGRESS)
            pod = self.balancer.select(ready)
            if not pod.can_accept():
                return self._refuse(req, Outcome.DROPPED_AT_POD)
            self._route(pod, req)
            return Admission.ROUTED
        if not ready and self.activator_enabled:
            self.activator.append(req)
            if not self.scale_from_zero_pending:
                self.scale_from_zero_pending = True
                self.request_scale_from_zero()
            return Admission.BUFFERED
        if self.queue:
            self._drain()
        if not self.queue:
            if len(ready) == 1:
                pod = ready[0]
                if pod.can_accept():
                    self.balancer._last_id = pod.id
                    self._route(pod, req)
                    return Admission.ROUTED
            elif ready:
                pod = self.balancer.select_accepting(ready)
                if pod is not None:
                    self._route(pod, req)
                    return Admission.ROUTED
        if self.queuing and len(self.queue) < self.config.queue_capacity:
            self._enqueue(req)
            return Admission.QUEUED
        self.refused += 1
        self.client.on_refused(req, self.sim.now + self._hop, Outcome.DROPPED_AT_INGRESS)
        return Admission.REFUSED

    def _route(self, pod: PodInstance, req: Request) -> None:
        self.routed += 1
        admission = self.cluster.pod_accept(pod, req, self.sim.now + self._hop)
        if admission is PodAdmission.REFUSED:
            self._refuse(req, Outcome.DROPPED_AT_POD, count=False)

    def _enqueue(self, req: Request) -> None:
        now = self.sim.now
        req.gateway_enqueued_at = now
        self.queue.append(req)
        if len(self.queue) > self.max_queue:
            self.max_queue = len(self.queue)
        self._timeouts.add((req, now))

    def _refuse(self, req: Request, where: Outcome, count: bool = True) -> Admission:
        if count:
            self.refused += 1
        # connection refused is reported back in one hop
        self.client.on_refused(req, self.sim.now + self._hop, where)
        return Admission.REFUSED

    # -- draining -----------------------------------------------------------

    def _drain(self) -> None:
        queue = self.queue
        ready = self.cluster.ready
        while queue:
            req = queue[0]
            if req.outcome is not Outcome.IN_FLIGHT:
                queue.popleft()
                continue
            pod = self.balancer.select_accepting(ready)
            if pod is None:
                return
            queue.popleft()
            self._route(pod, req)

    def activator_flush(self) -> None:
        """Send buffered requests, oldest first, through normal routing."""
        self.scale_from_zero_pending = False
        buffered = self.activator
        while buffered and self.cluster.ready:
            req = buffered.popleft()
            if req.outcome is Outcome.IN_FLIGHT:
                self.arrivals -= 1  # admit counts it again
                self.admit(req)

    def _on_capacity(self) -> None:
        if self.queue:
            self._drain()

    def _on_pod_ready(self, pod: PodInstance) -> None:
        if self.activator:
            self.activator_flush()
        else:
            self.scale_from_zero_pending = False
        if self.queue:
            self._drain()

    def _on_queue_timeout(self, entry: tuple[Request, SimTime]) -> None:
        self.queue_timeouts += 1
        self.client.expire(entry[0])

    def _on_response_out(self, req: Request) -> None:
        at = req.pod_exit_at
        if at == self.sim.now:
            self.client.on_response(req, at)
        else:
            self.sim.schedule(at, RESPONSE_DELIVERED, req)

    # -- observation --------------------------------------------------------

    def in_flight(self) -> int:
        """Requests held by gateway, activator and pods (the concurrency metric)."""
        total = len(self.queue) + len(self.activator)
        for pod in self.cluster.pods.values():
            total += pod.busy_workers + len(pod.queue)
        return total


def _still_queued(entry: tuple[Request, SimTime]) -> bool:
    req, stamp = entry
    return req.outcome is Outcome.IN_FLIGHT and req.pod is None and req.gateway_enqueued_at == stamp
