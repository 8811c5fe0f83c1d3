import pytest
from hypothesis import given, settings, strategies as st

from conftest import experiment
from serverless_sim.cluster import (
    PLATFORM_DEFAULTS,
    Cluster,
    ColdStartProfile,
    ExecutionKind,
    ExecutionModel,
    PlatformProfile,
    PodAdmission,
    PodState,
    ServiceProfile,
    sample_pod_resources,
)
from serverless_sim.engine import MS, S, Simulation, ms, seconds
from serverless_sim.errors import ConfigError, SimulationError
from serverless_sim.workload import Outcome, Request

# in-pod timings, ms: forward_in, runtime, respond_out
MEASURED = {
    "nuclio": (0.63, 0.001, 0.54),
    "openfaas": (1.32, 0.001, 0.93),
    "knative": (1.30, 0.001, 0.62),
    "kubeless": (4.96, 0.001, 2.63),
}


def cluster_for(profile):
    sim = Simulation()
    cluster = Cluster(sim, profile)
    out = []
    cluster.on_response_out = out.append
    return sim, cluster, out


@pytest.mark.parametrize("name", sorted(MEASURED))
def test_defaults_carry_measured_timings(name):
    svc = PLATFORM_DEFAULTS[name].service
    assert (svc.forward_in, svc.runtime, svc.respond_out) == tuple(round(v * 1000) for v in MEASURED[name])


@pytest.mark.parametrize("name", sorted(MEASURED))
def test_isolated_request_in_pod_latency(name):
    expected_us = round(sum(MEASURED[name]) * 1000)
    sim, cluster, out = cluster_for(PLATFORM_DEFAULTS[name])
    (pod,) = cluster.provision(1)
    req = Request(0, 0)
    assert cluster.pod_accept(pod, req, 0) is PodAdmission.ACCEPTED
    sim.run_until(seconds(1))
    assert out == [req]
    assert req.pod_exit_at - req.pod_enqueued_at == expected_us


def test_warm_worker_starts_after_forward_in():
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["nuclio"])
    (pod,) = cluster.provision(1)
    req = Request(0, 0)
    cluster.pod_accept(pod, req, 100)
    assert req.service_start == 100 + 630


def test_fork_no_queue_refuses_when_busy():
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["kubeless"])
    (pod,) = cluster.provision(1)
    assert cluster.pod_accept(pod, Request(0, 0), 0) is PodAdmission.ACCEPTED
    second = Request(1, 0)
    assert cluster.pod_accept(pod, second, 0) is PodAdmission.REFUSED
    assert second.pod is None and not pod.queue


def test_sidecar_queues_when_busy():
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["knative"])
    (pod,) = cluster.provision(1)
    cluster.pod_accept(pod, Request(0, 0), 0)
    assert cluster.pod_accept(pod, Request(1, 0), 0) is PodAdmission.QUEUED
    assert len(pod.queue) == 1


def test_accept_on_non_ready_pod_is_fatal():
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["knative"])
    pod = cluster.spawn_pod()
    with pytest.raises(SimulationError):
        cluster.pod_accept(pod, Request(0, 0), 0)


def test_queued_request_waits_for_predecessor_serial():
    # watchdog pods hold the worker for the full in-pod time
    profile = PLATFORM_DEFAULTS["openfaas"].copy()
    profile.execution.dispatch = "fifo"
    sim, cluster, _ = cluster_for(profile)
    (pod,) = cluster.provision(1)
    first, second = Request(0, 0), Request(1, 0)
    cluster.pod_accept(pod, first, 0)
    cluster.pod_accept(pod, second, 500)
    sim.run_until(seconds(1))
    assert second.dispatched_at == 1320 + 1 + 930
    assert second.pod_exit_at == 2 * 2251


def test_queued_request_waits_for_predecessor_pipelined():
    # the listener hands the response off, so the worker frees after runtime
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["nuclio"])
    (pod,) = cluster.provision(1)
    first, second = Request(0, 0), Request(1, 0)
    cluster.pod_accept(pod, first, 0)
    cluster.pod_accept(pod, second, 100)
    sim.run_until(seconds(1))
    assert second.dispatched_at == 631
    assert second.pod_exit_at == 631 + 1171


def test_cold_start_zero_is_ready_at_once():
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["nuclio"])
    pod = cluster.spawn_pod()
    sim.run_until(0)
    assert pod.state is PodState.READY and pod.ready_at == 0


def test_cold_start_two_seconds():
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["knative"])
    sim.on("go", lambda p: p.append(cluster.spawn_pod()))
    spawned = []
    sim.schedule(seconds(10), "go", spawned)
    sim.run_until(seconds(11))
    assert spawned[0] not in cluster.ready
    sim.run_until(seconds(12))
    assert cluster.ready == spawned and spawned[0].ready_at == seconds(12)


def test_ten_spawns_distinct_ready_events():
    sim = Simulation(trace=True)
    cluster = Cluster(sim, PLATFORM_DEFAULTS["knative"])
    for _ in range(10):
        cluster.spawn_pod()
    sim.run_until(seconds(3))
    ready = [(t, seq) for t, seq, kind in sim.trace if kind == "pod-ready"]
    assert len(ready) == 10 and len({seq for _, seq in ready}) == 10
    assert len(cluster.ready) == 10 and cluster.pending == 0


def test_terminating_pending_pod_cancels_it():
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["knative"])
    pod = cluster.spawn_pod()
    cluster.terminate_pod(pod)
    sim.run_until(seconds(5))
    assert not cluster.ready and cluster.pending == 0 and pod.state is PodState.TERMINATED


def test_busy_pod_drains_before_removal():
    sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["nuclio"])
    (pod,) = cluster.provision(1)
    cluster.pod_accept(pod, Request(0, 0), 0)
    cluster.terminate_pod(pod)
    assert pod.state is PodState.TERMINATING and pod.id in cluster.pods
    sim.run_until(seconds(1))
    assert pod.state is PodState.TERMINATED and pod.id not in cluster.pods


class TestResources:
    def test_idle_pod(self):
        sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["nuclio"])
        (pod,) = cluster.provision(1)
        assert sample_pod_resources(pod, seconds(2)) == (0.0, pod.model.mem_base)

    def test_fully_busy_pod(self):
        model = ExecutionModel(ExecutionKind.WARM_MULTI_WORKER)
        sim = Simulation()
        cluster = Cluster(sim, PlatformProfile(model, ServiceProfile(0, seconds(10), 0), ColdStartProfile()))
        (pod,) = cluster.provision(1)
        pod.cpu_accumulator = seconds(2)
        assert sample_pod_resources(pod, seconds(2))[0] == 1.0
        assert pod.cpu_accumulator == 0

    def test_half_busy_pod(self):
        # a 1 s request inside a 2 s window: 0.5 by construction
        model = ExecutionModel(ExecutionKind.WARM_MULTI_WORKER)
        sim = Simulation()
        cluster = Cluster(sim, PlatformProfile(model, ServiceProfile(0, seconds(1), 0), ColdStartProfile()))
        (pod,) = cluster.provision(1)
        cluster.pod_accept(pod, Request(0, 0), 0)
        sim.run_until(seconds(2))
        assert sample_pod_resources(pod, seconds(2))[0] == pytest.approx(0.5)

    def test_weight_and_memory(self):
        model = ExecutionModel(ExecutionKind.SIDECAR_QUEUE, workers=2, cpu_weight=0.5, mem_base=1000, mem_per_queued=10)
        sim = Simulation()
        cluster = Cluster(sim, PlatformProfile(model, ServiceProfile(0, seconds(10), 0), ColdStartProfile()))
        (pod,) = cluster.provision(1)
        for i in range(5):
            cluster.pod_accept(pod, Request(i, 0), 0)
        pod.cpu_accumulator = seconds(2)  # one of two workers busy for the window
        assert sample_pod_resources(pod, seconds(2)) == (0.25, 1000 + 3 * 10)

    def test_window_must_be_positive(self):
        sim, cluster, _ = cluster_for(PLATFORM_DEFAULTS["nuclio"])
        (pod,) = cluster.provision(1)
        with pytest.raises(ValueError):
            sample_pod_resources(pod, 0)


class TestModelValidation:
    def test_fork_no_queue_has_no_queue(self):
        with pytest.raises(ConfigError) as err:
            ExecutionModel(ExecutionKind.FORK_NO_QUEUE, pod_queue_capacity=5)
        assert err.value.key == "pod_queue_capacity"

    @pytest.mark.parametrize("kind", [ExecutionKind.WATCHDOG_PROXY, ExecutionKind.FORK_NO_QUEUE])
    def test_single_worker_kinds(self, kind):
        with pytest.raises(ConfigError):
            ExecutionModel(kind, workers=2, pod_queue_capacity=0)

    def test_negative_service_time(self):
        with pytest.raises(ConfigError):
            ServiceProfile(-1, 0, 0)

    def test_fork_per_request_adds_fork_cost(self):
        profile = PLATFORM_DEFAULTS["openfaas"].copy()
        profile.execution.watchdog_mode = "fork-per-request"
        sim, cluster, _ = cluster_for(profile)
        (pod,) = cluster.provision(1)
        req = Request(0, 0)
        cluster.pod_accept(pod, req, 0)
        assert req.service_start == 1320 + profile.service.fork_cost


@settings(max_examples=30, deadline=None)
@given(
    kind=st.sampled_from(list(ExecutionKind)),
    workers=st.integers(1, 4),
    arrivals=st.lists(st.integers(0, 20_000), min_size=1, max_size=60),
    runtime=st.integers(1, 3000),
)
def test_pod_invariants(kind, workers, arrivals, runtime):
    if kind in (ExecutionKind.WATCHDOG_PROXY, ExecutionKind.FORK_NO_QUEUE):
        workers = 1
    cap = 0 if kind is ExecutionKind.FORK_NO_QUEUE else None
    model = ExecutionModel(kind, workers=workers, pod_queue_capacity=cap)
    sim = Simulation()
    cluster = Cluster(sim, PlatformProfile(model, ServiceProfile(200, runtime, 150), ColdStartProfile()))
    (pod,) = cluster.provision(1)
    admitted, done, peak = [], [], [0]

    def offer(req):
        result = cluster.pod_accept(pod, req, sim.now)
        peak[0] = max(peak[0], pod.busy_workers)
        if kind is ExecutionKind.FORK_NO_QUEUE:
            assert result is not PodAdmission.QUEUED
        if result is not PodAdmission.REFUSED:
            admitted.append(req)

    cluster.on_response_out = done.append
    sim.on("request-arrival", offer)
    for i, t in enumerate(sorted(arrivals)):
        sim.schedule(t, "request-arrival", Request(i, t))
    sim.run_until(seconds(10))
    assert peak[0] <= workers
    assert len(done) == len(admitted)
    # FIFO: queued requests start in the order they were admitted
    starts = [r.dispatched_at for r in admitted]
    assert starts == sorted(starts)
    assert [r.id for r in sorted(admitted, key=lambda r: (r.dispatched_at, r.id))] == [r.id for r in admitted]
