import pytest
from hypothesis import given, settings, strategies as st

from conftest import experiment
from serverless_sim.engine import MS, S, Simulation, ms, seconds
from serverless_sim.errors import ConfigError, SimulationError
from serverless_sim.metrics import LatencyHistogram
from serverless_sim.runner import run_scenario
from serverless_sim.workload import LoadGenerator, Outcome, WorkloadSpec


class StubGateway:
    """Accepts everything; the test decides when responses arrive."""

    def __init__(self, client, refuse_first=0):
        self.client = client
        self.seen = []
        self.refuse_left = refuse_first
        client.submit = self.submit

    def submit(self, req):
        self.seen.append((self.client.sim.now, req.id))
        if self.refuse_left:
            self.refuse_left -= 1
            self.client.on_refused(req, self.client.sim.now)


def stub(spec, refuse_first=0):
    sim = Simulation()
    hist = LatencyHistogram()
    client = LoadGenerator(sim, spec, hist, keep_requests=True)
    return sim, client, StubGateway(client, refuse_first), hist


def test_single_connection_1ms_gives_1000_rps():
    # one request outstanding, 1 ms each: 1 s / 1 ms completions
    oracle = 1.0 / 0.001
    bundle = run_scenario(experiment().scenario)
    assert bundle.summary["throughput_rps"] == pytest.approx(oracle, rel=1e-3)


def test_hundred_connections_one_worker_littles_law():
    # saturated single server: X = 1/service, W = N/X
    x_oracle, w_oracle = 1000.0, 100 / 1000.0
    exp = experiment(duration="20s", warmup="5s", workload={"connections": 100},
                     execution={"pod_queue_capacity": "unbounded"})
    exp.run()
    client = exp.client
    window = 15.0
    thr = client.completed_in_window / window
    mean_w = client.latency_sum_in_window / client.completed_in_window / S
    assert thr == pytest.approx(x_oracle, rel=0.01)
    assert mean_w == pytest.approx(w_oracle, rel=0.05)
    assert client.mean_in_system() == pytest.approx(thr * mean_w, rel=0.05)


def test_zero_connections_rejected():
    with pytest.raises(ConfigError) as err:
        experiment(workload={"connections": 0})
    assert err.value.key == "workload.connections"


def test_spec_invariants():
    with pytest.raises(ConfigError):
        WorkloadSpec("open-loop", rps=0)
    with pytest.raises(ConfigError):
        WorkloadSpec("closed-loop", connections=1, duration=S, warmup=S)
    with pytest.raises(ConfigError):
        WorkloadSpec("sideways")


def test_open_loop_arrival_count():
    sim = Simulation()
    client = LoadGenerator(sim, WorkloadSpec("open-loop", rps=100, duration=seconds(60)))
    client.submit = lambda req: None
    client.start()
    sim.run_until(seconds(60))
    assert client.issued == 6000


def test_open_loop_under_capacity_no_drops():
    exp = experiment(workload={"mode": "open-loop", "rps": 100}, duration="10s")
    exp.run()
    assert exp.client.refusals == 0 and exp.client.dropped == 0
    assert exp.client.completed == 1000


def test_open_loop_all_refused_times_out():
    exp = experiment(
        duration="3s",
        workload={"mode": "open-loop", "rps": 100, "request_timeout": "1s"},
        execution={"model": "fork-no-queue"},
        service={"runtime": "100s"},
    )
    exp.run()
    client = exp.client
    assert client.completed == 0
    assert client.retries > 0
    # everything issued before the last timeout horizon has expired
    early = [r for r in client.requests if r.first_issued_at <= seconds(2)]
    assert all(r.outcome is Outcome.TIMED_OUT for r in early)
    assert all(r.retries > 0 for r in early[1:])
    assert client.conservation_holds()


def test_poisson_arrivals_count_near_rate():
    sim = Simulation(seed=5)
    client = LoadGenerator(sim, WorkloadSpec("open-loop", rps=200, arrivals="poisson", duration=seconds(50)))
    client.submit = lambda req: None
    client.start()
    sim.run_until(seconds(50))
    expected = 200 * 50
    # 4 sigma of a Poisson count
    assert abs(client.issued - expected) < 4 * expected**0.5


def test_response_records_latency():
    spec = WorkloadSpec("closed-loop", connections=1, duration=seconds(1))
    sim, client, gw, hist = stub(spec)
    client.start()
    sim.run_until(0)
    req = client.requests[0]
    client.on_response(req, ms(5))
    assert hist.total == 1 and hist.sum == 5 * MS
    assert req.latency == 5 * MS


def test_refusal_retries_after_delay():
    spec = WorkloadSpec("closed-loop", connections=1, duration=seconds(1), retry_delay=ms(1))
    sim, client, gw, _ = stub(spec, refuse_first=1)
    client.start()
    sim.run_until(ms(5))
    assert [t for t, _ in gw.seen] == [0, ms(1)]
    assert client.requests[0].retries == 1


def test_ten_refusals_then_success():
    spec = WorkloadSpec("closed-loop", connections=1, duration=seconds(1), retry_delay=ms(1))
    sim, client, gw, hist = stub(spec, refuse_first=10)
    client.submit = gw.submit
    client.start()
    sim.run_until(ms(20))
    req = client.requests[0]
    assert len(gw.seen) == 11 and gw.seen[-1][0] == ms(10)
    client.on_response(req, sim.now)
    assert req.retries == 10
    assert client.completed == 1 and hist.total == 1


def test_duplicate_response_is_fatal():
    spec = WorkloadSpec("closed-loop", connections=1, duration=seconds(1))
    sim, client, _, _ = stub(spec)
    client.start()
    sim.run_until(0)
    req = client.requests[0]
    client.on_response(req, 10)
    with pytest.raises(SimulationError):
        client.on_response(req, 20)


def test_late_response_after_timeout_ignored():
    spec = WorkloadSpec("closed-loop", connections=1, duration=seconds(30), request_timeout=seconds(1))
    sim, client, _, hist = stub(spec)
    client.start()
    sim.run_until(seconds(2))
    first = client.requests[0]
    assert first.outcome is Outcome.TIMED_OUT
    client.on_response(first, sim.now)
    assert client.late_responses == 1 and hist.total == 0


def test_max_retries_drops():
    spec = WorkloadSpec("closed-loop", connections=1, duration=ms(3), retry_delay=ms(1), max_retries=2)
    sim, client, gw, _ = stub(spec, refuse_first=3)
    client.start()
    sim.run_until(ms(3))
    first = client.requests[0]
    assert first.outcome is Outcome.DROPPED_AT_INGRESS and first.retries == 2
    assert client.dropped == 1


@settings(max_examples=25, deadline=None)
@given(
    connections=st.integers(1, 30),
    workers=st.integers(1, 3),
    model=st.sampled_from(["warm-multi-worker", "sidecar-queue", "watchdog-proxy", "fork-no-queue"]),
    runtime_us=st.integers(50, 5000),
    timeout_ms=st.integers(5, 200),
)
def test_conservation_and_closed_loop_bound(connections, workers, model, runtime_us, timeout_ms):
    if model in ("watchdog-proxy", "fork-no-queue"):
        workers = 1
    exp = experiment(
        duration="300ms",
        workload={"connections": connections, "request_timeout": f"{timeout_ms}ms"},
        execution={"model": model, "workers": workers},
        service={"runtime": f"{runtime_us}us", "forward_in": "100us", "respond_out": "80us"},
    )
    exp.run()
    client = exp.client
    assert client.conservation_holds()
    assert client.max_outstanding <= connections
    for req in client.requests:
        stamps = req.timestamps()
        assert stamps == sorted(stamps)
        assert (req.outcome is Outcome.COMPLETED) == (req.completed_at is not None)
