"""Resource-based HPA, the concurrency/RPS KPA, and the RPS alert chain.

The ``*_evaluate`` functions hold the scaling rules; the controllers own the
periodic ticks, gather samples and apply the result to the cluster.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .cluster import Cluster, MiB
from .engine import ALERT_FIRE, AUTOSCALER_TICK, METRIC_SCRAPE, S, SimTime, Simulation, to_seconds
from .errors import InvalidValueError

_EPS = 1e-9


def _ceil(x: float) -> int:
    # guards against 2.0000000000000004-style float noise
    return math.ceil(x - _EPS)


@dataclass
class HpaConfig:
    metric: str = "cpu"
    target_fraction: float = 0.5
    sync_period: SimTime = 15 * S
    min_replicas: int = 1
    max_replicas: int = 10
    tolerance: float = 0.1
    memory_request: int = 128 * MiB

    def __post_init__(self) -> None:
        if self.metric not in ("cpu", "memory"):
            raise InvalidValueError("metric", "must be 'cpu' or 'memory'")
        if not 0 < self.target_fraction <= 1:
            raise InvalidValueError("target_fraction", "must be in (0, 1]")
        if self.sync_period <= 0:
            raise InvalidValueError("sync_period", "must be > 0")
        _check_bounds(self.min_replicas, self.max_replicas, "min_replicas")
        if self.tolerance < 0:
            raise InvalidValueError("tolerance", "must be >= 0")
        if self.memory_request <= 0:
            raise InvalidValueError("memory_request", "must be > 0")


@dataclass
class KpaConfig:
    metric: str = "concurrency"
    target: float = 10.0
    tick: SimTime = 2 * S
    stable_window: SimTime = 10 * S
    max_scale_up_rate: float = 100.0
    min_scale: int = 1
    max_scale: int = 10
    scale_to_zero: bool = False
    scale_to_zero_grace: SimTime = 30 * S

    def __post_init__(self) -> None:
        if self.metric not in ("concurrency", "rps"):
            raise InvalidValueError("metric", "must be 'concurrency' or 'rps'")
        if not self.target > 0:
            raise InvalidValueError("target", "must be > 0")
        if self.tick <= 0:
            raise InvalidValueError("tick", "must be > 0")
        if self.tick > self.stable_window:
            raise InvalidValueError("tick", "must not exceed stable_window")
        if self.max_scale_up_rate < 1:
            raise InvalidValueError("max_scale_up_rate", "must be >= 1")
        if self.min_scale < 0 or (self.min_scale == 0 and not self.scale_to_zero):
            raise InvalidValueError("min_scale", "must be >= 1 unless scale_to_zero is set")
        if self.max_scale < max(self.min_scale, 1):
            raise InvalidValueError("max_scale", "must be >= min_scale and >= 1")
        if self.scale_to_zero_grace < 0:
            raise InvalidValueError("scale_to_zero_grace", "must be >= 0")

    @property
    def window_slots(self) -> int:
        return max(1, self.stable_window // self.tick)


@dataclass
class RpsAlertConfig:
    rps_threshold: float = 10.0
    alert_window: SimTime = 2 * S
    scale_factor_percent: float = 10.0
    scrape_interval: SimTime = 1 * S
    pipeline_delay: SimTime = 1 * S
    min_replicas: int = 1
    max_replicas: int = 10

    def __post_init__(self) -> None:
        if not self.rps_threshold > 0:
            raise InvalidValueError("rps_threshold", "must be > 0")
        if self.alert_window <= 0:
            raise InvalidValueError("alert_window", "must be > 0")
        if not 0 < self.scale_factor_percent <= 100:
            raise InvalidValueError("scale_factor_percent", "must be in (0, 100]")
        if self.scrape_interval <= 0:
            raise InvalidValueError("scrape_interval", "must be > 0")
        if self.pipeline_delay < 0:
            raise InvalidValueError("pipeline_delay", "must be >= 0")
        _check_bounds(self.min_replicas, self.max_replicas, "min_replicas")

    @property
    def step(self) -> int:
        return max(1, _ceil(self.scale_factor_percent * self.max_replicas / 100))


def _check_bounds(lo: int, hi: int, key: str) -> None:
    if lo < 1:
        raise InvalidValueError(key, "must be >= 1")
    if lo > hi:
        raise InvalidValueError(key, "must not exceed the maximum")


@dataclass
class AutoscalerState:
    current_desired: int
    metric_window: deque = field(default_factory=deque)
    last_action_at: SimTime | None = None
    idle_since: SimTime | None = None
    actions: list[tuple[SimTime, int, int]] = field(default_factory=list)
    evaluations: list[tuple[SimTime, float, int]] = field(default_factory=list)


# -- decisions ---------------------------------------------------------------


def hpa_evaluate(current_desired: int, current_ready: int, metrics: list[float], cfg: HpaConfig) -> int:
    """desired = ceil(ready * mean / target), held inside the tolerance band."""
    if current_ready == 0 or not metrics:
        return current_desired
    mean = sum(metrics) / len(metrics)
    ratio = mean / cfg.target_fraction
    if abs(ratio - 1.0) <= cfg.tolerance:
        return current_desired
    desired = _ceil(current_ready * ratio)
    return max(cfg.min_replicas, min(cfg.max_replicas, desired))


def kpa_evaluate(state: AutoscalerState, cfg: KpaConfig, current_ready: int, now: SimTime) -> int:
    """Stable-window average over ``state.metric_window`` divided by the per-pod target."""
    window = state.metric_window
    avg = sum(window) / len(window) if window else 0.0
    if cfg.scale_to_zero and avg == 0:
        if state.idle_since is None:
            state.idle_since = now
        if state.current_desired == 0 or now - state.idle_since >= cfg.scale_to_zero_grace:
            return 0
    else:
        state.idle_since = None
    desired = _ceil(avg / cfg.target)
    desired = min(desired, _ceil(cfg.max_scale_up_rate * max(current_ready, 1)), cfg.max_scale)
    floor = max(cfg.min_scale, 1)
    return max(floor, desired)


def rps_alert_evaluate(rps: float, cfg: RpsAlertConfig, active_since: SimTime | None, now: SimTime) -> tuple[SimTime | None, bool]:
    """One alert-rule evaluation; returns ``(active_since, fire)``.

    The rule has a ``for`` clause of one alert window: it turns active when
    ``rps > threshold`` is first seen and fires once it has held that long.
    """
    if rps <= cfg.rps_threshold:
        return None, False
    if active_since is None:
        active_since = now
    return active_since, now - active_since >= cfg.alert_window


def apply_desired(cluster: Cluster, desired: int) -> tuple[int, int]:
    """Spawn or drain pods so ready + pending matches ``desired``.

    Surplus cold-starting pods are cancelled first (newest first), then
    ready pods drain from the highest id. Returns ``(spawned, removed)``.
    """
    current = len(cluster.ready) + cluster.pending
    if desired > current:
        for _ in range(desired - current):
            cluster.spawn_pod()
        return desired - current, 0
    surplus = current - desired
    removed = 0
    for pod in sorted(cluster.pending_pods(), key=lambda p: -p.id):
        if removed == surplus:
            break
        cluster.terminate_pod(pod)
        removed += 1
    for pod in sorted(cluster.ready, key=lambda p: -p.id):
        if removed == surplus:
            break
        cluster.terminate_pod(pod)
        removed += 1
    return 0, removed


# -- controllers -------------------------------------------------------------


class _Controller:
    min_replicas = 1

    def __init__(self, sim: Simulation, cluster: Cluster, initial: int) -> None:
        self.sim = sim
        self.cluster = cluster
        self.state = AutoscalerState(current_desired=initial)

    def set_desired(self, desired: int) -> None:
        state = self.state
        if desired != state.current_desired:
            state.actions.append((self.sim.now, state.current_desired, desired))
            state.last_action_at = self.sim.now
            state.current_desired = desired
        apply_desired(self.cluster, desired)


class HpaController(_Controller):
    def __init__(self, sim: Simulation, cluster: Cluster, cfg: HpaConfig, initial: int) -> None:
        super().__init__(sim, cluster, initial)
        self.cfg = cfg
        sim.on(AUTOSCALER_TICK, self._on_tick)

    def start(self) -> None:
        self.sim.schedule(self.cfg.sync_period, AUTOSCALER_TICK)

    def pod_metrics(self) -> list[float]:
        ready = self.cluster.ready
        if self.cfg.metric == "cpu":
            return [p.last_cpu for p in ready if p.last_cpu is not None]
        return [p.last_mem / self.cfg.memory_request for p in ready if p.last_mem is not None]

    def _on_tick(self, _payload) -> None:
        metrics = self.pod_metrics()
        desired = hpa_evaluate(self.state.current_desired, len(self.cluster.ready), metrics, self.cfg)
        mean = sum(metrics) / len(metrics) if metrics else 0.0
        self.state.evaluations.append((self.sim.now, mean, desired))
        self.set_desired(desired)
        self.sim.schedule_in(self.cfg.sync_period, AUTOSCALER_TICK)


class KpaController(_Controller):
    def __init__(self, sim: Simulation, cluster: Cluster, cfg: KpaConfig, gateway, initial: int) -> None:
        super().__init__(sim, cluster, initial)
        self.cfg = cfg
        self.gateway = gateway
        # zero-padded: the window starts full of zero samples
        self.state.metric_window = deque([0.0] * cfg.window_slots, maxlen=cfg.window_slots)
        self._last_arrivals = 0
        gateway.request_scale_from_zero = self.scale_from_zero
        sim.on(AUTOSCALER_TICK, self._on_tick)

    def start(self) -> None:
        self.sim.schedule(self.cfg.tick, AUTOSCALER_TICK)

    def sample(self) -> float:
        if self.cfg.metric == "concurrency":
            return float(self.gateway.in_flight())
        arrivals = self.gateway.arrivals
        rps = (arrivals - self._last_arrivals) / to_seconds(self.cfg.tick)
        self._last_arrivals = arrivals
        return rps

    def _on_tick(self, _payload) -> None:
        value = self.sample()
        self.state.metric_window.append(value)
        desired = kpa_evaluate(self.state, self.cfg, len(self.cluster.ready), self.sim.now)
        self.state.evaluations.append((self.sim.now, value, desired))
        self.set_desired(desired)
        self.sim.schedule_in(self.cfg.tick, AUTOSCALER_TICK)

    def scale_from_zero(self) -> None:
        """Activator poke: a request is buffered and nothing is running."""
        self.state.idle_since = None
        if self.state.current_desired == 0:
            self.set_desired(1)
        elif not self.cluster.ready and not self.cluster.pending:
            apply_desired(self.cluster, self.state.current_desired)


PROMETHEUS_SCRAPE = METRIC_SCRAPE + ":prometheus"


class RpsAlertController(_Controller):
    """gateway -> Prometheus -> AlertManager -> gateway -> controller.

    Prometheus scrapes the gateway request counter every ``scrape_interval``;
    the rule is evaluated every ``alert_window``; each notification reaches
    the controller ``pipeline_delay`` later and moves replicas by one step.
    """

    def __init__(self, sim: Simulation, cluster: Cluster, cfg: RpsAlertConfig, gateway, initial: int) -> None:
        super().__init__(sim, cluster, initial)
        self.cfg = cfg
        self.gateway = gateway
        self.snapshots: deque[tuple[SimTime, int]] = deque([(0, 0)])
        self.active_since: SimTime | None = None
        self.resolved_since: SimTime | None = None
        self.fired: list[tuple[SimTime, str]] = []
        sim.on(PROMETHEUS_SCRAPE, self._on_scrape)
        sim.on(AUTOSCALER_TICK, self._on_evaluate)
        sim.on(ALERT_FIRE, self._on_alert)

    def start(self) -> None:
        self.sim.schedule(self.cfg.scrape_interval, PROMETHEUS_SCRAPE)
        self.sim.schedule(self.cfg.alert_window, AUTOSCALER_TICK)

    def _on_scrape(self, _payload) -> None:
        self.snapshots.append((self.sim.now, self.gateway.arrivals))
        horizon = self.sim.now - 4 * self.cfg.alert_window
        while len(self.snapshots) > 2 and self.snapshots[1][0] <= horizon:
            self.snapshots.popleft()
        self.sim.schedule_in(self.cfg.scrape_interval, PROMETHEUS_SCRAPE)

    def measured_rps(self) -> float:
        """Rate over the last alert window, from scraped counter values only."""
        t_last, c_last = self.snapshots[-1]
        base = self.snapshots[0]
        for snap in self.snapshots:
            if snap[0] <= t_last - self.cfg.alert_window:
                base = snap
        t_first, c_first = base
        if t_last == t_first:
            return 0.0
        return (c_last - c_first) / to_seconds(t_last - t_first)

    def _on_evaluate(self, _payload) -> None:
        now = self.sim.now
        rps = self.measured_rps()
        self.active_since, fire = rps_alert_evaluate(rps, self.cfg, self.active_since, now)
        direction = None
        if fire:
            self.resolved_since = None
            direction = "up"
        elif self.active_since is None:
            if self.resolved_since is None:
                self.resolved_since = now
            elif now - self.resolved_since >= self.cfg.alert_window:
                direction = "down"
        if direction is not None:
            self.fired.append((now, direction))
            self.sim.schedule(now + self.cfg.pipeline_delay, ALERT_FIRE, direction)
        self.state.evaluations.append((now, rps, self.state.current_desired))
        self.sim.schedule_in(self.cfg.alert_window, AUTOSCALER_TICK)

    def _on_alert(self, direction: str) -> None:
        cfg = self.cfg
        current = self.state.current_desired
        if direction == "up":
            desired = min(cfg.max_replicas, current + cfg.step)
        else:
            desired = max(cfg.min_replicas, current - cfg.step)
        self.set_desired(desired)
