"""Scenario files: YAML documents describing one experiment.

Durations are strings with a unit (``"10s"``, ``"0.63ms"``, ``"50us"``) or
bare numbers in seconds. Named archetypes (nuclio, openfaas, knative,
kubeless) start from the built-in platform-defaults profile; ``custom`` must
spell out its execution model and service times.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import yaml

from .autoscaler import HpaConfig, KpaConfig, RpsAlertConfig
from .cluster import (
    PLATFORM_DEFAULTS,
    ColdStartProfile,
    ExecutionKind,
    ExecutionModel,
    PlatformProfile,
    ServiceProfile,
)
from .engine import MS, S, SimTime
from .errors import ConfigError, InvalidValueError, MissingFieldError, UnknownKeyError
from .gateway import GatewayConfig
from .metrics import ScrapeConfig
from .workload import WorkloadSpec

ARCHETYPES = (*PLATFORM_DEFAULTS, "custom")
FIXTURE_DIR = Path(__file__).parent / "fixtures"

_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(us|ms|s|min)?\s*$")
_UNITS = {"us": 1, "ms": MS, "s": S, "min": 60 * S, None: S}
_BYTES = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*(B|KiB|MiB|GiB|KB|MB|GB)?\s*$")
_BYTE_UNITS = {None: 1, "B": 1, "KiB": 1024, "MiB": 1024**2, "GiB": 1024**3, "KB": 1000, "MB": 1000**2, "GB": 1000**3}


def parse_duration(value: Any) -> SimTime:
    if isinstance(value, bool):
        raise ValueError(f"not a duration: {value!r}")
    if isinstance(value, (int, float)):
        return round(value * S)
    match = _DURATION.match(str(value))
    if not match:
        raise ValueError(f"not a duration: {value!r}")
    return round(float(match.group(1)) * _UNITS[match.group(2)])


def format_duration(us: SimTime) -> str:
    if us % S == 0:
        return f"{us // S}s"
    if us % MS == 0:
        return f"{us // MS}ms"
    return f"{us}us"


def parse_bytes(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(f"not a size: {value!r}")
    if isinstance(value, int):
        return value
    match = _BYTES.match(str(value))
    if not match:
        raise ValueError(f"not a size: {value!r}")
    return round(float(match.group(1)) * _BYTE_UNITS[match.group(2)])


def parse_capacity(value: Any) -> int | None:
    if value is None or value == "unbounded":
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"expected an integer or 'unbounded', got {value!r}")
    return value


def parse_optional_int(value: Any) -> int | None:
    return None if value is None else _int(value)


def _int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"expected an integer, got {value!r}")
    return value


def _float(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _str(value: Any) -> str:
    if not isinstance(value, str):
        raise ValueError(f"expected a string, got {value!r}")
    return value


def _bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"expected true/false, got {value!r}")
    return value


# Per-block key -> (parser, formatter). Formatter None means emit as-is.
Schema = dict[str, tuple[Callable[[Any], Any], Callable[[Any], Any] | None]]

_D = (parse_duration, format_duration)

WORKLOAD_SCHEMA: Schema = {
    "mode": (_str, None),
    "connections": (_int, None),
    "rps": (_float, None),
    "arrivals": (_str, None),
    "request_timeout": _D,
    "retry_delay": _D,
    "max_retries": (parse_optional_int, None),
}
GATEWAY_SCHEMA: Schema = {
    "export_mode": (_str, None),
    "lb_policy": (_str, None),
    "queue_capacity": (_int, None),
    "queue_timeout": _D,
    "extra_hop_delay": _D,
}
EXECUTION_SCHEMA: Schema = {
    "model": (_str, None),
    "workers": (_int, None),
    "pod_queue_capacity": (parse_capacity, lambda v: "unbounded" if v is None else v),
    "watchdog_mode": (_str, None),
    "dispatch": (_str, None),
    "cpu_weight": (_float, None),
    "mem_base": (parse_bytes, None),
    "mem_per_queued": (parse_bytes, None),
    "cold_start_delay": _D,
}
SERVICE_SCHEMA: Schema = {
    "forward_in": _D,
    "runtime": _D,
    "respond_out": _D,
    "fork_cost": _D,
    "jitter": (_float, None),
}
SCRAPE_SCHEMA: Schema = {
    "interval": _D,
    "per_pod_cost_bytes": (parse_bytes, None),
    "sampling_fraction": (_float, None),
}
HPA_SCHEMA: Schema = {
    "metric": (_str, None),
    "target_fraction": (_float, None),
    "sync_period": _D,
    "min_replicas": (_int, None),
    "max_replicas": (_int, None),
    "tolerance": (_float, None),
    "memory_request": (parse_bytes, None),
}
KPA_SCHEMA: Schema = {
    "metric": (_str, None),
    "target": (_float, None),
    "tick": _D,
    "stable_window": _D,
    "max_scale_up_rate": (_float, None),
    "min_scale": (_int, None),
    "max_scale": (_int, None),
    "scale_to_zero": (_bool, None),
    "scale_to_zero_grace": _D,
}
RPS_ALERT_SCHEMA: Schema = {
    "rps_threshold": (_float, None),
    "alert_window": _D,
    "scale_factor_percent": (_float, None),
    "scrape_interval": _D,
    "pipeline_delay": _D,
    "min_replicas": (_int, None),
    "max_replicas": (_int, None),
}
AUTOSCALERS: dict[str, tuple[type, Schema]] = {
    "hpa": (HpaConfig, HPA_SCHEMA),
    "kpa": (KpaConfig, KPA_SCHEMA),
    "rps_alert": (RpsAlertConfig, RPS_ALERT_SCHEMA),
}
TOP_LEVEL_KEYS = (
    "name", "archetype", "seed", "duration", "warmup", "replicas",
    "workload", "gateway", "execution", "service", "autoscaler", "scrape",
)

Autoscaler = HpaConfig | KpaConfig | RpsAlertConfig


@dataclass
class Scenario:
    name: str
    archetype: str
    workload: WorkloadSpec
    gateway: GatewayConfig
    execution: ExecutionModel
    service: ServiceProfile
    cold_start: ColdStartProfile
    scrape: ScrapeConfig
    autoscaler: Autoscaler | None = None
    seed: int = 0
    replicas: int = 1

    @property
    def duration(self) -> SimTime:
        return self.workload.duration

    @property
    def warmup(self) -> SimTime:
        return self.workload.warmup

    @property
    def profile(self) -> PlatformProfile:
        return PlatformProfile(self.execution, self.service, self.cold_start)

    def initial_replicas(self) -> int:
        scaler = self.autoscaler
        if isinstance(scaler, KpaConfig):
            lo, hi = max(scaler.min_scale, 1 if not scaler.scale_to_zero else 0), scaler.max_scale
        elif scaler is not None:
            lo, hi = scaler.min_replicas, scaler.max_replicas
        else:
            return self.replicas
        return max(lo, min(hi, self.replicas))

    def with_overrides(
        self,
        seed: int | None = None,
        duration: SimTime | None = None,
        connections: int | None = None,
        warmup: SimTime | None = None,
    ) -> "Scenario":
        changes: dict[str, Any] = {}
        if duration is not None:
            changes["duration"] = duration
            if warmup is None and self.workload.warmup >= duration:
                warmup = 0
        if warmup is not None:
            changes["warmup"] = warmup
        if connections is not None:
            changes["connections"] = connections
        try:
            workload = replace(self.workload, **changes)
        except ConfigError as exc:
            raise exc.under("workload") if exc.key not in ("duration", "warmup") else exc
        return replace(self, workload=workload, seed=self.seed if seed is None else seed)


# -- loading -------------------------------------------------------------------


def _check_keys(block: Any, allowed, prefix: str) -> dict:
    if block is None:
        return {}
    if not isinstance(block, dict):
        raise InvalidValueError(prefix, "must be a mapping")
    for key in block:
        if key not in allowed:
            path = f"{prefix}.{key}" if prefix else str(key)
            raise UnknownKeyError(path, "unknown key")
    return block


def _parse_block(block: Any, schema: Schema, prefix: str) -> dict[str, Any]:
    block = _check_keys(block, schema, prefix)
    out = {}
    for key, value in block.items():
        parser = schema[key][0]
        try:
            out[key] = parser(value)
        except ValueError as exc:
            raise InvalidValueError(f"{prefix}.{key}", str(exc)) from None
    return out


def _build(cls, values: dict[str, Any], prefix: str):
    try:
        return cls(**values)
    except ConfigError as exc:
        raise exc.under(prefix) from None


def scenario_from_dict(doc: Any) -> Scenario:
    doc = _check_keys(doc, TOP_LEVEL_KEYS, "")
    for key in ("name", "archetype", "duration", "workload"):
        if key not in doc:
            raise MissingFieldError(key, "required field is missing")
    try:
        name = _str(doc["name"])
    except ValueError as exc:
        raise InvalidValueError("name", str(exc)) from None
    archetype = doc["archetype"]
    if archetype not in ARCHETYPES:
        raise InvalidValueError("archetype", f"must be one of {', '.join(ARCHETYPES)}")

    top: dict[str, Any] = {}
    for key, parser in (("seed", _int), ("replicas", _int), ("duration", parse_duration), ("warmup", parse_duration)):
        if key in doc:
            try:
                top[key] = parser(doc[key])
            except ValueError as exc:
                raise InvalidValueError(key, str(exc)) from None
    if top.get("replicas", 1) < 1:
        raise InvalidValueError("replicas", "must be >= 1")

    # workload
    wl = _parse_block(doc["workload"], WORKLOAD_SCHEMA, "workload")
    if "mode" not in wl:
        raise MissingFieldError("workload.mode", "required field is missing")
    if wl["mode"] == "closed-loop" and "connections" not in wl:
        raise MissingFieldError("workload.connections", "required for closed-loop")
    if wl["mode"] == "open-loop" and "rps" not in wl:
        raise MissingFieldError("workload.rps", "required for open-loop")
    wl["duration"] = top["duration"]
    wl["warmup"] = top.get("warmup", 0)
    try:
        workload = WorkloadSpec(**wl)
    except ConfigError as exc:
        raise (exc if exc.key in ("duration", "warmup") else exc.under("workload")) from None

    gateway = _build(GatewayConfig, _parse_block(doc.get("gateway"), GATEWAY_SCHEMA, "gateway"), "gateway")

    # execution model + cold start
    ex = _parse_block(doc.get("execution"), EXECUTION_SCHEMA, "execution")
    sv = _parse_block(doc.get("service"), SERVICE_SCHEMA, "service")
    cold = {"cold_start_delay": ex.pop("cold_start_delay")} if "cold_start_delay" in ex else {}
    kind = ex.pop("model", None)
    if archetype == "custom":
        if kind is None:
            raise MissingFieldError("execution.model", "required for the custom archetype")
        for key in ("forward_in", "runtime", "respond_out"):
            if key not in sv:
                raise MissingFieldError(f"service.{key}", "required for the custom archetype")
        try:
            kind = ExecutionKind(kind)
        except ValueError:
            raise InvalidValueError(
                "execution.model", f"must be one of {', '.join(k.value for k in ExecutionKind)}"
            ) from None
        if kind is ExecutionKind.FORK_NO_QUEUE:
            ex.setdefault("pod_queue_capacity", 0)
        execution = _build(ExecutionModel, {"kind": kind, **ex}, "execution")
        service = _build(ServiceProfile, sv, "service")
        cold_start = _build(ColdStartProfile, cold, "execution")
    else:
        base = PLATFORM_DEFAULTS[archetype]
        if kind is not None and kind != base.execution.kind.value:
            raise InvalidValueError("execution.model", f"{archetype} pods are {base.execution.kind.value}")
        execution = _rebuild(base.execution, ex, "execution")
        service = _rebuild(base.service, sv, "service")
        cold_start = _rebuild(base.cold_start, cold, "execution")

    # autoscaler: at most one block
    autoscaler = None
    block = doc.get("autoscaler")
    if block is not None:
        block = _check_keys(block, AUTOSCALERS, "autoscaler")
        if len(block) != 1:
            raise InvalidValueError("autoscaler", "exactly one policy block (hpa, kpa or rps_alert) is allowed")
        (policy, body), = block.items()
        cls, schema = AUTOSCALERS[policy]
        autoscaler = _build(cls, _parse_block(body, schema, f"autoscaler.{policy}"), f"autoscaler.{policy}")

    scrape = _build(ScrapeConfig, _parse_block(doc.get("scrape"), SCRAPE_SCHEMA, "scrape"), "scrape")

    return Scenario(
        name=name,
        archetype=archetype,
        workload=workload,
        gateway=gateway,
        execution=execution,
        service=service,
        cold_start=cold_start,
        scrape=scrape,
        autoscaler=autoscaler,
        seed=top.get("seed", 0),
        replicas=top.get("replicas", 1),
    )


def _rebuild(base, overrides: dict[str, Any], prefix: str):
    try:
        return replace(base, **overrides)
    except ConfigError as exc:
        raise exc.under(prefix) from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise InvalidValueError("", f"{path}: not valid YAML ({exc})") from None
    return scenario_from_dict(doc)


def loads_scenario(text: str) -> Scenario:
    return scenario_from_dict(yaml.safe_load(text))


def fixture_path(name: str) -> Path:
    """Path of a bundled scenario, e.g. ``fixture_path("kpa-steady")``."""
    path = FIXTURE_DIR / f"{name}.scenario"
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return path


def fixture_names() -> list[str]:
    return sorted(p.stem for p in FIXTURE_DIR.glob("*.scenario"))


def load_fixture(name: str) -> Scenario:
    return load_scenario(fixture_path(name))


# -- dumping -------------------------------------------------------------------


def _dump_block(obj, schema: Schema, rename: dict[str, str] | None = None) -> dict[str, Any]:
    rename = rename or {}
    out = {}
    for key, (_parser, fmt) in schema.items():
        attr = rename.get(key, key)
        if not hasattr(obj, attr):
            continue
        value = getattr(obj, attr)
        out[key] = fmt(value) if fmt is not None else value
    return out


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    execution = _dump_block(s.execution, EXECUTION_SCHEMA)
    execution["model"] = s.execution.kind.value
    execution["cold_start_delay"] = format_duration(s.cold_start.cold_start_delay)
    doc: dict[str, Any] = {
        "name": s.name,
        "archetype": s.archetype,
        "seed": s.seed,
        "duration": format_duration(s.duration),
        "warmup": format_duration(s.warmup),
        "replicas": s.replicas,
        "workload": _dump_block(s.workload, WORKLOAD_SCHEMA),
        "gateway": _dump_block(s.gateway, GATEWAY_SCHEMA),
        "execution": execution,
        "service": _dump_block(s.service, SERVICE_SCHEMA),
        "scrape": _dump_block(s.scrape, SCRAPE_SCHEMA),
    }
    if s.autoscaler is not None:
        for policy, (cls, schema) in AUTOSCALERS.items():
            if isinstance(s.autoscaler, cls):
                doc["autoscaler"] = {policy: _dump_block(s.autoscaler, schema)}
    return doc


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False)
