# mbmp_sim/scenario.py
"""Scenario and sweep files: pydantic models, loading, and seeded materialization."""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from mbmp_sim.bandwidth import EstimatorConfig, FlowSpec, MacTimingConfig
from mbmp_sim.contention import CNeighborConfig
from mbmp_sim.errors import ConfigError, InvalidArgumentError
from mbmp_sim.geometry import (
    ArenaConfig,
    MobilityConfig,
    RadioConfig,
    Topology,
    place_clustered,
    place_uniform,
)
from mbmp_sim.protocol import ProtocolConfig, ProtocolVariant

logger = logging.getLogger(__name__)

NodeRef = Union[int, str]


# =====================================================
# 📋 SCENARIO MODELS
# =====================================================
class NodeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x: float
    y: float
    label: Optional[str] = None
    background_load: float = 0.0

    @field_validator("background_load")
    @classmethod
    def _load(cls, v):
        if v < 0:
            raise ValueError("background_load must be >= 0")
        return v


class PlacementSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["uniform", "clustered"] = "uniform"
    count: int = 20
    clusters: int = 3
    spread: float = 60.0

    @field_validator("count", "clusters")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v


class FlowEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    flow_id: Optional[int] = None
    src: NodeRef
    dst: NodeRef
    rate: float
    packet_size: int
    start_time: float = 0.0


class TrafficSpec(BaseModel):
    """Random CBR pairs; start times default to U[start_min, duration/2]."""

    model_config = ConfigDict(extra="forbid")

    count: int = 20
    rate_min: float = 10.0
    rate_max: float = 50.0
    size_min: int = 100
    size_max: int = 1000
    start_min: float = 5.0
    start_max: Optional[float] = None

    @model_validator(mode="after")
    def _ranges(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if not 0 < self.rate_min <= self.rate_max:
            raise ValueError("require 0 < rate_min <= rate_max")
        if not 0 < self.size_min <= self.size_max:
            raise ValueError("require 0 < size_min <= size_max")
        if self.start_min < 0 or (self.start_max is not None and self.start_max < self.start_min):
            raise ValueError("require 0 <= start_min <= start_max")
        return self


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    arena: ArenaConfig = Field(default_factory=ArenaConfig)
    radio: RadioConfig = Field(default_factory=RadioConfig)
    mac: MacTimingConfig = Field(default_factory=MacTimingConfig)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    cneighbor: CNeighborConfig = Field(default_factory=CNeighborConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    mobility: MobilityConfig = Field(default_factory=MobilityConfig)
    nodes: Optional[list[NodeSpec]] = None
    placement: Optional[PlacementSpec] = None
    flows: list[FlowEntry] = []
    traffic: Optional[TrafficSpec] = None
    monitor: list[NodeRef] = []
    duration: float = 200.0
    seed: int = 0
    sampling_window: float = 1.0
    steady_window: float = 20.0

    @model_validator(mode="after")
    def _consistent(self):
        if (self.nodes is None) == (self.placement is None):
            raise ValueError("give exactly one of 'nodes' or 'placement'")
        if self.nodes is not None and not self.nodes:
            raise ValueError("'nodes' must not be empty")
        if self.flows and self.traffic is not None:
            raise ValueError("give at most one of 'flows' or 'traffic'")
        if self.duration <= 0 or self.sampling_window <= 0 or self.steady_window <= 0:
            raise ValueError("duration, sampling_window and steady_window must be > 0")
        if self.radio.channel_capacity != self.mac.channel_capacity:
            raise ValueError("radio.channel_capacity and mac.channel_capacity differ")
        if self.nodes is not None:
            for i, n in enumerate(self.nodes):
                if not (0 <= n.x <= self.arena.width and 0 <= n.y <= self.arena.height):
                    raise ValueError(f"node {i} lies outside the arena")
            labels = [n.label for n in self.nodes if n.label is not None]
            if len(labels) != len(set(labels)):
                raise ValueError("node labels must be unique")
        ids = [f.flow_id for f in self.flows if f.flow_id is not None]
        if len(ids) != len(set(ids)):
            raise ValueError("flow ids must be unique")
        return self

    def with_seed(self, seed):
        return self.model_copy(update={"seed": int(seed)})


class SweepSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Scenario
    parameter: Literal["node_count", "flow_count"] = "node_count"
    values: list[int]
    replicates: int = 1
    variants: list[str] = [v.value for v in ProtocolVariant]
    base_seed: int = 0
    duration: Optional[float] = None

    @model_validator(mode="after")
    def _valid(self):
        if not self.values:
            raise ValueError("a sweep needs at least one point")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.variants:
            raise ValueError("a sweep needs at least one variant")
        for v in self.variants:
            try:
                ProtocolVariant.parse(v)
            except ValueError:
                raise ValueError(f"unknown variant {v!r}") from None
        if self.parameter == "node_count" and self.scenario.placement is None:
            raise ValueError("node_count sweeps need a 'placement' scenario")
        if self.parameter == "flow_count" and self.scenario.traffic is None:
            raise ValueError("flow_count sweeps need a 'traffic' scenario")
        return self

    def point(self, value):
        """Scenario for one swept value."""
        s = self.scenario
        if self.duration is not None:
            s = s.model_copy(update={"duration": self.duration})
        if self.parameter == "node_count":
            return s.model_copy(update={"placement": s.placement.model_copy(update={"count": value})})
        return s.model_copy(update={"traffic": s.traffic.model_copy(update={"count": value})})


# =====================================================
# 📂 LOADING
# =====================================================
def _error_keys(err):
    return [".".join(str(p) for p in e["loc"]) or "<root>" for e in err.errors()]


def _read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON ({e.msg} at line {e.lineno})") from None


def parse_scenario(data, source="scenario"):
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {source}", _error_keys(e)) from None


def load_scenario(path):
    scenario = parse_scenario(_read_json(path), source=str(path))
    logger.info("Loaded scenario %s from %s", scenario.name, path)
    return scenario


def dump_scenario(scenario):
    return json.dumps(scenario.model_dump(mode="json"), indent=2, sort_keys=True)


def load_sweep(path):
    data = _read_json(path)
    if isinstance(data, dict) and isinstance(data.get("scenario"), str):
        data = dict(data)
        data["scenario"] = _read_json(Path(path).parent / data["scenario"])
    try:
        return SweepSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid sweep {path}", _error_keys(e)) from None


# =====================================================
# 🎲 MATERIALIZATION
# =====================================================
@dataclass
class BuiltScenario:
    topology: Topology
    flows: list
    background: np.ndarray
    monitor: list
    mobility_rng: np.random.Generator


def build(scenario, seed=None):
    """Place nodes and draw traffic with independent PCG64 streams of ``seed``."""
    seed = scenario.seed if seed is None else int(seed)
    place_ss, traffic_ss, mobility_ss = np.random.SeedSequence(seed).spawn(3)
    place_rng = np.random.Generator(np.random.PCG64(place_ss))
    traffic_rng = np.random.Generator(np.random.PCG64(traffic_ss))

    if scenario.nodes is not None:
        positions = [(n.x, n.y) for n in scenario.nodes]
        labels = [n.label if n.label is not None else str(i) for i, n in enumerate(scenario.nodes)]
        background = np.array([n.background_load for n in scenario.nodes], dtype=float)
    else:
        p = scenario.placement
        if p.kind == "clustered":
            positions = place_clustered(p.count, scenario.arena, place_rng, p.clusters, p.spread)
        else:
            positions = place_uniform(p.count, scenario.arena, place_rng)
        labels = None
        background = np.zeros(p.count)
    topology = Topology(positions, scenario.radio, scenario.arena, labels)

    try:
        flows = _explicit_flows(scenario, topology) if scenario.flows else \
            _random_flows(scenario, topology, traffic_rng)
        monitor = [_resolve(topology, ref) for ref in scenario.monitor]
    except InvalidArgumentError as e:
        raise ConfigError(f"invalid {scenario.name}: {e}") from None
    return BuiltScenario(topology, flows, background, monitor,
                         np.random.Generator(np.random.PCG64(mobility_ss)))


def _resolve(topology, ref):
    if isinstance(ref, str):
        return topology.node_id(ref)
    topology._check(ref)
    return int(ref)


def _explicit_flows(scenario, topology):
    flows = []
    used = {f.flow_id for f in scenario.flows if f.flow_id is not None}
    auto = (i for i in range(1, 10**9) if i not in used)
    for entry in scenario.flows:
        try:
            flows.append(FlowSpec(
                flow_id=entry.flow_id if entry.flow_id is not None else next(auto),
                src=_resolve(topology, entry.src), dst=_resolve(topology, entry.dst),
                rate=entry.rate, packet_size=entry.packet_size, start_time=entry.start_time))
        except ValidationError as e:
            raise InvalidArgumentError(f"flow {entry.src}->{entry.dst}: {e.errors()[0]['msg']}") from None
    return flows


def _random_flows(scenario, topology, rng):
    t = scenario.traffic
    if t is None or t.count == 0 or len(topology) < 2:
        return []
    start_max = t.start_max if t.start_max is not None else scenario.duration / 2
    start_max = max(start_max, t.start_min)
    flows = []
    for i in range(t.count):
        src, dst = rng.choice(len(topology), size=2, replace=False)
        flows.append(FlowSpec(
            flow_id=i + 1, src=int(src), dst=int(dst),
            rate=float(rng.uniform(t.rate_min, t.rate_max)),
            packet_size=int(rng.integers(t.size_min, t.size_max + 1)),
            start_time=float(rng.uniform(t.start_min, start_max)),
        ))
    return flows


def is_sweep_file(path):
    data = _read_json(path)
    return isinstance(data, dict) and "scenario" in data and "values" in data
