# mbmp_sim/geometry.py
"""Node placement, radio ranges, neighbour classification and random-waypoint mobility."""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from mbmp_sim.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


# =====================================================
# 📐 CONFIG MODELS
# =====================================================
class Position(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    x: float
    y: float

    @field_validator("x", "y")
    @classmethod
    def _finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("coordinate must be finite")
        return v


class ArenaConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: float = 1000.0
    height: float = 1000.0

    @field_validator("width", "height")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("arena side must be > 0")
        return v

    @property
    def area(self):
        return self.width * self.height


class RadioConfig(BaseModel):
    """The three radio rings. ncs_range defaults to twice cs_range."""

    model_config = ConfigDict(extra="forbid")

    tx_range: float = 250.0
    cs_range: float = 550.0
    ncs_range: Optional[float] = None
    channel_capacity: float = 2_000_000.0

    @model_validator(mode="after")
    def _rings(self):
        if self.ncs_range is None:
            self.ncs_range = 2.0 * self.cs_range
        if not (0 < self.tx_range <= self.cs_range <= self.ncs_range):
            raise ValueError("require 0 < tx_range <= cs_range <= ncs_range")
        if self.channel_capacity <= 0:
            raise ValueError("channel_capacity must be > 0")
        return self


class MobilityConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = False
    min_speed: float = 1.0
    max_speed: float = 5.0
    pause_time: float = 10.0
    tick: float = 0.1

    @model_validator(mode="after")
    def _ranges(self):
        if not (0 <= self.min_speed <= self.max_speed):
            raise ValueError("require 0 <= min_speed <= max_speed")
        if self.pause_time < 0:
            raise ValueError("pause_time must be >= 0")
        if self.tick <= 0:
            raise ValueError("tick must be > 0")
        return self


class NeighborClass(str, Enum):
    DISCONNECTED = "disconnected"
    TX = "tx"
    CS = "cs"
    NCS = "ncs"


# =====================================================
# 🗺️ TOPOLOGY
# =====================================================
class Topology:
    """Immutable snapshot of node positions plus the radio rings.

    Node ids are the dense indices 0..N-1 of ``positions``.
    """

    def __init__(self, positions, radio=None, arena=None, labels=None):
        pts = np.asarray(
            [(p.x, p.y) if isinstance(p, Position) else tuple(p) for p in positions],
            dtype=float,
        ).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("node positions must be finite")
        self.radio = radio or RadioConfig()
        self.arena = arena or ArenaConfig()
        if len(pts) and (
            pts[:, 0].min() < 0 or pts[:, 1].min() < 0
            or pts[:, 0].max() > self.arena.width or pts[:, 1].max() > self.arena.height
        ):
            raise InvalidArgumentError("node position outside the arena")
        pts.setflags(write=False)
        self.positions = pts
        self.labels = list(labels) if labels else [str(i) for i in range(len(pts))]
        self._dist = None

    def __len__(self):
        return len(self.positions)

    @property
    def node_ids(self):
        return range(len(self.positions))

    def position(self, node):
        self._check(node)
        x, y = self.positions[node]
        return Position(x=float(x), y=float(y))

    def label(self, node):
        return self.labels[node]

    def node_id(self, label):
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise InvalidArgumentError(f"unknown node label {label!r}") from None

    def _check(self, node):
        if not isinstance(node, (int, np.integer)) or not 0 <= node < len(self.positions):
            raise InvalidArgumentError(f"unknown node id {node!r}")

    def distance_matrix(self):
        if self._dist is None:
            diff = self.positions[:, None, :] - self.positions[None, :, :]
            self._dist = np.hypot(diff[..., 0], diff[..., 1])
            self._dist.setflags(write=False)
        return self._dist

    def distance(self, a, b):
        self._check(a)
        self._check(b)
        return float(self.distance_matrix()[a, b])

    def within(self, a, radius):
        """Node ids within ``radius`` of ``a`` (inclusive), excluding ``a``."""
        self._check(a)
        row = self.distance_matrix()[a]
        ids = np.flatnonzero(row <= radius)
        return [int(i) for i in ids if i != a]

    def sensing_mask(self, radius):
        """Boolean N×N matrix, True where two nodes are within ``radius``."""
        return self.distance_matrix() <= radius

    def moved(self, positions):
        return Topology(positions, self.radio, self.arena, self.labels)


def classify(topology, a, b):
    """Ring membership of ``b`` as seen from ``a``. Ties go to the inner ring."""
    if a == b:
        raise InvalidArgumentError("classify needs two distinct nodes")
    d = topology.distance(a, b)
    radio = topology.radio
    if d <= radio.tx_range:
        return NeighborClass.TX
    if d <= radio.cs_range:
        return NeighborClass.CS
    if d <= radio.ncs_range:
        return NeighborClass.NCS
    return NeighborClass.DISCONNECTED


def cneighbors(topology, a):
    """Ground-truth c-neighbours: every node within cs_range of ``a``."""
    return set(topology.within(a, topology.radio.cs_range))


# =====================================================
# 🎲 PLACEMENT
# =====================================================
def place_uniform(count, arena, rng):
    xs = rng.uniform(0.0, arena.width, size=count)
    ys = rng.uniform(0.0, arena.height, size=count)
    return np.column_stack([xs, ys])


def place_clustered(count, arena, rng, clusters=3, spread=60.0):
    """Gaussian clusters around uniformly drawn centres, clipped to the arena."""
    centres = place_uniform(clusters, arena, rng)
    which = np.arange(count) % clusters
    pts = centres[which] + rng.normal(0.0, spread, size=(count, 2))
    pts[:, 0] = np.clip(pts[:, 0], 0.0, arena.width)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, arena.height)
    return pts


# =====================================================
# 🚶 RANDOM WAYPOINT
# =====================================================
@dataclass
class WaypointState:
    waypoint: np.ndarray
    speed: np.ndarray
    pause_remaining: np.ndarray

    def copy(self):
        return WaypointState(self.waypoint.copy(), self.speed.copy(), self.pause_remaining.copy())


def init_waypoints(topology, mobility, rng):
    n = len(topology)
    return WaypointState(
        waypoint=place_uniform(n, topology.arena, rng),
        speed=rng.uniform(mobility.min_speed, mobility.max_speed, size=n),
        pause_remaining=np.zeros(n),
    )


def step_mobility(topology, waypoints, dt, rng, mobility=None):
    """Advance every node by ``dt`` seconds; returns (topology, waypoints)."""
    if dt <= 0:
        raise InvalidArgumentError("dt must be > 0")
    mobility = mobility or MobilityConfig()
    state = waypoints.copy()
    pos = np.array(topology.positions, dtype=float)

    paused = state.pause_remaining > 0
    state.pause_remaining[paused] -= dt
    resume = paused & (state.pause_remaining <= 0)
    state.pause_remaining[resume] = 0.0
    _redraw(state, np.flatnonzero(resume), topology.arena, mobility, rng)

    moving = ~paused
    delta = state.waypoint - pos
    dist = np.hypot(delta[:, 0], delta[:, 1])
    travel = state.speed * dt
    arrive = moving & (travel >= dist) & (state.speed > 0)
    advance = moving & ~arrive & (dist > 0)

    scale = np.divide(travel, dist, out=np.zeros_like(dist), where=dist > 0)
    pos[advance] += delta[advance] * scale[advance, None]
    pos[arrive] = state.waypoint[arrive]

    arrived = np.flatnonzero(arrive)
    if mobility.pause_time > 0:
        state.pause_remaining[arrived] = mobility.pause_time
    else:
        _redraw(state, arrived, topology.arena, mobility, rng)

    pos[:, 0] = np.clip(pos[:, 0], 0.0, topology.arena.width)
    pos[:, 1] = np.clip(pos[:, 1], 0.0, topology.arena.height)
    return topology.moved(pos), state


def _redraw(state, idx, arena, mobility, rng):
    if len(idx) == 0:
        return
    state.waypoint[idx] = place_uniform(len(idx), arena, rng)
    state.speed[idx] = rng.uniform(mobility.min_speed, mobility.max_speed, size=len(idx))
