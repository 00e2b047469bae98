# mbmp_sim/contention.py
"""C-neighbour set learning and the contention count of a route at one location."""
import logging
import math
from dataclasses import dataclass, field
from typing import Literal

from pydantic import BaseModel, ConfigDict, field_validator

from mbmp_sim.errors import InvalidArgumentError
from mbmp_sim.geometry import NeighborClass, classify

logger = logging.getLogger(__name__)

DEFAULT_K_CS = 2


class CNeighborConfig(BaseModel):
    """How nodes learn their c-neighbours and how far a learned entry counts."""

    model_config = ConfigDict(extra="forbid")

    mode: Literal["active", "passive", "both"] = "passive"
    ttl: float = 30.0
    hello_period: float = 1.0
    hello_depth: int = 1
    k_cs: int = DEFAULT_K_CS

    @field_validator("ttl", "hello_period")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("hello_depth", "k_cs")
    @classmethod
    def _at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v


# =====================================================
# 🧭 ROUTE RECORD
# =====================================================
@dataclass(frozen=True)
class RouteRecord:
    """Source route; ``complete`` once the destination has been appended."""

    nodes: tuple
    complete: bool = False

    def __post_init__(self):
        nodes = tuple(int(n) for n in self.nodes)
        if not nodes:
            raise InvalidArgumentError("a route needs at least one node")
        if len(set(nodes)) != len(nodes):
            raise InvalidArgumentError(f"route {nodes} repeats a node")
        object.__setattr__(self, "nodes", nodes)

    def __contains__(self, node):
        return node in self.nodes

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @property
    def source(self):
        return self.nodes[0]

    @property
    def last(self):
        return self.nodes[-1]

    @property
    def transmitters(self):
        """Nodes that send data for the flow: all but a known destination."""
        return self.nodes[:-1] if self.complete else self.nodes

    @property
    def hops(self):
        return list(zip(self.nodes, self.nodes[1:]))

    def extend(self, node):
        return RouteRecord(self.nodes + (node,), complete=False)

    def completed(self):
        return RouteRecord(self.nodes, complete=True)

    def previous(self, node):
        i = self.nodes.index(node)
        return self.nodes[i - 1] if i > 0 else None

    def next(self, node):
        i = self.nodes.index(node)
        return self.nodes[i + 1] if i + 1 < len(self.nodes) else None


# =====================================================
# 👥 C-NEIGHBOUR SET
# =====================================================
@dataclass
class CNeighborSet:
    owner: int
    entries: dict = field(default_factory=dict)
    last_updated: dict = field(default_factory=dict)

    def note(self, node, hops, now):
        """Min-merge one hop estimate; the owner is never stored."""
        if node == self.owner:
            return
        hops = max(1, int(hops))
        old = self.entries.get(node)
        if old is None or hops <= old:
            self.entries[node] = hops
            self.last_updated[node] = now

    def members(self, k_cs=DEFAULT_K_CS):
        return {n for n, h in self.entries.items() if h <= k_cs}

    def __contains__(self, node):
        return node in self.entries


def contention_count(route, q, s, k_cs=DEFAULT_K_CS):
    """Number of the route's transmitters contending at ``q``, counting ``q`` itself if it sends."""
    if s.owner != q:
        raise InvalidArgumentError("c-neighbour set does not belong to q")
    senders = set(route.transmitters)
    count = len(senders & s.members(k_cs))
    if q in senders:
        count += 1
    return count


def consumed_bandwidth(route, q, s, w, k_cs=DEFAULT_K_CS):
    if w < 0:
        raise InvalidArgumentError("w must be >= 0")
    return contention_count(route, q, s, k_cs) * w


# =====================================================
# 📨 LEARNING
# =====================================================
def learn_from_hello(s, initiator, k_hop_table, now=0.0):
    s.note(initiator, 1, now)
    for node, hops in k_hop_table.items():
        s.note(node, hops + 1, now)
    return s


def learn_passively(s, sender, route, now=0.0, sender_hop=1):
    """Learn from an overheard source-routed message sent by ``sender``."""
    s.note(sender, sender_hop, now)
    if sender not in route:
        return s
    origin = route.nodes.index(sender)
    for i, node in enumerate(route.nodes):
        if node != sender:
            s.note(node, sender_hop + abs(i - origin), now)
    return s


def expire(s, now, ttl):
    if ttl <= 0:
        raise InvalidArgumentError("ttl must be > 0")
    if math.isinf(ttl):
        return s
    stale = [n for n, t in s.last_updated.items() if t < now - ttl]
    for node in stale:
        s.entries.pop(node, None)
        s.last_updated.pop(node, None)
    return s


def hello_table(s, depth=1):
    return {n: h for n, h in s.entries.items() if h <= depth}


def geometric_cneighbor_set(topology, q, now=0.0):
    """Omniscient set: tx neighbours at hop 1, cs-only neighbours at hop 2."""
    s = CNeighborSet(owner=q)
    for node in topology.within(q, topology.radio.cs_range):
        hops = 1 if classify(topology, q, node) is NeighborClass.TX else 2
        s.note(node, hops, now)
    return s
