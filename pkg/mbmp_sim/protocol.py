# mbmp_sim/protocol.py
"""Per-node MBMP state machines: route discovery with partial admission control,
full admission control in the route reply, c-neighbourhood queries, soft
reservations and the teardown paths, plus the DSR and local-only baselines.

Handlers never touch the channel directly. They talk to a ``net`` object (the
simulation engine) that delivers messages, exposes bandwidth estimates and
owns flow status.
"""
import itertools
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, field_validator

from mbmp_sim.bandwidth import flow_bandwidth
from mbmp_sim.contention import (
    CNeighborSet,
    RouteRecord,
    contention_count,
    learn_from_hello,
    learn_passively,
)

logger = logging.getLogger(__name__)


# =====================================================
# 📋 TYPES
# =====================================================
class ProtocolVariant(str, Enum):
    MBMP_MULTIHOP = "mbmp-multihop"
    MBMP_POWER = "mbmp-power"
    MBMP_CS = "mbmp-cs"
    DSR = "dsr"
    LOCAL_ONLY = "local-only"

    @property
    def is_mbmp(self):
        return self in (ProtocolVariant.MBMP_MULTIHOP, ProtocolVariant.MBMP_POWER,
                        ProtocolVariant.MBMP_CS)

    @classmethod
    def parse(cls, name):
        aliases = {"swan": cls.LOCAL_ONLY, "multihop": cls.MBMP_MULTIHOP,
                   "power": cls.MBMP_POWER, "cs": cls.MBMP_CS}
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


class MessageKind(str, Enum):
    ROUTE_REQUEST = "RouteRequest"
    ROUTE_REPLY = "RouteReply"
    ADMISSION_REQUEST = "AdmissionRequest"
    ADMISSION_REJECT = "AdmissionReject"
    ADMISSION_FAILURE = "AdmissionFailure"
    ROUTE_ERROR = "RouteError"
    HELLO = "Hello"


class ReservationState(str, Enum):
    SOFT = "soft"
    CONFIRMED = "confirmed"


class ProtocolConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    admission_timeout: float = 0.05
    soft_ttl: float = 2.0
    backup_routes: int = 3
    control_latency: float = 0.001
    discovery_timeout: float = 2.0
    route_retry_budget: int = 3
    multihop_budget: int = 2
    control_consumes_airtime: bool = False
    control_packet_size: int = 64
    dsr_overload_retries: bool = True
    admission_headroom: float = 0.06

    @field_validator("admission_timeout", "soft_ttl", "control_latency", "discovery_timeout")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("backup_routes", "route_retry_budget")
    @classmethod
    def _non_negative(cls, v):
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("admission_headroom")
    @classmethod
    def _fraction(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("must be in [0, 1)")
        return v

    @field_validator("multihop_budget", "control_packet_size")
    @classmethod
    def _at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v


@dataclass(frozen=True)
class ControlMessage:
    kind: MessageKind
    flow_id: int
    msg_id: int
    originator: int
    route: Optional[RouteRecord] = None
    w: float = 0.0
    attempt: int = 0
    hop_budget: int = 0
    hops: int = 1
    check_id: Optional[int] = None
    path: tuple = ()
    table: Optional[dict] = None


@dataclass
class Reservation:
    flow_id: int
    node: int
    reserved: float
    state: ReservationState
    expires_at: Optional[float]


@dataclass
class RouteCache:
    backups: dict = field(default_factory=dict)
    replied: set = field(default_factory=set)
    confirmed: dict = field(default_factory=dict)


@dataclass
class PendingCheck:
    check_id: int
    reply: ControlMessage
    bc: float
    decided: bool = False


@dataclass
class NodeAgent:
    node: int
    cset: CNeighborSet
    seen: set = field(default_factory=set)
    reservations: dict = field(default_factory=dict)
    cache: RouteCache = field(default_factory=RouteCache)
    checks: dict = field(default_factory=dict)

    def reserved(self, exclude_flow=None):
        return sum(r.reserved for f, r in self.reservations.items() if f != exclude_flow)


# =====================================================
# 🤝 PROTOCOL ENGINE
# =====================================================
class MbmpProtocol:
    """Message handlers for every node under one protocol variant."""

    def __init__(self, net, variant, num_nodes, mac, protocol_cfg, cneighbor_cfg):
        self.net = net
        self.variant = ProtocolVariant.parse(variant)
        self.mac = mac
        self.cfg = protocol_cfg
        self.cn = cneighbor_cfg
        self.agents = [NodeAgent(node=i, cset=CNeighborSet(owner=i)) for i in range(num_nodes)]
        self._ids = itertools.count(1)

    @property
    def k_cs(self):
        return self.cn.k_cs

    @property
    def passive_learning(self):
        return self.cn.mode in ("passive", "both")

    def _learn(self, node, sender, route, sender_hop=1):
        if self.passive_learning and route is not None:
            learn_passively(self.agents[node].cset, sender, route, self.net.now, sender_hop)

    def _trace(self, event, **fields):
        self.net.trace.emit(self.net.now, event, **fields)

    # ----------------- admission tests -----------------
    def _evaluate(self, node, route, w, exclude_flow=None):
        n_ct = contention_count(route, node, self.agents[node].cset, self.k_cs)
        local = self.net.local_available(node, exclude_flow)
        return n_ct, n_ct * w, local

    def _fits(self, available, bc):
        """MBMP admits only while a fraction of capacity stays idle after ``bc``."""
        return available - self.cfg.admission_headroom * self.mac.channel_capacity >= bc

    def _partial_test(self, node, route, w, flow_id):
        """Variant rule applied during the route request phase (and at the source)."""
        n_ct, bc, local = self._evaluate(node, route, w, flow_id)
        available = local
        if self.variant is ProtocolVariant.DSR:
            passed = True
        elif self.variant is ProtocolVariant.LOCAL_ONLY:
            passed = local >= w
        elif self.variant is ProtocolVariant.MBMP_CS:
            available = min(local, self.net.neighbor_available(node))
            passed = self._fits(available, bc)
        else:
            passed = self._fits(local, bc)
        self._trace("partial_admission", node=node, flow=flow_id, n_ct=n_ct, bc=round(bc),
                    available=round(available), passed=passed, route=list(route.nodes))
        return passed, bc

    def _full_local_test(self, node, route, w, flow_id):
        n_ct, bc, local = self._evaluate(node, route, w, flow_id)
        if self.variant is ProtocolVariant.DSR:
            passed = True
        elif self.variant is ProtocolVariant.LOCAL_ONLY:
            passed = local >= w
        else:
            passed = self._fits(local, bc)
        self._trace("full_admission", node=node, flow=flow_id, n_ct=n_ct, bc=round(bc),
                    available=round(local), passed=passed, route=list(route.nodes))
        return passed, bc

    # ----------------- soft reservations -----------------
    def _reserve(self, node, flow_id, bc):
        if not self.variant.is_mbmp:
            return
        self.agents[node].reservations[flow_id] = Reservation(
            flow_id, node, bc, ReservationState.SOFT, self.net.now + self.cfg.soft_ttl)
        self._trace("soft_reserve", node=node, flow=flow_id, reserved=round(bc))

    def release(self, node, flow_id, reason="teardown"):
        if self.agents[node].reservations.pop(flow_id, None) is not None:
            self._trace("release", node=node, flow=flow_id, reason=reason)

    def release_route(self, flow_id, route, reason="teardown"):
        for node in route:
            self.release(node, flow_id, reason)

    def expire_reservations(self, now):
        for agent in self.agents:
            stale = [f for f, r in agent.reservations.items()
                     if r.state is ReservationState.SOFT and r.expires_at is not None
                     and r.expires_at <= now]
            for flow_id in stale:
                self.release(agent.node, flow_id, "soft-expired")

    # =====================================================
    # 🚀 START FLOW
    # =====================================================
    def start_flow(self, src, spec, attempt=0):
        w = flow_bandwidth(self.mac, spec)
        self._trace("flow_start", node=src, flow=spec.flow_id, w=round(w), attempt=attempt)
        if w > self.mac.channel_capacity:
            self.net.reject(spec.flow_id, attempt, "infeasible")
            return None
        route = RouteRecord((src,))
        passed, _ = self._partial_test(src, route, w, spec.flow_id)
        if not passed:
            self.net.reject(spec.flow_id, attempt, "source")
            return None
        msg = ControlMessage(MessageKind.ROUTE_REQUEST, spec.flow_id, next(self._ids), src,
                             route=route, w=w, attempt=attempt)
        self.agents[src].seen.add((MessageKind.ROUTE_REQUEST, spec.flow_id, attempt))
        self.net.broadcast(src, msg, self.net.radio.tx_range)
        self.net.schedule(self.cfg.discovery_timeout, "discovery_timeout", (spec.flow_id, attempt))
        return msg

    # =====================================================
    # 📣 ROUTE REQUEST
    # =====================================================
    def on_route_request(self, node, msg, sender):
        agent = self.agents[node]
        self._learn(node, sender, msg.route)
        if node in msg.route:
            self._trace("drop", node=node, flow=msg.flow_id, kind=msg.kind.value, reason="loop")
            return
        if not self.net.is_current(msg.flow_id, msg.attempt):
            return
        spec = self.net.flow_spec(msg.flow_id)
        key = (MessageKind.ROUTE_REQUEST, msg.flow_id, msg.attempt)

        if node == spec.dst:
            route = msg.route.extend(node).completed()
            passed, bc = self._partial_test(node, route, msg.w, msg.flow_id)
            if not passed:
                return
            if key not in agent.cache.replied:
                agent.cache.replied.add(key)
                self._send_reply(node, route, msg.w, msg.flow_id, msg.attempt, bc)
            else:
                backups = agent.cache.backups.setdefault(key, [])
                if len(backups) < self.cfg.backup_routes and route not in backups:
                    backups.append(route)
                    self._trace("cache_backup", node=node, flow=msg.flow_id,
                                route=list(route.nodes))
            return

        if key in agent.seen:
            return
        agent.seen.add(key)
        route = msg.route.extend(node)
        passed, _ = self._partial_test(node, route, msg.w, msg.flow_id)
        if passed:
            self.net.broadcast(node, replace(msg, route=route), self.net.radio.tx_range)

    def _send_reply(self, dst, route, w, flow_id, attempt, bc):
        self._reserve(dst, flow_id, bc)
        reply = ControlMessage(MessageKind.ROUTE_REPLY, flow_id, next(self._ids), dst,
                               route=route, w=w, attempt=attempt)
        if not self.net.unicast(dst, route.previous(dst), reply):
            self._trace("unreachable", node=dst, flow=flow_id, kind=reply.kind.value)
            self.on_admission_failure(dst, replace(reply, kind=MessageKind.ADMISSION_FAILURE), dst)

    # =====================================================
    # 🔁 ROUTE REPLY (FULL ADMISSION)
    # =====================================================
    def on_route_reply(self, node, msg, sender):
        self._learn(node, sender, msg.route)
        if not self.net.is_current(msg.flow_id, msg.attempt):
            return
        passed, bc = self._full_local_test(node, msg.route, msg.w, msg.flow_id)
        if not passed:
            self._fail(node, msg)
            return
        self.cneighborhood_check(node, msg, bc)

    def cneighborhood_check(self, node, reply, bc):
        """Ask (or sense) the c-neighbourhood; ``_after_check`` receives the verdict."""
        if self.variant is ProtocolVariant.MBMP_CS:
            available = self.net.neighbor_available(node, reply.flow_id)
            passed = self._fits(available, bc)
            self._trace("cneighborhood_check", node=node, flow=reply.flow_id, mode="sensed",
                        bc=round(bc), available=round(available), passed=passed)
            self._after_check(node, reply, passed, bc)
            return
        if not self.variant.is_mbmp:
            self._after_check(node, reply, True, bc)
            return

        power = self.variant is ProtocolVariant.MBMP_POWER
        check_id = next(self._ids)
        self.agents[node].checks[check_id] = PendingCheck(check_id, reply, bc)
        request = ControlMessage(
            MessageKind.ADMISSION_REQUEST, reply.flow_id, next(self._ids), node,
            route=reply.route, w=reply.w, attempt=reply.attempt,
            hop_budget=1 if power else self.cfg.multihop_budget,
            check_id=check_id, path=(node,))
        self._trace("admission_request", node=node, flow=reply.flow_id, check=check_id,
                    mode="power" if power else "multihop", bc=round(bc))
        radius = self.net.radio.cs_range if power else self.net.radio.tx_range
        self.net.broadcast(node, request, radius)
        self.net.schedule(self.cfg.admission_timeout, "check_timeout", (node, check_id))

    def on_check_timeout(self, node, check_id):
        check = self.agents[node].checks.pop(check_id, None)
        if check is None or check.decided:
            return
        check.decided = True
        self._trace("cneighborhood_check", node=node, flow=check.reply.flow_id, mode="query",
                    bc=round(check.bc), passed=True)
        self._after_check(node, check.reply, True, check.bc)

    def _after_check(self, node, reply, passed, bc):
        if not passed:
            self._fail(node, reply)
            return
        if not self.net.is_current(reply.flow_id, reply.attempt):
            return
        route = reply.route
        self._reserve(node, reply.flow_id, bc)
        if node == route.source:
            for n in route:
                res = self.agents[n].reservations.get(reply.flow_id)
                if res is not None:
                    res.state = ReservationState.CONFIRMED
                    res.expires_at = None
            self.agents[node].cache.confirmed[reply.flow_id] = route
            self.net.admit(reply.flow_id, reply.attempt, route)
            return
        forward = replace(reply, msg_id=next(self._ids))
        if not self.net.unicast(node, route.previous(node), forward):
            self._trace("unreachable", node=node, flow=reply.flow_id, kind=reply.kind.value)
            self._fail(node, reply)

    # =====================================================
    # 📡 ADMISSION REQUEST / REJECT
    # =====================================================
    def on_admission_request(self, node, msg, sender, direct=True):
        agent = self.agents[node]
        self._learn(node, sender, msg.route, 1 if direct else self.k_cs)
        if sender != msg.originator:
            self._learn(node, msg.originator, msg.route, msg.hops)
        key = (MessageKind.ADMISSION_REQUEST, msg.msg_id)
        if key in agent.seen or node == msg.originator:
            return
        agent.seen.add(key)

        n_ct, bc, local = self._evaluate(node, msg.route, msg.w, msg.flow_id)
        passed = self._fits(local, bc)
        self._trace("admission_check", node=node, flow=msg.flow_id, originator=msg.originator,
                    check=msg.check_id, n_ct=n_ct, bc=round(bc), available=round(local),
                    passed=passed)
        if not passed:
            reject = ControlMessage(
                MessageKind.ADMISSION_REJECT, msg.flow_id, next(self._ids), msg.originator,
                w=msg.w, attempt=msg.attempt, check_id=msg.check_id, path=msg.path)
            self._send_reject(node, reject)
        if msg.hop_budget > 1:
            relay = replace(msg, hop_budget=msg.hop_budget - 1, hops=msg.hops + 1,
                            path=msg.path + (node,))
            self.net.broadcast(node, relay, self.net.radio.tx_range)

    def _send_reject(self, node, reject):
        """Walk the reject back along the path the request travelled."""
        target = reject.path[-1]
        radius = (self.net.radio.cs_range if self.variant is ProtocolVariant.MBMP_POWER
                  else self.net.radio.tx_range)
        if not self.net.unicast(node, target, reject, radius):
            self._trace("unreachable", node=node, flow=reject.flow_id, kind=reject.kind.value)

    def on_admission_reject(self, node, msg, sender):
        if node != msg.originator:
            self._send_reject(node, replace(msg, path=msg.path[:-1]))
            return
        check = self.agents[node].checks.get(msg.check_id)
        if check is None or check.decided:
            return
        check.decided = True
        self._trace("cneighborhood_check", node=node, flow=msg.flow_id, mode="query",
                    bc=round(check.bc), passed=False, rejected_by=sender)
        self._after_check(node, check.reply, False, check.bc)

    # =====================================================
    # ❌ FAILURE PATHS
    # =====================================================
    def _fail(self, node, reply):
        """Full admission failed at ``node``: tell the downstream nodes and the destination."""
        self.release(node, reply.flow_id, "admission-failure")
        nxt = reply.route.next(node)
        self._trace("admission_failure", node=node, flow=reply.flow_id, to=nxt)
        failure = ControlMessage(MessageKind.ADMISSION_FAILURE, reply.flow_id, next(self._ids),
                                 node, route=reply.route, w=reply.w, attempt=reply.attempt)
        if nxt is None or not self.net.unicast(node, nxt, failure):
            self._trace("unreachable", node=node, flow=reply.flow_id, kind=failure.kind.value)

    def on_admission_failure(self, node, msg, sender):
        self._learn(node, sender, msg.route)
        self.release(node, msg.flow_id, "admission-failure")
        route = msg.route
        if node != route.last:
            if not self.net.unicast(node, route.next(node), replace(msg, msg_id=next(self._ids))):
                self._trace("unreachable", node=node, flow=msg.flow_id, kind=msg.kind.value)
            return
        if not self.net.is_current(msg.flow_id, msg.attempt):
            return
        key = (MessageKind.ROUTE_REQUEST, msg.flow_id, msg.attempt)
        backups = self.agents[node].cache.backups.get(key, [])
        if backups:
            route = backups.pop(0)
            self._trace("backup_reply", node=node, flow=msg.flow_id, route=list(route.nodes))
            n_ct = contention_count(route, node, self.agents[node].cset, self.k_cs)
            self._send_reply(node, route, msg.w, msg.flow_id, msg.attempt, n_ct * msg.w)
        else:
            self.net.reject(msg.flow_id, msg.attempt, "admission")

    # =====================================================
    # 💔 ROUTE MAINTENANCE
    # =====================================================
    def on_mobility_break(self, node, flow_id, attempt, route):
        """``node`` lost its next hop on ``route``; returns False if the error could not leave."""
        self._trace("route_break", node=node, flow=flow_id, next=route.next(node))
        error = ControlMessage(MessageKind.ROUTE_ERROR, flow_id, next(self._ids), node,
                               route=route, attempt=attempt)
        if node == route.source:
            self.on_route_error(node, error, node)
            return True
        return self.net.unicast(node, route.previous(node), error)

    def on_route_error(self, node, msg, sender):
        self.release(node, msg.flow_id, "route-error")
        route = msg.route
        if node != route.source:
            if not self.net.unicast(node, route.previous(node), replace(msg, msg_id=next(self._ids))):
                self._trace("unreachable", node=node, flow=msg.flow_id, kind=msg.kind.value)
            return
        self.agents[node].cache.confirmed.pop(msg.flow_id, None)
        self.net.route_failed(msg.flow_id, msg.attempt)

    # =====================================================
    # 👋 HELLO
    # =====================================================
    def send_hello(self, node, depth):
        cset = self.agents[node].cset
        table = {n: h for n, h in cset.entries.items() if h <= depth}
        msg = ControlMessage(MessageKind.HELLO, -1, next(self._ids), node, table=table)
        self.net.broadcast(node, msg, self.net.radio.tx_range)

    def on_hello(self, node, msg, sender):
        learn_from_hello(self.agents[node].cset, msg.originator, msg.table or {}, self.net.now)

    # ----------------- dispatch -----------------
    def deliver(self, node, msg, sender, direct=True):
        kind = msg.kind
        if kind is MessageKind.ROUTE_REQUEST:
            self.on_route_request(node, msg, sender)
        elif kind is MessageKind.ROUTE_REPLY:
            self.on_route_reply(node, msg, sender)
        elif kind is MessageKind.ADMISSION_REQUEST:
            self.on_admission_request(node, msg, sender, direct)
        elif kind is MessageKind.ADMISSION_REJECT:
            self.on_admission_reject(node, msg, sender)
        elif kind is MessageKind.ADMISSION_FAILURE:
            self.on_admission_failure(node, msg, sender)
        elif kind is MessageKind.ROUTE_ERROR:
            self.on_route_error(node, msg, sender)
        elif kind is MessageKind.HELLO:
            self.on_hello(node, msg, sender)
