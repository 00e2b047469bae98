# mbmp_sim/simcore.py
"""Discrete-event engine with a fluid airtime-contention channel.

Every active transmission adds its channel bandwidth W, scaled by its flow's
degradation factor, to the load of each node within cs_range of the
transmitter. A flow is slowed down by the most oversubscribed of its
transmitters.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from mbmp_sim.bandwidth import (
    BandwidthEstimator,
    flow_bandwidth,
    observe_channel,
    offered_rate,
    packet_airtime,
)
from mbmp_sim.contention import RouteRecord, expire
from mbmp_sim.events import EventQueue, TraceLog
from mbmp_sim.geometry import init_waypoints, step_mobility
from mbmp_sim.metrics import FALSE_ADMISSION_RATIO, compute_metrics
from mbmp_sim.protocol import MbmpProtocol, MessageKind, ProtocolVariant
from mbmp_sim.scenario import build

logger = logging.getLogger(__name__)

U_MAX = 0.99
_DELAY_EPS = 1e-6


# =====================================================
# 📋 TYPES
# =====================================================
class FlowStatus(str, Enum):
    PENDING = "pending"
    ADMITTED = "admitted"
    REJECTED = "rejected"
    BROKEN = "broken"
    FINISHED = "finished"


@dataclass
class FlowState:
    spec: object
    w: float
    offered_rate: float
    status: FlowStatus = FlowStatus.PENDING
    route: Optional[RouteRecord] = None
    attempt: int = 0
    attempted: bool = False
    active: bool = False
    rediscovering: bool = False
    route_retries: int = 0
    overload_retries: int = 0
    break_reports: int = 0
    admitted_at: Optional[float] = None
    reason: Optional[str] = None
    false_admission: bool = False
    factor: float = 1.0
    windows: dict = field(default_factory=dict)
    delay_samples: list = field(default_factory=list)


@dataclass
class ChannelLoadMap:
    """Sensed transmissions per node: ``sensed[n, k]`` is True when n hears transmission k."""

    capacity: float
    sensed: np.ndarray
    transmitters: np.ndarray
    flow_ids: tuple
    demand: np.ndarray
    background: np.ndarray

    def entries(self, node):
        return [(self.flow_ids[k], int(self.transmitters[k]), float(self.demand[k]))
                for k in np.flatnonzero(self.sensed[node])]

    def scale(self, factors=None):
        if factors is None:
            return np.ones(len(self.flow_ids))
        return np.array([factors.get(f, 1.0) for f in self.flow_ids])

    def loads(self, factors=None):
        if not len(self.flow_ids):
            return self.background.copy()
        return self.background + self.sensed @ (self.demand * self.scale(factors))

    def utilization(self, factors=None):
        return self.loads(factors) / self.capacity

    def same_structure(self, other):
        return (other is not None and self.flow_ids == other.flow_ids
                and np.array_equal(self.transmitters, other.transmitters)
                and np.array_equal(self.sensed, other.sensed))


def build_load_map(topology, transmissions, background=None, radius=None):
    """``transmissions`` is a list of (flow_id, transmitting node, W)."""
    n = len(topology)
    radius = topology.radio.cs_range if radius is None else radius
    background = np.zeros(n) if background is None else np.asarray(background, dtype=float)
    txs = np.array([t for _, t, _ in transmissions], dtype=int)
    sensed = topology.sensing_mask(radius)[:, txs] if len(txs) else np.zeros((n, 0), dtype=bool)
    return ChannelLoadMap(
        capacity=topology.radio.channel_capacity,
        sensed=sensed,
        transmitters=txs,
        flow_ids=tuple(f for f, _, _ in transmissions),
        demand=np.array([w for _, _, w in transmissions], dtype=float),
        background=background,
    )


def apply_fluid_contention(load_map, tol=1e-10, max_iter=1000, damping=0.5):
    """Per-flow degradation factors in (0, 1].

    A flow's factor is the smallest capacity/load ratio over its transmitters,
    with loads counted at achieved rates. Solved as a damped fixed point.
    """
    flows = sorted(set(load_map.flow_ids))
    if not flows:
        return {}
    index = {f: i for i, f in enumerate(flows)}
    owner = np.array([index[f] for f in load_map.flow_ids])
    at_tx = load_map.sensed[load_map.transmitters].astype(float)
    bg_tx = load_map.background[load_map.transmitters]
    cap = load_map.capacity

    f = np.ones(len(flows))
    for _ in range(max_iter):
        load = bg_tx + at_tx @ (load_map.demand * f[owner])
        ratio = np.minimum(1.0, cap / np.maximum(load, 1e-12))
        g = np.ones(len(flows))
        np.minimum.at(g, owner, ratio)
        nxt = f + damping * (g - f)
        done = np.max(np.abs(nxt - f)) < tol
        f = nxt
        if done:
            break
    return {flow: float(min(1.0, max(f[i], 1e-12))) for flow, i in index.items()}


def per_hop_delay(base_airtime, utilization):
    """Queueing blow-up of one hop's airtime, capped at utilization ``U_MAX``."""
    return base_airtime / max(_DELAY_EPS, 1.0 - min(max(utilization, 0.0), U_MAX))


# =====================================================
# 📡 CHANNEL MONITOR
# =====================================================
class ChannelMonitor:
    """Turns piecewise-constant utilization into busy intervals for the estimators."""

    def __init__(self, n, period, estimators_local, estimators_neighbor):
        self.period = period
        self.local = estimators_local
        self.neighbor = estimators_neighbor
        self.u_local = np.zeros(n)
        self.u_neighbor = np.zeros(n)
        self.control_busy = np.zeros(n)
        self.seg_start = 0.0
        self.period_start = 0.0
        self.busy_local = [[] for _ in range(n)]
        self.busy_neighbor = [[] for _ in range(n)]

    def close_segment(self, t):
        length = t - self.seg_start
        if length <= 0:
            return
        start = self.seg_start
        for n in np.flatnonzero((self.u_local > 0) | (self.control_busy > 0)):
            busy = min(length, self.u_local[n] * length + self.control_busy[n])
            self.control_busy[n] = 0.0
            if busy > 0:
                self.busy_local[n].append((start, start + busy))
        for n in np.flatnonzero(self.u_neighbor > 0):
            busy = min(length, self.u_neighbor[n] * length)
            self.busy_neighbor[n].append((start, start + busy))
        self.seg_start = t

    def set_utilization(self, t, u_local, u_neighbor):
        self.close_segment(t)
        self.u_local = np.minimum(1.0, u_local)
        self.u_neighbor = np.minimum(1.0, u_neighbor)

    def close_period(self, t):
        self.close_segment(t)
        window = (self.period_start, t)
        for n in range(len(self.local)):
            self.local[n] = observe_channel(self.local[n], window, self.busy_local[n])
            self.neighbor[n] = observe_channel(self.neighbor[n], window, self.busy_neighbor[n])
            self.busy_local[n] = []
            self.busy_neighbor[n] = []
        self.period_start = t


# =====================================================
# 🚀 ENGINE
# =====================================================
@dataclass
class SimulationResult:
    report: object
    trace: TraceLog


class Simulator:
    """One deterministic run of a scenario under one protocol variant."""

    def __init__(self, scenario, variant, seed=None, trace=False):
        self.scenario = scenario
        self.variant = ProtocolVariant.parse(variant)
        self.seed = scenario.seed if seed is None else int(seed)
        built = build(scenario, self.seed)
        self.topology = built.topology
        self.radio = scenario.radio
        self.mac = scenario.mac
        self.background = built.background
        self.monitor_nodes = built.monitor
        self.mobility_rng = built.mobility_rng
        self.queue = EventQueue(end_time=scenario.duration)
        self.trace = TraceLog(enabled=trace)
        self.capacity = scenario.mac.channel_capacity

        n = len(self.topology)
        self.protocol = MbmpProtocol(self, self.variant, n, self.mac, scenario.protocol,
                                     scenario.cneighbor)
        self.flows = {}
        for spec in built.flows:
            self.flows[spec.flow_id] = FlowState(
                spec=spec, w=flow_bandwidth(self.mac, spec), offered_rate=offered_rate(spec))
        self.messages = {}
        self.receptions = {}
        self.bandwidth_rows = []

        self.load_map = build_load_map(self.topology, [], self.background)
        self.ncs_map = build_load_map(self.topology, [], self.background, self.radio.ncs_range)
        self.factors = {}
        est = scenario.estimator
        init_local = np.maximum(0.0, self.capacity - self.background) if est.warm_start else np.zeros(n)
        self.monitor = ChannelMonitor(
            n, est.period,
            [BandwidthEstimator.from_config(est, self.capacity, float(v)) for v in init_local],
            [BandwidthEstimator.from_config(est, self.capacity, float(v)) for v in init_local],
        )
        self.monitor.set_utilization(0.0, self.background / self.capacity,
                                     self.background / self.capacity)
        self._meter_t = 0.0
        self.waypoints = None
        self._started = False

    # ----------------- net interface used by the protocol -----------------
    @property
    def now(self):
        return self.queue.now

    def schedule(self, delay, kind, payload=None):
        return self.queue.after(delay, kind, payload)

    def _send(self, sender, msg, receivers, direct):
        kind = msg.kind.value
        self.messages[kind] = self.messages.get(kind, 0) + 1
        self.receptions[kind] = self.receptions.get(kind, 0) + len(receivers)
        if self.scenario.protocol.control_consumes_airtime:
            airtime = packet_airtime(self.mac, self.scenario.protocol.control_packet_size)
            self.monitor.control_busy[sender] += airtime
            for r in receivers:
                self.monitor.control_busy[r] += airtime
        self.trace.emit(self.now, "send", node=sender, kind=kind, flow=msg.flow_id,
                        msg=msg.msg_id, receivers=len(receivers))
        latency = self.scenario.protocol.control_latency
        for r in receivers:
            self.schedule(latency, "deliver", (r, msg, sender, direct[r] if direct else True))

    def broadcast(self, sender, msg, radius):
        receivers = self.topology.within(sender, radius)
        direct = None
        if radius > self.radio.tx_range:
            row = self.topology.distance_matrix()[sender]
            direct = {r: bool(row[r] <= self.radio.tx_range) for r in receivers}
        self._send(sender, msg, receivers, direct)

    def unicast(self, sender, receiver, msg, radius=None):
        radius = self.radio.tx_range if radius is None else radius
        if receiver is None or self.topology.distance(sender, receiver) > radius:
            return False
        direct = {receiver: self.topology.distance(sender, receiver) <= self.radio.tx_range}
        self._send(sender, msg, [receiver], direct)
        return True

    def local_available(self, node, exclude_flow=None):
        est = self.monitor.local[node].current_estimate
        free = self.capacity - self.protocol.agents[node].reserved(exclude_flow)
        return float(max(0.0, min(est, free)))

    def neighbor_available(self, node, exclude_flow=None):
        return float(self.monitor.neighbor[node].current_estimate)

    def flow_spec(self, flow_id):
        return self.flows[flow_id].spec

    def is_current(self, flow_id, attempt):
        flow = self.flows.get(flow_id)
        if flow is None or flow.attempt != attempt:
            return False
        return flow.status is FlowStatus.PENDING or flow.rediscovering

    def admit(self, flow_id, attempt, route):
        flow = self.flows[flow_id]
        if not self.is_current(flow_id, attempt):
            self.protocol.release_route(flow_id, route, "stale")
            return
        old = flow.route
        if old is not None:
            for node in old:
                if node not in route:
                    self.protocol.release(node, flow_id, "rerouted")
        self._meter(self.now)
        before = dict(self.factors)
        flow.route = route
        flow.status = FlowStatus.ADMITTED
        flow.active = True
        flow.rediscovering = False
        flow.break_reports = 0
        if flow.admitted_at is None:
            flow.admitted_at = self.now
        self.trace.emit(self.now, "admitted", node=route.source, flow=flow_id,
                        route=list(route.nodes), attempt=attempt)
        logger.debug("flow %d admitted on %s", flow_id, route.nodes)
        self._refresh_channel()
        if old is None:
            self._flag_false_admission(flow_id, before)

    def reject(self, flow_id, attempt, reason):
        flow = self.flows[flow_id]
        if not self.is_current(flow_id, attempt):
            return
        if flow.rediscovering:
            flow.rediscovering = False
            self.trace.emit(self.now, "rediscovery_failed", flow=flow_id, reason=reason)
            return
        if flow.admitted_at is not None:
            # an admitted flow that lost its route and found no new one
            flow.status = FlowStatus.BROKEN
            flow.reason = f"rediscovery-{reason}"
            self._release_everywhere(flow_id, "broken")
            self.trace.emit(self.now, "broken", node=flow.spec.src, flow=flow_id, reason=reason)
            logger.debug("flow %d broken (%s)", flow_id, reason)
            return
        flow.status = FlowStatus.REJECTED
        flow.reason = reason
        self._release_everywhere(flow_id, "rejected")
        self.trace.emit(self.now, "rejected", node=flow.spec.src, flow=flow_id, reason=reason)
        logger.debug("flow %d rejected (%s)", flow_id, reason)

    def route_failed(self, flow_id, attempt):
        """A RouteError reached the source: tear down and rediscover once per attempt."""
        flow = self.flows[flow_id]
        if flow.attempt != attempt or flow.status is not FlowStatus.ADMITTED:
            return
        self._teardown(flow, "route-error")
        flow.route_retries += 1
        if flow.route_retries > self.scenario.protocol.route_retry_budget:
            flow.status = FlowStatus.BROKEN
            flow.reason = "route-retries"
            self.trace.emit(self.now, "broken", flow=flow_id)
            return
        flow.status = FlowStatus.PENDING
        flow.attempt += 1
        self.trace.emit(self.now, "rediscovery", node=flow.spec.src, flow=flow_id,
                        attempt=flow.attempt)
        self.protocol.start_flow(flow.spec.src, flow.spec, flow.attempt)

    # ----------------- flow bookkeeping -----------------
    def _release_everywhere(self, flow_id, reason):
        for agent in self.protocol.agents:
            if flow_id in agent.reservations:
                self.protocol.release(agent.node, flow_id, reason)

    def _teardown(self, flow, reason):
        if flow.active:
            self._meter(self.now)
            flow.active = False
            self._refresh_channel()
        flow.route = None
        self._release_everywhere(flow.spec.flow_id, reason)

    def _flag_false_admission(self, flow_id, before):
        after = self.factors
        flow = self.flows[flow_id]
        if after.get(flow_id, 1.0) < FALSE_ADMISSION_RATIO:
            flow.false_admission = True
        for other, f_before in before.items():
            if f_before >= FALSE_ADMISSION_RATIO and after.get(other, 1.0) < FALSE_ADMISSION_RATIO:
                flow.false_admission = True
        if flow.false_admission:
            self.trace.emit(self.now, "false_admission", flow=flow_id)

    # ----------------- channel -----------------
    def _active_transmissions(self):
        out = []
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            if flow.active:
                out.extend((fid, t, flow.w) for t in flow.route.transmitters)
        return out

    def _refresh_channel(self, force=True):
        self._meter(self.now)
        txs = self._active_transmissions()
        load_map = build_load_map(self.topology, txs, self.background)
        if not force and load_map.same_structure(self.load_map):
            ncs_map = build_load_map(self.topology, txs, self.background, self.radio.ncs_range)
            if ncs_map.same_structure(self.ncs_map):
                return
        self.load_map = load_map
        self.ncs_map = build_load_map(self.topology, txs, self.background, self.radio.ncs_range)
        self.factors = apply_fluid_contention(load_map)
        for fid, flow in self.flows.items():
            flow.factor = self.factors.get(fid, 1.0) if flow.active else 1.0
        self.monitor.set_utilization(self.now, self.load_map.utilization(self.factors),
                                     self.ncs_map.utilization(self.factors))

    def sample_local_bandwidth(self, node):
        """Fluid ground truth: capacity minus the achieved load ``node`` senses."""
        return max(0.0, self.capacity - float(self.load_map.loads(self.factors)[node]))

    def sample_neighbor_bandwidth(self, node):
        return max(0.0, self.capacity - float(self.ncs_map.loads(self.factors)[node]))

    # ----------------- metering -----------------
    def _meter(self, t):
        t0 = self._meter_t
        if t <= t0:
            return
        window = self.scenario.sampling_window
        for flow in self.flows.values():
            if not flow.active:
                continue
            a = t0
            while a < t - 1e-12:
                k = int(a / window + 1e-9)
                b = min(t, (k + 1) * window)
                bucket = flow.windows.setdefault(k, [0.0, 0.0, 0.0])
                dt = b - a
                bucket[0] += dt
                bucket[1] += flow.offered_rate * dt
                bucket[2] += flow.offered_rate * flow.factor * dt
                a = b
        self._meter_t = t

    def _sample_delays(self):
        loads = self.load_map.loads(self.factors)
        mask = self.topology.sensing_mask(self.radio.cs_range)
        for flow in self.flows.values():
            if not flow.active:
                continue
            base = packet_airtime(self.mac, flow.spec.packet_size)
            hops = [per_hop_delay(base, float(loads[mask[t]].max()) / self.capacity)
                    for t in flow.route.transmitters]
            flow.delay_samples.append(sum(hops) / len(hops))

    def _sample_bandwidth(self):
        for node in self.monitor_nodes:
            self.bandwidth_rows.append({
                "t_us": int(round(self.now * 1e6)),
                "node": self.topology.label(node),
                "local_truth_bps": int(round(self.sample_local_bandwidth(node))),
                "local_estimate_bps": int(round(self.monitor.local[node].current_estimate)),
                "neighbor_truth_bps": int(round(self.sample_neighbor_bandwidth(node))),
                "neighbor_estimate_bps": int(round(self.monitor.neighbor[node].current_estimate)),
            })

    # ----------------- periodic events -----------------
    def _on_window(self, k):
        self._meter(self.now)
        self._sample_delays()
        self._sample_bandwidth()
        if self.variant is ProtocolVariant.DSR and self.scenario.protocol.dsr_overload_retries:
            self._overload_retries(k - 1)
        self.queue.schedule((k + 1) * self.scenario.sampling_window, "window", k + 1)

    def _overload_retries(self, k):
        budget = self.scenario.protocol.route_retry_budget
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            if flow.status is not FlowStatus.ADMITTED or flow.rediscovering:
                continue
            active, off, ach = flow.windows.get(k, (0.0, 0.0, 0.0))
            if off <= 0 or ach / off >= FALSE_ADMISSION_RATIO or flow.overload_retries >= budget:
                continue
            flow.overload_retries += 1
            flow.rediscovering = True
            flow.attempt += 1
            self.trace.emit(self.now, "overload_rediscovery", flow=fid, attempt=flow.attempt)
            self.protocol.start_flow(flow.spec.src, flow.spec, flow.attempt)

    def _on_period(self, k):
        self.monitor.close_period(self.now)
        self.protocol.expire_reservations(self.now)
        ttl = self.scenario.cneighbor.ttl
        for agent in self.protocol.agents:
            expire(agent.cset, self.now, ttl)
        self.queue.schedule((k + 1) * self.scenario.estimator.period, "period", k + 1)

    def _on_mobility(self, k):
        mob = self.scenario.mobility
        topology, self.waypoints = step_mobility(
            self.topology, self.waypoints, mob.tick, self.mobility_rng, mob)
        self.relocate(topology)
        self.queue.schedule((k + 1) * mob.tick, "mobility", k + 1)

    def relocate(self, topology):
        """Swap in moved positions and report every admitted route hop that broke."""
        self.topology = topology
        self._refresh_channel(force=False)
        tx = self.radio.tx_range
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            if flow.status is not FlowStatus.ADMITTED or flow.route is None:
                continue
            broken = [a for a, b in flow.route.hops if self.topology.distance(a, b) > tx]
            if not broken:
                continue
            route, attempt = flow.route, flow.attempt
            delivered = False
            for node in broken:
                delivered |= self.protocol.on_mobility_break(node, fid, attempt, route)
                # the source tore the route down itself
                if flow.route is not route:
                    break
            if not delivered:
                flow.break_reports += 1
                if flow.break_reports > self.scenario.protocol.route_retry_budget:
                    self._teardown(flow, "unreachable")
                    flow.status = FlowStatus.BROKEN
                    flow.reason = "source-unreachable"
                    self.trace.emit(self.now, "broken", flow=fid)

    def _on_hello(self, node):
        self.protocol.send_hello(node, self.scenario.cneighbor.hello_depth)
        self.queue.after(self.scenario.cneighbor.hello_period, "hello", node)

    # ----------------- main loop -----------------
    def _schedule_initial(self):
        s = self.scenario
        for fid in sorted(self.flows, key=lambda f: (self.flows[f].spec.start_time, f)):
            self.queue.schedule(self.flows[fid].spec.start_time, "flow_start", fid)
        self.queue.schedule(s.estimator.period, "period", 1)
        self.queue.schedule(s.sampling_window, "window", 1)
        if s.mobility.enabled:
            self.waypoints = init_waypoints(self.topology, s.mobility, self.mobility_rng)
            self.queue.schedule(s.mobility.tick, "mobility", 1)
        if s.cneighbor.mode in ("active", "both"):
            n = len(self.topology)
            for node in range(n):
                self.queue.schedule(s.cneighbor.hello_period * node / n, "hello", node)

    def _dispatch(self, event):
        kind, payload = event.kind, event.payload
        if kind == "deliver":
            node, msg, sender, direct = payload
            if msg.kind is not MessageKind.HELLO:
                self.trace.emit(self.now, "recv", node=node, kind=msg.kind.value,
                                flow=msg.flow_id, msg=msg.msg_id, sender=sender)
            self.protocol.deliver(node, msg, sender, direct)
        elif kind == "flow_start":
            flow = self.flows[payload]
            flow.attempted = True
            self.protocol.start_flow(flow.spec.src, flow.spec, flow.attempt)
        elif kind == "check_timeout":
            self.protocol.on_check_timeout(*payload)
        elif kind == "discovery_timeout":
            flow_id, attempt = payload
            self.reject(flow_id, attempt, "timeout")
        elif kind == "period":
            self._on_period(payload)
        elif kind == "window":
            self._on_window(payload)
        elif kind == "mobility":
            self._on_mobility(payload)
        elif kind == "hello":
            self._on_hello(payload)

    def _finish(self):
        end = self.scenario.duration
        self.queue.now = max(self.queue.now, end)
        self._meter(end)
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            if flow.status is FlowStatus.ADMITTED:
                flow.status = FlowStatus.FINISHED
                flow.active = False
            elif flow.status is FlowStatus.PENDING and flow.attempted:
                flow.status = (FlowStatus.BROKEN if flow.admitted_at is not None
                               else FlowStatus.REJECTED)
                flow.reason = flow.reason or "unresolved"
            self._release_everywhere(fid, "finished")
        self.trace.emit(end, "end")

    def start(self):
        if self._started:
            return
        self._started = True
        self._sample_bandwidth()
        self._schedule_initial()

    def run_until(self, t):
        """Process every event up to and including time ``t``."""
        self.start()
        t = min(t, self.scenario.duration)
        while self.queue.peek_time() is not None and self.queue.peek_time() <= t:
            self._dispatch(self.queue.pop())
        self.queue.now = max(self.queue.now, t)
        self._meter(self.now)

    def run(self):
        self.start()
        while True:
            event = self.queue.pop()
            if event is None:
                break
            self._dispatch(event)
        self._finish()
        s = self.scenario
        report = compute_metrics(
            self.flows.values(), self.messages, self.receptions, s.duration,
            s.sampling_window, s.steady_window,
            labels={i: self.topology.label(i) for i in self.topology.node_ids},
            bandwidth=self.bandwidth_rows, scenario=s.name, variant=self.variant.value,
            seed=self.seed)
        logger.info("%s/%s seed=%d: admitted=%d rejected=%d n_f=%d", s.name,
                    self.variant.value, self.seed, report.admitted, report.rejected, report.n_f)
        return SimulationResult(report, self.trace)


def run(scenario, variant, seed=None, trace=False):
    """Run ``scenario`` under ``variant``; deterministic for a fixed seed."""
    return Simulator(scenario, variant, seed, trace).run()
