# mbmp_sim/bandwidth.py
"""Flow-rate to channel-bandwidth mapping and the idle-time bandwidth estimators."""
import logging
import math

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from mbmp_sim.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

# Period boundaries closer than this are treated as reached.
_EPS = 1e-9


# =====================================================
# 📋 DATA MODELS
# =====================================================
class MacTimingConfig(BaseModel):
    """802.11 DSSS-class timing; defaults put 133 pkt/s of 512 B at ~930 kbps."""

    model_config = ConfigDict(extra="forbid")

    t_difs: float = 50e-6
    t_sifs: float = 10e-6
    t_rts: float = 272e-6
    t_cts: float = 248e-6
    t_ack: float = 248e-6
    header_bits: int = 384
    mean_backoff: float = 410e-6
    channel_capacity: float = 2_000_000.0

    @model_validator(mode="after")
    def _non_negative(self):
        for name in ("t_difs", "t_sifs", "t_rts", "t_cts", "t_ack", "mean_backoff", "header_bits"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.channel_capacity <= 0:
            raise ValueError("channel_capacity must be > 0")
        return self


class EstimatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = 0.5
    period: float = 1.0
    warm_start: bool = True

    @field_validator("alpha")
    @classmethod
    def _alpha(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        return v

    @field_validator("period")
    @classmethod
    def _period(cls, v):
        if v <= 0:
            raise ValueError("period must be > 0")
        return v


class FlowSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    flow_id: int
    src: int
    dst: int
    rate: float
    packet_size: int
    start_time: float = 0.0

    @model_validator(mode="after")
    def _valid(self):
        if self.rate <= 0:
            raise ValueError("rate must be > 0")
        if self.packet_size <= 0:
            raise ValueError("packet_size must be > 0")
        if self.src == self.dst:
            raise ValueError("src and dst must differ")
        if self.start_time < 0:
            raise ValueError("start_time must be >= 0")
        return self


class BandwidthEstimator(BaseModel):
    """Weighted-average estimate of available bandwidth from idle channel time.

    The same type serves the local estimator (fed by cs-range sensing) and the
    c-neighbourhood estimator (fed by ncs-range sensing).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = 0.5
    period: float = 1.0
    channel_capacity: float = 2_000_000.0
    current_estimate: float = 0.0
    idle_accumulator: float = 0.0

    @model_validator(mode="after")
    def _bounds(self):
        if not 0.0 <= self.current_estimate <= self.channel_capacity * (1 + 1e-12):
            raise ValueError("estimate outside [0, channel_capacity]")
        if not 0.0 <= self.idle_accumulator <= self.period * (1 + 1e-9):
            raise ValueError("idle_accumulator outside [0, period]")
        return self

    @classmethod
    def from_config(cls, cfg, channel_capacity, initial=0.0):
        return cls(alpha=cfg.alpha, period=cfg.period,
                   channel_capacity=channel_capacity, current_estimate=initial)


# =====================================================
# 📡 AIRTIME AND FLOW BANDWIDTH
# =====================================================
def packet_airtime(cfg, packet_size):
    """Channel time of one RTS-CTS-DATA-ACK exchange for a ``packet_size``-byte payload."""
    if packet_size <= 0:
        raise InvalidArgumentError("packet_size must be > 0")
    payload = (packet_size * 8 + cfg.header_bits) / cfg.channel_capacity
    return (cfg.t_difs + cfg.t_rts + cfg.t_cts + payload + cfg.t_ack
            + 3 * cfg.t_sifs + cfg.mean_backoff)


def flow_bandwidth(cfg, spec):
    """Channel bandwidth W a flow needs. May exceed capacity; callers reject those."""
    return spec.rate * packet_airtime(cfg, spec.packet_size) * cfg.channel_capacity


def offered_rate(spec):
    """Application bit rate of the CBR source."""
    return spec.rate * spec.packet_size * 8


# =====================================================
# 📈 ESTIMATORS
# =====================================================
def update_estimator(est, idle_time_in_period):
    if idle_time_in_period < 0 or idle_time_in_period > est.period * (1 + 1e-9):
        raise InvalidArgumentError(
            f"idle time {idle_time_in_period} outside [0, {est.period}]")
    idle = min(idle_time_in_period, est.period)
    sample = (idle / est.period) * est.channel_capacity
    value = est.alpha * est.current_estimate + (1.0 - est.alpha) * sample
    value = min(max(value, 0.0), est.channel_capacity)
    return est.model_copy(update={"current_estimate": value, "idle_accumulator": 0.0})


def observe_channel(est, interval, busy_intervals):
    """Fold a busy-interval trace over ``interval`` into the estimator.

    Periods are aligned to t=0; each period boundary crossed closes the period
    with one ``update_estimator`` call.
    """
    t0, t1 = interval
    if t1 < t0:
        raise InvalidArgumentError("interval end before start")
    busy = sorted((max(s, t0), min(e, t1)) for s, e in busy_intervals)
    busy = [(s, e) for s, e in busy if e > s]
    for (_, e1), (s2, _) in zip(busy, busy[1:]):
        if s2 < e1 - _EPS:
            raise InvalidArgumentError("busy intervals overlap")

    cursor = t0
    acc = est.idle_accumulator
    while cursor < t1 - _EPS:
        boundary = (math.floor(cursor / est.period + _EPS) + 1) * est.period
        seg_end = min(boundary, t1)
        acc += (seg_end - cursor) - _busy_in(busy, cursor, seg_end)
        cursor = seg_end
        if seg_end >= boundary - _EPS:
            est = update_estimator(est, min(max(acc, 0.0), est.period))
            acc = 0.0
    return est.model_copy(update={"idle_accumulator": min(max(acc, 0.0), est.period)})


def _busy_in(busy, a, b):
    total = 0.0
    for s, e in busy:
        lo, hi = max(s, a), min(e, b)
        if hi > lo:
            total += hi - lo
    return total
