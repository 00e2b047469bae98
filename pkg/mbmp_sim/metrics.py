# mbmp_sim/metrics.py
"""QoS-violation, throughput, delay and control-overhead metrics of one run."""
import logging
import math
from typing import Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict

from mbmp_sim.events import to_us

logger = logging.getLogger(__name__)

FALSE_ADMISSION_RATIO = 0.95

WINDOW_COLUMNS = ["window_start_us", "flow_id", "active_us", "offered_bps", "achieved_bps"]
BANDWIDTH_COLUMNS = ["t_us", "node", "local_truth_bps", "local_estimate_bps",
                     "neighbor_truth_bps", "neighbor_estimate_bps"]


# =====================================================
# 📋 REPORT MODELS
# =====================================================
class FlowSummary(BaseModel):
    model_config = ConfigDict(extra="forbid")

    flow_id: int
    src: str
    dst: str
    status: str
    reason: Optional[str] = None
    route: list[str] = []
    w_bps: int
    offered_bps: int
    steady_bps: int = 0
    steady_ratio: Optional[float] = None
    false_admission: bool = False
    admitted_at_us: Optional[int] = None
    per_hop_delay_us: Optional[int] = None
    delay_samples: int = 0
    route_retries: int = 0


class MetricsReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: str = ""
    variant: str = ""
    seed: int = 0
    duration_us: int = 0
    n_f: int = 0
    total_throughput: int = 0
    offered_load: int = 0
    admitted: int = 0
    rejected: int = 0
    broken: int = 0
    false_admissions: int = 0
    control_messages: dict[str, int] = {}
    control_receptions: dict[str, int] = {}
    avg_per_hop_delay_us: int = 0
    flows: list[FlowSummary] = []
    windows: list[dict] = []
    bandwidth: list[dict] = []

    @property
    def total_control_messages(self):
        return sum(self.control_messages.values())

    def flow(self, flow_id):
        for f in self.flows:
            if f.flow_id == flow_id:
                return f
        raise KeyError(flow_id)

    def summary(self):
        """JSON-ready summary without the per-window flow series."""
        return self.model_dump(mode="json", exclude={"windows"})

    def window_frame(self):
        return pd.DataFrame(self.windows, columns=WINDOW_COLUMNS)

    def bandwidth_frame(self):
        return pd.DataFrame(self.bandwidth, columns=BANDWIDTH_COLUMNS)

    def merge(self, other):
        """Combine reports of two runs over disjoint flow sets."""
        counts = {}
        receptions = {}
        for src, dst in ((self.control_messages, counts), (other.control_messages, counts),
                         (self.control_receptions, receptions),
                         (other.control_receptions, receptions)):
            for k, v in src.items():
                dst[k] = dst.get(k, 0) + v
        flows = sorted(self.flows + other.flows, key=lambda f: f.flow_id)
        return self.model_copy(update={
            "n_f": self.n_f + other.n_f,
            "total_throughput": self.total_throughput + other.total_throughput,
            "offered_load": self.offered_load + other.offered_load,
            "admitted": self.admitted + other.admitted,
            "rejected": self.rejected + other.rejected,
            "broken": self.broken + other.broken,
            "false_admissions": self.false_admissions + other.false_admissions,
            "control_messages": dict(sorted(counts.items())),
            "control_receptions": dict(sorted(receptions.items())),
            "avg_per_hop_delay_us": _mean_delay(flows),
            "flows": flows,
            "windows": self.windows + other.windows,
            "bandwidth": self.bandwidth + other.bandwidth,
        })


def _mean_delay(flows):
    n = sum(f.delay_samples for f in flows if f.per_hop_delay_us is not None)
    if n == 0:
        return 0
    total = sum(f.per_hop_delay_us * f.delay_samples for f in flows
                if f.per_hop_delay_us is not None)
    return int(round(total / n))


# =====================================================
# 📊 COMPUTE
# =====================================================
def compute_metrics(flows, messages, receptions, duration, window, steady_window,
                    labels=None, bandwidth=None, scenario="", variant="", seed=0):
    """Build the report from finished flow states and the control-message counters.

    ``flows`` are the engine's flow states; each carries a ``windows`` map of
    window index -> [active seconds, offered bits, achieved bits].
    """
    labels = labels or {}
    n_windows = max(1, int(math.ceil(duration / window - 1e-9)))
    lengths = [min(window, duration - k * window) for k in range(n_windows)]
    steady_start = max(0.0, duration - steady_window)
    steady_idx = [k for k in range(n_windows) if k * window >= steady_start - 1e-9]
    steady_len = sum(lengths[k] for k in steady_idx) or 1.0

    violation = [0.0] * n_windows
    rows = []
    summaries = []
    all_delays = []
    offered_load = 0.0
    for flow in sorted(flows, key=lambda f: f.spec.flow_id):
        spec = flow.spec
        started = flow.attempted
        if started:
            offered_load += flow.offered_rate
        steady_off = steady_ach = 0.0
        for k in range(n_windows):
            active, off, ach = flow.windows.get(k, (0.0, 0.0, 0.0))
            if active > 0:
                violation[k] += (ach - off) / lengths[k]
            if k in steady_idx:
                steady_off += off
                steady_ach += ach
            if started:
                rows.append({"window_start_us": to_us(k * window), "flow_id": spec.flow_id,
                             "active_us": to_us(active),
                             "offered_bps": int(round(off / lengths[k])),
                             "achieved_bps": int(round(ach / lengths[k]))})

        ratio = round(steady_ach / steady_off, 6) if steady_off > 0 else None
        false_admission = flow.false_admission or (
            ratio is not None and ratio < FALSE_ADMISSION_RATIO)
        delay = None
        if flow.delay_samples:
            delay = to_us(sum(flow.delay_samples) / len(flow.delay_samples))
            all_delays.extend(flow.delay_samples)
        summaries.append(FlowSummary(
            flow_id=spec.flow_id,
            src=labels.get(spec.src, str(spec.src)),
            dst=labels.get(spec.dst, str(spec.dst)),
            status=flow.status.value,
            reason=flow.reason,
            route=[labels.get(n, str(n)) for n in (flow.route or ())],
            w_bps=int(round(flow.w)),
            offered_bps=int(round(flow.offered_rate)),
            steady_bps=int(round(steady_ach / steady_len)),
            steady_ratio=ratio,
            false_admission=false_admission,
            admitted_at_us=to_us(flow.admitted_at) if flow.admitted_at is not None else None,
            per_hop_delay_us=delay,
            delay_samples=len(flow.delay_samples),
            route_retries=flow.route_retries,
        ))

    report = MetricsReport(
        scenario=scenario,
        variant=variant,
        seed=seed,
        duration_us=to_us(duration),
        n_f=int(round(sum(violation) / n_windows)),
        total_throughput=sum(f.steady_bps for f in summaries),
        offered_load=int(round(offered_load)),
        admitted=sum(1 for f in summaries if f.admitted_at_us is not None),
        rejected=sum(1 for f in summaries if f.status == "rejected"),
        broken=sum(1 for f in summaries if f.status == "broken"),
        false_admissions=sum(1 for f in summaries if f.false_admission),
        control_messages=dict(sorted(messages.items())),
        control_receptions=dict(sorted(receptions.items())),
        avg_per_hop_delay_us=to_us(sum(all_delays) / len(all_delays)) if all_delays else 0,
        flows=summaries,
        windows=rows,
        bandwidth=list(bandwidth or []),
    )
    logger.debug("metrics: n_f=%d throughput=%d admitted=%d", report.n_f,
                 report.total_throughput, report.admitted)
    return report
