# mbmp_sim/sweep.py
"""Parameter sweeps: one simulation per (variant, point, replicate), run on a worker pool."""
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed

import pandas as pd

from mbmp_sim.protocol import ProtocolVariant
from mbmp_sim.simcore import run

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "n_f", "total_throughput", "offered_load", "admitted", "rejected",
    "false_admissions", "control_messages", "avg_per_hop_delay_us",
]


def sweep_columns(parameter):
    """CSV layout; the swept point gets a column named after the parameter."""
    return ["variant", parameter, "replicate", "seed", "status", *METRIC_COLUMNS, "error"]


def sweep_workers(default=None):
    """Worker cap from ``MBMP_SIM_THREADS``, falling back to the CPU count."""
    raw = os.getenv("MBMP_SIM_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("Ignoring non-integer MBMP_SIM_THREADS=%r", raw)
    return default or os.cpu_count() or 1


def _jobs(spec):
    for variant in spec.variants:
        v = ProtocolVariant.parse(variant).value
        for value in spec.values:
            for rep in range(spec.replicates):
                yield v, value, rep, spec.base_seed + rep


def run_point(spec, variant, value, replicate, seed):
    """One sweep row. Failures are reported in the row, never raised."""
    row = {"variant": variant, spec.parameter: value,
           "replicate": replicate, "seed": seed}
    try:
        report = run(spec.point(value), variant, seed).report
    except Exception as e:
        logger.error("Sweep point %s %s=%s rep=%d failed: %s", variant, spec.parameter,
                     value, replicate, e)
        row.update(status="failed", error=str(e))
        return row
    row.update(
        status="ok",
        n_f=report.n_f,
        total_throughput=report.total_throughput,
        offered_load=report.offered_load,
        admitted=report.admitted,
        rejected=report.rejected,
        false_admissions=report.false_admissions,
        control_messages=report.total_control_messages,
        avg_per_hop_delay_us=report.avg_per_hop_delay_us,
        error="",
    )
    return row


def run_sweep(spec, workers=None):
    """Rows come back in (variant, point, replicate) order whatever the completion order."""
    jobs = list(_jobs(spec))
    workers = min(workers or sweep_workers(), len(jobs))
    logger.info("Sweep: %d runs on %d worker(s)", len(jobs), workers)
    if workers <= 1:
        rows = [run_point(spec, *job) for job in jobs]
    else:
        rows = [None] * len(jobs)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_point, spec, *job): i for i, job in enumerate(jobs)}
            for future in as_completed(futures):
                rows[futures[future]] = future.result()
    return pd.DataFrame(rows, columns=sweep_columns(spec.parameter))


def summarize(frame):
    """Mean of the metric columns per (variant, point) over successful replicates."""
    point = frame.columns[1]
    ok = frame[frame["status"] == "ok"]
    metrics = ["n_f", "total_throughput", "offered_load", "control_messages", "avg_per_hop_delay_us"]
    return ok.groupby(["variant", point], sort=True)[metrics].mean().reset_index()
