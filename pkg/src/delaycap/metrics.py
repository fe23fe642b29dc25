"""Performance metrics over episode logs, plus multi-configuration sweeps.

Utilization follows the delivery-rate-over-capacity definition: bytes the
flow actually got through the link, divided by what the access link offered
during the same window.  Queuing delay is measured RTT minus the propagation
floor.  All functions here are pure; sweeps re-run episodes but never mutate
shared state, so axes parallelize trivially if callers want that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .link import EpisodeLog, FlowSpec, SimConfig, run_episode
from .traces import Trace


@dataclass(frozen=True)
class FlowMetrics:
    avg_delay_ms: float
    avg_queuing_delay_ms: float
    p95_delay_ms: float
    throughput_bps: float
    utilization: float


def flow_metrics(log: EpisodeLog, flow_id: int = 0) -> FlowMetrics:
    """Delay/throughput/utilization for one flow of an episode."""
    acks = log.flow_acks(flow_id)
    if acks.shape[0] == 0:
        raise ValueError(f"flow {flow_id} has no acks; metrics undefined")
    rtts = acks[:, 3]
    mrtt = float(log.meta["mrtt_ms"])
    avg_delay = float(rtts.mean())
    p95 = nearest_rank_percentile(rtts, 95.0)
    flow = log.meta["flows"][flow_id]
    duration_s = active_seconds(log, flow_id)
    throughput = flow["delivered_bytes"] * 8.0 / duration_s
    capacity = capacity_bps(log)
    utilization = throughput / capacity if capacity > 0 else 0.0
    return FlowMetrics(avg_delay_ms=avg_delay,
                       avg_queuing_delay_ms=max(avg_delay - mrtt, 0.0),
                       p95_delay_ms=p95,
                       throughput_bps=throughput,
                       utilization=utilization)


def active_seconds(log: EpisodeLog, flow_id: int) -> float:
    start = log.meta["flows"][flow_id]["start_ms"]
    return max(log.meta["duration_ms"] - start, 1) / 1000.0


def capacity_bps(log: EpisodeLog) -> float:
    """Average access-link rate over the episode's consumed trace window."""
    duration_s = log.meta["duration_ms"] / 1000.0
    return log.meta["opportunities_total"] * log.meta["mtu_bytes"] * 8.0 / duration_s


def nearest_rank_percentile(samples: np.ndarray, pct: float) -> float:
    ordered = np.sort(np.asarray(samples, dtype=np.float64))
    rank = max(1, math.ceil(pct / 100.0 * ordered.size))
    return float(ordered[rank - 1])


def jain_index(rates) -> float:
    """(sum r)^2 / (n * sum r^2); lies in [1/n, 1]."""
    r = np.asarray(rates, dtype=np.float64)
    if r.size == 0:
        raise ValueError("need at least one rate")
    if np.any(r < 0):
        raise ValueError("rates must be non-negative")
    total_sq = float(np.sum(r * r))
    if total_sq == 0.0:
        raise ValueError("all rates are zero; index undefined")
    return float(np.sum(r)) ** 2 / (r.size * total_sq)


@dataclass(frozen=True)
class FairnessReport:
    """Per-flow rates on a shared bottleneck and their Jain index."""

    rates_bps: tuple[float, ...]
    jain: float


def fairness_report(log: EpisodeLog) -> FairnessReport:
    rates = tuple(flow_metrics(log, i).throughput_bps
                  for i in range(log.meta["n_flows"]))
    return FairnessReport(rates_bps=rates, jain=jain_index(rates))


SWEEP_AXES = ("buffer_bytes", "mrtt_ms", "target_ms")

SWEEP_COLUMNS = ("axis", "value", "mode", "avg_delay_ms", "avg_queuing_delay_ms",
                 "p95_delay_ms", "throughput_mbps", "utilization")


def sweep(axis: str, values, scheme_factory, shim_factory, trace: Trace,
          cfg: SimConfig) -> list[dict]:
    """One raw row (and one plugin row, when a shim factory is given) per value.

    scheme_factory() -> fresh scheme; shim_factory(target_ms) -> fresh shim
    with its policy attached, or None to sweep the raw scheme only.  The
    target axis only moves the shim; raw rows are still emitted per value so
    tables stay rectangular.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    if not values:
        raise ValueError("values must be non-empty")
    rows: list[dict] = []
    for value in values:
        if axis == "target_ms":
            run_cfg = cfg
        else:
            run_cfg = replace(cfg, **{axis: int(value)})
        raw_log = run_episode(FlowSpec(scheme_factory()), trace, run_cfg)
        rows.append(_sweep_row(axis, value, "raw", flow_metrics(raw_log, 0)))
        if shim_factory is not None:
            target = float(value) if axis == "target_ms" else None
            shim = shim_factory(target)
            plugged = run_episode(FlowSpec(scheme_factory(), shim), trace, run_cfg)
            rows.append(_sweep_row(axis, value, "plugin", flow_metrics(plugged, 0)))
    return rows


def _sweep_row(axis, value, mode, fm: FlowMetrics) -> dict:
    return {
        "axis": axis, "value": value, "mode": mode,
        "avg_delay_ms": fm.avg_delay_ms,
        "avg_queuing_delay_ms": fm.avg_queuing_delay_ms,
        "p95_delay_ms": fm.p95_delay_ms,
        "throughput_mbps": fm.throughput_bps / 1e6,
        "utilization": fm.utilization,
    }


def write_csv(rows: list[dict], columns, path) -> None:
    """Deterministic CSV: fixed column order, shortest-roundtrip floats."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(csv_cell(row.get(c, "")) for c in columns) + "\n")


def csv_cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)
