"""Figures rendered from the CSV outputs.

Everything here consumes the delimited files the CLI writes (learning curves,
sweep tables, episode logs) and saves matplotlib figures next to them; no
simulation state is touched.  Uses the Agg backend so it runs headless.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _floats(rows, key):
    return [float(r[key]) for r in rows]


def plot_learning_curve(curve_csv, out_png, target_ms: float | None = None) -> str:
    """Average delay and utilization against training step."""
    rows = _read_rows(curve_csv)
    if not rows:
        raise ValueError(f"no rows in {curve_csv}")
    steps = _floats(rows, "step")
    fig, (ax_d, ax_u) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax_d.plot(steps, _floats(rows, "avg_delay_ms"), marker="o", ms=3)
    if target_ms is not None:
        ax_d.axhline(target_ms, color="tab:green", ls="--", lw=1, label="target")
        ax_d.legend(fontsize=8)
    ax_d.set_xlabel("training step")
    ax_d.set_ylabel("avg delay (ms)")
    ax_d.grid(True, alpha=0.3)
    ax_u.plot(steps, _floats(rows, "utilization"), marker="o", ms=3, color="tab:orange")
    ax_u.set_xlabel("training step")
    ax_u.set_ylabel("utilization")
    ax_u.set_ylim(0, 1.05)
    ax_u.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return str(out_png)


def plot_sweep(sweep_csv, out_png) -> str:
    """Delay and utilization versus the swept value, raw next to plugin."""
    rows = _read_rows(sweep_csv)
    if not rows:
        raise ValueError(f"no rows in {sweep_csv}")
    axis = rows[0]["axis"]
    fig, (ax_d, ax_u) = plt.subplots(1, 2, figsize=(9, 3.2))
    for mode, color in (("raw", "tab:red"), ("plugin", "tab:blue")):
        sub = [r for r in rows if r["mode"] == mode]
        if not sub:
            continue
        xs = _floats(sub, "value")
        ax_d.plot(xs, _floats(sub, "avg_delay_ms"), marker="o", ms=4,
                  color=color, label=mode)
        ax_u.plot(xs, _floats(sub, "utilization"), marker="o", ms=4, color=color,
                  label=mode)
    if axis == "buffer_bytes":
        ax_d.set_xscale("log")
        ax_u.set_xscale("log")
    for ax, ylab in ((ax_d, "avg delay (ms)"), (ax_u, "utilization")):
        ax.set_xlabel(axis)
        ax.set_ylabel(ylab)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return str(out_png)


def plot_episode(episode_csv, out_png, smooth_ms: int = 200) -> str:
    """Per-episode time series: link capacity vs queue, and measured RTT."""
    acks_t, acks_rtt = [], []
    tick_t, tick_q, tick_cap = [], [], []
    with open(episode_csv, newline="") as f:
        for row in csv.DictReader(f):
            if row["record"] == "ack":
                acks_t.append(float(row["t_ms"]) / 1000.0)
                acks_rtt.append(float(row["rtt_ms"]))
            elif row["record"] == "tick":
                tick_t.append(float(row["t_ms"]) / 1000.0)
                tick_q.append(float(row["queue_bytes"]) / 1000.0)
                tick_cap.append(float(row["capacity_pkts"]))
    if not tick_t:
        raise ValueError(f"no tick rows in {episode_csv}")
    cap_rate = _boxcar(tick_cap, smooth_ms)  # pkts/ms == 12 Mbps per unit at 1500B
    fig, (ax_c, ax_r) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    ax_c.plot(tick_t, [c * 12.0 for c in cap_rate], color="tab:blue", lw=0.8,
              label="link capacity (Mbps)")
    ax_c.set_ylabel("capacity (Mbps)")
    ax_c2 = ax_c.twinx()
    ax_c2.plot(tick_t, tick_q, color="tab:gray", lw=0.6, alpha=0.7, label="queue")
    ax_c2.set_ylabel("queue (KB)")
    ax_c.grid(True, alpha=0.3)
    if acks_t:
        ax_r.plot(acks_t, acks_rtt, ".", ms=1.5, color="tab:red")
    ax_r.set_xlabel("time (s)")
    ax_r.set_ylabel("RTT (ms)")
    ax_r.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return str(out_png)


def _boxcar(values, width):
    if width <= 1 or len(values) < 2 * width:
        return values
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= width:
            acc -= values[i - width]
            out.append(acc / width)
        else:
            out.append(acc / (i + 1))
    return out
