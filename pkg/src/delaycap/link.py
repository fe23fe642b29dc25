"""Deterministic trace-driven bottleneck simulator.

One-millisecond discrete time.  Senders inject MTU packets into a drop-tail
buffer whenever their in-flight count is below the effective window
min(scheme cwnd, plugin cap); the buffer drains one packet per delivery
opportunity of the trace; serviced packets cross mrtt/2 of downlink
propagation, and acks return over an uncongested uplink after another mrtt/2.
Measured RTT is therefore mrtt + queuing delay, never less.

Loss model (the emulated setting leaves sender loss logic open): a packet is
declared lost after three acks for later sequence numbers, or when the oldest
unacked packet ages past max(2 * srtt, 200 ms); a retransmission timeout
abandons the whole outstanding window.  Lost packets are not retransmitted --
goodput bookkeeping is not the object of study, delay and delivery rate are.

Per-flow queues (cellular per-bearer isolation) are the default: every flow
sees the full opportunity schedule on its own queue.  A shared single-queue
mode exists for fairness experiments on a common bottleneck.

Everything is deterministic given (trace, flows, config): the only RNGs in a
run live inside policies, never here.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .traces import Trace


@dataclass
class SimConfig:
    mrtt_ms: int = 20
    buffer_bytes: int = 150_000
    tick_ms: int = 1
    per_flow_queues: bool = True
    episode_ms: int = 60_000
    mtu_bytes: int = 1500
    rto_floor_ms: float = 200.0
    record_acks: bool = True
    record_ticks: bool = True
    record_cwnd: bool = True
    record_conservation: bool = False

    def __post_init__(self):
        if self.tick_ms != 1:
            raise ValueError("only the 1 ms tick is supported (trace resolution)")
        if self.mrtt_ms < 2 or self.mrtt_ms % 2 != 0:
            raise ValueError("mrtt_ms must be an even integer >= 2")
        if self.buffer_bytes <= self.mtu_bytes:
            raise ValueError("buffer must hold more than one packet")
        if self.episode_ms <= 0:
            raise ValueError("episode_ms must be positive")


class Packet:
    """One MTU-sized data packet in the queue or the downlink pipe."""

    __slots__ = ("flow_id", "seq", "size_bytes", "sent_at_ms", "delivered_at_ms")

    def __init__(self, flow_id: int, seq: int, size_bytes: int, sent_at_ms: int):
        self.flow_id = flow_id
        self.seq = seq
        self.size_bytes = size_bytes
        self.sent_at_ms = sent_at_ms
        self.delivered_at_ms: int | None = None


@dataclass(frozen=True)
class AckEvent:
    flow_id: int
    seq: int
    rtt_ms: float
    delivered_bytes: int
    t_ms: int  # arrival time at the sender


@dataclass
class FlowSpec:
    """One sender: a scheme, an optional cap shim, and a start time."""

    scheme: object
    shim: object | None = None
    start_ms: int = 0


class _Queue:
    __slots__ = ("pkts", "bytes")

    def __init__(self):
        self.pkts: deque = deque()
        self.bytes = 0


class _Flow:
    __slots__ = ("id", "scheme", "shim", "start_ms", "next_seq", "outstanding",
                 "dup", "srtt", "recovery_seq", "sent", "delivered",
                 "delivered_bytes", "dropped", "lost_sender", "queue")

    def __init__(self, fid: int, spec: FlowSpec, queue: _Queue):
        self.id = fid
        self.scheme = spec.scheme
        self.shim = spec.shim
        self.start_ms = spec.start_ms
        self.next_seq = 0
        self.outstanding: dict[int, int] = {}  # seq -> sent_at_ms (insertion = seq order)
        self.dup: dict[int, int] = {}
        self.srtt: float | None = None
        self.recovery_seq = 0
        self.sent = 0
        self.delivered = 0
        self.delivered_bytes = 0
        self.dropped = 0
        self.lost_sender = 0
        self.queue = queue


@dataclass
class EpisodeLog:
    """Everything an episode produced, as flat arrays plus counters.

    acks:  (t_ms, flow, seq, rtt_ms, bytes) per ack, if recorded
    ticks: (t_ms, queue_bytes, capacity_pkts) per tick, if recorded
    cwnd:  (t_ms, flow, cwnd, cap) per tick per flow, if recorded
    losses:(t_ms, flow, seq, kind) kind: 0=dupack 1=rto
    """

    meta: dict
    acks: np.ndarray
    ticks: np.ndarray
    cwnd: np.ndarray
    losses: np.ndarray
    conservation_ok: bool = True

    def flow_acks(self, flow_id: int) -> np.ndarray:
        if self.acks.size == 0:
            return self.acks
        return self.acks[self.acks[:, 1] == flow_id]

    def to_csv(self, path) -> None:
        """Single-file union-column CSV (record column discriminates rows)."""
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write("record,t_ms,flow,seq,rtt_ms,bytes,queue_bytes,capacity_pkts,cwnd,cwnd_cap,kind\n")
            for t, fl, seq, rtt, nbytes in self.acks:
                f.write(f"ack,{int(t)},{int(fl)},{int(seq)},{_fmt(rtt)},{int(nbytes)},,,,,\n")
            for t, qb, cap in self.ticks:
                f.write(f"tick,{int(t)},,,,,{int(qb)},{int(cap)},,,\n")
            for t, fl, cw, cp in self.cwnd:
                cap_s = "" if np.isnan(cp) else _fmt(cp)
                f.write(f"cwnd,{int(t)},{int(fl)},,,,,,{_fmt(cw)},{cap_s},\n")
            for t, fl, seq, kind in self.losses:
                kind_s = "rto" if int(kind) == 1 else "dupack"
                f.write(f"loss,{int(t)},{int(fl)},{int(seq)},,,,,,,{kind_s}\n")

    def to_npz(self, path) -> None:
        np.savez_compressed(path, acks=self.acks, ticks=self.ticks, cwnd=self.cwnd,
                            losses=self.losses, meta=np.frombuffer(
                                json.dumps(self.meta, sort_keys=True).encode(), dtype=np.uint8))

    @classmethod
    def from_npz(cls, path) -> "EpisodeLog":
        data = np.load(path)
        meta = json.loads(bytes(data["meta"]).decode())
        return cls(meta=meta, acks=data["acks"], ticks=data["ticks"],
                   cwnd=data["cwnd"], losses=data["losses"],
                   conservation_ok=bool(meta.get("conservation_ok", True)))


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


class World:
    """Mutable simulation state; single-threaded, one instance per episode."""

    def __init__(self, trace: Trace, flows: list[FlowSpec], cfg: SimConfig):
        if len(trace) == 0:
            raise ValueError("cannot simulate an empty trace")
        self.trace = trace
        self.cfg = cfg
        self.counts = trace.counts_per_ms
        self.period = trace.period_ms
        self.one_way = cfg.mrtt_ms // 2
        self.now = 0

        if cfg.per_flow_queues:
            self.queues = [_Queue() for _ in flows]
        else:
            shared = _Queue()
            self.queues = [shared] * len(flows)
        self.flows = [_Flow(i, spec, self.queues[i]) for i, spec in enumerate(flows)]
        self._distinct_queues = self.queues[: len(flows)] if cfg.per_flow_queues else [self.queues[0]]

        self.downlink: deque = deque()  # Packets in flight, FIFO by delivery time
        self.ackpipe: deque = deque()   # (arrive_at_ms, AckEvent)

        self.opps_total = 0
        self.opps_used = 0
        self.dropped_total = 0

        self._ack_rows: list = []
        self._tick_rows: list = []
        self._cwnd_rows: list = []
        self._loss_rows: list = []
        self.conservation_ok = True

    # -- per-flow effective window -----------------------------------------
    def _effective_cwnd(self, fl: _Flow) -> float:
        c = fl.scheme.cwnd
        cap = fl.shim.cwnd_cap if fl.shim is not None else None
        return min(c, cap) if cap is not None else c

    # -- event handling ------------------------------------------------------
    def _handle_ack(self, fl: _Flow, ack: AckEvent, t: int):
        seq = ack.seq
        if seq in fl.outstanding:
            del fl.outstanding[seq]
            fl.dup.pop(seq, None)
            if fl.srtt is None:
                fl.srtt = ack.rtt_ms
            else:
                fl.srtt += 0.125 * (ack.rtt_ms - fl.srtt)
            fl.scheme.on_ack(ack, t)
            # every ack for a later packet is a duplicate hint for earlier ones
            stale = []
            for s2 in fl.outstanding:
                if s2 > seq:
                    break
                fl.dup[s2] = fl.dup.get(s2, 0) + 1
                if fl.dup[s2] >= 3:
                    stale.append(s2)
            for s2 in stale:
                self._declare_lost(fl, s2, t, kind=0)
        if fl.shim is not None:
            fl.shim.on_ack(ack)
        if self.cfg.record_acks:
            self._ack_rows.append((t, fl.id, seq, ack.rtt_ms, ack.delivered_bytes))

    def _declare_lost(self, fl: _Flow, seq: int, t: int, kind: int):
        fl.outstanding.pop(seq, None)
        fl.dup.pop(seq, None)
        fl.lost_sender += 1
        self._loss_rows.append((t, fl.id, seq, kind))
        if seq >= fl.recovery_seq:  # one decrease per loss window
            fl.recovery_seq = fl.next_seq
            fl.scheme.on_loss(t)

    def _check_rto(self, fl: _Flow, t: int):
        if not fl.outstanding:
            return
        oldest_seq = next(iter(fl.outstanding))
        sent = fl.outstanding[oldest_seq]
        srtt = fl.srtt if fl.srtt is not None else float(self.cfg.mrtt_ms)
        rto = max(2.0 * srtt, self.cfg.rto_floor_ms)
        if t - sent > rto:
            self._loss_rows.append((t, fl.id, oldest_seq, 1))
            fl.lost_sender += len(fl.outstanding)
            fl.outstanding.clear()
            fl.dup.clear()
            fl.recovery_seq = fl.next_seq
            fl.scheme.on_rto(t)

    # -- main loop ------------------------------------------------------------
    def tick(self):
        t = self.now
        cfg = self.cfg

        # 1. acks arriving at senders
        pipe = self.ackpipe
        while pipe and pipe[0][0] <= t:
            _, ack = pipe.popleft()
            self._handle_ack(self.flows[ack.flow_id], ack, t)

        # 2. retransmission timeouts
        for fl in self.flows:
            self._check_rto(fl, t)

        # 3. senders fill their windows (rotating order keeps shared queues fair)
        n = len(self.flows)
        for i in range(n):
            fl = self.flows[(t + i) % n]
            if t < fl.start_ms:
                continue
            limit = int(self._effective_cwnd(fl))
            q = fl.queue
            while len(fl.outstanding) < limit:
                seq = fl.next_seq
                fl.next_seq += 1
                fl.outstanding[seq] = t
                fl.sent += 1
                if q.bytes + cfg.mtu_bytes <= cfg.buffer_bytes:
                    q.pkts.append(Packet(fl.id, seq, cfg.mtu_bytes, t))
                    q.bytes += cfg.mtu_bytes
                else:
                    fl.dropped += 1
                    self.dropped_total += 1

        # 4. the link services this tick's delivery opportunities
        k = int(self.counts[t % self.period])
        self.opps_total += k
        if k:
            deliver_at = t + self.one_way
            for q in self._distinct_queues:
                served = 0
                while served < k and q.pkts:
                    pkt = q.pkts.popleft()
                    q.bytes -= pkt.size_bytes
                    pkt.delivered_at_ms = deliver_at
                    self.downlink.append(pkt)
                    served += 1
                self.opps_used += served

        # 5. packets reaching the receiver; acks head home
        dl = self.downlink
        while dl and dl[0].delivered_at_ms <= t:
            pkt = dl.popleft()
            fl = self.flows[pkt.flow_id]
            fl.delivered += 1
            fl.delivered_bytes += pkt.size_bytes
            arrive = pkt.delivered_at_ms + self.one_way
            self.ackpipe.append((arrive, AckEvent(pkt.flow_id, pkt.seq,
                                                  float(arrive - pkt.sent_at_ms),
                                                  pkt.size_bytes, arrive)))

        # 6. logging
        if cfg.record_ticks:
            qbytes = sum(q.bytes for q in self._distinct_queues)
            self._tick_rows.append((t, qbytes, k))
        if cfg.record_cwnd:
            for fl in self.flows:
                cap = fl.shim.cwnd_cap if fl.shim is not None else None
                self._cwnd_rows.append((t, fl.id, fl.scheme.cwnd,
                                        float("nan") if cap is None else cap))
        if cfg.record_conservation:
            in_queue = sum(len(q.pkts) for q in self._distinct_queues)
            sent = sum(fl.sent for fl in self.flows)
            delivered = sum(fl.delivered for fl in self.flows)
            if sent != delivered + in_queue + len(dl) + self.dropped_total:
                self.conservation_ok = False

        self.now = t + 1

    def finish(self) -> EpisodeLog:
        per_flow = [{
            "sent": fl.sent, "delivered": fl.delivered,
            "delivered_bytes": fl.delivered_bytes, "dropped": fl.dropped,
            "lost_sender": fl.lost_sender, "start_ms": fl.start_ms,
        } for fl in self.flows]
        meta = {
            "duration_ms": self.now,
            "mrtt_ms": self.cfg.mrtt_ms,
            "mtu_bytes": self.cfg.mtu_bytes,
            "buffer_bytes": self.cfg.buffer_bytes,
            "per_flow_queues": self.cfg.per_flow_queues,
            "n_flows": len(self.flows),
            "opportunities_total": self.opps_total,
            "opportunities_used": self.opps_used,
            "flows": per_flow,
            "conservation_ok": self.conservation_ok,
        }
        return EpisodeLog(
            meta=meta,
            acks=np.array(self._ack_rows, dtype=np.float64).reshape(-1, 5),
            ticks=np.array(self._tick_rows, dtype=np.float64).reshape(-1, 3),
            cwnd=np.array(self._cwnd_rows, dtype=np.float64).reshape(-1, 4),
            losses=np.array(self._loss_rows, dtype=np.float64).reshape(-1, 4),
            conservation_ok=self.conservation_ok,
        )


def run_episode(flows: FlowSpec | list[FlowSpec], trace: Trace, cfg: SimConfig,
                seed: int = 0) -> EpisodeLog:
    """Run one episode to completion and return its log.

    Deterministic given (flows, trace, cfg) and whatever state the attached
    shim policies close over; `seed` exists so stochastic policies can be
    threaded through a single call signature, the world itself draws no
    random numbers.
    """
    if isinstance(flows, FlowSpec):
        flows = [flows]
    world = World(trace, flows, cfg)
    wf = world.flows
    while world.now < cfg.episode_ms:
        t = world.now
        for fl in wf:
            sh = fl.shim
            if sh is not None and t >= fl.start_ms and sh.due(t):
                state, _reward, _sample = sh.close_period(t, fl.scheme.cwnd)
                alpha = sh.policy(state) if sh.policy is not None else 0.0
                sh.apply(alpha, fl.scheme, t)
        world.tick()
    return world.finish()


def conservation_episode(flows, trace, cfg: SimConfig) -> EpisodeLog:
    """run_episode with per-tick conservation auditing switched on."""
    cfg = replace(cfg, record_conservation=True)
    return run_episode(flows, trace, cfg)
