"""Congestion-control state machines.

Each scheme is a black box to the rest of the system: it consumes ack/loss
events and exposes a congestion window in packets (always >= 1).  An external
controller may install a persistent window ceiling via set_clamp() -- the
in-kernel cwnd-clamp mechanism -- which every scheme honors in its own
updates: the window evolves freely below the ceiling and pins at it
otherwise.  There is one window per connection, so the clamped value is what
the scheme itself sees and grows from.  Constants come from the schemes'
original publications; this module makes no attempt to improve them.

cwnd is packet-denominated throughout; byte conversion happens at the
simulator boundary.  One scheme instance drives exactly one flow.
"""

from __future__ import annotations

import math

INIT_CWND = 10.0


class CcScheme:
    """Base scheme: event hooks plus the cwnd/clamp contract."""

    name = "base"

    def __init__(self, initial_cwnd: float = INIT_CWND):
        self._initial_cwnd = max(1.0, initial_cwnd)
        self._cwnd = self._initial_cwnd
        self.cwnd_clamp = math.inf

    @property
    def cwnd(self) -> float:
        return self._cwnd

    def _set_cwnd(self, value: float) -> None:
        self._cwnd = min(max(1.0, value), self.cwnd_clamp)

    def on_ack(self, ack, now_ms: float) -> None:
        raise NotImplementedError

    def on_loss(self, now_ms: float) -> None:
        raise NotImplementedError

    def on_rto(self, now_ms: float) -> None:
        raise NotImplementedError

    def reset(self) -> None:
        self._cwnd = self._initial_cwnd
        self.cwnd_clamp = math.inf

    def set_clamp(self, ceiling: float) -> None:
        """Install (or move) the persistent window ceiling."""
        self.cwnd_clamp = max(1.0, ceiling)
        if self._cwnd > self.cwnd_clamp:
            self._cwnd = self.cwnd_clamp


class Aimd(CcScheme):
    """NewReno-style reference scheme.

    Slow start adds one packet per ack (doubling per RTT) until ssthresh;
    congestion avoidance adds one packet per window of acks.  Loss halves,
    timeout restarts from one packet.
    """

    name = "aimd"

    def __init__(self, initial_cwnd: float = INIT_CWND, ssthresh: float = math.inf):
        super().__init__(initial_cwnd)
        self._initial_ssthresh = ssthresh
        self.ssthresh = ssthresh
        self._ca_acked = 0.0

    def on_ack(self, ack, now_ms):
        if self._cwnd < self.ssthresh:
            self._set_cwnd(self._cwnd + 1.0)
        else:
            self._ca_acked += 1.0
            if self._ca_acked >= self._cwnd:
                self._ca_acked -= self._cwnd
                self._set_cwnd(self._cwnd + 1.0)

    def on_loss(self, now_ms):
        self.ssthresh = max(self._cwnd / 2.0, 1.0)
        self._set_cwnd(self.ssthresh)
        self._ca_acked = 0.0

    def on_rto(self, now_ms):
        self.ssthresh = max(self._cwnd / 2.0, 1.0)
        self._set_cwnd(1.0)
        self._ca_acked = 0.0

    def reset(self):
        super().reset()
        self.ssthresh = self._initial_ssthresh
        self._ca_acked = 0.0


class Cubic(CcScheme):
    """Window follows W(t) = C*(t - K)^3 + W_max after a loss epoch.

    C = 0.4, multiplicative decrease beta = 0.3 (window keeps 70%),
    K = (W_max * beta / C)^(1/3) so the curve plateaus exactly at W_max.
    Before the first loss the scheme slow-starts.
    """

    name = "cubic"
    C = 0.4
    BETA = 0.3

    def __init__(self, initial_cwnd: float = INIT_CWND, ssthresh: float = math.inf):
        super().__init__(initial_cwnd)
        self._initial_ssthresh = ssthresh
        self.ssthresh = ssthresh
        self.w_max = 0.0
        self._k_s = 0.0
        self._epoch_start_ms: float | None = None

    def _start_epoch(self, now_ms: float, w_max: float, cwnd_now: float) -> None:
        self.w_max = max(w_max, cwnd_now)
        self._k_s = (self.w_max * self.BETA / self.C) ** (1.0 / 3.0)
        # anchor so that W(now) == cwnd_now on the pre-plateau branch
        offset_s = self._k_s - ((self.w_max - cwnd_now) / self.C) ** (1.0 / 3.0)
        self._epoch_start_ms = now_ms - offset_s * 1000.0

    def on_ack(self, ack, now_ms):
        if self._epoch_start_ms is None:
            if self._cwnd < self.ssthresh:
                self._set_cwnd(self._cwnd + 1.0)
            else:
                self._start_epoch(now_ms, max(self._cwnd / (1.0 - self.BETA), 1.0), self._cwnd)
            return
        t_s = (now_ms - self._epoch_start_ms) / 1000.0
        self._set_cwnd(self.C * (t_s - self._k_s) ** 3 + self.w_max)

    def on_loss(self, now_ms):
        w_max = max(self._cwnd, 1.0)
        cwnd_after = max((1.0 - self.BETA) * w_max, 1.0)
        self.ssthresh = cwnd_after
        self._set_cwnd(cwnd_after)
        self._start_epoch(now_ms, w_max, cwnd_after)

    def on_rto(self, now_ms):
        self.ssthresh = max((1.0 - self.BETA) * self._cwnd, 1.0)
        self._set_cwnd(1.0)
        self._epoch_start_ms = None  # slow start back to ssthresh

    def reset(self):
        super().reset()
        self.ssthresh = self._initial_ssthresh
        self.w_max = 0.0
        self._epoch_start_ms = None


class Westwood(CcScheme):
    """Reno-style growth with bandwidth-estimate loss response.

    Delivered bytes are low-pass filtered into a bandwidth estimate; on loss
    the window collapses to the estimated pipe size BWE * minRTT / MTU instead
    of half.  Falls back to halving before the first estimate exists.
    """

    name = "westwood"
    SAMPLE_MS = 50.0
    GAIN = 0.2

    def __init__(self, initial_cwnd: float = INIT_CWND, ssthresh: float = math.inf,
                 mtu_bytes: int = 1500):
        super().__init__(initial_cwnd)
        self._initial_ssthresh = ssthresh
        self.ssthresh = ssthresh
        self.mtu_bytes = mtu_bytes
        self.bwe_bytes_per_s: float | None = None
        self.min_rtt_ms: float | None = None
        self._win_start_ms: float | None = None
        self._win_bytes = 0.0
        self._ca_acked = 0.0

    def on_ack(self, ack, now_ms):
        rtt = ack.rtt_ms
        if self.min_rtt_ms is None or rtt < self.min_rtt_ms:
            self.min_rtt_ms = rtt
        if self._win_start_ms is None:
            self._win_start_ms = now_ms
        self._win_bytes += ack.delivered_bytes
        elapsed = now_ms - self._win_start_ms
        if elapsed >= self.SAMPLE_MS:
            sample = self._win_bytes / (elapsed / 1000.0)
            if self.bwe_bytes_per_s is None:
                self.bwe_bytes_per_s = sample
            else:
                self.bwe_bytes_per_s += self.GAIN * (sample - self.bwe_bytes_per_s)
            self._win_start_ms = now_ms
            self._win_bytes = 0.0
        if self._cwnd < self.ssthresh:
            self._set_cwnd(self._cwnd + 1.0)
        else:
            self._ca_acked += 1.0
            if self._ca_acked >= self._cwnd:
                self._ca_acked -= self._cwnd
                self._set_cwnd(self._cwnd + 1.0)

    def _pipe_packets(self) -> float | None:
        if self.bwe_bytes_per_s is None or self.min_rtt_ms is None:
            return None
        return self.bwe_bytes_per_s * (self.min_rtt_ms / 1000.0) / self.mtu_bytes

    def on_loss(self, now_ms):
        pipe = self._pipe_packets()
        if pipe is None:
            self.ssthresh = max(self._cwnd / 2.0, 1.0)
        else:
            self.ssthresh = max(pipe, 1.0)
        self._set_cwnd(min(self._cwnd, self.ssthresh))
        self._ca_acked = 0.0

    def on_rto(self, now_ms):
        pipe = self._pipe_packets()
        self.ssthresh = max(pipe if pipe is not None else self._cwnd / 2.0, 1.0)
        self._set_cwnd(1.0)
        self._ca_acked = 0.0

    def reset(self):
        super().reset()
        self.ssthresh = self._initial_ssthresh
        self.bwe_bytes_per_s = None
        self.min_rtt_ms = None
        self._win_start_ms = None
        self._win_bytes = 0.0
        self._ca_acked = 0.0


class Illinois(CcScheme):
    """Delay-modulated AIMD: additive increase alpha(d) in [0.3, 10] shrinking
    with average queuing delay, multiplicative decrease beta(d) in [1/8, 1/2]
    growing with it, per the published piecewise curves."""

    name = "illinois"
    ALPHA_MIN = 0.3
    ALPHA_MAX = 10.0
    BETA_MIN = 1.0 / 8.0
    BETA_MAX = 1.0 / 2.0

    def __init__(self, initial_cwnd: float = INIT_CWND, ssthresh: float = math.inf):
        super().__init__(initial_cwnd)
        self._initial_ssthresh = ssthresh
        self.ssthresh = ssthresh
        self.base_rtt_ms: float | None = None
        self.max_queuing_ms = 0.0
        self._win_start_ms: float | None = None
        self._win_rtt_sum = 0.0
        self._win_rtt_n = 0
        self._d_avg_ms = 0.0
        self._ca_acked = 0.0

    def alpha(self) -> float:
        d = self._d_avg_ms
        dm = self.max_queuing_ms
        d1 = 0.01 * dm
        if dm <= 0.0 or d <= d1:
            return self.ALPHA_MAX
        spread = self.ALPHA_MAX - self.ALPHA_MIN
        k1 = (dm - d1) * self.ALPHA_MIN * self.ALPHA_MAX / spread
        k2 = (dm - d1) * self.ALPHA_MIN / spread - d1
        return max(self.ALPHA_MIN, min(self.ALPHA_MAX, k1 / (k2 + d)))

    def beta(self) -> float:
        d = self._d_avg_ms
        dm = self.max_queuing_ms
        d2, d3 = 0.1 * dm, 0.8 * dm
        if dm <= 0.0 or d <= d2:
            return self.BETA_MIN
        if d >= d3:
            return self.BETA_MAX
        k4 = (self.BETA_MAX - self.BETA_MIN) / (d3 - d2)
        return self.BETA_MIN + k4 * (d - d2)

    def on_ack(self, ack, now_ms):
        rtt = ack.rtt_ms
        if self.base_rtt_ms is None or rtt < self.base_rtt_ms:
            self.base_rtt_ms = rtt
        if self._win_start_ms is None:
            self._win_start_ms = now_ms
        self._win_rtt_sum += rtt
        self._win_rtt_n += 1
        if now_ms - self._win_start_ms >= max(self.base_rtt_ms, 1.0):
            avg = self._win_rtt_sum / self._win_rtt_n
            self._d_avg_ms = max(0.0, avg - self.base_rtt_ms)
            self.max_queuing_ms = max(self.max_queuing_ms, self._d_avg_ms)
            self._win_start_ms = now_ms
            self._win_rtt_sum = 0.0
            self._win_rtt_n = 0
        if self._cwnd < self.ssthresh:
            self._set_cwnd(self._cwnd + 1.0)
        else:
            self._ca_acked += self.alpha()
            if self._ca_acked >= self._cwnd:
                self._ca_acked -= self._cwnd
                self._set_cwnd(self._cwnd + 1.0)

    def on_loss(self, now_ms):
        self._set_cwnd((1.0 - self.beta()) * self._cwnd)
        self.ssthresh = self._cwnd
        self._ca_acked = 0.0

    def on_rto(self, now_ms):
        self.ssthresh = max((1.0 - self.beta()) * self._cwnd, 1.0)
        self._set_cwnd(1.0)
        self._ca_acked = 0.0

    def reset(self):
        super().reset()
        self.ssthresh = self._initial_ssthresh
        self.base_rtt_ms = None
        self.max_queuing_ms = 0.0
        self._win_start_ms = None
        self._win_rtt_sum = 0.0
        self._win_rtt_n = 0
        self._d_avg_ms = 0.0
        self._ca_acked = 0.0


class CleanSlateDrl(CcScheme):
    """Direct learned window: the policy sets cwnd itself.

    The window never moves between agent decisions (no reaction to acks or
    losses), which is exactly what distinguishes this variant from capping a
    live scheme.  Requires an attached agent at episode setup.
    """

    name = "clean_slate_drl"

    def __init__(self, initial_cwnd: float = INIT_CWND, hard_max: float = 10_000.0):
        super().__init__(initial_cwnd)
        self.hard_max = hard_max

    def on_ack(self, ack, now_ms):
        pass

    def on_loss(self, now_ms):
        pass

    def on_rto(self, now_ms):
        pass

    def force_cwnd(self, value: float) -> None:
        self._cwnd = float(min(max(value, 1.0), self.hard_max))


SCHEMES = {
    "aimd": Aimd,
    "cubic": Cubic,
    "westwood": Westwood,
    "illinois": Illinois,
    "clean_slate_drl": CleanSlateDrl,
}


def make_scheme(scheme_id: str, **kwargs) -> CcScheme:
    try:
        cls = SCHEMES[scheme_id]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme_id!r}; choose from {sorted(SCHEMES)}") from None
    return cls(**kwargs)
