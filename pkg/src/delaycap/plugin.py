"""Per-flow cap shim: monitor -> state -> reward -> window action.

Once per smoothed-RTT period (floored at 10 ms) the shim digests the acks it
observed into (d, n, p, cwnd): average packet delay, number of delay samples,
average delivery rate, and the underlying scheme's current window.  The
digest is encoded against the application's delay target:

    kappa(d) = 0 if d > target else 1
    o = [ (p/p_scale)*kappa,
          (n/n_scale)*kappa,
          (1 - d/target)*kappa, (d/target)*(1 - kappa),
          cwnd/cwnd_scale ]

so that whenever the target is violated the throughput features vanish and
only the (scaled) delay overshoot remains -- the controller's attention is
forced onto delay exactly when delay is the problem.  The state is the m most
recent encodings, newest first, zero-padded until m periods have elapsed.

Reward is signed by target compliance and scaled by what the flow earned:
    w = (n*d + n_pre*d_pre) / (n + n_pre)
    r = (+/-) (w/target) * (p/p_scale) * n      (negative iff d > target)

The action alpha in [-1, 1] sets the window ceiling to 2**alpha * cwnd,
installed as the scheme's persistent window clamp: the scheme keeps updating
its window freely below the ceiling and pins at it otherwise.  Because there
is one window per connection, the cwnd each decision reads is the clamped
value, so consecutive alpha = -1 decisions shrink the window exponentially
and consecutive alpha = +1 let the scheme double it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OBS_WIDTH = 5
DEFAULT_M = 20
MIN_PERIOD_MS = 10.0


@dataclass(frozen=True)
class FeatureScales:
    """Positive normalization constants for rate, ack count, and window."""

    p_scale: float = 12.5e6  # bytes/s (100 Mbps)
    n_scale: float = 100.0   # acks per period
    cwnd_scale: float = 1000.0  # packets

    def __post_init__(self):
        if min(self.p_scale, self.n_scale, self.cwnd_scale) <= 0:
            raise ValueError("scales must be positive")


@dataclass(frozen=True)
class MonitorSample:
    """One monitoring period's digest."""

    d: float          # average ack RTT over the period, ms
    n: int            # ack count
    p: float          # delivery rate, bytes/s
    cwnd: float       # underlying scheme's window at period close, packets
    period_ms: float  # actual window length


@dataclass
class RewardState:
    """Previous period's count and delay, plus the target they answer to."""

    target_ms: float
    n_pre: int = 0
    d_pre: float = 0.0

    def __post_init__(self):
        if self.target_ms <= 0:
            raise ValueError("target_ms must be positive")


def kernel(d: float, target_ms: float) -> float:
    """Delay filter kernel: 0 when the target is violated, else 1."""
    return 0.0 if d > target_ms else 1.0


def featurize(sample: MonitorSample, target_ms: float, scales: FeatureScales,
              use_kernel: bool = True) -> np.ndarray:
    """Encode one monitor sample as the 5-element observation."""
    d = sample.d
    if use_kernel:
        k = kernel(d, target_ms)
        phi_p = (sample.p / scales.p_scale) * k
        phi_n = (sample.n / scales.n_scale) * k
        phi_d0 = (1.0 - d / target_ms) * k
        phi_d1 = (d / target_ms) * (1.0 - k)
    else:  # ablation: raw statistics, no target gating
        phi_p = sample.p / scales.p_scale
        phi_n = sample.n / scales.n_scale
        phi_d0 = 1.0 - d / target_ms
        phi_d1 = d / target_ms
    return np.array([phi_p, phi_n, phi_d0, phi_d1, sample.cwnd / scales.cwnd_scale])


class StateWindow:
    """m most recent observations, newest first, zero-padded before m exist."""

    def __init__(self, m: int = DEFAULT_M, width: int = OBS_WIDTH):
        if m < 1:
            raise ValueError("m must be >= 1")
        self.m = m
        self.width = width
        self._buf = np.zeros((m, width))

    def push(self, obs: np.ndarray) -> np.ndarray:
        self._buf[1:] = self._buf[:-1]
        self._buf[0] = obs
        return self.vector

    @property
    def vector(self) -> np.ndarray:
        """Flat state, length m * width, newest observation first."""
        return self._buf.ravel().copy()

    def reset(self) -> None:
        self._buf[:] = 0.0


def reward(sample: MonitorSample, prev: RewardState, p_scale: float) -> float:
    """Signed, throughput-scaled reward for the period `sample` covers."""
    n, d = sample.n, sample.d
    if n + prev.n_pre == 0:
        return 0.0
    w = (n * d + prev.n_pre * prev.d_pre) / (n + prev.n_pre)
    magnitude = (w / prev.target_ms) * (sample.p / p_scale) * n
    return -magnitude if d > prev.target_ms else magnitude


def apply_action(alpha: float, cwnd: float) -> int:
    """Window cap 2**alpha * cwnd, rounded, never below one packet."""
    alpha = min(1.0, max(-1.0, alpha))
    return max(1, int(round(2.0**alpha * cwnd)))


class CapShim:
    """Monitor/state/reward pipeline plus action application for one flow.

    mode "cap": ceilings a live scheme through its window clamp; mode
    "direct": drives a clean-slate scheme whose window only moves at
    decisions.  `policy` maps a state vector to alpha and is only consulted
    by episode runners; training loops drive the shim manually.
    """

    def __init__(self, target_ms: float, policy=None, m: int = DEFAULT_M,
                 scales: FeatureScales = FeatureScales(), use_kernel: bool = True,
                 mode: str = "cap", min_period_ms: float = MIN_PERIOD_MS):
        if mode not in ("cap", "direct"):
            raise ValueError("mode must be 'cap' or 'direct'")
        self.target_ms = float(target_ms)
        self.policy = policy
        self.scales = scales
        self.use_kernel = use_kernel
        self.mode = mode
        self.min_period_ms = min_period_ms
        self.window = StateWindow(m)
        self.reward_state = RewardState(target_ms=self.target_ms, n_pre=0,
                                        d_pre=float(target_ms))
        self.cwnd_cap: int | None = None
        self.latest_sample: MonitorSample | None = None
        self.last_alpha = 0.0
        self.decisions = 0
        self.rewards: list[float] = []
        self._srtt: float | None = None
        self._period_start: float | None = None
        self._acc_rtt = 0.0
        self._acc_n = 0
        self._acc_bytes = 0
        # empty-window fallback carries the last delay; starts neutral at target
        self._last_d = float(target_ms)

    @property
    def m(self) -> int:
        return self.window.m

    @property
    def state_dim(self) -> int:
        return self.window.m * self.window.width

    # -- monitor --------------------------------------------------------------
    def on_ack(self, ack) -> None:
        self._acc_rtt += ack.rtt_ms
        self._acc_n += 1
        self._acc_bytes += ack.delivered_bytes
        if self._srtt is None:
            self._srtt = ack.rtt_ms
        else:
            self._srtt += 0.125 * (ack.rtt_ms - self._srtt)

    def period_length_ms(self) -> float:
        return max(self._srtt or 0.0, self.min_period_ms)

    def due(self, now_ms: float) -> bool:
        if self._period_start is None:
            self._period_start = now_ms
            return False
        return now_ms - self._period_start >= self.period_length_ms()

    def close_period(self, now_ms: float, cwnd: float):
        """Digest the period ending now; returns (state, reward, sample)."""
        start = self._period_start if self._period_start is not None else now_ms
        dur = max(now_ms - start, 1.0)
        if self._acc_n > 0:
            d = self._acc_rtt / self._acc_n
            p = self._acc_bytes / (dur / 1000.0)
        else:
            d = self._last_d
            p = 0.0
        sample = MonitorSample(d=d, n=self._acc_n, p=p, cwnd=cwnd, period_ms=dur)
        r = reward(sample, self.reward_state, self.scales.p_scale)
        state = self.window.push(featurize(sample, self.target_ms, self.scales,
                                           self.use_kernel))
        self.reward_state.n_pre = sample.n
        self.reward_state.d_pre = sample.d
        self.latest_sample = sample
        self.rewards.append(r)
        self._last_d = d
        self._acc_rtt = 0.0
        self._acc_n = 0
        self._acc_bytes = 0
        self._period_start = now_ms
        return state, r, sample

    # -- action ---------------------------------------------------------------
    def apply(self, alpha: float, scheme, now_ms: float) -> int | None:
        alpha = min(1.0, max(-1.0, float(alpha)))
        self.last_alpha = alpha
        self.decisions += 1
        new_window = apply_action(alpha, scheme.cwnd)
        if self.mode == "cap":
            scheme.set_clamp(new_window)
            self.cwnd_cap = new_window
        else:
            scheme.force_cwnd(new_window)
            self.cwnd_cap = None
        return self.cwnd_cap

    def stats_snapshot(self) -> MonitorSample | None:
        """Latest digest, exposed for applications adjusting their target."""
        return self.latest_sample
