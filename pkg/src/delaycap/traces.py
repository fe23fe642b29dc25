"""Cellular access-link traces.

A trace is the millisecond schedule of packet delivery opportunities on an
emulated link: each timestamp grants the link one chance to transmit a single
MTU-sized packet.  All radio-layer dynamics (fading, scheduling, HARQ) are
abstracted into the spacing of opportunities, which is what public LTE trace
collections record.

File format: plain ASCII, LF-terminated, one non-negative integer millisecond
per line, timestamps non-decreasing.  A trace replays from t=0 with period
`last timestamp + 1` once simulation time runs past its end.

Because the authors' LTE captures are not redistributable, a synthetic
generator is included: a Markov-modulated rate process (truncated-normal rate
held for exponentially distributed dwells, emitted through a deterministic
token bucket) whose parameters can be matched to published capacity moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

MTU_BYTES = 1500


class TraceParseError(ValueError):
    """A trace line is not a base-10 integer."""

    def __init__(self, line_no: int, line: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: not an integer millisecond timestamp: {line!r}")


class TraceOrderError(ValueError):
    """Timestamps decreased between consecutive lines."""

    def __init__(self, line_no: int, prev: int, cur: int):
        self.line_no = line_no
        super().__init__(f"line {line_no}: timestamp {cur} decreases below {prev}")


@dataclass(frozen=True)
class Trace:
    """Immutable delivery-opportunity schedule.

    Safe to share read-only across parallel simulation workers.
    """

    opportunities: tuple[int, ...]
    mtu_bytes: int = MTU_BYTES

    def __post_init__(self):
        prev = 0
        for ts in self.opportunities:
            if ts < 0:
                raise ValueError(f"negative timestamp {ts}")
            if ts < prev:
                raise ValueError(f"timestamps must be non-decreasing ({ts} after {prev})")
            prev = ts
        if self.mtu_bytes <= 0:
            raise ValueError("mtu_bytes must be positive")

    def __len__(self) -> int:
        return len(self.opportunities)

    @property
    def period_ms(self) -> int:
        """Replay period; 0 for an empty trace."""
        if not self.opportunities:
            return 0
        return self.opportunities[-1] + 1

    @cached_property
    def counts_per_ms(self) -> np.ndarray:
        """Opportunities granted at each millisecond of one period."""
        if not self.opportunities:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(np.asarray(self.opportunities), minlength=self.period_ms)

    def opportunities_at(self, t_ms: int) -> int:
        """Opportunities at simulation time t, with wrap-around replay."""
        return int(self.counts_per_ms[t_ms % self.period_ms])

    def mean_rate_mbps(self) -> float:
        if not self.opportunities:
            return 0.0
        return len(self) * self.mtu_bytes * 8.0 / (self.period_ms / 1000.0) / 1e6


def parse_trace(text: str, mtu_bytes: int = MTU_BYTES) -> Trace:
    """Parse the one-integer-per-line trace format.

    Empty input parses to an empty trace; the simulator rejects empty traces
    at run time instead.
    """
    stamps: list[int] = []
    prev = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            ts = int(line, 10)
        except ValueError:
            raise TraceParseError(line_no, raw) from None
        if prev is not None and ts < prev:
            raise TraceOrderError(line_no, prev, ts)
        prev = ts
        stamps.append(ts)
    return Trace(tuple(stamps), mtu_bytes=mtu_bytes)


def serialize_trace(trace: Trace) -> str:
    if not trace.opportunities:
        return ""
    return "\n".join(str(ts) for ts in trace.opportunities) + "\n"


def load_trace(path, mtu_bytes: int = MTU_BYTES) -> Trace:
    with open(path, "r", encoding="ascii") as f:
        return parse_trace(f.read(), mtu_bytes=mtu_bytes)


def save_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(serialize_trace(trace))


@dataclass(frozen=True)
class TraceStats:
    """Moments of the per-bucket capacity process, in Mbps."""

    mean: float
    std_dev: float
    skewness: float
    kurtosis: float  # standardized fourth moment, non-excess
    min: float
    max: float

    CSV_HEADER = "mean_mbps,std_mbps,skewness,kurtosis,min_mbps,max_mbps"

    def csv_row(self) -> str:
        vals = (self.mean, self.std_dev, self.skewness, self.kurtosis, self.min, self.max)
        return ",".join(format(v, ".6g") for v in vals)


def trace_capacity_stats(trace: Trace, bucket_ms: int = 1000) -> TraceStats:
    """Capacity moments over fixed-width buckets of the trace.

    Bucket rate = opportunities in bucket * mtu * 8 / bucket seconds.  The
    published tables do not state their bucket width; 1 s is the default here.
    """
    if not trace.opportunities:
        raise ValueError("cannot compute stats of an empty trace")
    if bucket_ms <= 0:
        raise ValueError("bucket_ms must be positive")
    n_buckets = -(-trace.period_ms // bucket_ms)  # ceil
    idx = np.asarray(trace.opportunities) // bucket_ms
    counts = np.bincount(idx, minlength=n_buckets).astype(np.float64)
    rates = counts * (trace.mtu_bytes * 8.0) / (bucket_ms / 1000.0) / 1e6
    mean = float(rates.mean())
    centered = rates - mean
    var = float(np.mean(centered**2))
    std = math.sqrt(var)
    if std == 0.0:
        skew = 0.0
        kurt = 0.0
    else:
        skew = float(np.mean(centered**3)) / std**3
        kurt = float(np.mean(centered**4)) / std**4
    return TraceStats(mean=mean, std_dev=std, skewness=skew, kurtosis=kurt,
                      min=float(rates.min()), max=float(rates.max()))


@dataclass(frozen=True)
class SynthTraceConfig:
    duration_s: float
    target_mean_mbps: float
    target_std_mbps: float
    min_rate_mbps: float = 0.0
    max_rate_mbps: float = 90.0
    dwell_ms: float = 500.0  # mean holding time of the rate process
    seed: int = 0
    mtu_bytes: int = MTU_BYTES

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if not (0 <= self.min_rate_mbps <= self.max_rate_mbps):
            raise ValueError("need 0 <= min_rate <= max_rate")
        if self.max_rate_mbps <= 0:
            raise ValueError("max_rate_mbps must be positive (trace would be empty)")
        if self.dwell_ms <= 0:
            raise ValueError("dwell_ms must be positive")


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _truncated_moments(mu: float, sigma: float, lo: float, hi: float) -> tuple[float, float]:
    """Mean and std of N(mu, sigma) truncated to [lo, hi]."""
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    z = _norm_cdf(b) - _norm_cdf(a)
    if z < 1e-12:
        return min(max(mu, lo), hi), 0.0
    pa, pb = _norm_pdf(a), _norm_pdf(b)
    mean = mu + sigma * (pa - pb) / z
    var = sigma**2 * (1.0 + (a * pa - b * pb) / z - ((pa - pb) / z) ** 2)
    return mean, math.sqrt(max(var, 0.0))


def _calibrated_params(target_mean: float, target_std: float,
                       lo: float, hi: float) -> tuple[float, float]:
    """Pre-truncation (mu, sigma) whose truncated moments hit the targets.

    Truncation both shifts the mean and shrinks the spread, so both
    parameters need solving; damped fixed point, multiplicative on sigma.
    Feasible whenever target_std is below the uniform limit (hi-lo)/sqrt(12);
    otherwise this converges to the closest achievable spread.
    """
    mu, sigma = target_mean, max(target_std, 1e-9)
    for _ in range(300):
        mean_t, std_t = _truncated_moments(mu, sigma, lo, hi)
        mu += 0.7 * (target_mean - mean_t)
        if std_t > 1e-12:
            sigma *= min(max((target_std / std_t) ** 0.7, 0.5), 2.0)
        sigma = min(sigma, 10.0 * (hi - lo) + 1.0)
    return mu, sigma


def generate_synthetic_trace(cfg: SynthTraceConfig) -> Trace:
    """Markov-modulated synthetic link: reproducible given cfg.seed.

    The rate holds for Exponential(dwell_ms) stretches, resampled each time
    from a truncated normal on [min_rate, max_rate]; opportunities are emitted
    by a deterministic token bucket so the long-run mean tracks the rate
    process exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    total_ms = int(round(cfg.duration_s * 1000))
    if cfg.target_std_mbps > 0:
        mu, sigma = _calibrated_params(cfg.target_mean_mbps, cfg.target_std_mbps,
                                       cfg.min_rate_mbps, cfg.max_rate_mbps)
    else:
        mu, sigma = cfg.target_mean_mbps, 0.0

    chunks: list[np.ndarray] = []
    credit = 0.0
    t = 0
    while t < total_ms:
        dwell = max(1, int(round(rng.exponential(cfg.dwell_ms))))
        length = min(dwell, total_ms - t)
        if sigma > 0:
            rate = _sample_truncated(rng, mu, sigma, cfg.min_rate_mbps, cfg.max_rate_mbps)
        else:
            rate = min(max(mu, cfg.min_rate_mbps), cfg.max_rate_mbps)
        pkts_per_ms = rate * 1e6 / 8.0 / cfg.mtu_bytes / 1000.0
        tokens = credit + pkts_per_ms * np.arange(1, length + 1)
        floors = np.floor(tokens).astype(np.int64)
        emitted = np.diff(floors, prepend=np.int64(math.floor(credit)))
        if emitted.sum() > 0:
            chunks.append(np.repeat(np.arange(t, t + length, dtype=np.int64), emitted))
        credit = float(tokens[-1] - floors[-1])
        t += length

    if chunks:
        stamps = tuple(int(x) for x in np.concatenate(chunks))
    else:
        stamps = ()
    return Trace(stamps, mtu_bytes=cfg.mtu_bytes)


def _sample_truncated(rng, mu: float, sigma: float, lo: float, hi: float) -> float:
    for _ in range(1000):
        x = float(rng.normal(mu, sigma))
        if lo <= x <= hi:
            return x
    return min(max(mu, lo), hi)


def constant_rate_trace(rate_mbps: float, duration_s: float,
                        mtu_bytes: int = MTU_BYTES) -> Trace:
    """Constant-capacity trace (token-bucket spaced)."""
    cfg = SynthTraceConfig(duration_s=duration_s, target_mean_mbps=rate_mbps,
                           target_std_mbps=0.0, min_rate_mbps=rate_mbps,
                           max_rate_mbps=rate_mbps, mtu_bytes=mtu_bytes)
    return generate_synthetic_trace(cfg)
