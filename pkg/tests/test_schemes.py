import numpy as np
import pytest

from delaycap.link import AckEvent
from delaycap.schemes import (Aimd, CleanSlateDrl, Cubic, Illinois, Westwood,
                              make_scheme)


def ack(rtt=20.0, nbytes=1500, t=0):
    return AckEvent(flow_id=0, seq=0, rtt_ms=rtt, delivered_bytes=nbytes, t_ms=t)


# -- AIMD ---------------------------------------------------------------------

def test_aimd_slow_start_doubles():
    s = Aimd(initial_cwnd=1, ssthresh=64)
    s.on_ack(ack(), 0)
    assert s.cwnd == 2


def test_aimd_loss_halves():
    s = Aimd(initial_cwnd=10, ssthresh=5)
    s.on_loss(0)
    assert s.cwnd == 5
    assert s.ssthresh == 5


def test_aimd_ca_plus_one_per_window():
    s = Aimd(initial_cwnd=10, ssthresh=5)  # already past ssthresh
    for _ in range(10):
        s.on_ack(ack(), 0)
    assert s.cwnd == 11


def test_aimd_rto_restarts():
    s = Aimd(initial_cwnd=16, ssthresh=4)
    s.on_rto(0)
    assert s.cwnd == 1
    assert s.ssthresh == 8


# -- Cubic ---------------------------------------------------------------------

def test_cubic_drop_factor():
    s = Cubic(initial_cwnd=100, ssthresh=50)
    s.on_loss(1000)
    assert s.cwnd == pytest.approx(70.0)
    assert s.w_max == pytest.approx(100.0)


def test_cubic_reaches_wmax_at_k():
    s = Cubic(initial_cwnd=100, ssthresh=50)
    s.on_loss(0)
    k_ms = (100 * Cubic.BETA / Cubic.C) ** (1 / 3) * 1000
    s.on_ack(ack(), k_ms)
    assert s.cwnd == pytest.approx(100.0, abs=1e-9)


def test_cubic_matches_curve_between_losses():
    s = Cubic(initial_cwnd=50, ssthresh=10)
    s.on_loss(0)
    k = (50 * Cubic.BETA / Cubic.C) ** (1 / 3)
    for t_ms in (100, 500, 2000, 5000):
        s.on_ack(ack(), t_ms)
        expected = max(1.0, Cubic.C * (t_ms / 1000 - k) ** 3 + 50)
        assert s.cwnd == pytest.approx(expected)


def test_cubic_strictly_increasing_without_loss():
    s = Cubic(initial_cwnd=2)
    prev = s.cwnd
    for t in range(0, 10_000, 100):
        s.on_ack(ack(), t)
        assert s.cwnd > prev
        prev = s.cwnd


def test_cubic_pins_at_clamp_and_rejoins_curve():
    s = Cubic(initial_cwnd=100, ssthresh=50)
    s.on_loss(0)
    s.set_clamp(20)
    assert s.cwnd == 20
    s.on_ack(ack(), 500)
    assert s.cwnd == 20  # curve is above the ceiling, window pinned
    s.set_clamp(1e9)
    k = (100 * Cubic.BETA / Cubic.C) ** (1 / 3)
    s.on_ack(ack(), 800)
    assert s.cwnd == pytest.approx(Cubic.C * (0.8 - k) ** 3 + 100)


# -- Westwood --------------------------------------------------------------------

def test_westwood_pipe_collapse():
    s = Westwood(initial_cwnd=50, ssthresh=10)
    # feed a 12 Mbps ack stream: 1500 B per ms
    for t in range(0, 200):
        s.on_ack(ack(rtt=20.0, nbytes=1500, t=t), float(t))
    assert s.bwe_bytes_per_s == pytest.approx(1.5e6, rel=0.05)
    s.on_loss(200.0)
    # ssthresh = BWE * minRTT / MTU = 1.5e6 * 0.02 / 1500 = 20 packets
    assert s.ssthresh == pytest.approx(20.0, rel=0.05)
    assert s.cwnd == pytest.approx(20.0, rel=0.05)


def test_westwood_cold_start_falls_back_to_halving():
    s = Westwood(initial_cwnd=10, ssthresh=5)
    s.on_loss(0)
    assert s.cwnd == 5


def test_westwood_bwe_converges_in_simulation():
    from delaycap.link import FlowSpec, SimConfig, World
    from delaycap.traces import constant_rate_trace

    trace = constant_rate_trace(12.0, 5.0)
    scheme = Westwood(initial_cwnd=40, ssthresh=20)
    world = World(trace, [FlowSpec(scheme)], SimConfig(episode_ms=3_000,
                                                       record_acks=False,
                                                       record_ticks=False,
                                                       record_cwnd=False))
    acks_seen = 0
    while world.now < 3_000:
        world.tick()
        acks_seen = world.flows[0].delivered
        if acks_seen >= 100 and scheme.bwe_bytes_per_s is not None:
            pass
    assert acks_seen > 100
    assert scheme.bwe_bytes_per_s == pytest.approx(1.5e6, rel=0.10)


# -- Illinois ----------------------------------------------------------------------

def _warm_illinois(d_avg, d_max):
    s = Illinois(initial_cwnd=10, ssthresh=2)
    s.base_rtt_ms = 20.0
    s.max_queuing_ms = d_max
    s._d_avg_ms = d_avg
    return s


def test_illinois_alpha_max_at_zero_delay():
    s = _warm_illinois(0.0, 100.0)
    assert s.alpha() == Illinois.ALPHA_MAX


def test_illinois_beta_max_at_peak_delay():
    s = _warm_illinois(100.0, 100.0)
    assert s.beta() == Illinois.BETA_MAX


def test_illinois_alpha_strictly_between_at_mid_delay():
    s = _warm_illinois(50.0, 100.0)
    assert Illinois.ALPHA_MIN < s.alpha() < Illinois.ALPHA_MAX


def test_illinois_alpha_monotone_decreasing():
    values = [_warm_illinois(d, 100.0).alpha() for d in (1.0, 10.0, 40.0, 80.0, 100.0)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_illinois_beta_endpoints():
    assert _warm_illinois(5.0, 100.0).beta() == Illinois.BETA_MIN  # below 0.1*dm
    assert _warm_illinois(90.0, 100.0).beta() == Illinois.BETA_MAX  # above 0.8*dm


# -- clean slate ----------------------------------------------------------------------

def test_clean_slate_ignores_events():
    s = CleanSlateDrl(initial_cwnd=10)
    s.on_ack(ack(), 0)
    s.on_loss(0)
    s.on_rto(0)
    assert s.cwnd == 10


def test_clean_slate_hard_max():
    s = CleanSlateDrl(initial_cwnd=10, hard_max=100)
    s.force_cwnd(1e9)
    assert s.cwnd == 100
    s.force_cwnd(0.1)
    assert s.cwnd == 1


# -- cross-scheme properties ------------------------------------------------------------

@pytest.mark.parametrize("name", ["aimd", "cubic", "westwood", "illinois"])
def test_loss_strictly_decreases_cwnd(name):
    s = make_scheme(name, initial_cwnd=40, ssthresh=10)
    for t in range(100):
        s.on_ack(ack(rtt=30.0, t=t * 10), float(t * 10))
    before = s.cwnd
    s.on_loss(1000.0)
    assert s.cwnd < before


@pytest.mark.parametrize("name", ["aimd", "cubic", "westwood", "illinois", "clean_slate_drl"])
def test_cwnd_never_below_one(name):
    rng = np.random.default_rng(3)
    s = make_scheme(name)
    for t in range(500):
        event = rng.integers(0, 10)
        if event < 7:
            s.on_ack(ack(rtt=float(rng.uniform(20, 300)), t=t), float(t))
        elif event < 9:
            s.on_loss(float(t))
        else:
            s.on_rto(float(t))
        assert s.cwnd >= 1.0
        s.set_clamp(float(rng.uniform(1, 50)))
        assert s.cwnd >= 1.0
        assert s.cwnd <= s.cwnd_clamp


@pytest.mark.parametrize("name", ["aimd", "cubic", "westwood", "illinois"])
def test_reset_restores_initial_state(name):
    s = make_scheme(name, initial_cwnd=7)
    for t in range(50):
        s.on_ack(ack(t=t), float(t))
    s.on_loss(50.0)
    s.reset()
    assert s.cwnd == 7


@pytest.mark.parametrize("name", ["aimd", "cubic", "westwood", "illinois"])
def test_growth_respects_clamp(name):
    s = make_scheme(name, initial_cwnd=8)
    s.set_clamp(12)
    for t in range(400):
        s.on_ack(ack(t=t), float(t))
        assert s.cwnd <= 12


def test_make_scheme_rejects_unknown():
    with pytest.raises(ValueError):
        make_scheme("bbr")
