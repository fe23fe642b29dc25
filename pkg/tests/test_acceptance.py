"""Acceptance suite: one test per criterion, one printed verdict line each.

Criteria 5, 6, 8 and 10 share memoized 50k-step training runs (the kernel
ablation trains five more policies), so the whole module takes roughly half
an hour to an hour on a desktop; everything else finishes in seconds to a
couple of minutes.  Run with `-s` (or `-rA`) to see the verdict lines.
"""

import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from delaycap import ddpg
from delaycap.envs import evaluate_policy, training_env_factory
from delaycap.link import FlowSpec, SimConfig, World, run_episode
from delaycap.metrics import flow_metrics, jain_index
from delaycap.nets import DenseNet, soft_update
from delaycap.plugin import (CapShim, FeatureScales, MonitorSample, RewardState,
                             apply_action, featurize, kernel, reward)
from delaycap.rng import named_rng
from delaycap.schemes import make_scheme
from delaycap.traces import (SynthTraceConfig, generate_synthetic_trace,
                             constant_rate_trace)

TARGET_MS = 50.0
TRAIN_SCHEME = "cubic"
TRAIN_STEPS = 50_000
TRACE_CFG = SynthTraceConfig(duration_s=300, target_mean_mbps=12.7875,
                             target_std_mbps=11.3804, min_rate_mbps=0.0,
                             max_rate_mbps=90.0, dwell_ms=2500.0, seed=0)
EVAL_SIM = SimConfig(episode_ms=300_000, record_cwnd=False)

UNIT = FeatureScales(p_scale=1.0, n_scale=1.0, cwnd_scale=1.0)

_train_cache: dict = {}


def verdict(criterion: str, ok: bool, detail: str):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="session")
def variable_trace():
    return generate_synthetic_trace(TRACE_CFG)


def train_run(variable_trace, seed: int, use_kernel: bool):
    """Memoized 50k-step training; returns (agent, final FlowMetrics)."""
    key = (seed, use_kernel)
    if key not in _train_cache:
        agent = ddpg.Agent(ddpg.AgentConfig(state_dim=100, use_kernel=use_kernel),
                           rng=named_rng(seed, "net-init"))
        env_factory = training_env_factory(variable_trace, TRAIN_SCHEME, TARGET_MS,
                                           SimConfig(), use_kernel=use_kernel)
        tcfg = ddpg.TrainConfig(total_steps=TRAIN_STEPS, warmup_steps=1000,
                                cold_start_steps=3000, eval_every_steps=TRAIN_STEPS,
                                seed=seed)
        ddpg.train(agent, env_factory, tcfg)
        metrics, _log, _r = evaluate_policy(agent.policy(), variable_trace,
                                            TRAIN_SCHEME, TARGET_MS, EVAL_SIM,
                                            use_kernel=use_kernel)
        _train_cache[key] = (agent, metrics)
    return _train_cache[key]


@pytest.fixture(scope="session")
def trained(variable_trace):
    return train_run(variable_trace, seed=1, use_kernel=True)


# -- criterion 1: equation unit suite ------------------------------------------------

def test_criterion_01_equation_units():
    # kernel
    assert kernel(60.0, 50.0) == 0.0
    assert kernel(40.0, 50.0) == 1.0
    assert kernel(50.0, 50.0) == 1.0
    # featurize
    obs = featurize(MonitorSample(25.0, 10, 5.0, 10.0, 100.0), 50.0, UNIT)
    assert abs(obs[2] - 0.5) < 1e-9 and obs[3] == 0.0
    obs = featurize(MonitorSample(75.0, 10, 5.0, 10.0, 100.0), 50.0, UNIT)
    assert obs[0] == 0.0 and obs[1] == 0.0 and obs[2] == 0.0
    assert abs(obs[3] - 1.5) < 1e-9
    obs = featurize(MonitorSample(50.0, 10, 5.0, 10.0, 100.0), 50.0, UNIT)
    assert obs[2] == 0.0 and obs[3] == 0.0
    # reward
    r = reward(MonitorSample(40.0, 10, 5.0, 10.0, 100.0),
               RewardState(50.0, 10, 40.0), p_scale=1.0)
    assert abs(r - 40.0) < 1e-9
    r = reward(MonitorSample(60.0, 10, 5.0, 10.0, 100.0),
               RewardState(50.0, 10, 60.0), p_scale=1.0)
    assert abs(r + 60.0) < 1e-9
    r = reward(MonitorSample(35.0, 7, 2.0, 10.0, 100.0),
               RewardState(50.0, 7, 35.0), p_scale=1.0)
    assert abs(r - (35.0 / 50.0) * 2.0 * 7) < 1e-9
    # apply_action
    assert apply_action(0.0, 10) == 10
    assert apply_action(1.0, 10) == 20
    assert apply_action(-1.0, 10) == 5
    # jain
    assert abs(jain_index([3.0, 3.0, 3.0, 3.0]) - 1.0) < 1e-9
    assert abs(jain_index([5.0, 0.0]) - 0.5) < 1e-9
    assert abs(jain_index([1.0, 2.0, 3.0]) - 36.0 / 42.0) < 1e-9
    # soft_update
    a = DenseNet([_linear_layer(2.0)])
    b = DenseNet([_linear_layer(0.0)])
    soft_update(b, a, tau=0.5)
    assert abs(b.layers[0].w[0, 0] - 1.0) < 1e-9
    soft_update(b, a, tau=1.0)
    assert b.layers[0].w[0, 0] == 2.0
    c = DenseNet([_linear_layer(7.0)])
    soft_update(c, a, tau=0.0)
    assert c.layers[0].w[0, 0] == 7.0
    verdict("1 (equation units)", True,
            "kernel/featurize/reward/apply_action/jain/soft_update exact")


def _linear_layer(w):
    from delaycap.nets import Layer

    return Layer(w=np.full((1, 1), float(w)), b=np.zeros(1), act="linear")


# -- criterion 2: gradient fidelity ---------------------------------------------------

def _fd_over_params(net, fn, h=1e-6):
    out = []
    for arr in net.param_arrays():
        flat = arr.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = fn()
            flat[i] = keep - h
            down = fn()
            flat[i] = keep
            out.append((up - down) / (2 * h))
    return np.array(out)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def test_criterion_02_gradient_fidelity():
    rng = np.random.default_rng(2024)
    worst_critic, worst_actor = 0.0, 0.0
    for trial in range(50):
        state_dim = int(rng.integers(3, 8))
        hidden = tuple(int(x) for x in rng.integers(4, 17, size=int(rng.integers(1, 3))))
        net_rng = np.random.default_rng(int(rng.integers(0, 2**31)))
        critic = DenseNet.create([state_dim + 1, *hidden, 1], rng=net_rng, out_init=0.5)
        n = int(rng.integers(2, 9))
        s = rng.normal(size=(n, state_dim))
        a = rng.uniform(-1, 1, size=(n, 1))
        y = rng.normal(size=(n, 1))
        xa = np.concatenate([s, a], axis=1)

        def critic_loss():
            q = critic.forward(xa, train=True, update_running=False)
            critic._cache = None
            return float(np.mean((y - q) ** 2))

        q = critic.forward(xa, train=True)
        tape, _ = critic.backward(2.0 * (q - y) / n)
        analytic = np.concatenate([g.ravel() for g in tape.arrays()])
        worst_critic = max(worst_critic, _rel(analytic, _fd_over_params(critic, critic_loss)))

    for trial in range(50):
        state_dim = int(rng.integers(3, 8))
        hidden = tuple(int(x) for x in rng.integers(4, 17, size=int(rng.integers(1, 3))))
        net_rng = np.random.default_rng(int(rng.integers(0, 2**31)))
        actor = DenseNet.create([state_dim, *hidden, 1], out_act="tanh",
                                batchnorm=True, rng=net_rng, out_init=0.5)
        critic = DenseNet.create([state_dim + 1, *hidden, 1], rng=net_rng, out_init=0.5)
        n = int(rng.integers(2, 9))
        s = rng.normal(size=(n, state_dim))

        def objective():
            act = actor.forward(s, train=True, update_running=False)
            actor._cache = None
            q = critic.forward(np.concatenate([s, act], axis=1), train=False)
            return float(np.mean(q))

        act = actor.forward(s, train=True, update_running=False)
        critic.forward(np.concatenate([s, act], axis=1), train=True)
        _, dxa = critic.backward(np.full((n, 1), 1.0 / n))
        tape, _ = actor.backward(dxa[:, state_dim:])
        analytic = np.concatenate([g.ravel() for g in tape.arrays()])
        worst_actor = max(worst_actor, _rel(analytic, _fd_over_params(actor, objective)))

    ok = worst_critic < 1e-4 and worst_actor < 1e-3
    verdict("2 (gradient fidelity)", ok,
            f"100 trials; worst critic rel err {worst_critic:.2e} (<1e-4), "
            f"worst composite actor rel err {worst_actor:.2e} (<1e-3)")


# -- criterion 3: simulator conservation ------------------------------------------------

def test_criterion_03_conservation():
    rng = np.random.default_rng(33)
    schemes = ["aimd", "cubic", "westwood", "illinois"]
    checked = 0
    for episode in range(20):
        tr_cfg = SynthTraceConfig(
            duration_s=15,
            target_mean_mbps=float(rng.uniform(3, 30)),
            target_std_mbps=float(rng.uniform(0, 10)),
            min_rate_mbps=0.0,
            max_rate_mbps=float(rng.uniform(30, 90)),
            dwell_ms=float(rng.uniform(200, 2000)),
            seed=int(rng.integers(0, 10_000)))
        trace = generate_synthetic_trace(tr_cfg)
        if len(trace) == 0:
            continue
        cfg = SimConfig(episode_ms=15_000, record_conservation=True,
                        record_cwnd=False,
                        buffer_bytes=int(rng.choice([30_000, 150_000, 600_000])))
        log = run_episode(FlowSpec(make_scheme(schemes[episode % 4])), trace, cfg)
        assert log.conservation_ok, "per-tick packet conservation violated"
        if log.acks.shape[0]:
            assert float(log.acks[:, 3].min()) >= cfg.mrtt_ms, "ack RTT below mRTT"
        delivered = sum(f["delivered_bytes"] for f in log.meta["flows"])
        assert delivered <= log.meta["opportunities_used"] * cfg.mtu_bytes
        checked += 1
    verdict("3 (conservation)", checked >= 18,
            f"{checked} episodes: sent = delivered+queued+in-flight+dropped each tick; "
            f"RTT >= mRTT; delivered <= consumed opportunities x MTU")


# -- criterion 4: bufferbloat baseline ----------------------------------------------------

def test_criterion_04_bufferbloat_baseline():
    trace = constant_rate_trace(12.0, 20.0)
    cfg = SimConfig(episode_ms=60_000, record_cwnd=False)
    fm = flow_metrics(run_episode(FlowSpec(make_scheme("cubic")), trace, cfg), 0)
    ok = fm.avg_queuing_delay_ms >= 60.0 and fm.utilization >= 0.9
    verdict("4 (bufferbloat baseline)", ok,
            f"raw Cubic @12Mbps/150KB: queuing {fm.avg_queuing_delay_ms:.1f}ms "
            f"(>=60), utilization {fm.utilization:.3f} (>=0.9)")


# -- criterion 5: end-to-end training efficacy ----------------------------------------------

@pytest.mark.slow
def test_criterion_05_training_efficacy(variable_trace, trained):
    _agent, plugged = trained
    raw = flow_metrics(run_episode(FlowSpec(make_scheme(TRAIN_SCHEME)),
                                   variable_trace, EVAL_SIM), 0)
    # raw arm: exceeds twice the target-implied queuing budget
    raw_bar = 2.0 * (TARGET_MS - EVAL_SIM.mrtt_ms)
    ok = (plugged.avg_delay_ms <= TARGET_MS * 1.2
          and plugged.utilization >= 0.6
          and raw.avg_queuing_delay_ms > raw_bar)
    verdict("5 (training efficacy)", ok,
            f"{TRAIN_STEPS}-step policy over {TRAIN_SCHEME}: delay "
            f"{plugged.avg_delay_ms:.1f}ms (<= {TARGET_MS * 1.2:.0f}), utilization "
            f"{plugged.utilization:.3f} (>= 0.6); raw queuing "
            f"{raw.avg_queuing_delay_ms:.1f}ms (> {raw_bar:.0f})")


# -- criterion 6: buffer-size insensitivity ---------------------------------------------------

@pytest.mark.slow
def test_criterion_06_buffer_insensitivity(variable_trace, trained):
    agent, _ = trained
    buffers = [30_000, 150_000, 1_000_000]
    plugged, raw = {}, {}
    for buf in buffers:
        cfg = replace(EVAL_SIM, buffer_bytes=buf)
        shim = CapShim(TARGET_MS, policy=agent.policy(), m=agent.cfg.m,
                       scales=agent.cfg.scales, use_kernel=agent.cfg.use_kernel)
        plugged[buf] = flow_metrics(run_episode(
            FlowSpec(make_scheme(TRAIN_SCHEME), shim), variable_trace, cfg), 0)
        raw[buf] = flow_metrics(run_episode(
            FlowSpec(make_scheme(TRAIN_SCHEME)), variable_trace, cfg), 0)
    anchor = plugged[150_000].avg_delay_ms
    spread = max(abs(plugged[b].avg_delay_ms - anchor) / anchor for b in buffers)
    raw_ratio = raw[1_000_000].avg_delay_ms / raw[30_000].avg_delay_ms
    ok = spread < 0.5 and raw_ratio >= 3.0
    detail = ", ".join(f"{b // 1000}KB={plugged[b].avg_delay_ms:.1f}ms" for b in buffers)
    verdict("6 (buffer insensitivity)", ok,
            f"plugged delay {detail} (spread {spread:.1%} < 50%); "
            f"raw 1MB/30KB delay ratio {raw_ratio:.1f}x (>= 3x)")


# -- criterion 7: cap monotonicity --------------------------------------------------------------

def _mean_inflight(trace, forced_alpha, seed):
    cfg = SimConfig(episode_ms=8_000, record_acks=False, record_ticks=False,
                    record_cwnd=False)
    shim = CapShim(TARGET_MS, policy=lambda s: forced_alpha)
    world = World(trace, [FlowSpec(make_scheme("aimd"), shim)], cfg)
    fl = world.flows[0]
    total = 0
    while world.now < cfg.episode_ms:
        if shim.due(world.now):
            shim.close_period(world.now, fl.scheme.cwnd)
            shim.apply(forced_alpha, fl.scheme, world.now)
        world.tick()
        total += len(fl.outstanding)
    return total / cfg.episode_ms


def test_criterion_07_cap_monotonicity():
    results = []
    for seed in range(10):
        tr = generate_synthetic_trace(SynthTraceConfig(
            duration_s=8, target_mean_mbps=4 + 2.5 * seed, target_std_mbps=seed,
            min_rate_mbps=0.5, max_rate_mbps=40 + 5 * seed, seed=seed))
        low = _mean_inflight(tr, -1.0, seed)
        high = _mean_inflight(tr, 1.0, seed)
        results.append((low, high))
    ok = all(low < high for low, high in results)
    worst = max(low / max(high, 1e-9) for low, high in results)
    verdict("7 (cap monotonicity)", ok,
            f"alpha=-1 mean in-flight strictly below alpha=+1 on 10 seeded traces "
            f"(worst ratio {worst:.3f})")


# -- criterion 8: fairness -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_fairness(trained):
    agent, _ = trained
    # exact-formula unit examples
    assert abs(jain_index([4.0] * 4) - 1.0) < 1e-9
    assert abs(jain_index([9.0, 0.0]) - 0.5) < 1e-9
    assert abs(jain_index([1.0, 2.0, 3.0]) - 36.0 / 42.0) < 1e-9
    trace = constant_rate_trace(24.0, 10.0)
    indices = {}
    for n in (2, 3, 4):
        cfg = SimConfig(mrtt_ms=10, buffer_bytes=30_000, per_flow_queues=False,
                        episode_ms=60_000, record_cwnd=False)
        specs = [FlowSpec(make_scheme(TRAIN_SCHEME),
                          CapShim(TARGET_MS, policy=agent.policy(), m=agent.cfg.m,
                                  scales=agent.cfg.scales,
                                  use_kernel=agent.cfg.use_kernel))
                 for _ in range(n)]
        log = run_episode(specs, trace, cfg)
        rates = [flow_metrics(log, i).throughput_bps for i in range(n)]
        indices[n] = jain_index(rates)
    ok = all(j >= 0.9 for j in indices.values())
    verdict("8 (fairness)", ok,
            "Jain on shared 24Mbps: " +
            ", ".join(f"{n} flows={j:.3f}" for n, j in indices.items()) +
            " (all >= 0.9)")


# -- criterion 9: determinism ---------------------------------------------------------------------

def _cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "delaycap.cli", *args],
                          cwd=cwd, capture_output=True, text=True)


def test_criterion_09_cli_determinism(tmp_path):
    gen = ["trace", "gen", "--mean", "12.79", "--std", "11.38", "--duration", "20",
           "--seed", "7", "-o"]
    assert _cli(gen + ["t1.tr"], tmp_path).returncode == 0
    assert _cli(gen + ["t2.tr"], tmp_path).returncode == 0
    pairs = [((tmp_path / "t1.tr"), (tmp_path / "t2.tr"))]

    ev = ["eval", "--scheme", "cubic", "--trace", "t1.tr", "--duration-s", "10",
          "--seed", "3", "-o"]
    assert _cli(ev + ["e1.csv"], tmp_path).returncode == 0
    assert _cli(ev + ["e2.csv"], tmp_path).returncode == 0
    pairs.append(((tmp_path / "e1.csv"), (tmp_path / "e2.csv")))

    sw = ["sweep", "--axis", "buffer", "--values", "30000,150000", "--scheme",
          "aimd", "--trace", "t1.tr", "--duration-s", "8", "--seed", "1", "-o"]
    assert _cli(sw + ["s1.csv"], tmp_path).returncode == 0
    assert _cli(sw + ["s2.csv"], tmp_path).returncode == 0
    pairs.append(((tmp_path / "s1.csv"), (tmp_path / "s2.csv")))

    ok = all(a.read_bytes() == b.read_bytes() for a, b in pairs)
    verdict("9 (determinism)", ok,
            "trace gen / eval / sweep byte-identical across repeated runs")


# -- criterion 10: filter-kernel ablation ------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_kernel_ablation(variable_trace):
    wins = 0
    rows = []
    for seed in (1, 2, 3):
        _, on = train_run(variable_trace, seed, use_kernel=True)
        _, off = train_run(variable_trace, seed, use_kernel=False)
        worse = (off.avg_delay_ms > on.avg_delay_ms
                 or off.utilization < on.utilization)
        wins += worse
        rows.append(f"seed {seed}: on(delay {on.avg_delay_ms:.1f}, util "
                    f"{on.utilization:.3f}) vs off(delay {off.avg_delay_ms:.1f}, "
                    f"util {off.utilization:.3f}) -> {'on wins' if worse else 'off wins'}")
    ok = wins >= 2
    verdict("10 (kernel ablation)", ok,
            f"kernel-disabled worse on {wins}/3 seeds at equal {TRAIN_STEPS}-step "
            "budget; " + "; ".join(rows))
