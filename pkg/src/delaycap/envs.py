"""RL environment wrapper: one step per monitoring period.

Wraps a single capped flow on a trace-driven link.  step(alpha) applies the
window action, advances the simulator until the shim's next decision point,
and returns the new state plus the reward the closed period earned.  Episodes
are fixed-length truncations of a continuing task; the caller starts a fresh
environment when `done` comes back true.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .link import FlowSpec, SimConfig, World, run_episode
from .plugin import CapShim, FeatureScales
from .schemes import make_scheme
from .traces import Trace


class CapControlEnv:
    def __init__(self, trace: Trace, scheme_id: str = "aimd", target_ms: float = 50.0,
                 sim: SimConfig | None = None, m: int = 20,
                 scales: FeatureScales = FeatureScales(), use_kernel: bool = True,
                 mode: str = "cap", scheme_kwargs: dict | None = None,
                 start_offset_ms: int = 0):
        self.trace = trace
        self.scheme_id = scheme_id
        self.target_ms = target_ms
        self.m = m
        self.scales = scales
        self.use_kernel = use_kernel
        self.mode = mode
        self.scheme_kwargs = scheme_kwargs or {}
        # episodes can start anywhere in the (wrapping) trace, so successive
        # training episodes see different capacity segments
        self.start_offset_ms = int(start_offset_ms)
        base = sim or SimConfig()
        # training rollouts keep no logs; evaluation re-runs with full ones
        self.sim = replace(base, record_acks=False, record_ticks=False,
                           record_cwnd=False, record_conservation=False)
        self.world: World | None = None
        self.shim: CapShim | None = None
        self.scheme = None
        self._end_ms = 0

    @property
    def state_dim(self) -> int:
        return 5 * self.m

    def reset(self) -> np.ndarray:
        self.scheme = make_scheme(self.scheme_id, **self.scheme_kwargs)
        self.shim = CapShim(self.target_ms, policy=None, m=self.m, scales=self.scales,
                            use_kernel=self.use_kernel, mode=self.mode)
        spec = FlowSpec(self.scheme, self.shim, start_ms=self.start_offset_ms)
        self.world = World(self.trace, [spec], self.sim)
        self.world.now = self.start_offset_ms
        self._end_ms = self.start_offset_ms + self.sim.episode_ms
        self._advance_to_decision()
        state, _r, _sample = self.shim.close_period(self.world.now, self.scheme.cwnd)
        return state

    def _advance_to_decision(self) -> None:
        world, shim = self.world, self.shim
        while world.now < self._end_ms and not shim.due(world.now):
            world.tick()

    def step(self, alpha: float):
        """Apply the action, run to the next decision; (state, reward, done)."""
        if self.world is None:
            raise RuntimeError("call reset() first")
        self.shim.apply(alpha, self.scheme, self.world.now)
        self._advance_to_decision()
        state, reward, _sample = self.shim.close_period(self.world.now, self.scheme.cwnd)
        done = self.world.now >= self._end_ms
        return state, reward, done


def evaluate_policy(policy, trace: Trace, scheme_id: str, target_ms: float,
                    sim: SimConfig, m: int = 20,
                    scales: FeatureScales = FeatureScales(), use_kernel: bool = True,
                    mode: str = "cap", scheme_kwargs: dict | None = None):
    """Greedy rollout with full logging; returns (metrics, log, mean_reward)."""
    from .metrics import flow_metrics  # local import, metrics depends on link only

    shim = CapShim(target_ms, policy=policy, m=m, scales=scales,
                   use_kernel=use_kernel, mode=mode)
    scheme = make_scheme(scheme_id, **(scheme_kwargs or {}))
    log = run_episode(FlowSpec(scheme, shim), trace, sim)
    metrics = flow_metrics(log, 0)
    mean_reward = float(np.mean(shim.rewards)) if shim.rewards else 0.0
    return metrics, log, mean_reward


def training_env_factory(trace: Trace, scheme_id: str, target_ms: float,
                         sim: SimConfig, m: int = 20,
                         scales: FeatureScales = FeatureScales(),
                         use_kernel: bool = True, mode: str = "cap",
                         episode_s: float = 60.0):
    """Bounded episodes starting at rotating offsets into the trace.

    Short episodes reset the flow regularly (a badly capped window cannot
    wallow for a whole run) and the stride walks the episodes across the
    trace so training sees every capacity regime.
    """
    episode_ms = int(episode_s * 1000)
    base = replace(sim, episode_ms=episode_ms)
    period = max(trace.period_ms, 1)
    stride = episode_ms + 1013  # offset successive episodes off period multiples

    def factory(episode_index: int) -> CapControlEnv:
        offset = (episode_index * stride) % period
        return CapControlEnv(trace, scheme_id, target_ms, base, m=m, scales=scales,
                             use_kernel=use_kernel, mode=mode,
                             start_offset_ms=offset)

    return factory


def make_eval_fn(trace: Trace, scheme_id: str, target_ms: float, sim: SimConfig,
                 m: int = 20, scales: FeatureScales = FeatureScales(),
                 use_kernel: bool = True, mode: str = "cap",
                 episode_ms: int | None = None):
    """eval_fn for ddpg.train: greedy rollout -> (delay, utilization, reward)."""
    eval_sim = replace(sim, episode_ms=episode_ms or sim.episode_ms,
                       record_acks=True, record_ticks=True, record_cwnd=False)

    def eval_fn(agent, step):
        metrics, _log, mean_r = evaluate_policy(
            agent.policy(), trace, scheme_id, target_ms, eval_sim,
            m=m, scales=scales, use_kernel=use_kernel, mode=mode)
        return metrics.avg_delay_ms, metrics.utilization, mean_r

    return eval_fn
