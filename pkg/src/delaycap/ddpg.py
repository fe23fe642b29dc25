"""Deterministic-policy actor-critic learner for the window-cap action.

The actor maps the monitor-history state to alpha in [-1, 1] (tanh output,
batch-normalized hidden layers); the critic maps (state, action) -- action
concatenated at the input layer -- to a scalar value.  Slowly blended target
copies of both stabilize the one-step TD target

    y = r + gamma * Q'(s', pi'(s'))

with no terminal masking: episodes are truncations of a continuing task.
Per environment step the learner stores the transition, samples a uniform
minibatch, descends the critic's mean squared TD error, ascends the actor
along the critic's action gradient with the critic frozen, and soft-updates
the targets.

Exploration is uncorrelated additive Gaussian noise with exponential decay,
preceded by a cold-start phase that deterministically walks alpha over a
piece-wise staircase from -1 to +1 and back, independent of network weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .nets import AdamState, DenseNet, adam_step, load_net, save_net, soft_update
from .plugin import FeatureScales
from .rng import named_rng

AGENT_MAGIC = b"DAGT"
AGENT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class AgentConfig:
    state_dim: int
    hidden: tuple[int, ...] = (128, 128)
    gamma: float = 0.99
    tau: float = 1e-3
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    # featurization metadata carried in checkpoints so evaluation
    # reconstructs the exact observation the policy was trained on
    m: int = 20
    target_ms: float = 50.0
    scales: FeatureScales = field(default_factory=FeatureScales)
    use_kernel: bool = True

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.state_dim != 5 * self.m:
            raise ValueError("state_dim must equal 5*m")


class Agent:
    """Actor/critic pair with target shadows and their optimizers."""

    def __init__(self, cfg: AgentConfig, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        self.cfg = cfg
        dims_actor = [cfg.state_dim, *cfg.hidden, 1]
        dims_critic = [cfg.state_dim + 1, *cfg.hidden, 1]
        self.actor = DenseNet.create(dims_actor, out_act="tanh", batchnorm=True, rng=rng)
        self.critic = DenseNet.create(dims_critic, out_act="linear", batchnorm=False, rng=rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = AdamState.for_net(self.actor, cfg.actor_lr)
        self.critic_opt = AdamState.for_net(self.critic, cfg.critic_lr)
        self.trained_steps = 0

    # -- acting -----------------------------------------------------------------
    def act(self, state: np.ndarray, explore: bool = False,
            rng: np.random.Generator | None = None, sigma: float = 0.0) -> float:
        """alpha = clamp(actor(s) + noise); inference-mode forward."""
        alpha = float(self.actor.forward(state, train=False)[0])
        if explore and sigma > 0:
            if rng is None:
                raise ValueError("explore=True needs an rng")
            alpha += float(rng.normal(0.0, sigma))
        return min(1.0, max(-1.0, alpha))

    def policy(self):
        """Greedy callable for evaluation shims."""
        return lambda state: self.act(state, explore=False)

    # -- updates -------------------------------------------------------------------
    def update_critic(self, states, actions, targets) -> float:
        """One descent step on mean squared TD error; returns pre-step loss."""
        n = states.shape[0]
        xa = np.concatenate([states, actions], axis=1)
        q = self.critic.forward(xa, train=True)
        err = q - targets
        loss = float(np.mean(err**2))
        tape, _ = self.critic.backward(2.0 * err / n)
        adam_step(self.critic, tape, self.critic_opt)
        return loss

    def update_actor(self, states) -> float:
        """One ascent step on mean Q(s, pi(s)); critic untouched.

        Returns the pre-step objective estimate (mean Q over the batch).
        """
        n = states.shape[0]
        actions = self.actor.forward(states, train=True)
        xa = np.concatenate([states, actions], axis=1)
        q = self.critic.forward(xa, train=True)
        _, dxa = self.critic.backward(np.full((n, 1), 1.0 / n))
        d_action = dxa[:, self.cfg.state_dim:]
        tape, _ = self.actor.backward(d_action)
        adam_step(self.actor, tape, self.actor_opt, maximize=True)
        return float(np.mean(q))

    def soft_update_targets(self) -> None:
        soft_update(self.target_actor, self.actor, self.cfg.tau)
        soft_update(self.target_critic, self.critic, self.cfg.tau)


def critic_targets(rewards: np.ndarray, next_states: np.ndarray,
                   target_actor: DenseNet, target_critic: DenseNet,
                   gamma: float) -> np.ndarray:
    """y_i = r_i + gamma * Q'(s_{i+1}, pi'(s_{i+1})); continuing task."""
    a2 = target_actor.forward(next_states, train=False)
    q2 = target_critic.forward(np.concatenate([next_states, a2], axis=1), train=False)
    return rewards.reshape(-1, 1) + gamma * q2


class ReplayBuffer:
    """FIFO transition store; uniform sampling; float64 throughout."""

    def __init__(self, capacity: int, state_dim: int, grow: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self._grow = grow
        self._alloc = 0
        self.size = 0
        self._next = 0
        self.s = np.empty((0, state_dim))
        self.a = np.empty((0, 1))
        self.r = np.empty((0, 1))
        self.s2 = np.empty((0, state_dim))

    def _ensure(self, idx: int) -> None:
        if idx < self._alloc:
            return
        new = min(self.capacity, max(self._grow, self._alloc * 2))
        for name in ("s", "a", "r", "s2"):
            old = getattr(self, name)
            grown = np.empty((new, old.shape[1]))
            grown[: self._alloc] = old[: self._alloc]
            setattr(self, name, grown)
        self._alloc = new

    def add(self, s, a, r, s2) -> None:
        i = self._next
        self._ensure(i)
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, idx: int):
        if not 0 <= idx < self.size:
            raise IndexError(idx)
        return self.s[idx].copy(), float(self.a[idx, 0]), float(self.r[idx, 0]), self.s2[idx].copy()

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=n)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]


def cold_start_alpha(step: int, cold_start_steps: int) -> float:
    """Deterministic action-space walk: staircase -1 -> +1 -> -1."""
    levels = [i * 0.25 - 1.0 for i in range(9)]      # -1 .. 1
    seq = levels + levels[-2::-1]                     # .. back down to -1
    seg = max(1, cold_start_steps // len(seq))
    return seq[min(step // seg, len(seq) - 1)]


@dataclass
class TrainConfig:
    total_steps: int
    batch_size: int = 64
    warmup_steps: int = 1000
    buffer_capacity: int = 1_000_000
    noise_sigma: float = 0.2
    noise_decay: float = 0.9995
    noise_floor: float = 0.05
    cold_start_steps: int = 3000
    eval_every_steps: int = 5000
    seed: int = 0
    divergence_q: float = 1e6

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        for name in ("batch_size", "warmup_steps", "buffer_capacity",
                     "cold_start_steps", "eval_every_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size > self.warmup_steps:
            raise ValueError("batch_size must not exceed warmup_steps")


CURVE_COLUMNS = ("step", "avg_delay_ms", "utilization", "mean_reward")


def train(agent: Agent, env_factory, cfg: TrainConfig, eval_fn=None,
          log_fn=None) -> list[dict]:
    """Interact / store / update loop; returns the learning curve.

    env_factory(episode_index) -> environment with reset() -> s and
    step(alpha) -> (s', r, done).  eval_fn(agent, step) -> (avg_delay_ms,
    utilization, mean_reward) is called every eval_every_steps (and once at
    the end); the curve holds one row per call.
    """
    curve: list[dict] = []
    if cfg.total_steps == 0:
        return curve

    noise_rng = named_rng(cfg.seed, "exploration-noise")
    sample_rng = named_rng(cfg.seed, "replay-sampling")
    buffer = ReplayBuffer(cfg.buffer_capacity, agent.cfg.state_dim)
    sigma = cfg.noise_sigma

    episode = 0
    env = env_factory(episode)
    state = env.reset()

    def snapshot(step):
        if eval_fn is None:
            return
        delay, util, mean_r = eval_fn(agent, step)
        curve.append({"step": step, "avg_delay_ms": delay,
                      "utilization": util, "mean_reward": mean_r})
        if log_fn is not None:
            log_fn(step, delay, util, mean_r)

    for step in range(cfg.total_steps):
        if step < cfg.cold_start_steps:
            alpha = cold_start_alpha(step, cfg.cold_start_steps)
        else:
            alpha = agent.act(state, explore=True, rng=noise_rng, sigma=sigma)
            sigma = max(cfg.noise_floor, sigma * cfg.noise_decay)
        next_state, r, done = env.step(alpha)
        buffer.add(state, alpha, r, next_state)
        state = next_state

        if buffer.size >= max(cfg.warmup_steps, cfg.batch_size):
            s, a, rew, s2 = buffer.sample(cfg.batch_size, sample_rng)
            y = critic_targets(rew, s2, agent.target_actor, agent.target_critic,
                               agent.cfg.gamma)
            agent.update_critic(s, a, y)
            mean_q = agent.update_actor(s)
            agent.soft_update_targets()
            if np.median(np.abs(y)) > cfg.divergence_q or abs(mean_q) > cfg.divergence_q:
                raise TrainingDiverged(f"|Q| exceeded {cfg.divergence_q:g} at step {step}")

        agent.trained_steps += 1
        if done:
            episode += 1
            env = env_factory(episode)
            state = env.reset()
        if (step + 1) % cfg.eval_every_steps == 0:
            snapshot(agent.trained_steps)

    if cfg.total_steps % cfg.eval_every_steps != 0:
        snapshot(agent.trained_steps)
    return curve


# -- checkpoint -----------------------------------------------------------------

def save_agent(agent: Agent, path) -> None:
    cfg = agent.cfg
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", AGENT_MAGIC, AGENT_VERSION))
        f.write(struct.pack("<IIddB", cfg.state_dim, cfg.m, cfg.gamma, cfg.tau,
                            1 if cfg.use_kernel else 0))
        f.write(struct.pack("<dddd", cfg.target_ms, cfg.scales.p_scale,
                            cfg.scales.n_scale, cfg.scales.cwnd_scale))
        f.write(struct.pack("<ddQ", cfg.actor_lr, cfg.critic_lr, agent.trained_steps))
        f.write(struct.pack("<I", len(cfg.hidden)))
        f.write(struct.pack(f"<{len(cfg.hidden)}I", *cfg.hidden))
        for net in (agent.actor, agent.critic, agent.target_actor, agent.target_critic):
            save_net(net, f)


def load_agent(path) -> Agent:
    with open(path, "rb") as f:
        magic, version = struct.unpack("<4sI", f.read(8))
        if magic != AGENT_MAGIC:
            raise ValueError("not an agent checkpoint (bad magic)")
        if version != AGENT_VERSION:
            raise ValueError(f"unsupported agent checkpoint version {version}")
        state_dim, m, gamma, tau, use_kernel = struct.unpack("<IIddB", f.read(25))
        target_ms, p_scale, n_scale, cwnd_scale = struct.unpack("<dddd", f.read(32))
        actor_lr, critic_lr, trained_steps = struct.unpack("<ddQ", f.read(24))
        (n_hidden,) = struct.unpack("<I", f.read(4))
        hidden = struct.unpack(f"<{n_hidden}I", f.read(4 * n_hidden))
        cfg = AgentConfig(state_dim=state_dim, hidden=tuple(hidden), gamma=gamma,
                          tau=tau, actor_lr=actor_lr, critic_lr=critic_lr, m=m,
                          target_ms=target_ms,
                          scales=FeatureScales(p_scale, n_scale, cwnd_scale),
                          use_kernel=bool(use_kernel))
        agent = Agent.__new__(Agent)
        agent.cfg = cfg
        agent.actor = load_net(f)
        agent.critic = load_net(f)
        agent.target_actor = load_net(f)
        agent.target_critic = load_net(f)
        agent.actor_opt = AdamState.for_net(agent.actor, cfg.actor_lr)
        agent.critic_opt = AdamState.for_net(agent.critic, cfg.critic_lr)
        agent.trained_steps = trained_steps
    return agent
