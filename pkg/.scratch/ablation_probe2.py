import time
from delaycap.traces import generate_synthetic_trace, SynthTraceConfig
from delaycap.link import SimConfig
from delaycap.envs import training_env_factory, evaluate_policy
from delaycap import ddpg
from delaycap.rng import named_rng

t0 = time.time()
trace = generate_synthetic_trace(SynthTraceConfig(300, 12.7875, 11.3804, 0, 90, dwell_ms=2500.0, seed=0))
sim = SimConfig(episode_ms=300_000)
STEPS = 15_000

def run(seed, use_kernel):
    agent = ddpg.Agent(ddpg.AgentConfig(state_dim=100, use_kernel=use_kernel),
                       rng=named_rng(seed, 'net-init'))
    env_factory = training_env_factory(trace, 'cubic', 50.0, sim, use_kernel=use_kernel)
    tcfg = ddpg.TrainConfig(total_steps=STEPS, warmup_steps=1000, cold_start_steps=3000,
                            eval_every_steps=STEPS, seed=seed)
    ddpg.train(agent, env_factory, tcfg)
    m, _, _ = evaluate_policy(agent.policy(), trace, 'cubic', 50.0, SimConfig(episode_ms=300_000),
                              use_kernel=use_kernel)
    return m

for seed in (1, 2, 3):
    for use_kernel in (True, False):
        m = run(seed, use_kernel)
        print(f"seed={seed} kernel={use_kernel}: delay={m.avg_delay_ms:7.2f} util={m.utilization:.3f}  [{time.time()-t0:5.0f}s]", flush=True)
