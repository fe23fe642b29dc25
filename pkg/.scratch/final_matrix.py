import time
from delaycap.traces import generate_synthetic_trace, SynthTraceConfig
from delaycap.link import SimConfig, FlowSpec, run_episode
from delaycap.envs import training_env_factory, evaluate_policy
from delaycap.schemes import make_scheme
from delaycap.metrics import flow_metrics
from delaycap import ddpg
from delaycap.rng import named_rng

t0 = time.time()
trace = generate_synthetic_trace(SynthTraceConfig(300, 12.7875, 11.3804, 0, 90, dwell_ms=2500.0, seed=0))
sim = SimConfig(episode_ms=300_000)
STEPS = 50_000
raw = flow_metrics(run_episode(FlowSpec(make_scheme('cubic')), trace, SimConfig(episode_ms=300_000)), 0)
print(f'RAW cubic: delay={raw.avg_delay_ms:.1f} queuing={raw.avg_queuing_delay_ms:.1f} util={raw.utilization:.3f}', flush=True)

def run(seed, use_kernel):
    agent = ddpg.Agent(ddpg.AgentConfig(state_dim=100, use_kernel=use_kernel),
                       rng=named_rng(seed, 'net-init'))
    env_factory = training_env_factory(trace, 'cubic', 50.0, sim, use_kernel=use_kernel)
    tcfg = ddpg.TrainConfig(total_steps=STEPS, warmup_steps=1000, cold_start_steps=3000,
                            eval_every_steps=10_000, seed=seed)
    ddpg.train(agent, env_factory, tcfg)
    m, _, _ = evaluate_policy(agent.policy(), trace, 'cubic', 50.0, SimConfig(episode_ms=300_000),
                              use_kernel=use_kernel)
    return m, agent

for seed in (1, 2, 3):
    for use_kernel in (True, False):
        m, agent = run(seed, use_kernel)
        tag = 'on ' if use_kernel else 'off'
        if use_kernel and seed == 1:
            ddpg.save_agent(agent, '/root/pkg/.scratch/final_agent_seed1.bin')
        print(f'seed={seed} kernel={tag}: delay={m.avg_delay_ms:7.2f} util={m.utilization:.3f}  [{time.time()-t0:5.0f}s]', flush=True)
