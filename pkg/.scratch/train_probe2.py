import time
from delaycap.traces import generate_synthetic_trace, SynthTraceConfig
from delaycap.link import SimConfig, FlowSpec, run_episode
from delaycap.envs import CapControlEnv, make_eval_fn, evaluate_policy
from delaycap.schemes import make_scheme
from delaycap.metrics import flow_metrics
from delaycap import ddpg
from delaycap.rng import named_rng

t0 = time.time()
TR = SynthTraceConfig(300, 12.7875, 11.3804, 0, 90, dwell_ms=2500.0, seed=0)
trace = generate_synthetic_trace(TR)
sim = SimConfig(episode_ms=300_000)
SCHEME = 'cubic'
env_factory = lambda i: CapControlEnv(trace, SCHEME, 50.0, sim)
agent = ddpg.Agent(ddpg.AgentConfig(state_dim=100), rng=named_rng(1, 'net-init'))
tcfg = ddpg.TrainConfig(total_steps=50_000, warmup_steps=1000, cold_start_steps=3000,
                        eval_every_steps=5000, seed=1)
eval_fn = make_eval_fn(trace, SCHEME, 50.0, sim, episode_ms=120_000)
curve = ddpg.train(agent, env_factory, tcfg, eval_fn=eval_fn,
                   log_fn=lambda s, d, u, r: print(f"{s:6d} delay={d:7.1f} util={u:.3f} r={r:7.2f}  [{time.time()-t0:5.0f}s]", flush=True))
ddpg.save_agent(agent, '/root/pkg/.scratch/probe_cubic.bin')
m, log, mr = evaluate_policy(agent.policy(), trace, SCHEME, 50.0, SimConfig(episode_ms=300_000))
print('FINAL plugin full-trace:', m)
raw = flow_metrics(run_episode(FlowSpec(make_scheme(SCHEME)), trace, SimConfig(episode_ms=300_000)), 0)
print('RAW cubic          :', raw)
print('total time', time.time()-t0)
