"""delaycap: learned congestion-window capping on trace-driven cellular links.

A throughput-oriented TCP scheme left alone on a deep-buffered cellular link
fills the buffer and inflicts hundreds of milliseconds of queuing delay on
itself.  This package simulates that setting and trains a DDPG policy that
periodically caps the scheme's congestion window so that average packet delay
stays below an application-chosen target while throughput stays high.

Layout:
    traces    -- link traces: parse/serialize/statistics/synthesis
    schemes   -- pluggable congestion-control state machines
    link      -- deterministic 1 ms bottleneck simulator
    plugin    -- monitor / state / reward / cap-action shim (one per flow)
    nets      -- dense networks with batchnorm and reverse-mode gradients
    ddpg      -- actor-critic learner, replay buffer, training loop
    envs      -- step-per-monitoring-period RL environment wrapper
    metrics   -- delay/throughput/utilization/fairness evaluation, sweeps
    report    -- matplotlib figures rendered from the CSV outputs
    cli       -- command-line entry point (`delaycap ...`)
"""

__version__ = "0.1.0"
