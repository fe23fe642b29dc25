"""Command-line front end.

Subcommands:
    trace gen    synthesize a link trace from target capacity moments
    trace stats  print capacity moments of a trace file as CSV
    train        train the window-cap policy over a trace
    eval         run episodes and print/write flow metrics (optionally fair-
                 ness across several flows on a shared queue)
    sweep        metrics across buffer-size / mRTT / target values
    report       render figures from any of the CSV outputs

A config file of `long-option=value` lines can seed any subcommand's flags
(`--config run.cfg`); explicit flags win.  If DELAYCAP_OUTDIR is set,
relative output paths land under it.  All randomness derives from --seed, so
identical invocations produce byte-identical CSV outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import ddpg, envs, metrics, report
from .link import FlowSpec, SimConfig, run_episode
from .plugin import CapShim
from .rng import named_rng
from .schemes import SCHEMES, make_scheme
from .traces import (SynthTraceConfig, generate_synthetic_trace, load_trace,
                     save_trace, trace_capacity_stats)

EVAL_COLUMNS = ("scheme", "plugin", "target_ms", "flow", "avg_delay_ms",
                "avg_queuing_delay_ms", "p95_delay_ms", "throughput_mbps",
                "utilization", "jain_index")


def _resolve_out(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get("DELAYCAP_OUTDIR")
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _add_sim_flags(p: argparse.ArgumentParser):
    p.add_argument("--mrtt", type=int, default=20, help="minimum RTT, ms (even)")
    p.add_argument("--buffer", type=int, default=150_000, help="bottleneck buffer, bytes")
    p.add_argument("--shared-queue", action="store_true",
                   help="one FIFO shared by all flows instead of per-flow isolation")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="delaycap", description=__doc__.split("\n")[0])
    top.add_argument("--config", default=None, help="key=value defaults file")
    sub = top.add_subparsers(dest="command", required=True)

    p_trace = sub.add_parser("trace", help="trace tooling")
    trace_sub = p_trace.add_subparsers(dest="trace_command", required=True)

    p_gen = trace_sub.add_parser("gen", help="synthesize a trace")
    p_gen.add_argument("--duration", type=float, default=300.0, help="seconds")
    p_gen.add_argument("--mean", type=float, required=True, help="target mean, Mbps")
    p_gen.add_argument("--std", type=float, default=0.0, help="target std dev, Mbps")
    p_gen.add_argument("--min", dest="min_rate", type=float, default=0.0)
    p_gen.add_argument("--max", dest="max_rate", type=float, default=90.0)
    p_gen.add_argument("--dwell-ms", type=float, default=500.0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("-o", "--out", required=True, help="trace file to write")

    p_stats = trace_sub.add_parser("stats", help="capacity moments of a trace")
    p_stats.add_argument("trace", help="trace file")
    p_stats.add_argument("--bucket-ms", type=int, default=1000)
    p_stats.add_argument("-o", "--out", default=None, help="also write CSV here")

    p_train = sub.add_parser("train", help="train the cap policy")
    p_train.add_argument("--scheme", choices=sorted(SCHEMES), default="aimd")
    p_train.add_argument("--trace", required=True)
    p_train.add_argument("--target", type=float, default=50.0, help="delay target, ms")
    p_train.add_argument("--steps", type=int, required=True)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--m", type=int, default=20, help="observation history length")
    p_train.add_argument("--hidden", default="128,128",
                         help="hidden layer widths, e.g. 1000,1000")
    p_train.add_argument("--episode-s", type=float, default=60.0,
                         help="training episode length, seconds")
    p_train.add_argument("--eval-every", type=int, default=5000)
    p_train.add_argument("--cold-start", type=int, default=3000)
    p_train.add_argument("--warmup", type=int, default=1000)
    p_train.add_argument("--no-kernel", action="store_true",
                         help="ablation: feed raw d/p/n, no target gating")
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")
    p_train.add_argument("--out-dir", default="runs/train")
    _add_sim_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate scheme (optionally capped)")
    p_eval.add_argument("--scheme", choices=sorted(SCHEMES), default="cubic")
    p_eval.add_argument("--trace", required=True)
    p_eval.add_argument("--plugin", default=None, help="agent checkpoint enabling the cap")
    p_eval.add_argument("--target", type=float, default=None,
                        help="delay target, ms (default: checkpoint's)")
    p_eval.add_argument("--flows", type=int, default=1)
    p_eval.add_argument("--stagger-s", type=float, default=0.0,
                        help="flow i starts at i * stagger seconds")
    p_eval.add_argument("--duration-s", type=float, default=None)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("-o", "--out", default=None, help="metrics CSV path")
    p_eval.add_argument("--save-log", default=None,
                        help="episode log prefix (.csv and .npz written)")
    _add_sim_flags(p_eval)

    p_sweep = sub.add_parser("sweep", help="metrics across a parameter axis")
    p_sweep.add_argument("--axis", choices=("buffer", "mrtt", "target"), required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--scheme", choices=sorted(SCHEMES), default="cubic")
    p_sweep.add_argument("--trace", required=True)
    p_sweep.add_argument("--plugin", default=None)
    p_sweep.add_argument("--target", type=float, default=None)
    p_sweep.add_argument("--duration-s", type=float, default=None)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("-o", "--out", required=True)
    _add_sim_flags(p_sweep)

    p_rep = sub.add_parser("report", help="render figures from CSV outputs")
    p_rep.add_argument("--kind", choices=("curve", "sweep", "episode"), required=True)
    p_rep.add_argument("input", help="CSV produced by train/sweep/eval --save-log")
    p_rep.add_argument("-o", "--out", default=None,
                       help="PNG path (default: alongside the input)")
    p_rep.add_argument("--target", type=float, default=None,
                       help="draw the delay target line (curve reports)")

    return top


# -- subcommand bodies ---------------------------------------------------------

def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise SystemExit(f"error: bad --hidden {text!r}") from None
    if not dims:
        raise SystemExit("error: --hidden needs at least one width")
    return dims


def cmd_trace_gen(args) -> int:
    cfg = SynthTraceConfig(duration_s=args.duration, target_mean_mbps=args.mean,
                           target_std_mbps=args.std, min_rate_mbps=args.min_rate,
                           max_rate_mbps=args.max_rate, dwell_ms=args.dwell_ms,
                           seed=args.seed)
    trace = generate_synthetic_trace(cfg)
    out = _resolve_out(args.out)
    save_trace(trace, out)
    print(f"wrote {out} ({len(trace)} opportunities, "
          f"{trace.mean_rate_mbps():.2f} Mbps mean)")
    return 0


def cmd_trace_stats(args) -> int:
    trace = load_trace(args.trace)
    stats = trace_capacity_stats(trace, bucket_ms=args.bucket_ms)
    text = stats.CSV_HEADER + "\n" + stats.csv_row() + "\n"
    sys.stdout.write(text)
    out = _resolve_out(args.out)
    if out is not None:
        out.write_text(text)
    return 0


def _sim_config(args, episode_ms: int) -> SimConfig:
    return SimConfig(mrtt_ms=args.mrtt, buffer_bytes=args.buffer,
                     per_flow_queues=not args.shared_queue, episode_ms=episode_ms)


def cmd_train(args) -> int:
    trace = load_trace(args.trace)
    sim = _sim_config(args, episode_ms=int(args.episode_s * 1000))
    mode = "direct" if args.scheme == "clean_slate_drl" else "cap"
    use_kernel = not args.no_kernel

    if args.resume:
        agent = ddpg.load_agent(args.resume)
        if agent.cfg.m != args.m:
            raise SystemExit(f"error: checkpoint m={agent.cfg.m} != --m {args.m}")
        use_kernel = agent.cfg.use_kernel
    else:
        acfg = ddpg.AgentConfig(state_dim=5 * args.m, hidden=_parse_hidden(args.hidden),
                                m=args.m, target_ms=args.target,
                                use_kernel=use_kernel)
        agent = ddpg.Agent(acfg, rng=named_rng(args.seed, "net-init"))

    out_dir = _resolve_out(os.path.join(args.out_dir, "checkpoint.bin")).parent
    ckpt_path = out_dir / "checkpoint.bin"
    curve_path = out_dir / "curve.csv"

    env_factory = envs.training_env_factory(trace, args.scheme, args.target, sim,
                                            m=args.m, use_kernel=use_kernel,
                                            mode=mode, episode_s=args.episode_s)
    eval_sim = _sim_config(args, episode_ms=min(trace.period_ms, 120_000))
    eval_fn = envs.make_eval_fn(trace, args.scheme, args.target, eval_sim, m=args.m,
                                use_kernel=use_kernel, mode=mode)
    tcfg = ddpg.TrainConfig(total_steps=args.steps, warmup_steps=args.warmup,
                            cold_start_steps=args.cold_start,
                            eval_every_steps=args.eval_every, seed=args.seed)

    def log_fn(step, delay, util, mean_r):
        print(f"step {step}: avg_delay={delay:.1f}ms utilization={util:.3f} "
              f"mean_reward={mean_r:.3f}", flush=True)

    curve = ddpg.train(agent, env_factory, tcfg, eval_fn=eval_fn, log_fn=log_fn)
    ddpg.save_agent(agent, ckpt_path)
    metrics.write_csv(curve, ddpg.CURVE_COLUMNS, curve_path)
    print(f"wrote {ckpt_path} and {curve_path}")
    return 0


def _load_plugin(args):
    """Returns (agent, target_ms, use_kernel) or (None, target, True)."""
    if args.plugin is None:
        return None, (args.target if args.target is not None else 50.0), True
    agent = ddpg.load_agent(args.plugin)
    target = args.target if args.target is not None else agent.cfg.target_ms
    return agent, target, agent.cfg.use_kernel


def _make_shim(agent, target, use_kernel, mode):
    return CapShim(target, policy=agent.policy(), m=agent.cfg.m,
                   scales=agent.cfg.scales, use_kernel=use_kernel, mode=mode)


def cmd_eval(args) -> int:
    trace = load_trace(args.trace)
    duration_s = args.duration_s if args.duration_s else trace.period_ms / 1000.0
    sim = _sim_config(args, episode_ms=int(duration_s * 1000))
    agent, target, use_kernel = _load_plugin(args)
    mode = "direct" if args.scheme == "clean_slate_drl" else "cap"
    if args.scheme == "clean_slate_drl" and agent is None:
        raise SystemExit("error: clean_slate_drl requires --plugin (an attached agent)")

    specs = []
    for i in range(args.flows):
        shim = _make_shim(agent, target, use_kernel, mode) if agent else None
        specs.append(FlowSpec(make_scheme(args.scheme), shim,
                              start_ms=int(i * args.stagger_s * 1000)))
    log = run_episode(specs, trace, sim, seed=args.seed)

    rows = []
    for i in range(args.flows):
        fm = metrics.flow_metrics(log, i)
        rows.append({"scheme": args.scheme,
                     "plugin": Path(args.plugin).name if args.plugin else "",
                     "target_ms": target if agent else "", "flow": i,
                     "avg_delay_ms": fm.avg_delay_ms,
                     "avg_queuing_delay_ms": fm.avg_queuing_delay_ms,
                     "p95_delay_ms": fm.p95_delay_ms,
                     "throughput_mbps": fm.throughput_bps / 1e6,
                     "utilization": fm.utilization,
                     "jain_index": ""})
    if args.flows > 1:
        fairness = metrics.fairness_report(log)
        for row in rows:
            row["jain_index"] = fairness.jain

    header = ",".join(EVAL_COLUMNS)
    lines = [header] + [",".join(metrics.csv_cell(r[c]) for c in EVAL_COLUMNS) for r in rows]
    print("\n".join(lines))
    out = _resolve_out(args.out)
    if out is not None:
        out.write_text("\n".join(lines) + "\n")
    if args.save_log:
        prefix = _resolve_out(args.save_log)
        log.to_csv(str(prefix) + ".csv")
        log.to_npz(str(prefix) + ".npz")
    return 0


def cmd_sweep(args) -> int:
    trace = load_trace(args.trace)
    duration_s = args.duration_s if args.duration_s else trace.period_ms / 1000.0
    sim = _sim_config(args, episode_ms=int(duration_s * 1000))
    agent, target, use_kernel = _load_plugin(args)
    mode = "direct" if args.scheme == "clean_slate_drl" else "cap"

    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise SystemExit(f"error: bad --values {args.values!r}") from None
    if not values:
        raise SystemExit("error: --values must be a non-empty comma-separated list")

    axis = {"buffer": "buffer_bytes", "mrtt": "mrtt_ms", "target": "target_ms"}[args.axis]

    def scheme_factory():
        return make_scheme(args.scheme)

    shim_factory = None
    if agent is not None:
        def shim_factory(target_override):
            return _make_shim(agent, target_override if target_override is not None
                              else target, use_kernel, mode)

    rows = metrics.sweep(axis, values, scheme_factory, shim_factory, trace, sim)
    out = _resolve_out(args.out)
    metrics.write_csv(rows, metrics.SWEEP_COLUMNS, out)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def cmd_report(args) -> int:
    src = Path(args.input)
    out = _resolve_out(args.out) if args.out else src.with_suffix(".png")
    if args.kind == "curve":
        report.plot_learning_curve(src, out, target_ms=args.target)
    elif args.kind == "sweep":
        report.plot_sweep(src, out)
    else:
        report.plot_episode(src, out)
    print(f"wrote {out}")
    return 0


# -- entry point -----------------------------------------------------------------

def _inject_config(argv: list[str]) -> list[str]:
    """Splice `key=value` config lines in as flags ahead of explicit ones."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        path = argv[i + 1]
    except IndexError:
        return argv  # argparse will report the missing value
    extra: list[str] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                extra.append(f"--{key}")
        else:
            extra.extend([f"--{key}", value])
    rest = argv[:i] + argv[i + 2:]
    # insert after the (sub)command tokens so they apply to that parser
    split = 0
    if rest and not rest[0].startswith("-"):
        split = 1
        if rest[0] == "trace" and len(rest) > 1 and not rest[1].startswith("-"):
            split = 2
    return rest[:split] + extra + rest[split:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _inject_config(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "trace":
            if args.trace_command == "gen":
                return cmd_trace_gen(args)
            return cmd_trace_stats(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "report":
            return cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
