"""Command-line front end: trace generation, replay and convergence checks.

Exit codes: 0 on success, 1 on divergence or a failed check, 2 on usage
errors (bad flags, unknown stack components, unreadable traces).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from pathlib import Path

from . import simulator as sim
from . import stacks

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "LAYERED_CRDT_SEED"
DEFAULT_STACK = "ordered-tree(connect=reappear,set=orset,pi=logoot)"

log = logging.getLogger("layered_crdt.cli")


class UsageError(Exception):
    pass


def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else _env_seed()


def _stack(text: str, seed: int) -> stacks.StackFactory:
    try:
        return stacks.parse(text, seed=seed)
    except stacks.StackSpecError as exc:
        raise UsageError(str(exc)) from None


def _config(**kwargs) -> sim.SimConfig:
    config = sim.SimConfig(**kwargs)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return config


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


# -- commands ----------------------------------------------------------------


def cmd_gen_trace(args) -> int:
    config = _config(ops=args.ops, insert_pct=args.insert_pct, replicas=args.replicas,
                     delay_min=args.delay_min, delay_max=args.delay_max, seed=_seed(args))
    trace = sim.generate_trace(config)
    if args.out == "-":
        sys.stdout.write(sim.dump_trace(config, trace))
    else:
        sim.write_trace(args.out, config, trace)
        inserts = sum(op.kind == sim.INSERT for op in trace)
        print(f"wrote {len(trace)} ops ({inserts} inserts) for {config.replicas} replicas to {args.out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        config, trace = sim.read_trace(args.trace)
    except OSError as exc:
        raise UsageError(f"cannot read trace: {exc}") from None
    except (sim.TraceError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.sample_every < 0 or args.repeat < 1:
        raise UsageError("--sample-every must be >= 0 and --repeat >= 1")
    factory = _stack(args.stack, args.seed if args.seed is not None else config.seed)
    result = sim.replay(trace, factory, config, sample_every=args.sample_every,
                        repeat=args.repeat, threaded=args.threaded)
    if args.metrics_out:
        sim.write_metrics(args.metrics_out, result.records)
    summary = {"stack": factory.spec, "ops": len(trace), "replicas": config.replicas, **result.summary()}
    print(json.dumps(summary, sort_keys=True))
    if not result.converged:
        out = args.counterexample_out or f"{args.metrics_out or args.trace}.counterexample.json"
        _write_json(out, {"stack": factory.spec, "trace": str(args.trace), **result.counterexample})
        print(f"replicas diverged; counterexample written to {out}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_check(args) -> int:
    if args.traces < 0 or args.schedules < 0:
        raise UsageError("--traces and --schedules must be >= 0")
    seed = _seed(args)
    specs = args.stack or list(stacks.SHIPPED)
    factories = [_stack(s, seed) for s in specs]
    failures = 0
    for factory in factories:
        ok = True
        for t in range(args.traces):
            config = _config(ops=args.ops, insert_pct=args.insert_pct, replicas=args.replicas,
                             seed=seed * 100_003 + t)
            trace = sim.generate_trace(config)
            verdict = sim.interleave_check(trace, factory, config, schedules=args.schedules,
                                           seed=config.seed, check_oracle=args.oracle)
            if not verdict.ok:
                ok = False
                failures += 1
                dump = {"stack": factory.spec, "trace_seed": config.seed,
                        "config": vars(config), **verdict.counterexample}
                if args.counterexample_out:
                    _write_json(args.counterexample_out, dump)
                print(f"FAIL {factory.spec} trace {t}: schedule {verdict.counterexample.get('schedule')}")
                print(json.dumps(dump, sort_keys=True, default=str))
                break
        if ok:
            print(f"ok   {factory.spec}: {args.traces} traces x {args.schedules} schedules")
    return EXIT_FAIL if failures else EXIT_OK


def cmd_stacks(args) -> int:
    for name, kind in stacks.KINDS.items():
        opts = ", ".join(
            f"{k}={'|'.join(allowed) if allowed else '<text>'} (default {default or 'none'})"
            for k, (allowed, default) in kind.options.items()
        )
        print(f"{name}: {opts}")
    print("shipped:")
    for spec in stacks.SHIPPED:
        print(f"  {spec}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    try:
        records = sim.read_metrics(args.metrics)
    except OSError as exc:
        raise UsageError(f"cannot read metrics: {exc}") from None
    except (sim.TraceError, ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    out = {}
    for kind in (sim.LOCAL, sim.REMOTE):
        ns = [r.nanos for r in records if r.kind == kind]
        out[kind] = {"count": len(ns),
                     "median_ms": statistics.median(ns) / 1e6 if ns else 0.0,
                     "max_ms": max(ns) / 1e6 if ns else 0.0}
    sizes = [r.state_bytes for r in records if r.kind == sim.STATE]
    out["state"] = {"samples": len(sizes), "last_bytes": sizes[-1] if sizes else None}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layered-crdt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings from the layers")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="generate a random operation trace")
    g.add_argument("--ops", type=int, default=1000)
    g.add_argument("--insert-pct", type=float, default=88.0)
    g.add_argument("--replicas", type=int, default=4)
    g.add_argument("--delay-min", type=int, default=1, help="minimum delivery delay in ticks")
    g.add_argument("--delay-max", type=int, default=10, help="maximum delivery delay in ticks")
    g.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV} or 0")
    g.add_argument("--out", required=True, help="output path, or - for stdout")
    g.set_defaults(func=cmd_gen_trace)

    r = sub.add_parser("replay", help="replay a trace, timing every operation")
    r.add_argument("--trace", required=True)
    r.add_argument("--stack", default=DEFAULT_STACK, help="stack expression, e.g. %(default)s")
    r.add_argument("--metrics-out", help="CSV file for per-operation metrics")
    r.add_argument("--sample-every", type=int, default=100,
                   help="measure state size every N operations (0 disables)")
    r.add_argument("--repeat", type=int, default=1,
                   help="with N > 1, discard a warm-up run and report medians of N runs")
    r.add_argument("--threaded", action="store_true", help="one thread per replica")
    r.add_argument("--seed", type=int, default=None, help="stack seed (defaults to the trace seed)")
    r.add_argument("--counterexample-out")
    r.set_defaults(func=cmd_replay)

    c = sub.add_parser("check", help="convergence check under random delivery schedules")
    c.add_argument("--stack", action="append", help="repeatable; defaults to every shipped stack")
    c.add_argument("--traces", type=int, default=100)
    c.add_argument("--ops", type=int, default=50)
    c.add_argument("--replicas", type=int, default=3)
    c.add_argument("--insert-pct", type=float, default=70.0)
    c.add_argument("--schedules", type=int, default=20)
    c.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV} or 0")
    c.add_argument("--oracle", action="store_true",
                   help="also compare incremental layers with their recomputation after each delivery")
    c.add_argument("--counterexample-out")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("stacks", help="list stack kinds and options")
    s.set_defaults(func=cmd_stacks)

    m = sub.add_parser("summarize", help="summarize a metrics CSV")
    m.add_argument("metrics")
    m.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
