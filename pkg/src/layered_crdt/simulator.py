"""Deterministic multi-replica harness.

A trace is a list of abstract operations: each names a replica, an
insert/delete kind and two uniform numbers ``u, v`` in ``[0, 1)``. A
workload adapter turns them into a concrete operation against the
replica's current view at replay time (``u`` picks the target uniformly
among the currently valid positions), which keeps one trace file usable for
every stack.

Delivery runs on a discrete-event queue over logical ticks. Each envelope
reaches every other replica after a delay drawn uniformly from
``[delay_min, delay_max]``; arrivals on one (origin, destination) channel
never overtake each other, so delivery is per-origin FIFO.
"""

from __future__ import annotations

import csv
import gc
import heapq
import io
import json
import random
import statistics
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Sequence

from . import codec
from . import dag as dag_mod
from . import ordered_tree as otree
from . import ordering as seq
from . import tree as tree_mod
from .core import ADD, DEL, Envelope, Replica, walk_layers
from .sets import SetOperation

TRACE_SCHEMA = "layered-crdt/trace/v1"
METRICS_SCHEMA = "layered-crdt/metrics/v1"
INSERT, DELETE = "insert", "delete"
LOCAL, REMOTE, STATE = "local", "remote", "state"

Factory = Callable[[int], Replica]


class TraceError(ValueError):
    pass


@dataclass
class SimConfig:
    ops: int = 1000
    insert_pct: float = 88.0
    replicas: int = 4
    delay_min: int = 1
    delay_max: int = 10
    seed: int = 0
    alphabet: str = "abcdefghijklmnopqrstuvwxyz"

    def validate(self) -> None:
        if self.ops < 0:
            raise ValueError("ops must be >= 0")
        if not 0 <= self.insert_pct <= 100:
            raise ValueError("insert_pct must be in [0, 100]")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not 0 <= self.delay_min <= self.delay_max:
            raise ValueError("need 0 <= delay_min <= delay_max")
        if not self.alphabet:
            raise ValueError("alphabet must not be empty")


@dataclass(frozen=True)
class TraceOp:
    replica: int
    time: int
    kind: str  # insert | delete
    u: float
    v: float
    label: str


def generate_trace(config: SimConfig) -> list[TraceOp]:
    config.validate()
    rng = random.Random(f"trace:{config.seed}")
    out = []
    for t in range(config.ops):
        replica = rng.randrange(config.replicas)
        kind = INSERT if rng.random() * 100 < config.insert_pct else DELETE
        out.append(TraceOp(replica, t, kind, rng.random(), rng.random(), rng.choice(config.alphabet)))
    return out


def dump_trace(config: SimConfig, trace: Iterable[TraceOp]) -> str:
    lines = [json.dumps({"schema": TRACE_SCHEMA, "config": asdict(config)}, sort_keys=True)]
    lines.extend(json.dumps(asdict(op), sort_keys=True) for op in trace)
    return "\n".join(lines) + "\n"


def write_trace(path, config: SimConfig, trace: Iterable[TraceOp]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_trace(config, trace))


def read_trace(path) -> tuple[SimConfig, list[TraceOp]]:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise TraceError(f"{path}: empty trace file")
    try:
        header = json.loads(lines[0])
        if header.get("schema") != TRACE_SCHEMA:
            raise TraceError(f"{path}: unsupported schema {header.get('schema')!r}")
        config = SimConfig(**header["config"])
        trace = [TraceOp(**json.loads(line)) for line in lines[1:]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise TraceError(f"{path}: malformed trace ({exc})") from None
    config.validate()
    for op in trace:
        if not 0 <= op.replica < config.replicas or op.kind not in (INSERT, DELETE):
            raise TraceError(f"{path}: bad trace line {op}")
    return config, trace


# -- workloads ---------------------------------------------------------------


def uniform_choice(u: float, n: int) -> int:
    """Default chooser: index in ``range(n)`` from ``u`` in ``[0, 1)``."""
    return min(int(u * n), n - 1)


class Workload:
    """Turns abstract trace operations into concrete ones for one stack kind."""

    def __init__(self, chooser: Callable[[float, int], int] = uniform_choice):
        self.choose = chooser

    def realize(self, replica: Replica, op: TraceOp, index: int) -> Any:
        raise NotImplementedError

    @staticmethod
    def fresh_label(op: TraceOp, taken, index: int):
        if op.label not in taken:
            return op.label
        return f"{op.label}{index}"


class SetWorkload(Workload):
    def realize(self, replica, op, index):
        elems = sorted(replica.lookup(), key=codec.dumps)
        if op.kind == DELETE and elems:
            return SetOperation(DEL, elems[self.choose(op.u, len(elems))])
        return SetOperation(ADD, self.fresh_label(op, set(elems), index))


class SequenceWorkload(Workload):
    def realize(self, replica, op, index):
        n = len(replica.top)
        if op.kind == DELETE and n:
            return seq.delete(self.choose(op.u, n))
        return seq.insert(self.choose(op.u, n + 1), op.label)


class TreeWorkload(Workload):
    def realize(self, replica, op, index):
        root = replica.top.tree()
        nodes = list(root.walk())  # root first, then sorted preorder
        if op.kind == DELETE and len(nodes) > 1:
            return tree_mod.remove(nodes[1 + self.choose(op.u, len(nodes) - 1)].path())
        parent = nodes[self.choose(op.u, len(nodes))]
        return tree_mod.add(parent.path() + (self.fresh_label(op, parent.children, index),))


class OrderedTreeWorkload(Workload):
    def _nodes(self, top):
        if getattr(top, "incremental", False):
            return top.node_count(), top.node
        nodes = [n for n in top.tree().walk() if n.parent is not None]
        return len(nodes), nodes.__getitem__

    def realize(self, replica, op, index):
        top = replica.top
        n, node = self._nodes(top)
        if op.kind == DELETE and n:
            return otree.delete(node(self.choose(op.u, n)).int_path())
        k = self.choose(op.u, n + 1)
        parent = top.tree() if k == n else node(k)
        j = 1 + self.choose(op.v, len(parent.children) + 1)
        return otree.insert(parent.int_path() + (j,), op.label)


class DagWorkload(Workload):
    """Inserts add a vertex or an edge; deletes remove an edge or a vertex."""

    def realize(self, replica, op, index):
        view = replica.lookup()
        ids = sorted(view.vertices, key=tree_mod.label_key)
        if op.kind == DELETE and ids:
            if view.retained and op.v < 0.5:
                e = view.retained[self.choose(op.u, len(view.retained))]
                return dag_mod.remove_edge(e.src, e.dst)
            return dag_mod.remove_vertex(ids[self.choose(op.u, len(ids))])
        if len(ids) >= 2 and op.u >= 0.5:
            a = ids[self.choose(op.v, len(ids))]
            b = ids[self.choose((op.u - 0.5) * 2, len(ids))]
            if a != b:
                if view.reaches(b, a):
                    a, b = b, a
                if (a, b) not in view.edges():
                    return dag_mod.add_edge(a, b)
        return dag_mod.add_vertex(f"{op.label}{replica.id}.{index}")


WORKLOADS: dict[str, type[Workload]] = {
    "set": SetWorkload,
    "sequence": SequenceWorkload,
    "tree": TreeWorkload,
    "ordered-tree": OrderedTreeWorkload,
    "dag": DagWorkload,
}


def workload_for(factory, chooser=None) -> Workload:
    name = getattr(factory, "workload", None)
    if name not in WORKLOADS:
        raise ValueError(f"factory has no known workload (got {name!r})")
    return WORKLOADS[name](chooser) if chooser else WORKLOADS[name]()


# -- replay ------------------------------------------------------------------


@dataclass
class MetricsRecord:
    op_index: int
    replica: int
    kind: str  # local | remote | state
    nanos: int | None = None
    state_bytes: int | None = None


@dataclass
class ReplayResult:
    records: list[MetricsRecord]
    snapshots: list
    converged: bool
    envelopes: int
    wall_seconds: float
    counterexample: dict | None = None
    run_seconds: list[float] = field(default_factory=list)

    def of_kind(self, kind: str) -> list[MetricsRecord]:
        return [r for r in self.records if r.kind == kind]

    def summary(self) -> dict:
        out: dict[str, Any] = {"converged": self.converged, "envelopes": self.envelopes,
                               "wall_seconds": round(self.wall_seconds, 3)}
        for kind in (LOCAL, REMOTE):
            ns = [r.nanos for r in self.of_kind(kind)]
            out[kind] = {
                "count": len(ns),
                "median_ms": statistics.median(ns) / 1e6 if ns else 0.0,
                "max_ms": max(ns) / 1e6 if ns else 0.0,
            }
        return out


def first_difference(a, b, where: str = "$") -> str | None:
    """Location of the first difference between two JSON-like values."""
    if type(a) is not type(b):
        return where
    if isinstance(a, dict):
        for k in sorted(set(a) | set(b), key=str):
            if k not in a or k not in b:
                return f"{where}.{k}"
            d = first_difference(a[k], b[k], f"{where}.{k}")
            if d:
                return d
        return None
    if isinstance(a, list):
        for i, (x, y) in enumerate(zip(a, b)):
            d = first_difference(x, y, f"{where}[{i}]")
            if d:
                return d
        return f"{where}[{min(len(a), len(b))}]" if len(a) != len(b) else None
    return None if a == b else where


def divergence(snapshots: Sequence, ids: Sequence[int]) -> dict | None:
    ref = snapshots[0]
    for rid, snap in zip(ids[1:], snapshots[1:]):
        if snap != ref:
            return {
                "replicas": [ids[0], rid],
                "first_difference": first_difference(ref, snap),
                "expected": ref,
                "got": snap,
            }
    return None


class _Clock:
    """Per-channel FIFO delay model."""

    def __init__(self, config: SimConfig):
        self.rng = random.Random(f"delay:{config.seed}")
        self.lo, self.hi = config.delay_min, config.delay_max
        self.last: dict[tuple[int, int], int] = {}
        self.counter = 0

    def schedule(self, heap, now: int, env: Envelope, dest: int) -> None:
        arrival = now + self.rng.randint(self.lo, self.hi)
        key = (env.origin, dest)
        arrival = max(arrival, self.last.get(key, arrival))
        self.last[key] = arrival
        self.counter += 1
        heapq.heappush(heap, (arrival, self.counter, dest, env))


def _timed_deliver(replica: Replica, env: Envelope, perf=time.perf_counter_ns) -> int:
    t0 = perf()
    replica.deliver(env)
    return perf() - t0


def _timed_modify(replica: Replica, op, perf=time.perf_counter_ns) -> tuple[list[Envelope], int]:
    t0 = perf()
    out = replica.modify(op)
    return out, perf() - t0


def _replay_once(trace, factory, config, workload, sample_every, threaded, on_sample=None) -> ReplayResult:
    n = config.replicas
    replicas = [factory(r) for r in range(n)]
    clock = _Clock(config)
    heap: list = []
    records: list[MetricsRecord] = []
    envelopes = 0
    pool = _Pool(n) if threaded else None

    def flush(upto: int | None) -> None:
        batch = []
        while heap and (upto is None or heap[0][0] <= upto):
            batch.append(heapq.heappop(heap))
        if not batch:
            return
        if pool is None:
            for _, _, dest, env in batch:
                records.append(MetricsRecord(env_index[id(env)], dest, REMOTE, _timed_deliver(replicas[dest], env)))
            return
        # one thread per replica; each drains its own deliveries in queue order
        per_dest: dict[int, list] = {}
        for item in batch:
            per_dest.setdefault(item[2], []).append(item[3])
        results = pool.run({d: (lambda d=d, envs=envs: [_timed_deliver(replicas[d], e) for e in envs])
                            for d, envs in per_dest.items()})
        timings = {d: iter(ns) for d, ns in results.items()}
        for _, _, dest, env in batch:  # same record order as the single-threaded mode
            records.append(MetricsRecord(env_index[id(env)], dest, REMOTE, next(timings[dest])))

    env_index: dict[int, int] = {}  # id(envelope) -> generating op
    start = time.perf_counter()
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for i, op in enumerate(trace):
            flush(op.time)
            replica = replicas[op.replica]
            concrete = workload.realize(replica, op, i)
            if pool is None:
                out, ns = _timed_modify(replica, concrete)
            else:
                out, ns = pool.run({op.replica: lambda: _timed_modify(replica, concrete)})[op.replica]
            records.append(MetricsRecord(i, op.replica, LOCAL, ns))
            for env in out:
                envelopes += 1
                env_index[id(env)] = i
                for dest in range(n):
                    if dest != op.replica:
                        clock.schedule(heap, op.time, env, dest)
            if sample_every and (i + 1) % sample_every == 0:
                for r in replicas:
                    records.append(MetricsRecord(i, r.id, STATE, state_bytes=r.state_size()))
                if on_sample is not None:
                    on_sample(i, replicas)
        flush(None)
    finally:
        if gc_was_enabled:
            gc.enable()
        if pool is not None:
            pool.close()
    wall = time.perf_counter() - start
    snapshots = [r.snapshot() for r in replicas]
    cex = divergence(snapshots, [r.id for r in replicas])
    return ReplayResult(records, snapshots, cex is None, envelopes, wall, cex)


class _Pool:
    """One worker thread per replica, stepped in lock-step by the caller."""

    def __init__(self, n: int):
        self._jobs = [deque() for _ in range(n)]
        self._cv = threading.Condition()
        self._results: dict[int, Any] = {}
        self._closed = False
        self._threads = [threading.Thread(target=self._work, args=(i,), daemon=True) for i in range(n)]
        for t in self._threads:
            t.start()

    def _work(self, i: int) -> None:
        while True:
            with self._cv:
                while not self._jobs[i] and not self._closed:
                    self._cv.wait()
                if self._closed and not self._jobs[i]:
                    return
                job = self._jobs[i].popleft()
            result = job()
            with self._cv:
                self._results[i] = result
                self._cv.notify_all()

    def run(self, jobs: dict[int, Callable[[], Any]]) -> dict[int, Any]:
        """Run one job per listed replica concurrently; returns when all finish (the barrier)."""
        with self._cv:
            self._results = {}
            for i, job in jobs.items():
                self._jobs[i].append(job)
            self._cv.notify_all()
            while len(self._results) < len(jobs):
                self._cv.wait()
            return dict(self._results)

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()
        for t in self._threads:
            t.join()


def replay(
    trace: Sequence[TraceOp],
    factory: Factory,
    config: SimConfig,
    sample_every: int = 100,
    repeat: int = 1,
    threaded: bool = False,
    workload: Workload | None = None,
    on_sample: Callable[[int, list[Replica]], None] | None = None,
) -> ReplayResult:
    """Replay ``trace`` on ``config.replicas`` fresh stacks.

    With ``repeat > 1`` one warm-up run is discarded and each timing is the
    median over ``repeat`` further runs (state is identical across runs).
    ``on_sample(op_index, replicas)`` runs after each state sample of the
    last run.
    """
    workload = workload or workload_for(factory)
    runs = repeat + 1 if repeat > 1 else 1
    results = [
        _replay_once(trace, factory, config, workload, sample_every, threaded,
                     on_sample if k == runs - 1 else None)
        for k in range(runs)
    ]
    if repeat <= 1:
        results[0].run_seconds = [results[0].wall_seconds]
        return results[0]
    kept = results[1:]
    base = kept[0]
    base.run_seconds = [r.wall_seconds for r in kept]
    for k, rec in enumerate(base.records):
        if rec.nanos is not None:
            rec.nanos = int(statistics.median(r.records[k].nanos for r in kept))
    base.wall_seconds = statistics.median(r.wall_seconds for r in kept)
    return base


def metrics_csv(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={METRICS_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["opIndex", "replica", "kind", "nanos", "stateBytes"])
    for r in records:
        w.writerow([r.op_index, r.replica, r.kind, "" if r.nanos is None else r.nanos,
                    "" if r.state_bytes is None else r.state_bytes])
    return buf.getvalue()


def write_metrics(path, records: Iterable[MetricsRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_csv(records))


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, encoding="utf-8") as fh:
        tag = fh.readline().strip()
        if tag != f"# schema={METRICS_SCHEMA}":
            raise TraceError(f"{path}: unsupported metrics schema line {tag!r}")
        out = []
        for row in csv.DictReader(fh):
            out.append(MetricsRecord(
                int(row["opIndex"]), int(row["replica"]), row["kind"],
                int(row["nanos"]) if row["nanos"] else None,
                int(row["stateBytes"]) if row["stateBytes"] else None,
            ))
    return out


# -- interleaving checks -----------------------------------------------------


OBSERVER_BASE = 10_000


def oracle_mismatch(layer) -> str | None:
    """Compare an incremental layer with its declarative recomputation."""
    if isinstance(layer, seq.IncrementalSequenceLayer):
        if layer.couples() != layer.ordering.order(layer.inner.lookup()):
            return "sequence"
    elif isinstance(layer, otree.IncrementalOrderedTreeLayer):
        if layer.root.state() != otree.order_tree(layer.inner.lookup()).state():
            return "ordered-tree"
    elif isinstance(layer, tree_mod._IncrementalConnect):
        expect = tree_mod.connect_lookup(layer.inner.lookup(), layer.policy, layer.lost_found)
        if _decorated(layer.root) != _decorated(expect):
            return f"tree/{layer.policy}"
    return None


def _decorated(root) -> dict:
    return {n.path(): frozenset(n.paths) for n in root.walk()}


def incremental_mismatch(replica: Replica) -> str | None:
    for layer in walk_layers(replica.top):
        if getattr(layer, "incremental", False):
            bad = oracle_mismatch(layer)
            if bad:
                return bad
    return None


@dataclass
class Verdict:
    ok: bool
    schedules: int
    reference: Any = None
    counterexample: dict | None = None
    envelopes: list = field(default_factory=list, repr=False)


def _generate(trace, factory, config, workload, rng):
    """Run the trace under one random interleaving; returns replicas and envelopes."""
    n = config.replicas
    replicas = [factory(r) for r in range(n)]
    queues = {(o, d): deque() for o in range(n) for d in range(n) if o != d}
    log: list[Envelope] = []
    pending = deque(enumerate(trace))
    while pending or any(queues.values()):
        busy = [k for k, q in queues.items() if q]
        pick = rng.randrange(len(busy) + (1 if pending else 0))
        if pick == len(busy):
            i, op = pending.popleft()
            out = replicas[op.replica].modify(workload.realize(replicas[op.replica], op, i))
            log.extend(out)
            for env in out:
                for d in range(n):
                    if d != op.replica:
                        queues[(op.replica, d)].append(env)
        else:
            o, d = busy[pick]
            replicas[d].deliver(queues[(o, d)].popleft())
    return replicas, log


def random_fifo_order(log: Sequence[Envelope], rng: random.Random) -> list[Envelope]:
    """A uniformly chosen-at-each-step merge of the per-origin streams."""
    streams: dict[int, deque] = {}
    for env in log:
        streams.setdefault(env.origin, deque()).append(env)
    order = []
    live = sorted(streams)
    while live:
        o = live[rng.randrange(len(live))]
        order.append(streams[o].popleft())
        if not streams[o]:
            live.remove(o)
    return order


def interleave_check(
    trace: Sequence[TraceOp],
    factory: Factory,
    config: SimConfig,
    schedules: int = 20,
    seed: int = 0,
    check_oracle: bool = False,
    workload: Workload | None = None,
) -> Verdict:
    """Replay ``trace`` once, then re-deliver its envelopes under ``schedules`` orders.

    Every schedule builds a fresh observer replica that receives all
    envelopes (each origin's in order, origins interleaved at random); its
    final view must equal the generating replicas' common view. With
    ``check_oracle`` each incremental layer is compared with its declarative
    recomputation after every delivery.
    """
    workload = workload or workload_for(factory)
    rng = random.Random(f"check:{seed}")
    replicas, log = _generate(trace, factory, config, workload, rng)
    snaps = [r.snapshot() for r in replicas]
    cex = divergence(snaps, [r.id for r in replicas])
    if cex:
        cex["schedule"] = "generation"
        return Verdict(False, 0, snaps[0], cex, log)
    reference = snaps[0]
    entry = _schedule_entry
    for s in range(schedules):
        order = random_fifo_order(log, rng)
        observer = factory(OBSERVER_BASE + s)
        for step, env in enumerate(order):
            observer.deliver(env)
            if check_oracle:
                bad = incremental_mismatch(observer)
                if bad:
                    return Verdict(False, s, reference, {
                        "schedule": s, "layer": bad, "step": step,
                        "order": [entry(e) for e in order[: step + 1]],
                    }, log)
        got = observer.snapshot()
        if got != reference:
            return Verdict(False, s, reference, {
                "schedule": s,
                "order": [entry(e) for e in order],
                "first_difference": first_difference(reference, got),
                "expected": reference,
                "got": got,
            }, log)
    return Verdict(True, schedules, reference, None, log)


def _schedule_entry(env: Envelope) -> list:
    return [env.origin, env.seq, env.channel]
