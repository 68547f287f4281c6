"""Small manual network for scenario tests."""

from __future__ import annotations

import itertools

from layered_crdt import stacks
from layered_crdt.sets import SetOperation

ADD_A, DEL_A = SetOperation("add", "a"), SetOperation("del", "a")


class Net:
    """Replicas of one stack plus the envelopes each has sent so far."""

    def __init__(self, spec: str, n: int = 2, seed: int = 0):
        factory = stacks.parse(spec, seed=seed)
        self.replicas = [factory(i) for i in range(n)]
        self.sent: list[list] = [[] for _ in range(n)]

    def __getitem__(self, i):
        return self.replicas[i]

    def do(self, i: int, op):
        out = self.replicas[i].modify(op)
        self.sent[i].extend(out)
        return out

    def sync(self):
        for origin, envs in enumerate(self.sent):
            for r in self.replicas:
                for env in envs:
                    r.deliver(env)

    def snapshots(self):
        return [r.snapshot() for r in self.replicas]


def add_remove_schedules():
    """All orders of: r0 local op, r1 local op, r0->r1 delivery, r1->r0 delivery."""
    events = ["op0", "op1", "to1", "to0"]
    for order in itertools.permutations(events):
        if order.index("op0") < order.index("to1") and order.index("op1") < order.index("to0"):
            yield order


def run_add_remove(kind, preload):
    """r0 adds 'a' while r1 removes it; with ``preload`` both start with 'a'."""
    results = []
    for order in add_remove_schedules():
        net = Net(f"set(set={kind})")
        if preload:
            net.do(0, ADD_A)
            net.sync()
            net.sent = [[], []]
        sent = {}
        observed = None
        for ev in order:
            if ev == "op0":
                sent[0] = net[0].modify(ADD_A)
            elif ev == "op1":
                observed = "a" in net[1].lookup()
                sent[1] = net[1].modify(DEL_A)
            elif ev == "to1":
                for env in sent[0]:
                    net[1].deliver(env)
            else:
                for env in sent[1]:
                    net[0].deliver(env)
        results.append((order, observed, net[0].lookup(), net[1].lookup()))
    return results
