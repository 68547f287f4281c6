import pytest
from hypothesis import settings

from layered_crdt import stacks, tree
from layered_crdt.core import Replica
from layered_crdt.sets import ORSet

settings.register_profile("default", deadline=None)
settings.load_profile("default")


class NoPurgeReappear(tree.ReappearConnect):
    """Broken on purpose: ghosts and removed leaves are never purged."""

    def _prune(self, node, path=None):
        pass


def _broken(replica_id, seed):
    s = ORSet(replica_id)
    return Replica(replica_id, NoPurgeReappear(s), {"main": s})


@pytest.fixture
def broken_stack():
    stacks.register("broken-tree", _broken, workload="tree")
    yield "broken-tree"
    stacks.unregister("broken-tree")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
