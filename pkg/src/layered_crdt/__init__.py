"""Layered replicated data types.

A replica is a stack of layers: a convergent set at the bottom handles
replication, and adaptation layers above it (sequence ordering, tree
connection policies, ordered trees, acyclic graphs) compute constrained views
from the set without ever mutating it.
"""

from .core import ADD, DEL, Envelope, InvalidOperation, Layer, Replica, VersionVector, state_digest
from .sets import CounterSet, ORSet
from .stacks import SHIPPED, StackSpecError, parse

__all__ = [
    "ADD",
    "DEL",
    "CounterSet",
    "Envelope",
    "InvalidOperation",
    "Layer",
    "ORSet",
    "Replica",
    "SHIPPED",
    "StackSpecError",
    "VersionVector",
    "parse",
    "state_digest",
]

__version__ = "0.1.0"
