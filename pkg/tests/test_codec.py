import json

import pytest
from hypothesis import given, strategies as st

from layered_crdt import codec
from layered_crdt.core import Envelope
from layered_crdt.ordering import Couple, PositionId
from layered_crdt.sets import SetMessage, Tag

scalars = st.none() | st.booleans() | st.integers() | st.text(max_size=8) | st.binary(max_size=8)
hashables = st.recursive(scalars, lambda inner: st.tuples(inner, inner) | st.frozensets(inner, max_size=3),
                         max_leaves=8)
values = st.recursive(
    hashables,
    lambda inner: st.lists(inner, max_size=4).map(tuple) | st.dictionaries(hashables, inner, max_size=3),
    max_leaves=12,
)


@given(values)
def test_binary_roundtrip(v):
    assert codec.loads(codec.dumps(v)) == v


@given(values)
def test_json_roundtrip(v):
    text = codec.json_dumps(codec.to_json(v))
    assert codec.from_json(json.loads(text)) == v


@given(st.frozensets(st.integers() | st.text(max_size=4), max_size=8))
def test_set_encoding_is_order_independent(s):
    items = list(s)
    assert codec.dumps(frozenset(reversed(items))) == codec.dumps(s)
    assert codec.dumps(set(items)) == codec.dumps(s)


@given(values)
def test_size_helpers(v):
    assert codec.size(v) == len(codec.dumps(v))


def test_container_size_matches_encoding():
    for n in (0, 1, 127, 128, 300):
        t = tuple(range(n))
        body = sum(codec.size(i) for i in t)
        assert codec.container_size(n, body) == codec.size(t)


def test_varint_boundaries():
    for n, width in ((0, 1), (127, 1), (128, 2), (16383, 2), (16384, 3)):
        assert codec.varint_size(n) == width


def test_known_bytes():
    assert codec.dumps(None) == b"\x00"
    assert codec.dumps(True) == b"\x02"
    assert codec.dumps(-1) == b"\x03\x01"
    assert codec.dumps("a") == b"\x04\x01a"
    assert codec.dumps((1, 2)) == b"\x06\x02\x03\x02\x03\x04"


def test_records_roundtrip():
    c = Couple("x", PositionId(((5, 1, 2),)))
    msg = SetMessage("add", (c,), frozenset({Tag(1, 3)}))
    env = Envelope(1, 4, msg, "main")
    back = codec.loads(codec.dumps(env))
    assert back == env and type(back) is Envelope
    assert type(back.payload) is SetMessage
    assert type(back.payload.element[0]) is Couple
    assert back.payload.element[0].pi.components == ((5, 1, 2),)
    assert codec.from_json(codec.to_json(env)) == env


def test_cached_record_encoding_is_stable():
    c = Couple("x", PositionId(((5, 1, 2),)))
    first = codec.dumps(c)
    assert codec.dumps(c) == first
    assert codec.dumps((c, c)) == codec.dumps((Couple("x", PositionId(((5, 1, 2),))),) * 2)


@pytest.mark.parametrize("data", [b"", b"\x04\x05ab", b"\x06\x02\x03\x02", b"\xff", b"\x03\x80"])
def test_malformed_input(data):
    with pytest.raises(codec.CodecError):
        codec.loads(data)


def test_trailing_bytes_and_unknown_record():
    with pytest.raises(codec.CodecError, match="trailing"):
        codec.loads(b"\x00\x00")
    bogus = b"\x09" + codec.dumps("nope") + codec.dumps(())
    with pytest.raises(codec.CodecError, match="unknown record"):
        codec.loads(bogus)
    with pytest.raises(codec.CodecError):
        codec.dumps(object())


def test_invalid_set_message_rejected_on_decode():
    bad = SetMessage("add", "a", frozenset({Tag(1, 1), Tag(1, 2)}))
    with pytest.raises(ValueError):
        codec.loads(codec.dumps(bad))
    with pytest.raises(ValueError):
        SetMessage.from_json({"kind": "frob", "element": "a", "delta": 1})
