"""Canonical value encodings shared by messages, traces and state snapshots.

Two encodings are provided for the same value domain: ``None``, ``bool``,
``int``, ``str``, ``bytes``, tuples (lists encode as tuples), frozensets,
dicts and registered record types.

Binary layout (one tag byte, then the body)::

    0x00 None          0x01 False          0x02 True
    0x03 int           zigzag LEB128 varint
    0x04 str           varint length + UTF-8
    0x05 bytes         varint length + raw
    0x06 tuple         varint count + items
    0x07 dict          varint count + (key, value) pairs, sorted by key encoding
    0x08 set           varint count + items, sorted by item encoding
    0x09 record        str type name + tuple of fields

Sets and dicts are sorted by their encoded form, so equal values always
produce identical bytes.
"""

from __future__ import annotations

import json
from typing import Any, Callable

_NONE, _FALSE, _TRUE, _INT, _STR, _BYTES, _TUPLE, _DICT, _SET, _RECORD = range(10)

_RECORDS: dict[str, tuple[type, Callable[..., Any]]] = {}


class CodecError(ValueError):
    pass


def record(name: str, cache: bool = False):
    """Class decorator registering a record type under ``name``.

    The class must provide ``_codec_fields(self) -> tuple`` and accept those
    fields positionally in its constructor (or define ``_codec_build``).
    With ``cache=True`` (immutable classes only) the encoding is memoized in
    an ``_enc`` attribute that instances initialise to ``None``.
    """

    def wrap(cls):
        build = getattr(cls, "_codec_build", cls)
        cls._codec_name = name
        cls._codec_cache = cache
        _RECORDS[name] = (cls, build)
        return cls

    return wrap


def _varint(n: int, out: bytearray) -> None:
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def _encode(value: Any, out: bytearray) -> None:
    t = type(value)
    if t is tuple or t is list:
        out.append(_TUPLE)
        _varint(len(value), out)
        for item in value:
            _encode(item, out)
    elif value is None:
        out.append(_NONE)
    elif value is True:
        out.append(_TRUE)
    elif value is False:
        out.append(_FALSE)
    elif type(value) is int:
        out.append(_INT)
        _varint((value << 1) if value >= 0 else ((-value << 1) - 1), out)
    elif type(value) is str:
        raw = value.encode("utf-8")
        out.append(_STR)
        _varint(len(raw), out)
        out += raw
    elif isinstance(value, (bytes, bytearray)):
        out.append(_BYTES)
        _varint(len(value), out)
        out += value
    elif hasattr(value, "_codec_name"):
        if value._codec_cache:
            enc = value._enc
            if enc is None:
                enc = value._enc = _record_bytes(value)
            out += enc
        else:
            out += _record_bytes(value)
    elif isinstance(value, (tuple, list)):
        out.append(_TUPLE)
        _varint(len(value), out)
        for item in value:
            _encode(item, out)
    elif isinstance(value, dict):
        pairs = sorted((dumps(k), dumps(v)) for k, v in value.items())
        out.append(_DICT)
        _varint(len(pairs), out)
        for k, v in pairs:
            out += k
            out += v
    elif isinstance(value, (set, frozenset)):
        items = sorted(dumps(v) for v in value)
        out.append(_SET)
        _varint(len(items), out)
        for item in items:
            out += item
    else:
        raise CodecError(f"cannot encode {type(value).__name__}")


def _record_bytes(value) -> bytes:
    out = bytearray((_RECORD,))
    _encode(value._codec_name, out)
    _encode(tuple(value._codec_fields()), out)
    return bytes(out)


def dumps(value: Any) -> bytes:
    out = bytearray()
    _encode(value, out)
    return bytes(out)


# Size arithmetic, for callers that cache the sizes of the parts of a
# container: the encoded size never depends on the order of its items.


def varint_size(n: int) -> int:
    return 1 if n < 0x80 else (n.bit_length() + 6) // 7


def container_size(count: int, body: int) -> int:
    """Encoded size of a tuple, set or dict with ``count`` items whose encodings total ``body`` bytes."""
    return 1 + varint_size(count) + body


def size(value: Any) -> int:
    return len(dumps(value))


def _read_varint(data: bytes, i: int) -> tuple[int, int]:
    shift = n = 0
    while True:
        if i >= len(data):
            raise CodecError("truncated varint")
        b = data[i]
        i += 1
        n |= (b & 0x7F) << shift
        if not b & 0x80:
            return n, i
        shift += 7


def _decode(data: bytes, i: int) -> tuple[Any, int]:
    if i >= len(data):
        raise CodecError("truncated value")
    tag = data[i]
    i += 1
    if tag == _NONE:
        return None, i
    if tag == _FALSE:
        return False, i
    if tag == _TRUE:
        return True, i
    if tag == _INT:
        z, i = _read_varint(data, i)
        return (z >> 1) if not z & 1 else -((z + 1) >> 1), i
    if tag in (_STR, _BYTES):
        n, i = _read_varint(data, i)
        if i + n > len(data):
            raise CodecError("truncated string")
        raw = data[i : i + n]
        return (raw.decode("utf-8") if tag == _STR else bytes(raw)), i + n
    if tag in (_TUPLE, _SET):
        n, i = _read_varint(data, i)
        items = []
        for _ in range(n):
            item, i = _decode(data, i)
            items.append(item)
        return (tuple(items) if tag == _TUPLE else frozenset(items)), i
    if tag == _DICT:
        n, i = _read_varint(data, i)
        result = {}
        for _ in range(n):
            k, i = _decode(data, i)
            v, i = _decode(data, i)
            result[k] = v
        return result, i
    if tag == _RECORD:
        name, i = _decode(data, i)
        fields, i = _decode(data, i)
        try:
            _, build = _RECORDS[name]
        except KeyError:
            raise CodecError(f"unknown record type {name!r}") from None
        return build(*fields), i
    raise CodecError(f"bad tag byte {tag:#x}")


def loads(data: bytes) -> Any:
    value, end = _decode(data, 0)
    if end != len(data):
        raise CodecError(f"{len(data) - end} trailing bytes")
    return value


# JSON form ---------------------------------------------------------------
#
# Tuples map to arrays; the remaining non-JSON types use single-key objects:
# {"$set": [...]}, {"$map": [[k, v], ...]}, {"$bytes": "<hex>"} and
# {"$": "<record name>", "v": [fields...]}.


def to_json(value: Any) -> Any:
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if hasattr(value, "_codec_name"):
        return {"$": value._codec_name, "v": [to_json(f) for f in value._codec_fields()]}
    if isinstance(value, (tuple, list)):
        return [to_json(v) for v in value]
    if isinstance(value, (bytes, bytearray)):
        return {"$bytes": bytes(value).hex()}
    if isinstance(value, (set, frozenset)):
        return {"$set": [to_json(v) for v in sorted(value, key=dumps)]}
    if isinstance(value, dict):
        items = sorted(value.items(), key=lambda kv: dumps(kv[0]))
        return {"$map": [[to_json(k), to_json(v)] for k, v in items]}
    raise CodecError(f"cannot encode {type(value).__name__}")


def from_json(obj: Any) -> Any:
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, list):
        return tuple(from_json(v) for v in obj)
    if isinstance(obj, dict):
        if "$set" in obj:
            return frozenset(from_json(v) for v in obj["$set"])
        if "$map" in obj:
            return {from_json(k): from_json(v) for k, v in obj["$map"]}
        if "$bytes" in obj:
            return bytes.fromhex(obj["$bytes"])
        if "$" in obj:
            try:
                _, build = _RECORDS[obj["$"]]
            except KeyError:
                raise CodecError(f"unknown record type {obj['$']!r}") from None
            return build(*(from_json(v) for v in obj["v"]))
    raise CodecError(f"unexpected JSON value {obj!r}")


def json_dumps(obj: Any) -> str:
    """Compact, key-sorted JSON text (stable across runs)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
