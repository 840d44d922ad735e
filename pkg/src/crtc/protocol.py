"""Wire protocol: newline-delimited JSON messages with a closed type set.

Encoding is canonical (sorted keys, no extra whitespace) so identical
messages are byte-identical everywhere, which lets recorded traces serve
as golden files. Validation is strict: unknown types, missing or extra
fields, and wrong field types are all rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

PROTOCOL_VERSION = 1

EDIT_CLASSES = ("header", "body", "new_member", "new_reference", "release")
LOCK_KINDS = ("body", "defining")
REJECT_REASONS = ("unbuildable", "stale", "lock_violation")
CONFLICT_KINDS = ("both_changed", "deleted_upstream")


class MalformedFrame(ValueError):
    pass


class SchemaViolation(ValueError):
    pass


class UnsupportedVersion(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    type: str
    seq: int
    session: str
    body: dict
    v: int = PROTOCOL_VERSION


def _is_str(x):
    return isinstance(x, str)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_span(x):
    return (isinstance(x, list) and len(x) == 2 and all(_is_int(v) for v in x)
            and 0 <= x[0] <= x[1])


def _is_element(x):
    return (isinstance(x, dict) and set(x) == {"id", "path", "span"}
            and _is_int(x["id"]) and _is_str(x["path"]) and _is_span(x["span"]))


def _is_file_snapshot(x):
    return (isinstance(x, dict) and set(x) == {"file_name", "version", "text", "elements"}
            and _is_str(x["file_name"]) and _is_int(x["version"]) and _is_str(x["text"])
            and isinstance(x["elements"], list) and all(_is_element(e) for e in x["elements"]))


def _is_str_list(x):
    return isinstance(x, list) and all(_is_str(v) for v in x)


def _is_diag(x):
    return (isinstance(x, dict) and set(x) == {"start", "end", "code", "message"}
            and _is_int(x["start"]) and _is_int(x["end"])
            and _is_str(x["code"]) and _is_str(x["message"]))


def _is_conflict(x):
    return (isinstance(x, dict) and set(x) == {"file_name", "element_path", "kind"}
            and _is_str(x["file_name"]) and _is_str(x["element_path"])
            and x["kind"] in CONFLICT_KINDS)


def _is_named_text(x):
    return (isinstance(x, dict) and set(x) == {"file_name", "text"}
            and _is_str(x["file_name"]) and _is_str(x["text"]))


def _is_version_map(x):
    return isinstance(x, dict) and all(_is_str(k) and _is_int(v) for k, v in x.items())


# body schema: field -> (required, predicate)
_SCHEMAS: dict[str, dict[str, tuple[bool, Any]]] = {
    "hello": {"name": (True, _is_str)},
    "welcome": {
        "session": (True, _is_str),
        "files": (True, lambda x: isinstance(x, list) and all(_is_file_snapshot(f) for f in x)),
    },
    "edit_intent": {
        "file_name": (True, _is_str),
        "base_version": (True, _is_int),
        "target_path": (True, _is_str),
        "edit_class": (True, lambda x: x in EDIT_CLASSES),
        "referent_path": (False, _is_str),
        "release_lock_id": (False, _is_int),
    },
    "lock_grant": {
        "lock_id": (True, _is_int),
        "elements": (True, _is_str_list),
        "kind": (True, lambda x: x in LOCK_KINDS),
    },
    "lock_deny": {
        "holder_name": (True, _is_str),
        "elements": (True, _is_str_list),
        "reason": (True, _is_str),
    },
    "commit": {
        "file_name": (True, _is_str),
        "base_version": (True, _is_int),
        "text": (True, _is_str),
    },
    "commit_ack": {"file_name": (True, _is_str), "version": (True, _is_int)},
    "commit_reject": {
        "file_name": (True, _is_str),
        "reason": (True, lambda x: x in REJECT_REASONS),
        "diagnostics": (False, lambda x: isinstance(x, list) and all(_is_diag(d) for d in x)),
    },
    "propagate": {
        "file_name": (True, _is_str),
        "version": (True, _is_int),
        "text": (True, _is_str),
        "author": (True, _is_str),
        "elements": (True, lambda x: isinstance(x, list) and all(_is_element(e) for e in x)),
    },
    "unlock_notice": {
        "elements": (True, _is_str_list),
        "holder_name": (True, _is_str),
    },
    "off_record": {},
    "on_record": {
        "files": (True, lambda x: isinstance(x, list) and all(_is_named_text(f) for f in x)),
    },
    "reconcile_report": {
        "conflicts": (True, lambda x: isinstance(x, list) and all(_is_conflict(c) for c in x)),
        "base_version_map": (True, _is_version_map),
    },
    "error": {"code": (True, _is_str), "message": (True, _is_str)},
    "bye": {},
}

MESSAGE_TYPES = frozenset(_SCHEMAS)


def validate(msg: Message) -> None:
    if msg.v != PROTOCOL_VERSION:
        raise UnsupportedVersion(f"protocol version {msg.v} not supported")
    schema = _SCHEMAS.get(msg.type)
    if schema is None:
        raise SchemaViolation(f"unknown message type {msg.type!r}")
    if not _is_int(msg.seq) or msg.seq < 1:
        raise SchemaViolation(f"seq must be a positive integer, got {msg.seq!r}")
    if not _is_str(msg.session):
        raise SchemaViolation("session must be a string")
    if not isinstance(msg.body, dict):
        raise SchemaViolation("body must be an object")
    for name, (required, pred) in schema.items():
        if name not in msg.body:
            if required:
                raise SchemaViolation(f"{msg.type}: missing body field {name!r}")
            continue
        if not pred(msg.body[name]):
            raise SchemaViolation(f"{msg.type}: invalid body field {name!r}")
    extra = set(msg.body) - set(schema)
    if extra:
        raise SchemaViolation(f"{msg.type}: unexpected body fields {sorted(extra)}")


def encode(msg: Message) -> bytes:
    """One canonical UTF-8 JSON line terminated by a newline."""
    validate(msg)
    obj = {"body": msg.body, "seq": msg.seq, "session": msg.session,
           "type": msg.type, "v": msg.v}
    line = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return line.encode("utf-8") + b"\n"


def decode(line: bytes | str) -> Message:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"not UTF-8: {exc}") from None
    line = line.rstrip("\n")
    if "\n" in line:
        raise MalformedFrame("embedded newline")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedFrame(f"bad JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise SchemaViolation("frame must be a JSON object")
    expected = {"body", "seq", "session", "type", "v"}
    if set(obj) != expected:
        raise SchemaViolation(f"frame fields must be exactly {sorted(expected)}")
    if not _is_int(obj["v"]):
        raise SchemaViolation("v must be an integer")
    if not _is_str(obj["type"]):
        raise SchemaViolation("type must be a string")
    if not _is_int(obj["seq"]):
        raise SchemaViolation("seq must be an integer")
    msg = Message(type=obj["type"], seq=obj["seq"], session=obj["session"],
                  body=obj["body"], v=obj["v"])
    validate(msg)
    return msg


class SeqValidator:
    """Enforces strictly increasing seq numbers per sender."""

    def __init__(self):
        self.last = 0

    def check(self, seq: int) -> None:
        if seq <= self.last:
            raise SchemaViolation(f"seq {seq} not greater than {self.last}")
        self.last = seq


class SeqCounter:
    def __init__(self):
        self.value = 0

    def next(self) -> int:
        self.value += 1
        return self.value
