"""Client core: buffer state, lock intents, auto-commit, snapshot rebase.

The core is transport-agnostic: drivers call ``submit_*`` for local
actions and feed inbound messages to ``on_server_message``; outbound
messages accumulate in ``outbox``. An edit only mutates the buffer after
every lock it needs has been granted, so a denial is a pure no-op. After
every applied edit the whole local project is re-checked and, when
buildable, all dirty files are committed as one batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .protocol import Message, SeqCounter, SeqValidator
from .textops import PatchSet
from .toylang import (
    ELEMENT_KINDS,
    SourceText,
    byte_intervals,
    check_buildable,
    element_path,
    interval_overlaps,
    parse,
    part_at_point,
    project_buildable,
    resolve,
)


class ProtocolDesync(RuntimeError):
    pass


@dataclass(frozen=True)
class EditCommand:
    file_name: str
    offset: int
    insert: Optional[str] = None
    delete: Optional[int] = None


@dataclass(frozen=True)
class Applied:
    pass


@dataclass(frozen=True)
class Denied:
    holder: str
    elements: tuple[str, ...]
    reason: str = "locked"


@dataclass(frozen=True)
class Blocked:
    reason: str


@dataclass
class HeldLock:
    lock_id: int
    elements: tuple[str, ...]
    kind: str
    file_name: str          # file of the triggering intent
    new_member_key: Optional[tuple[str, str]] = None  # (file, class_path)


@dataclass
class FileBuffer:
    base_version: int
    base_text: str
    patches: PatchSet
    base_ast: object = None
    base_intervals: list = field(default_factory=list)
    base_refs: set = field(default_factory=set)
    # (id, path, span) rows from welcome/propagate; id is None for rows
    # recomputed locally after our own commits
    base_elements: list = field(default_factory=list)

    def text(self) -> str:
        return self.patches.text()

    @property
    def dirty(self) -> bool:
        return self.patches.dirty


def _element_rows(snapshot_elements) -> list[dict]:
    return [{"id": e["id"], "path": e["path"], "span": (e["span"][0], e["span"][1])}
            for e in snapshot_elements]


def _anchor_pairs(old_rows: list[dict], new_rows: list[dict]) -> list[tuple[int, int]]:
    """Span-boundary anchors for elements matched across base versions:
    by id where both sides know it (stable across renames), by path
    otherwise."""
    pairs = []
    new_by_id = {r["id"]: r for r in new_rows if r["id"] is not None}
    new_by_path = {r["path"]: r for r in new_rows}
    claimed: set[int] = set()
    for old in old_rows:
        new = new_by_id.get(old["id"]) if old["id"] is not None else None
        if new is None:
            new = new_by_path.get(old["path"])
            if new is None or id(new) in claimed:
                continue
            if (new["id"] is not None and old["id"] is not None
                    and new["id"] != old["id"]):
                continue
        claimed.add(id(new))
        pairs.append((old["span"][0], new["span"][0]))
        pairs.append((old["span"][1], new["span"][1]))
    return pairs


# required lock units computed by classification
@dataclass(frozen=True)
class NeededUnit:
    edit_class: str          # header | body | new_member | new_reference
    target_path: str         # element path, or class path for new_member
    file_name: str


@dataclass
class _Attempt:
    """In-flight edit: queued lock needs, then apply, then reference checks."""
    cmd: EditCommand
    plan: object
    needed: list[NeededUnit]
    lock_ids: set[int] = field(default_factory=set)       # covering locks for the patch
    acquired: list[int] = field(default_factory=list)     # granted during this attempt
    phase: str = "locks"                                  # locks | refs
    snapshot: Optional[PatchSet] = None
    pending_refs: list[str] = field(default_factory=list)


class ClientCore:
    def __init__(self, name: str):
        self.name = name
        self.session_id: Optional[str] = None
        self.outbox: list[Message] = []
        self.seq = SeqCounter()
        self.in_seq = SeqValidator()
        self.buffers: dict[str, FileBuffer] = {}
        self.held_locks: dict[int, HeldLock] = {}
        self.on_record = True
        self.off_base: Optional[dict[str, str]] = None
        self.reconciling = False
        self.reconcile_result: Optional[dict] = None
        self.statuses = {}
        self.attempt: Optional[_Attempt] = None
        self.awaiting_acks: dict[str, str] = {}   # file -> committed text
        self.retry_budget = 0
        self.last_result: Applied | Denied | Blocked | None = None
        self.on_event: Optional[Callable[[dict], None]] = None
        self._path_files: dict[str, str] = {}

    # ------------------------------------------------------------- plumbing

    def _emit(self, kind: str, **payload):
        if self.on_event is not None:
            self.on_event({"kind": kind, **payload})

    def _send(self, mtype: str, body: dict):
        self.outbox.append(Message(mtype, self.seq.next(), self.session_id or "", body))

    @property
    def idle(self) -> bool:
        return (self.attempt is None and not self.awaiting_acks
                and not self.reconciling and self.session_id is not None)

    @property
    def connected(self) -> bool:
        return self.session_id is not None

    def local_texts(self) -> dict[str, str]:
        return {f: b.text() for f, b in sorted(self.buffers.items())}

    def buildable(self, file_name: str | None = None) -> bool:
        if file_name is None:
            return project_buildable(self.statuses)
        status = self.statuses.get(file_name)
        return status is not None and status.buildable

    def pending_files(self) -> list[str]:
        return sorted(f for f, b in self.buffers.items() if b.dirty)

    # ------------------------------------------------------------ lifecycle

    def connect(self):
        self._send("hello", {"name": self.name})

    def _refresh_base(self, file_name: str):
        buf = self.buffers[file_name]
        ast, diags = parse(buf.base_text)
        assert ast is not None and not diags, "canonical base text must parse"
        buf.base_ast = ast
        buf.base_intervals = byte_intervals(ast, buf.base_text)
        base_asts = {}
        for f, b in self.buffers.items():
            a, _ = parse(b.base_text)
            if a is not None:
                base_asts[f] = a
        buf.base_refs = _file_refs(file_name, base_asts)
        self._path_files = {}
        for f, b in sorted(self.buffers.items()):
            a, _ = parse(b.base_text)
            if a is None:
                continue
            for cls in a.classes:
                self._path_files[cls.name] = f
                for member in cls.members:
                    self._path_files[element_path(member)] = f

    def _recheck(self):
        self.statuses = check_buildable(
            [SourceText(f, t) for f, t in self.local_texts().items()])

    # --------------------------------------------------------- local edits

    def submit_edit(self, cmd: EditCommand):
        assert self.attempt is None, "edit already in flight"
        self.last_result = None
        if not self.connected:
            self.last_result = Blocked("not_connected")
            return
        if self.reconciling:
            self.last_result = Blocked("off_record_pending_reconcile")
            return
        buf = self.buffers.get(cmd.file_name)
        if buf is None:
            self.last_result = Blocked("unknown_file")
            return

        if not self.on_record:
            # isolation: no locks, no denials, no commits
            self._apply_cmd(buf, cmd, set())
            self._recheck()
            self.last_result = Applied()
            self._emit("edit", file=cmd.file_name, result="applied", offrecord=True)
            return

        plan, needed = self._classify(buf, cmd)
        attempt = _Attempt(cmd, plan, list(needed))
        covered_body, covered_defining, provisional_keys = self._coverage()
        todo: list[NeededUnit] = []
        for unit in attempt.needed:
            if unit.edit_class == "new_member":
                key = (unit.file_name, unit.target_path)
                if key in provisional_keys:
                    attempt.lock_ids.add(provisional_keys[key])
                    continue
            elif unit.edit_class == "header":
                if unit.target_path in covered_defining:
                    attempt.lock_ids.add(covered_defining[unit.target_path])
                    continue
            else:
                lock = covered_defining.get(unit.target_path) or covered_body.get(unit.target_path)
                if lock:
                    attempt.lock_ids.add(lock)
                    continue
            todo.append(unit)
        attempt.needed = todo
        self.attempt = attempt
        self._advance_attempt()

    def submit_revert(self, file_name: str):
        assert self.attempt is None and not self.awaiting_acks
        buf = self.buffers.get(file_name)
        if buf is None:
            return
        buf.patches = PatchSet(buf.base_text)
        self._recheck()
        # release locks for this file, unless they also protect pending
        # edits elsewhere (a cascading lock can span files)
        dirty = set(self.pending_files())
        for lock_id in sorted(self.held_locks):
            held = self.held_locks[lock_id]
            files = self._lock_files(held)
            if file_name in files and not files & dirty:
                self._release_lock(lock_id)
        self._emit("revert", file=file_name)

    def submit_record_mode(self, on: bool):
        assert self.attempt is None and not self.awaiting_acks
        if on == self.on_record:
            return
        if not on:
            self.off_base = self.local_texts()
            self.on_record = False
            self.held_locks.clear()
            self._send("off_record", {})
            self._emit("mode", mode="off")
        else:
            self.reconciling = True
            self.reconcile_result = None
            preserved = self.local_texts()
            self._send("on_record", {
                "files": [{"file_name": f, "text": t} for f, t in sorted(preserved.items())]})
            self._preserved = preserved

    # ------------------------------------------------------- classification

    def _classify(self, buf: FileBuffer, cmd: EditCommand):
        """Map an edit command to the lock units it requires, using the
        last buildable base AST with offsets adjusted to base coordinates."""
        needed: dict[tuple, NeededUnit] = {}

        def need(edit_class, target_path):
            key = (edit_class, target_path)
            needed.setdefault(key, NeededUnit(edit_class, target_path, cmd.file_name))

        if cmd.insert is not None:
            plan = buf.patches.plan_insert(cmd.offset)
            if plan.in_gap:
                kind, path, cls_path = part_at_point(buf.base_intervals, plan.base_offset)
                if kind == "gap":
                    need("new_member", cls_path)
                elif kind == "header":
                    need("header", path)
                else:
                    need("body", path)
            return plan, list(needed.values())

        plan = buf.patches.plan_delete(cmd.offset, cmd.delete)
        for (lo, hi) in plan.gap_regions():
            for (_s, _e, kind, path, cls_path) in interval_overlaps(buf.base_intervals, lo, hi):
                if kind == "gap":
                    need("new_member", cls_path)
                elif kind == "header":
                    need("header", path)
                else:
                    need("body", path)
        return plan, list(needed.values())

    def _coverage(self):
        """What the held locks already cover, by element path."""
        body: dict[str, int] = {}
        defining: dict[str, int] = {}
        provisional: dict[tuple[str, str], int] = {}
        for lock_id in sorted(self.held_locks):
            held = self.held_locks[lock_id]
            if held.new_member_key is not None:
                provisional[held.new_member_key] = lock_id
                continue
            for path in held.elements:
                if held.kind == "defining":
                    defining[path] = lock_id
                else:
                    body.setdefault(path, lock_id)
        return body, defining, provisional

    def _advance_attempt(self):
        attempt = self.attempt
        if attempt.phase == "locks":
            if attempt.needed:
                unit = attempt.needed[0]
                body = {"file_name": unit.file_name,
                        "base_version": self.buffers[unit.file_name].base_version,
                        "target_path": unit.target_path if unit.edit_class != "new_reference" else "",
                        "edit_class": unit.edit_class}
                if unit.edit_class == "new_reference":
                    body["referent_path"] = unit.target_path
                self._send("edit_intent", body)
                self._emit("intent", **body)
                return
            self._apply_attempt()
            return
        if attempt.phase == "refs":
            if attempt.pending_refs:
                path = attempt.pending_refs[0]
                buf = self.buffers[attempt.cmd.file_name]
                body = {"file_name": attempt.cmd.file_name,
                        "base_version": buf.base_version,
                        "target_path": "",
                        "edit_class": "new_reference",
                        "referent_path": path}
                self._send("edit_intent", body)
                self._emit("intent", **body)
                return
            self._finish_attempt(Applied())

    def _apply_attempt(self):
        attempt = self.attempt
        buf = self.buffers[attempt.cmd.file_name]
        attempt.snapshot = buf.patches.clone()
        self._apply_cmd(buf, attempt.cmd, set(attempt.lock_ids))
        self._recheck()
        attempt.phase = "refs"
        attempt.pending_refs = self._new_reference_paths(attempt.cmd.file_name)
        self._advance_attempt()

    def _apply_cmd(self, buf: FileBuffer, cmd: EditCommand, locks: set[int]):
        if cmd.insert is not None:
            buf.patches.apply_insert(buf.patches.plan_insert(cmd.offset), cmd.insert, locks)
        else:
            buf.patches.apply_delete(buf.patches.plan_delete(cmd.offset, cmd.delete), locks)

    def _new_reference_paths(self, file_name: str) -> list[str]:
        """References this file's dirty text resolves that its base text
        did not, excluding anything already covered by held locks."""
        local_asts = {}
        for f, b in self.buffers.items():
            ast, _ = parse(b.text())
            if ast is not None:
                local_asts[f] = ast
        if file_name not in local_asts:
            return []
        refs = _file_refs(file_name, local_asts)
        buf = self.buffers[file_name]
        covered: set[str] = set()
        for held in self.held_locks.values():
            covered |= set(held.elements)
        fresh = refs - buf.base_refs - covered
        return sorted(p for p in fresh if p in self._path_files)

    def _finish_attempt(self, result):
        attempt = self.attempt
        self.attempt = None
        self.last_result = result
        if isinstance(result, Applied):
            self._emit("edit", file=attempt.cmd.file_name, result="applied")
            self.maybe_commit(fresh=True)

    def _abort_attempt(self, holder: str, elements, reason: str):
        attempt = self.attempt
        buf = self.buffers[attempt.cmd.file_name]
        if attempt.snapshot is not None:
            buf.patches = attempt.snapshot
            self._recheck()
        live = buf.patches.all_locks()
        for f, b in self.buffers.items():
            live |= b.patches.all_locks()
        for lock_id in attempt.acquired:
            if lock_id not in live:
                self._release_lock(lock_id)
        self.attempt = None
        self.last_result = Denied(holder, tuple(elements), reason)
        self._emit("edit", file=attempt.cmd.file_name, result="denied",
                   holder=holder, elements=sorted(elements))

    def _release_lock(self, lock_id: int):
        held = self.held_locks.pop(lock_id, None)
        if held is None:
            return
        self._send("edit_intent", {
            "file_name": held.file_name, "base_version":
                self.buffers[held.file_name].base_version,
            "target_path": "", "edit_class": "release",
            "release_lock_id": lock_id})

    def _lock_files(self, held: HeldLock) -> set[str]:
        if held.new_member_key is not None:
            return {held.new_member_key[0]}
        return {self._path_files.get(p, held.file_name) for p in held.elements}

    # --------------------------------------------------------------- commit

    def maybe_commit(self, fresh: bool = False):
        if (not self.on_record or self.reconciling or self.awaiting_acks
                or self.attempt is not None):
            return
        dirty = self.pending_files()
        if not dirty:
            return
        self._recheck()
        if not self.buildable():
            return
        if fresh:
            self.retry_budget = 1
        for file_name in dirty:
            buf = self.buffers[file_name]
            text = buf.text()
            self._send("commit", {"file_name": file_name,
                                  "base_version": buf.base_version,
                                  "text": text})
            self.awaiting_acks[file_name] = text
            self._emit("commit", file=file_name, base_version=buf.base_version)

    # ------------------------------------------------------ server messages

    def on_server_message(self, msg: Message):
        self.in_seq.check(msg.seq)
        handler = {
            "welcome": self._on_welcome,
            "lock_grant": self._on_lock_reply,
            "lock_deny": self._on_lock_reply,
            "commit_ack": self._on_commit_ack,
            "commit_reject": self._on_commit_reject,
            "propagate": self._on_propagate,
            "unlock_notice": self._on_unlock_notice,
            "reconcile_report": self._on_reconcile_report,
            "error": self._on_error,
            "bye": lambda m: None,
        }.get(msg.type)
        if handler is None:
            raise ProtocolDesync(f"unexpected message type {msg.type!r}")
        handler(msg)

    def _on_welcome(self, msg: Message):
        self.session_id = msg.body["session"]
        self.buffers = {}
        for snap in msg.body["files"]:
            self.buffers[snap["file_name"]] = FileBuffer(
                snap["version"], snap["text"], PatchSet(snap["text"]),
                base_elements=_element_rows(snap["elements"]))
        for file_name in sorted(self.buffers):
            self._refresh_base(file_name)
        self._recheck()
        if self.reconciling:
            self.reconciling = False
            self.on_record = True
            self.off_base = None
            self.held_locks.clear()
            self._emit("mode", mode="on")

    def _on_lock_reply(self, msg: Message):
        if self.attempt is None:
            self._emit("stray_lock_reply", type=msg.type)
            return
        attempt = self.attempt
        if msg.type == "lock_deny":
            holder = msg.body["holder_name"]
            elements = msg.body["elements"]
            self._abort_attempt(holder, elements, msg.body["reason"])
            return
        lock_id = msg.body["lock_id"]
        if attempt.phase == "locks":
            unit = attempt.needed.pop(0)
            key = (unit.file_name, unit.target_path) if unit.edit_class == "new_member" else None
            self.held_locks[lock_id] = HeldLock(
                lock_id, tuple(msg.body["elements"]), msg.body["kind"],
                unit.file_name, key)
        else:
            path = attempt.pending_refs.pop(0)
            self.held_locks[lock_id] = HeldLock(
                lock_id, tuple(msg.body["elements"]), msg.body["kind"],
                attempt.cmd.file_name)
        attempt.lock_ids.add(lock_id)
        attempt.acquired.append(lock_id)
        if attempt.phase == "refs":
            # patch already applied; fold the reference lock into it
            buf = self.buffers[attempt.cmd.file_name]
            for patch in buf.patches.patches:
                patch.locks.add(lock_id)
        self._advance_attempt()

    def _on_commit_ack(self, msg: Message):
        file_name = msg.body["file_name"]
        text = self.awaiting_acks.pop(file_name, None)
        if text is None:
            raise ProtocolDesync(f"unexpected commit_ack for {file_name!r}")
        buf = self.buffers[file_name]
        buf.base_version = msg.body["version"]
        buf.base_text = text
        buf.patches = PatchSet(text)
        # the ack carries no element table; rebuild rows locally, keeping
        # known ids for paths that survived our commit
        old_ids = {r["path"]: r["id"] for r in buf.base_elements}
        ast, _ = parse(text)
        rows = []
        for cls in ast.classes:
            rows.append({"id": old_ids.get(cls.name), "path": cls.name,
                         "span": (cls.span.start, cls.span.end)})
            for member in cls.members:
                path = element_path(member)
                rows.append({"id": old_ids.get(path), "path": path,
                             "span": (member.span.start, member.span.end)})
        buf.base_elements = rows
        self._refresh_base(file_name)
        self._recheck()
        self._emit("ack", file=file_name, version=msg.body["version"])
        if not self.awaiting_acks:
            # The server dropped the committed files' locks itself. Locks
            # left over cover files outside the batch: give back the ones
            # protecting nothing, keep those guarding edits that are still
            # pending (e.g. files bounced as stale from the same burst),
            # and retry the leftovers right away.
            dirty = set(self.pending_files())
            for lock_id in sorted(self.held_locks):
                if not (self._lock_files(self.held_locks[lock_id]) & dirty):
                    self._release_lock(lock_id)
            self.maybe_commit()

    def _on_commit_reject(self, msg: Message):
        file_name = msg.body["file_name"]
        reason = msg.body["reason"]
        self.awaiting_acks.pop(file_name, None)
        self._emit("reject", file=file_name, reason=reason,
                   diagnostics=msg.body.get("diagnostics", []))
        if reason == "stale" and not self.awaiting_acks and self.retry_budget > 0:
            self.retry_budget -= 1
            self.maybe_commit()

    def _on_propagate(self, msg: Message):
        if not self.on_record:
            return
        file_name = msg.body["file_name"]
        buf = self.buffers.get(file_name)
        if buf is None:
            raise ProtocolDesync(f"propagate for unknown file {file_name!r}")
        if msg.body["version"] != buf.base_version + 1:
            raise ProtocolDesync(
                f"version gap for {file_name!r}: have {buf.base_version}, "
                f"got {msg.body['version']}")
        buf.base_version = msg.body["version"]
        new_rows = _element_rows(msg.body["elements"])
        buf.patches.rebase_anchored(msg.body["text"],
                                    _anchor_pairs(buf.base_elements, new_rows))
        buf.base_text = msg.body["text"]
        buf.base_elements = new_rows
        self._refresh_base(file_name)
        self._recheck()
        self._emit("propagate", file=file_name, version=msg.body["version"],
                   author=msg.body["author"])
        self.maybe_commit()

    def _on_unlock_notice(self, msg: Message):
        self._emit("unlock", elements=msg.body["elements"],
                   holder=msg.body["holder_name"])

    def _on_reconcile_report(self, msg: Message):
        self.reconcile_result = {
            "conflicts": msg.body["conflicts"],
            "base_version_map": msg.body["base_version_map"],
            "preserved": getattr(self, "_preserved", {}),
        }
        self._emit("reconcile", conflicts=msg.body["conflicts"])

    def _on_error(self, msg: Message):
        self._emit("server_error", code=msg.body["code"], message=msg.body["message"])
        if self.attempt is not None:
            self._abort_attempt("", [], msg.body["code"])


def _file_refs(file_name: str, asts: dict) -> set[str]:
    """Element paths referenced from one file, resolved project-wide."""
    ast = asts[file_name]
    others = [a for f, a in sorted(asts.items()) if f != file_name]
    bindings, _ = resolve(ast, others)
    return {element_path(d) for d in bindings.values() if d.kind in ELEMENT_KINDS}
