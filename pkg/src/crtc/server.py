"""The central relay: canonical project state, lock authority, commit gate.

All message handling happens on one totally ordered stream; `handle` is a
deterministic state-machine step producing the outbound messages for each
input. Canonical file texts are buildable at every observable instant:
commits are re-verified server-side and only buildable snapshots are ever
propagated. A multi-file change (e.g. a cross-file rename) arrives as a
run of single-file commits; the server stages them per session and applies
the batch atomically once the combined result builds.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

from . import lockmgr, semantics
from .protocol import Message, SeqCounter, SeqValidator
from .textops import diff_regions
from .toylang import CLASS, FIELD, METHOD, BuildStatus, SourceText, check_buildable


class CorpusUnbuildable(RuntimeError):
    def __init__(self, statuses: dict[str, BuildStatus]):
        self.statuses = statuses
        bad = {n: [d.message for d in s.diagnostics]
               for n, s in statuses.items() if not s.buildable}
        super().__init__(f"initial corpus is not buildable: {bad}")


@dataclass
class FileRecord:
    version: int
    text: str


@dataclass
class StagedCommit:
    base_version: int
    text: str


@dataclass
class Session:
    session_id: str
    conn_id: str
    name: str
    on_record: bool = True
    in_seq: SeqValidator = dc_field(default_factory=SeqValidator)
    out_seq: SeqCounter = dc_field(default_factory=SeqCounter)
    staged: dict[str, StagedCommit] = dc_field(default_factory=dict)
    # file -> (version, text, element infos) captured when going off record
    off_snapshot: Optional[dict] = None


@dataclass(frozen=True)
class Provisional:
    holder: str
    file_name: str
    class_path: str  # "" for a new top-level class


def provisional_token(pid: int) -> str:
    return f"~{pid}"


class ServerCore:
    def __init__(self, corpus: dict[str, str]):
        statuses = check_buildable([SourceText(n, t) for n, t in sorted(corpus.items())])
        if not all(s.buildable for s in statuses.values()):
            raise CorpusUnbuildable(statuses)
        self.files: dict[str, FileRecord] = {
            n: FileRecord(0, t) for n, t in sorted(corpus.items())
        }
        self.statuses = statuses
        self.alloc = semantics.IdAllocator()
        self.table = semantics.assign_element_ids(
            semantics.ElementTable.empty(),
            {n: s.ast for n, s in statuses.items()},
            self.alloc,
            generation={n: 0 for n in statuses},
        )
        self.graph = semantics.build_reference_graph(
            self.table, {n: s.bindings for n, s in statuses.items()})
        self.locks = lockmgr.LockTable()
        self.provisionals: dict[int, Provisional] = {}
        self.sessions: dict[str, Session] = {}
        self.conn_sessions: dict[str, str] = {}
        self._next_session = 1

    # ------------------------------------------------------------- helpers

    def _session_for(self, conn_id: str) -> Optional[Session]:
        sid = self.conn_sessions.get(conn_id)
        return self.sessions.get(sid) if sid else None

    def _reply(self, session: Session, mtype: str, body: dict) -> tuple[str, Message]:
        return (session.conn_id,
                Message(mtype, session.out_seq.next(), session.session_id, body))

    def _error(self, conn_id: str, code: str, message: str) -> tuple[str, Message]:
        session = self._session_for(conn_id)
        if session is not None:
            return self._reply(session, "error", {"code": code, "message": message})
        return (conn_id, Message("error", 1, "", {"code": code, "message": message}))

    def _broadcast(self, mtype: str, body: dict, exclude: str = "") -> list[tuple[str, Message]]:
        out = []
        for sid in sorted(self.sessions):
            session = self.sessions[sid]
            if sid == exclude or not session.on_record:
                continue
            out.append(self._reply(session, mtype, dict(body)))
        return out

    def _relations(self, a: int, b: int) -> bool:
        if a not in self.table.by_id or b not in self.table.by_id:
            return a == b  # provisional elements relate only to themselves
        return semantics.must_serialize(a, b, self.table, self.graph)

    def _element_paths(self, element_ids) -> list[str]:
        out = []
        for eid in sorted(element_ids):
            info = self.table.by_id.get(eid)
            out.append(info.path if info else provisional_token(eid))
        return out

    def _file_snapshot(self, file_name: str) -> dict:
        rec = self.files[file_name]
        elements = [
            {"id": e.id, "path": e.path, "span": [e.span.start, e.span.end]}
            for e in sorted(self.table.file_slice(file_name), key=lambda e: e.id)
        ]
        return {"file_name": file_name, "version": rec.version,
                "text": rec.text, "elements": elements}

    def _welcome_body(self, session: Session) -> dict:
        return {"session": session.session_id,
                "files": [self._file_snapshot(n) for n in sorted(self.files)]}

    def current_texts(self) -> dict[str, str]:
        return {n: r.text for n, r in self.files.items()}

    # ------------------------------------------------------------ dispatch

    def handle(self, conn_id: str, msg: Message) -> list[tuple[str, Message]]:
        session = self._session_for(conn_id)
        if session is not None:
            try:
                session.in_seq.check(msg.seq)
            except Exception as exc:
                return [self._error(conn_id, "bad_seq", str(exc))]
        out: list[tuple[str, Message]] = []
        if (session is not None and session.staged
                and msg.type in ("off_record", "on_record", "bye")):
            # leaving the editing state abandons the unfinished batch; lock
            # intents may interleave freely (per-keystroke clients commit
            # and re-lock while a cross-file batch is still incomplete)
            out.extend(self._reject_staged(session, "unbuildable"))
        handler = {
            "hello": self._on_hello,
            "edit_intent": self._on_edit_intent,
            "commit": self._on_commit,
            "off_record": self._on_off_record,
            "on_record": self._on_on_record,
            "bye": self._on_bye,
        }.get(msg.type)
        if handler is None:
            out.append(self._error(conn_id, "unexpected_type",
                                   f"server does not accept {msg.type!r}"))
            return out
        out.extend(handler(conn_id, session, msg))
        return out

    def disconnect(self, conn_id: str) -> list[tuple[str, Message]]:
        session = self._session_for(conn_id)
        if session is None:
            return []
        return self._drop_session(session)

    # ------------------------------------------------------------ handlers

    def _on_hello(self, conn_id, session, msg):
        if session is not None:
            return [self._error(conn_id, "already_joined", "session already established")]
        name = msg.body["name"]
        if any(s.name == name for s in self.sessions.values()):
            return [self._error(conn_id, "duplicate_name", f"name {name!r} is taken")]
        session = Session(f"s{self._next_session}", conn_id, name)
        session.in_seq.check(msg.seq)
        self._next_session += 1
        self.sessions[session.session_id] = session
        self.conn_sessions[conn_id] = session.session_id
        return [self._reply(session, "welcome", self._welcome_body(session))]

    def _on_bye(self, conn_id, session, msg):
        if session is None:
            return []
        return self._drop_session(session)

    def _drop_session(self, session: Session) -> list[tuple[str, Message]]:
        out = self._release_locks(session)
        del self.sessions[session.session_id]
        del self.conn_sessions[session.conn_id]
        return out

    def _release_locks(self, session: Session) -> list[tuple[str, Message]]:
        freed = self.locks.release_all(session.session_id)
        freed_paths = self._element_paths(freed)
        for pid in sorted(self.provisionals):
            if self.provisionals[pid].holder == session.session_id:
                del self.provisionals[pid]
        if not freed_paths:
            return []
        return self._broadcast("unlock_notice",
                               {"elements": freed_paths, "holder_name": session.name},
                               exclude=session.session_id)

    def _on_edit_intent(self, conn_id, session, msg):
        if session is None:
            return [self._error(conn_id, "no_session", "say hello first")]
        if not session.on_record:
            return [self._error(conn_id, "off_record", "intents are suspended off the record")]
        body = msg.body
        edit_class = body["edit_class"]
        file_name = body["file_name"]
        if file_name not in self.files:
            return [self._error(conn_id, "unknown_file", f"no file {file_name!r}")]

        if edit_class == "release":
            lock_id = body.get("release_lock_id")
            if lock_id is None:
                return [self._error(conn_id, "bad_intent", "release needs release_lock_id")]
            freed = self.locks.release_one(session.session_id, lock_id)
            for pid in list(freed):
                if pid in self.provisionals and self.provisionals[pid].holder == session.session_id:
                    del self.provisionals[pid]
            freed_paths = self._element_paths(freed)
            if not freed_paths:
                return []
            return self._broadcast("unlock_notice",
                                   {"elements": freed_paths, "holder_name": session.name},
                                   exclude=session.session_id)

        if edit_class == "new_member":
            class_path = body["target_path"]
            if class_path and class_path not in self.table.by_path:
                return [self._reply(session, "lock_deny", {
                    "holder_name": "", "elements": [class_path],
                    "reason": "unknown_target"})]
            pid = self.alloc.issue()
            self.provisionals[pid] = Provisional(session.session_id, file_name, class_path)
            unit = lockmgr.compute_lock_unit(pid, "new_member", self.graph, self.table)
            result = self.locks.request(session.session_id, unit, self._relations,
                                        {f: r.version for f, r in self.files.items()})
            assert isinstance(result, lockmgr.Grant)
            return [self._reply(session, "lock_grant", {
                "lock_id": result.record.lock_id,
                "elements": self._element_paths(result.record.unit.elements),
                "kind": result.record.unit.kind})]

        target_path = body["referent_path"] if edit_class == "new_reference" else body["target_path"]
        target = self.table.get_id(target_path) if target_path else None
        if target is None:
            return [self._reply(session, "lock_deny", {
                "holder_name": "", "elements": [target_path],
                "reason": "unknown_target"})]
        unit = lockmgr.compute_lock_unit(target, edit_class, self.graph, self.table)
        result = self.locks.request(session.session_id, unit, self._relations,
                                    {f: r.version for f, r in self.files.items()})
        if isinstance(result, lockmgr.Deny):
            blocker = self.sessions[result.holder]
            return [self._reply(session, "lock_deny", {
                "holder_name": blocker.name,
                "elements": self._element_paths(result.elements),
                "reason": "locked"})]
        return [self._reply(session, "lock_grant", {
            "lock_id": result.record.lock_id,
            "elements": self._element_paths(result.record.unit.elements),
            "kind": result.record.unit.kind})]

    def _on_off_record(self, conn_id, session, msg):
        if session is None:
            return [self._error(conn_id, "no_session", "say hello first")]
        if not session.on_record:
            return [self._error(conn_id, "already_off", "already off the record")]
        session.on_record = False
        session.off_snapshot = {
            n: (r.version, r.text, self.table.file_slice(n))
            for n, r in sorted(self.files.items())
        }
        return self._release_locks(session)

    def _on_on_record(self, conn_id, session, msg):
        if session is None:
            return [self._error(conn_id, "no_session", "say hello first")]
        if session.on_record:
            return [self._error(conn_id, "already_on", "already on the record")]
        local_texts = {f["file_name"]: f["text"] for f in msg.body["files"]}
        conflicts = self._reconcile(session, local_texts)
        session.on_record = True
        session.off_snapshot = None
        report = self._reply(session, "reconcile_report", {
            "conflicts": conflicts,
            "base_version_map": {n: r.version for n, r in sorted(self.files.items())},
        })
        welcome = self._reply(session, "welcome", self._welcome_body(session))
        return [report, welcome]

    def _reconcile(self, session: Session, local_texts: dict[str, str]) -> list[dict]:
        """Three-way element diff: base (snapshot at off_record), upstream
        (current canonical), local (submitted). An element changed on
        exactly one side is clean; changed on both sides, or changed
        locally while deleted upstream, is a conflict."""
        conflicts = []
        for file_name in sorted(session.off_snapshot or {}):
            base_version, base_text, base_elements = session.off_snapshot[file_name]
            local_text = local_texts.get(file_name, base_text)
            local_touched = _touched_ids(base_text, local_text, base_elements)
            current_infos = self.table.file_slice(file_name)
            for info in sorted(base_elements, key=lambda e: e.path):
                current = self.table.by_id.get(info.id)
                if current is None:
                    if info.id in local_touched:
                        conflicts.append({"file_name": file_name,
                                          "element_path": info.path,
                                          "kind": "deleted_upstream"})
                    continue
                cur_text = self.files[current.file_name].text
                if info.kind == CLASS:
                    # a class changed only if its own shell did; member
                    # edits are attributed to the members
                    upstream_changed = (
                        _masked_shell(base_text, info, base_elements)
                        != _masked_shell(cur_text, current, current_infos))
                else:
                    upstream_changed = (
                        base_text[info.span.start:info.span.end]
                        != cur_text[current.span.start:current.span.end])
                if upstream_changed and info.id in local_touched:
                    conflicts.append({"file_name": file_name,
                                      "element_path": info.path,
                                      "kind": "both_changed"})
        return conflicts

    # -------------------------------------------------------------- commit

    def _on_commit(self, conn_id, session, msg):
        if session is None:
            return [self._error(conn_id, "no_session", "say hello first")]
        if not session.on_record:
            return [self._error(conn_id, "off_record", "commits are suspended off the record")]
        body = msg.body
        file_name = body["file_name"]
        if file_name not in self.files:
            return [self._error(conn_id, "unknown_file", f"no file {file_name!r}")]
        if body["base_version"] != self.files[file_name].version:
            # the whole logical batch must rebase together
            out = self._reject_staged(session, "stale")
            out.append(self._reply(session, "commit_reject",
                                   {"file_name": file_name, "reason": "stale"}))
            return out
        session.staged[file_name] = StagedCommit(body["base_version"], body["text"])

        candidate = self.current_texts()
        for f, staged in session.staged.items():
            candidate[f] = staged.text
        statuses = check_buildable([SourceText(n, t) for n, t in sorted(candidate.items())])
        if all(s.buildable for s in statuses.values()):
            return self._apply_batch(session, statuses)

        # Unbuildable so far. If the session plausibly has more of the batch
        # coming (it holds locks in files not yet staged), wait; otherwise
        # reject everything staged.
        lock_files = set()
        for eid in sorted(self.locks.covered_elements(session.session_id)):
            info = self.table.by_id.get(eid)
            if info is not None:
                lock_files.add(info.file_name)
            elif eid in self.provisionals:
                lock_files.add(self.provisionals[eid].file_name)
        if lock_files - set(session.staged):
            return []  # wait for the rest of the batch
        return self._reject_staged(session, "unbuildable", statuses)

    def _reject_staged(self, session: Session, reason: str,
                       statuses: dict[str, BuildStatus] | None = None) -> list:
        out = []
        for file_name in sorted(session.staged):
            body = {"file_name": file_name, "reason": reason}
            if reason == "unbuildable" and statuses is not None:
                body["diagnostics"] = [
                    d.to_json() for d in statuses[file_name].diagnostics]
            out.append(self._reply(session, "commit_reject", body))
        session.staged.clear()
        return out

    def _apply_batch(self, session: Session,
                     statuses: dict[str, BuildStatus]) -> list[tuple[str, Message]]:
        staged = session.staged
        for file_name, commit in staged.items():
            if commit.base_version != self.files[file_name].version:
                return self._reject_staged(session, "stale")

        covered = self.locks.covered_elements(session.session_id)
        pins = frozenset(e for e in covered if e in self.table.by_id)
        own_provisionals = {
            pid: (p.file_name, p.class_path)
            for pid, p in sorted(self.provisionals.items())
            if p.holder == session.session_id
        }
        new_asts = {n: s.ast for n, s in statuses.items()}
        try:
            new_table = semantics.assign_element_ids(
                self.table, new_asts, self.alloc, pins=pins,
                provisionals=own_provisionals,
                generation={n: self.files[n].version + (1 if n in staged else 0)
                            for n in self.files},
            )
        except semantics.PathCollision:
            return self._reject_staged(session, "lock_violation")

        defining_covered = set()
        for rec in self.locks.held_by(session.session_id):
            if rec.unit.kind == lockmgr.DEFINING:
                defining_covered |= rec.unit.elements

        # Structural checks: vanished elements need a defining lock; fresh
        # elements must have been announced as new members.
        for eid in sorted(self.table.by_id):
            if eid not in new_table.by_id and eid not in defining_covered:
                return self._reject_staged(session, "lock_violation")
        for eid in sorted(new_table.by_id):
            if eid in self.table.by_id:
                continue
            if eid in own_provisionals:
                continue
            return self._reject_staged(session, "lock_violation")

        # Content checks: every changed element must be under a suitable
        # lock (header changes require a defining lock).
        for file_name in sorted(staged):
            if not self._content_check(file_name, staged[file_name].text,
                                       statuses[file_name].ast, new_table,
                                       covered, defining_covered):
                return self._reject_staged(session, "lock_violation")

        # New references into elements locked by another session are the
        # server-side net for clients that cannot resolve names locally.
        new_graph = semantics.build_reference_graph(
            new_table, {n: s.bindings for n, s in statuses.items()})
        live = self.locks.live_elements()
        for (a, b) in sorted(new_graph.edges - self.graph.edges):
            lock_id = live.get(b)
            if lock_id is None:
                continue
            if self.locks.records[lock_id].holder != session.session_id:
                return self._reject_staged(session, "lock_violation")

        # Point of no return: apply, ack, propagate, unlock.
        out = []
        committed = set(staged)
        old_table = self.table
        for file_name in sorted(staged):
            rec = self.files[file_name]
            rec.version += 1
            rec.text = staged[file_name].text
        self.statuses = statuses
        self.table = new_table
        self.graph = new_graph
        # acks first, then the batch's propagates: the batch is atomic, so
        # each propagated text is buildable in the full post-batch context
        for file_name in sorted(staged):
            out.append(self._reply(session, "commit_ack", {
                "file_name": file_name, "version": self.files[file_name].version}))
        for file_name in sorted(staged):
            snapshot = self._file_snapshot(file_name)
            snapshot["author"] = session.name
            out.extend(self._broadcast("propagate", snapshot,
                                       exclude=session.session_id))
        staged.clear()
        # release locks over the committed files only: a client may send the
        # rest of a logical batch right behind this commit, still relying on
        # its locks in the other files
        release_ids = set()
        for eid in sorted(old_table.by_id):
            if old_table.by_id[eid].file_name in committed or eid not in new_table.by_id:
                release_ids.add(eid)
        for eid in sorted(new_table.by_id):
            if new_table.by_id[eid].file_name in committed:
                release_ids.add(eid)
        for pid in sorted(self.provisionals):
            prov = self.provisionals[pid]
            if prov.holder == session.session_id and prov.file_name in committed:
                release_ids.add(pid)
                del self.provisionals[pid]
        freed = self.locks.release_elements(session.session_id, release_ids)
        freed_paths = []
        for eid in freed:
            info = new_table.by_id.get(eid) or old_table.by_id.get(eid)
            freed_paths.append(info.path if info else provisional_token(eid))
        if freed_paths:
            out.extend(self._broadcast("unlock_notice",
                                       {"elements": freed_paths,
                                        "holder_name": session.name},
                                       exclude=session.session_id))
        return out

    def _content_check(self, file_name: str, new_text: str, new_ast,
                       new_table: semantics.ElementTable,
                       covered: set[int], defining_covered: set[int]) -> bool:
        """Compare element contents across the commit by matched id: a
        changed header/field/class shell needs a defining lock, a changed
        method body any lock, and matched elements may not be reordered.
        Structure outside elements must be whitespace-equivalent."""
        old_text = self.files[file_name].text
        old_ast = self.statuses[file_name].ast
        old_blocks = _block_spans(old_ast)
        new_blocks = _block_spans(new_ast)
        old_infos = self.table.file_slice(file_name)
        new_by_id = {e.id: e for e in new_table.file_slice(file_name)}

        matched = [(o, new_by_id[o.id]) for o in old_infos if o.id in new_by_id]
        old_order = [o.id for o, _ in sorted(matched, key=lambda p: p[0].span.start)]
        new_order = [o.id for o, _ in sorted(matched, key=lambda p: p[1].span.start)]
        if old_order != new_order:
            return False

        for old, new in matched:
            if old.kind == METHOD:
                ohb = old_blocks[old.path]
                nhb = new_blocks[new.path]
                old_header = old_text[old.span.start:ohb.start]
                new_header = new_text[new.span.start:nhb.start]
                if old_header != new_header and old.id not in defining_covered:
                    return False
                if (old_text[ohb.start:ohb.end] != new_text[nhb.start:nhb.end]
                        and old.id not in covered):
                    return False
            elif old.kind == FIELD:
                if (old_text[old.span.start:old.span.end]
                        != new_text[new.span.start:new.span.end]
                        and old.id not in defining_covered):
                    return False
            else:  # Class: structural shell with member bodies masked out
                old_shell = _masked_shell(old_text, old, old_infos)
                new_shell = _masked_shell(new_text, new, list(new_by_id.values()))
                if old_shell != new_shell and old.id not in defining_covered:
                    return False

        old_top = _toplevel_shell(old_text, [e for e in old_infos if e.kind == CLASS])
        new_top = _toplevel_shell(new_text, [e for e in new_by_id.values() if e.kind == CLASS])
        return old_top == new_top


def _block_spans(ast) -> dict:
    out = {}
    for cls in ast.classes:
        for member in cls.members:
            if member.kind == METHOD:
                out[f"{cls.name}/{member.name}"] = member.block.span
    return out


def _masked_shell(text: str, cls_info, file_infos) -> str:
    """The class's own bytes (header, braces, gaps) with every member
    slice removed, whitespace-collapsed."""
    members = sorted(
        (e for e in file_infos if e.path.startswith(cls_info.path + "/")),
        key=lambda e: e.span.start)
    parts = []
    pos = cls_info.span.start
    for m in members:
        parts.append(text[pos:m.span.start])
        pos = m.span.end
    parts.append(text[pos:cls_info.span.end])
    return "".join("".join(parts).split())


def _toplevel_shell(text: str, class_infos) -> str:
    parts = []
    pos = 0
    for c in sorted(class_infos, key=lambda e: e.span.start):
        parts.append(text[pos:c.span.start])
        pos = c.span.end
    parts.append(text[pos:])
    return "".join("".join(parts).split())


def _touched_ids(base_text: str, new_text: str, base_elements) -> set[int]:
    """Base elements whose bytes a diff between the texts touches; regions
    count against the innermost element, so a member edit does not also
    flag its class."""
    member_spans = [e.span for e in base_elements if e.kind != CLASS]

    def inside_member(a: int, b: int) -> bool:
        return any(s.start <= a and b <= s.end for s in member_spans)

    touched = set()
    for (os_, oe, _nlen) in diff_regions(base_text, new_text):
        for info in base_elements:
            s, e = info.span.start, info.span.end
            hit = (s < os_ < e) if os_ == oe else (os_ < e and oe > s)
            if not hit:
                continue
            if info.kind == CLASS and inside_member(os_, oe):
                continue
            touched.add(info.id)
    return touched
