"""Deterministic multi-client simulation.

Scenarios script clients against an in-process server over a loopback
transport that reuses the real wire codec, so recorded traces double as
protocol golden files. Logical ticks replace wall-clock time: every local
action pumps the message queue to quiescence, which makes "immediately
warned" checkable as same-tick denial. Randomized scenarios are produced
by co-generation: the generator drives a live run and records the DSL
events it performed, so replaying the scenario reproduces the run.
"""

from __future__ import annotations

import json
import random
import re
from collections import deque
from dataclasses import dataclass, field

from .client import Applied, ClientCore, Denied, EditCommand
from .protocol import decode, encode
from .semantics import (
    ElementTable,
    IdAllocator,
    assign_element_ids,
    build_reference_graph,
    must_serialize,
)
from .server import ServerCore
from .toylang import (
    SourceText,
    check_buildable,
    element_path,
    parse,
    project_buildable,
    resolve,
)


class ScenarioSyntaxError(ValueError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class Event:
    tick: int
    kind: str        # insert | delete | revert | offrecord | onrecord | assert
    client: str      # "" for asserts
    args: tuple

    def is_action(self) -> bool:
        return self.kind != "assert"


@dataclass
class Scenario:
    clients: list[str]
    files: dict[str, str]
    events: list[Event]

    @property
    def actions(self) -> list[Event]:
        return [e for e in self.events if e.is_action()]

    def to_dsl(self) -> str:
        out = [f"client {name}" for name in self.clients]
        out += [f"file {name} {_quote(text)}" for name, text in sorted(self.files.items())]
        for ev in self.events:
            if ev.kind == "insert":
                f, off, text, expect = ev.args
                line = f"at {ev.tick} {ev.client} insert {f} {off} {_quote(text)}"
                if expect:
                    line += f" expect {expect}"
            elif ev.kind == "delete":
                f, off, length, expect = ev.args
                line = f"at {ev.tick} {ev.client} delete {f} {off} {length}"
                if expect:
                    line += f" expect {expect}"
            elif ev.kind == "revert":
                line = f"at {ev.tick} {ev.client} revert {ev.args[0]}"
            elif ev.kind in ("offrecord", "onrecord"):
                line = f"at {ev.tick} {ev.client} {ev.kind}"
            else:
                continue  # asserts are not produced by the generator
            out.append(line)
        return "\n".join(out) + "\n"


@dataclass
class Trace:
    lines: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def add(self, **obj):
        self.lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))

    def as_bytes(self) -> bytes:
        return ("\n".join(self.lines) + "\n").encode("utf-8")

    def records(self) -> list[dict]:
        return [json.loads(line) for line in self.lines]

    @property
    def ok(self) -> bool:
        return not self.failures


# ----------------------------------------------------------- DSL parsing

def _tokenize(line: str, line_no: int) -> list[str]:
    tokens = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch in " \t":
            i += 1
            continue
        if ch == "#":
            break
        if ch == '"':
            out = []
            i += 1
            while True:
                if i >= n:
                    raise ScenarioSyntaxError(line_no, "unterminated string")
                ch = line[i]
                if ch == "\\":
                    if i + 1 >= n or line[i + 1] not in '"\\':
                        raise ScenarioSyntaxError(line_no, "bad escape (only \\\" and \\\\)")
                    out.append(line[i + 1])
                    i += 2
                    continue
                if ch == '"':
                    i += 1
                    break
                out.append(ch)
                i += 1
            tokens.append('"' + "".join(out))  # leading quote marks a string literal
            continue
        j = i
        while j < n and line[j] not in ' \t#"':
            j += 1
        tokens.append(line[i:j])
        i = j
    return tokens


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _is_string(token: str) -> bool:
    return token.startswith('"')


def _string(token: str, line_no: int, what: str) -> str:
    if not _is_string(token):
        raise ScenarioSyntaxError(line_no, f"expected quoted string for {what}")
    return token[1:]


def _int(token: str, line_no: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ScenarioSyntaxError(line_no, f"expected integer for {what}, got {token!r}") from None


def parse_scenario(text: str) -> Scenario:
    clients: list[str] = []
    files: dict[str, str] = {}
    events: list[Event] = []
    last_tick = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(raw, line_no)
        if not tokens:
            continue
        head = tokens[0]
        if head == "client":
            if len(tokens) != 2 or _is_string(tokens[1]):
                raise ScenarioSyntaxError(line_no, "usage: client <name>")
            clients.append(tokens[1])
            continue
        if head == "file":
            if len(tokens) != 3:
                raise ScenarioSyntaxError(line_no, 'usage: file <name> "<text>"')
            files[tokens[1]] = _string(tokens[2], line_no, "file text")
            continue
        if head != "at":
            raise ScenarioSyntaxError(line_no, f"unknown statement {head!r}")
        if len(tokens) < 3:
            raise ScenarioSyntaxError(line_no, "usage: at <tick> ...")
        tick = _int(tokens[1], line_no, "tick")
        if tick < last_tick:
            raise ScenarioSyntaxError(line_no, f"tick {tick} goes backwards")
        last_tick = tick
        if tokens[2] == "assert":
            events.append(_parse_assert(tick, tokens[3:], line_no))
            continue
        client = tokens[2]
        if len(tokens) < 4:
            raise ScenarioSyntaxError(line_no, "missing action")
        action = tokens[3]
        rest = tokens[4:]
        if action == "insert":
            expect = _parse_expect(rest, line_no)
            if len(rest) != 3:
                raise ScenarioSyntaxError(line_no, 'usage: insert <file> <offset> "<text>"')
            events.append(Event(tick, "insert", client,
                                (rest[0], _int(rest[1], line_no, "offset"),
                                 _string(rest[2], line_no, "text"), expect)))
        elif action == "delete":
            expect = _parse_expect(rest, line_no)
            if len(rest) != 3:
                raise ScenarioSyntaxError(line_no, "usage: delete <file> <offset> <length>")
            events.append(Event(tick, "delete", client,
                                (rest[0], _int(rest[1], line_no, "offset"),
                                 _int(rest[2], line_no, "length"), expect)))
        elif action == "revert":
            if len(rest) != 1:
                raise ScenarioSyntaxError(line_no, "usage: revert <file>")
            events.append(Event(tick, "revert", client, (rest[0],)))
        elif action in ("offrecord", "onrecord"):
            if rest:
                raise ScenarioSyntaxError(line_no, f"{action} takes no arguments")
            events.append(Event(tick, action, client, ()))
        else:
            raise ScenarioSyntaxError(line_no, f"unknown action {action!r}")
    return Scenario(clients, files, events)


def _parse_expect(rest: list[str], line_no: int):
    if len(rest) >= 2 and rest[-2] == "expect":
        outcome = rest[-1]
        if outcome not in ("apply", "deny"):
            raise ScenarioSyntaxError(line_no, "expect takes apply|deny")
        del rest[-2:]
        return outcome
    return None


def _parse_assert(tick: int, rest: list[str], line_no: int) -> Event:
    if not rest:
        raise ScenarioSyntaxError(line_no, "empty assert")
    what = rest[0]
    if what == "buildable":
        if len(rest) != 4 or rest[3] not in ("true", "false"):
            raise ScenarioSyntaxError(line_no, "usage: assert buildable <client> <file> true|false")
        return Event(tick, "assert", "", ("buildable", rest[1], rest[2], rest[3] == "true"))
    if what == "text":
        if len(rest) != 4:
            raise ScenarioSyntaxError(line_no, 'usage: assert text <client> <file> "<text>"')
        return Event(tick, "assert", "", ("text", rest[1], rest[2],
                                          _string(rest[3], line_no, "text")))
    if what == "locked":
        if len(rest) != 5 or rest[3] != "by":
            raise ScenarioSyntaxError(line_no, "usage: assert locked <file> <path> by <client>|nobody")
        return Event(tick, "assert", "", ("locked", rest[1], rest[2], rest[4]))
    if what == "converged":
        if len(rest) != 2:
            raise ScenarioSyntaxError(line_no, "usage: assert converged <file>")
        return Event(tick, "assert", "", ("converged", rest[1]))
    raise ScenarioSyntaxError(line_no, f"unknown assert {what!r}")


# ------------------------------------------------------------- transport

class Loopback:
    """In-memory star network: one global FIFO queue; every hop runs the
    real codec so only schema-valid canonical frames move."""

    def __init__(self, corpus: dict[str, str], client_names: list[str], trace: Trace):
        self.server = ServerCore(corpus)
        self.clients: dict[str, ClientCore] = {}
        self.trace = trace
        self.tick = 0
        self.queue: deque = deque()
        self._last_audit: dict | None = None
        for name in client_names:
            core = ClientCore(name)
            core.on_event = self._client_event(name)
            self.clients[name] = core

    def _client_event(self, name: str):
        def sink(payload: dict):
            self.trace.add(ev="client", client=name, tick=self.tick, **payload)
        return sink

    def connect_all(self):
        for name, core in self.clients.items():
            core.connect()
            self.flush(name)
            self.pump()

    def flush(self, name: str):
        core = self.clients[name]
        for msg in core.outbox:
            self.queue.append(("server", name, msg))
        core.outbox.clear()

    def pump(self):
        while self.queue:
            dst, src, msg = self.queue.popleft()
            line = encode(msg).decode("utf-8").rstrip("\n")
            decode(line + "\n")  # every hop must round-trip the codec
            self.trace.add(ev="msg", tick=self.tick, frm=src, to=dst, line=line)
            if dst == "server":
                for conn_id, reply in self.server.handle(src, msg):
                    self.queue.append((conn_id, "server", reply))
                self._audit_locks()
            else:
                core = self.clients[dst]
                core.on_server_message(msg)
                self.flush(dst)

    def _audit_locks(self):
        holders: dict[str, list[str]] = {}
        for lock_id in sorted(self.server.locks.records):
            rec = self.server.locks.records[lock_id]
            name = self.server.sessions[rec.holder].name
            holders.setdefault(name, []).extend(
                self.server._element_paths(rec.unit.elements))
        audit = {h: sorted(set(p)) for h, p in sorted(holders.items())}
        if audit != self._last_audit:
            self.trace.add(ev="lock_audit", tick=self.tick, holders=audit)
            self._last_audit = audit

    def act(self, name: str, fn):
        """Run one local action and pump until the whole network settles."""
        core = self.clients[name]
        fn(core)
        self.flush(name)
        self.pump()
        for _ in range(64):
            if core.idle or not core.connected:
                break
            self.flush(name)
            if not self.queue:
                break
            self.pump()
        return core.last_result


# ----------------------------------------------------------------- runner

def run(scenario: Scenario, seed: int = 0) -> Trace:
    trace = Trace()
    for file_name in sorted(scenario.files):
        trace.add(ev="corpus", tick=0, file=file_name, text=scenario.files[file_name])
    statuses = check_buildable(
        [SourceText(n, t) for n, t in scenario.files.items()])
    if not project_buildable(statuses):
        raise ValueError("initial corpus is not buildable")
    net = Loopback(scenario.files, scenario.clients, trace)
    net.connect_all()
    for event in scenario.events:
        net.tick = event.tick
        _execute(net, event, trace)
    net.tick += 1
    _drive_to_quiescence(net, trace)
    if net.server.locks.records:
        held = {lock_id: sorted(rec.unit.elements)
                for lock_id, rec in net.server.locks.records.items()}
        trace.failures.append(f"locks survived quiescence: {held}")
    for name in scenario.clients:
        core = net.clients[name]
        for file_name, text in sorted(core.local_texts().items()):
            trace.add(ev="final", tick=net.tick, client=name, file=file_name,
                      text=text, mode="on" if core.on_record else "off")
    return trace


def _execute(net: Loopback, event: Event, trace: Trace):
    kind = event.kind
    if kind == "assert":
        ok, detail = _check_assert(net, event.args)
        trace.add(ev="assert", tick=event.tick, check=event.args[0],
                  ok=ok, detail=detail)
        if not ok:
            trace.failures.append(f"tick {event.tick}: assert {detail}")
        return
    if kind in ("insert", "delete"):
        if kind == "insert":
            file_name, offset, text, expect = event.args
            cmd = EditCommand(file_name, offset, insert=text)
        else:
            file_name, offset, length, expect = event.args
            cmd = EditCommand(file_name, offset, delete=length)
        result = net.act(event.client, lambda c: c.submit_edit(cmd))
        outcome = ("apply" if isinstance(result, Applied) else
                   "deny" if isinstance(result, Denied) else "blocked")
        if expect is not None and outcome != expect:
            detail = (f"{event.client} {kind} {file_name}@{event.args[1]}: "
                      f"expected {expect}, got {outcome}")
            trace.add(ev="assert", tick=event.tick, check="expect", ok=False, detail=detail)
            trace.failures.append(f"tick {event.tick}: {detail}")
        return
    if kind == "revert":
        net.act(event.client, lambda c: c.submit_revert(event.args[0]))
        return
    if kind == "offrecord":
        net.act(event.client, lambda c: c.submit_record_mode(False))
        return
    if kind == "onrecord":
        net.act(event.client, lambda c: c.submit_record_mode(True))
        return
    raise AssertionError(f"unknown event kind {kind}")


def _check_assert(net: Loopback, args: tuple):
    what = args[0]
    if what == "buildable":
        _, client, file_name, expected = args
        actual = net.clients[client].buildable(file_name)
        return actual == expected, f"buildable {client} {file_name}: expected {expected}, got {actual}"
    if what == "text":
        _, client, file_name, expected = args
        actual = net.clients[client].buffers[file_name].text()
        return actual == expected, f"text {client} {file_name}: expected {expected!r}, got {actual!r}"
    if what == "locked":
        _, file_name, path, who = args
        eid = net.server.table.get_id(path)
        holder_name = "nobody"
        if eid is not None:
            hit = net.server.locks.query(eid)
            if hit is not None:
                holder_name = net.server.sessions[hit[0]].name
        return holder_name == who, f"locked {file_name} {path}: expected {who}, got {holder_name}"
    if what == "converged":
        (_, file_name) = args
        canonical = net.server.files[file_name].text
        mismatch = [n for n, c in net.clients.items()
                    if c.on_record and c.buffers[file_name].text() != canonical]
        return not mismatch, f"converged {file_name}: diverged clients {mismatch}"
    raise AssertionError(what)


def _drive_to_quiescence(net: Loopback, trace: Trace):
    """Finish outstanding work: on-record clients commit what builds and
    revert what does not; off-record clients stay isolated."""
    for _ in range(4 * len(net.clients) + 4):
        net.pump()
        busy = False
        for name in sorted(net.clients):
            core = net.clients[name]
            if not core.on_record or not core.connected:
                continue
            if core.pending_files():
                busy = True
                if core.buildable():
                    net.act(name, lambda c: c.maybe_commit(fresh=True))
                if core.pending_files():
                    for file_name in core.pending_files():
                        net.act(name, lambda c, f=file_name: c.submit_revert(f))
            elif core.held_locks:
                busy = True
                for file_name in sorted(core.buffers):
                    net.act(name, lambda c, f=file_name: c.submit_revert(f))
        if not busy:
            return
    trace.failures.append("quiescence not reached")


# ------------------------------------------------------------- generator

_OP_WEIGHTS = [
    ("introduce_method", 3),
    ("rename_method", 3),
    ("break_then_rename", 4),
    ("break_body", 4),
    ("change_params", 2),
    ("change_body", 4),
    ("remove_method", 1),
    ("introduce_field", 2),
    ("rename_field", 2),
    ("remove_field", 1),
    ("toggle_record", 1),
    ("revert", 1),
]


def generate_random_scenario(seed: int, n_clients: int, n_steps: int) -> Scenario:
    """Random but well-formed edit streams over a generated buildable
    corpus, recorded from a live run so that replay is exact.

    Some ops deliberately leave the acting client unbuildable with locks
    held and queue a fix for a later step, so other clients run into
    denials instead of sailing through an always-clean table."""
    assert n_clients >= 1
    rng = random.Random(seed)
    files = _generate_corpus(rng)
    names = [f"c{i + 1}" for i in range(n_clients)]
    events: list[Event] = []
    net = Loopback(files, names, Trace())
    net.connect_all()
    fresh = [0]
    deferred: dict[str, list] = {name: [] for name in names}

    for step in range(n_steps):
        tick = step + 1
        net.tick = tick
        name = names[rng.randrange(n_clients)]
        if deferred[name] and rng.random() < 0.6:
            fix = deferred[name].pop(0)
            events.extend(_apply_fix(net, name, tick, fix))
            continue
        op = _weighted_choice(rng, _OP_WEIGHTS)
        events.extend(_perform_op(net, rng, name, tick, op, fresh, deferred))

    tick = n_steps + 1
    net.tick = tick
    for name in names:
        for fix in deferred[name]:
            events.extend(_apply_fix(net, name, tick, fix))
        if not net.clients[name].on_record:
            events.append(Event(tick, "onrecord", name, ()))
            net.act(name, lambda c: c.submit_record_mode(True))
    return Scenario(names, files, events)


def _apply_fix(net: Loopback, name: str, tick: int, fix: tuple) -> list[Event]:
    """Execute a deferred repair against the client's current buffers."""
    events: list[Event] = []
    core = net.clients[name]
    kind = fix[0]
    if kind == "complete_stmt":
        _, file_name, pattern = fix
        text = core.buffers[file_name].text()
        at = text.find(pattern)
        if at < 0:
            return events  # reverted or reset in the meantime
        _do_edit(net, events, name, tick, file_name, at + len(pattern) - 1, insert="1 ")
        return events
    if kind == "fix_callers":
        _, old_name, suffix = fix
        edits = []
        for file_name in sorted(core.buffers):
            text = core.buffers[file_name].text()
            for m in re.finditer(rf"\b{re.escape(old_name)}\s*\(", text):
                edits.append((file_name, m.start() + len(old_name), suffix))
        for file_name, offset, ins in sorted(edits, key=lambda e: (e[0], -e[1])):
            result = _do_edit(net, events, name, tick, file_name, offset, insert=ins)
            if not isinstance(result, Applied):
                break
        return events
    raise AssertionError(kind)


def _weighted_choice(rng: random.Random, table):
    total = sum(w for _, w in table)
    pick = rng.randrange(total)
    for item, weight in table:
        pick -= weight
        if pick < 0:
            return item
    raise AssertionError


def _generate_corpus(rng: random.Random) -> dict[str, str]:
    n_files = rng.randint(2, 3)
    files = {}
    method_names = []
    for i in range(n_files):
        members = [f"int base{i};"]
        for k in range(rng.randint(1, 2)):
            mname = f"m{i}{k}"
            if method_names and rng.random() < 0.5:
                callee = rng.choice(method_names)
                body = f"return {callee}() + base{i};"
            else:
                body = f"return base{i} + {rng.randint(0, 9)};"
            members.append(f"int {mname}() {{ {body} }}")
            method_names.append(mname)
        files[f"f{i}.toy"] = f"class C{i} {{ " + " ".join(members) + " }"
    return files


def _local_world(core: ClientCore) -> dict:
    asts = {}
    for f, b in sorted(core.buffers.items()):
        ast, _ = parse(b.text())
        if ast is not None:
            asts[f] = ast
    return asts


def _element_index(asts: dict) -> dict:
    elements = {}
    for f in sorted(asts):
        for cls in asts[f].classes:
            elements[cls.name] = (f, cls)
            for member in cls.members:
                elements[element_path(member)] = (f, member)
    return elements


def _reference_sites(asts: dict, target_path: str) -> list[tuple[str, object, object]]:
    """(file, ref_node, parent_node) for every reference bound to target."""
    sites = []
    for f in sorted(asts):
        others = [asts[g] for g in sorted(asts) if g != f]
        bindings, _ = resolve(asts[f], others)
        for ref, decl in bindings.items():
            if decl.kind in ("Class", "Field", "Method") and element_path(decl) == target_path:
                sites.append((f, ref, ref.parent))
    return sites


def _name_end(text: str, node) -> int:
    """End offset of the declaration's name token."""
    limit = node.block.span.start if node.kind == "Method" else node.span.end
    last = None
    for m in re.finditer(rf"\b{re.escape(node.name)}\b", text[node.span.start:limit]):
        last = m
    assert last is not None, f"name {node.name!r} not found in its own span"
    return node.span.start + last.end()


def _matching_paren(text: str, open_pos: int) -> int:
    depth = 0
    for j in range(open_pos, len(text)):
        if text[j] == "(":
            depth += 1
        elif text[j] == ")":
            depth -= 1
            if depth == 0:
                return j
    raise ValueError("unbalanced parentheses")


def _do_edit(net: Loopback, events: list, name: str, tick: int, file_name: str,
             offset: int, *, insert: str | None = None, delete: int | None = None):
    if insert is not None:
        event = Event(tick, "insert", name, (file_name, offset, insert, None))
        cmd = EditCommand(file_name, offset, insert=insert)
    else:
        event = Event(tick, "delete", name, (file_name, offset, delete, None))
        cmd = EditCommand(file_name, offset, delete=delete)
    events.append(event)
    return net.act(name, lambda c: c.submit_edit(cmd))


def _grouped_inserts(net, events, name, tick, edits):
    """Execute (file, offset, text) inserts highest-offset-first per file so
    earlier offsets stay valid; abort the group on the first denial."""
    for file_name, offset, text in sorted(edits, key=lambda e: (e[0], -e[1])):
        result = _do_edit(net, events, name, tick, file_name, offset, insert=text)
        if not isinstance(result, Applied):
            return False
    return True


def _perform_op(net: Loopback, rng: random.Random, name: str, tick: int,
                op: str, fresh: list, deferred: dict[str, list]) -> list[Event]:
    core = net.clients[name]
    events: list[Event] = []
    asts = _local_world(core)
    if not asts:
        return events
    elements = _element_index(asts)
    methods = sorted(p for p, (_, n) in elements.items() if n.kind == "Method")
    fields = sorted(p for p, (_, n) in elements.items() if n.kind == "Field")
    classes = sorted(p for p, (_, n) in elements.items() if n.kind == "Class")

    def text_of(f):
        return core.buffers[f].text()

    if op == "break_body" and methods:
        # leave the method mid-statement: unbuildable, lock held until the
        # deferred completion lands
        target = rng.choice(methods)
        file_name, node = elements[target]
        fresh[0] += 1
        stub = f" int q{fresh[0]} = ;"
        result = _do_edit(net, events, name, tick, file_name,
                          node.block.span.start + 1, insert=stub)
        if isinstance(result, Applied):
            deferred[name].append(("complete_stmt", file_name, f"q{fresh[0]} = ;"))
        return events

    if op == "break_then_rename" and methods:
        # rename without touching the callers yet: the defining lock
        # covers them while the project stays unbuildable
        target = rng.choice(methods)
        file_name, node = elements[target]
        if core.on_record and _reference_sites(asts, target):
            fresh[0] += 1
            suffix = "abcdexyz"[fresh[0] % 8]
            result = _do_edit(net, events, name, tick, file_name,
                              _name_end(text_of(file_name), node), insert=suffix)
            if isinstance(result, Applied):
                deferred[name].append(("fix_callers", node.name, suffix))
        return events

    if op == "toggle_record":
        if core.on_record and not core.pending_files() and not core.held_locks:
            events.append(Event(tick, "offrecord", name, ()))
            net.act(name, lambda c: c.submit_record_mode(False))
        elif not core.on_record:
            events.append(Event(tick, "onrecord", name, ()))
            net.act(name, lambda c: c.submit_record_mode(True))
        return events

    if op == "revert":
        dirty = core.pending_files()
        if dirty:
            file_name = rng.choice(dirty)
            events.append(Event(tick, "revert", name, (file_name,)))
            net.act(name, lambda c: c.submit_revert(file_name))
        return events

    if op in ("introduce_method", "introduce_field") and classes:
        cls_path = rng.choice(classes)
        file_name, cls = elements[cls_path]
        fresh[0] += 1
        if op == "introduce_method":
            text = f"int n{fresh[0]}() {{ return {rng.randint(0, 9)}; }} "
        else:
            text = f"int g{fresh[0]}; "
        _do_edit(net, events, name, tick, file_name, cls.span.end - 1, insert=text)
        return events

    if op in ("rename_method", "rename_field"):
        pool = methods if op == "rename_method" else fields
        if not pool:
            return events
        target = rng.choice(pool)
        file_name, node = elements[target]
        fresh[0] += 1
        suffix = "abcdexyz"[fresh[0] % 8]
        edits = [(file_name, _name_end(text_of(file_name), node), suffix)]
        for site_file, ref, _parent in _reference_sites(asts, target):
            edits.append((site_file, ref.span.end, suffix))
        _grouped_inserts(net, events, name, tick, edits)
        return events

    if op == "change_params" and methods:
        target = rng.choice(methods)
        file_name, node = elements[target]
        fresh[0] += 1
        open_paren = text_of(file_name).index("(", _name_end(text_of(file_name), node) - 1)
        close = _matching_paren(text_of(file_name), open_paren)
        lead = ", " if node.params else ""
        edits = [(file_name, close, f"{lead}int p{fresh[0]}")]
        for site_file, ref, parent in _reference_sites(asts, target):
            if parent is None or parent.kind != "Call":
                continue
            call_open = text_of(site_file).index("(", ref.span.end)
            call_close = _matching_paren(text_of(site_file), call_open)
            args_lead = ", " if len(parent.children) > 1 else ""
            edits.append((site_file, call_close, f"{args_lead}{rng.randint(0, 9)}"))
        _grouped_inserts(net, events, name, tick, edits)
        return events

    if op == "change_body" and methods:
        target = rng.choice(methods)
        file_name, node = elements[target]
        fresh[0] += 1
        if rng.random() < 0.4:
            callee_path = rng.choice(methods)
            _, callee = elements[callee_path]
            args = ", ".join(str(rng.randint(0, 9)) for _ in callee.params)
            stmt = f" int t{fresh[0]} = {callee.name}({args});"
        else:
            stmt = f" int t{fresh[0]} = {rng.randint(0, 99)};"
        _do_edit(net, events, name, tick, file_name, node.block.span.start + 1, insert=stmt)
        return events

    if op in ("remove_method", "remove_field"):
        pool = methods if op == "remove_method" else fields
        candidates = [p for p in pool if not _reference_sites(asts, p)]
        if not candidates:
            return events
        target = rng.choice(candidates)
        file_name, node = elements[target]
        _do_edit(net, events, name, tick, file_name, node.span.start,
                 delete=node.span.end - node.span.start)
        return events

    return events


# --------------------------------------------------------------- oracles

def _canonical_updates(trace: Trace):
    """Yield (rec, msg, texts) scanning the trace while tracking canonical
    texts from accepted commits (author acks), independent of propagation."""
    texts: dict[str, str] = {}
    commits: dict[tuple[str, str, int], str] = {}
    for rec in trace.records():
        msg = None
        if rec["ev"] == "corpus":
            texts[rec["file"]] = rec["text"]
        elif rec["ev"] == "msg":
            msg = decode(rec["line"] + "\n")
            if msg.type == "commit" and rec["to"] == "server":
                commits[(rec["frm"], msg.body["file_name"], msg.body["base_version"])] = \
                    msg.body["text"]
            elif msg.type == "commit_ack":
                key = (rec["to"], msg.body["file_name"], msg.body["version"] - 1)
                texts[msg.body["file_name"]] = commits[key]
        yield rec, msg, texts


def sequential_replay_oracle(trace: Trace) -> dict[str, str]:
    """Final texts from replaying only the accepted commits, in commit
    order, over the initial corpus."""
    texts: dict[str, str] = {}
    for _rec, _msg, texts in _canonical_updates(trace):
        pass
    return texts


def check_convergence(trace: Trace) -> list[str]:
    oracle = sequential_replay_oracle(trace)
    problems = []
    for rec in trace.records():
        if rec["ev"] == "final" and rec["mode"] == "on":
            if rec["text"] != oracle.get(rec["file"]):
                problems.append(
                    f"{rec['client']} diverged on {rec['file']}: "
                    f"{rec['text']!r} != {oracle.get(rec['file'])!r}")
    return problems


def check_buildable_propagation(trace: Trace) -> list[str]:
    """Every propagate must carry the canonical text of a buildable project
    state, and versions must be gapless per file."""
    problems = []
    versions: dict[str, int] = {}
    acked: set[tuple[str, int]] = set()
    checked: set[tuple[str, int]] = set()
    for rec, msg, texts in _canonical_updates(trace):
        if rec["ev"] == "corpus":
            versions[rec["file"]] = 0
        if msg is None:
            continue
        if msg.type == "commit_ack":
            file_name, version = msg.body["file_name"], msg.body["version"]
            if (file_name, version) not in acked:
                acked.add((file_name, version))
                prev = versions.setdefault(file_name, 0)
                if version != prev + 1:
                    problems.append(f"{file_name}: version {version} after {prev}")
                versions[file_name] = version
        elif msg.type == "propagate":
            file_name, version = msg.body["file_name"], msg.body["version"]
            if msg.body["text"] != texts[file_name]:
                problems.append(f"propagate {file_name} v{version} text "
                                f"differs from the acked commit")
            if version != versions.get(file_name):
                problems.append(f"propagate {file_name} v{version} does not "
                                f"match canonical version {versions.get(file_name)}")
            if (file_name, version) not in checked:
                checked.add((file_name, version))
                statuses = check_buildable(
                    [SourceText(n, t) for n, t in texts.items()])
                if not project_buildable(statuses):
                    problems.append(f"propagate {file_name} v{version} is not buildable")
    return problems


def check_lock_safety(trace: Trace) -> list[str]:
    """Replay lock audits against an independently built dependency world:
    no two holders may cover serialization-related elements."""
    problems = []
    world = None
    last_texts: dict[str, str] = {}
    for rec, msg, texts in _canonical_updates(trace):
        if texts != last_texts:
            world = None
            last_texts = dict(texts)
        if rec["ev"] != "lock_audit":
            continue
        if world is None:
            world = _build_world(last_texts)
        table, graph = world
        holders = rec["holders"]
        names = sorted(holders)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                for pa in holders[a]:
                    for pb in holders[b]:
                        ia, ib = table.by_path.get(pa), table.by_path.get(pb)
                        if ia is None or ib is None:
                            continue
                        if must_serialize(ia, ib, table, graph):
                            problems.append(
                                f"tick {rec['tick']}: {a} and {b} concurrently "
                                f"hold related elements {pa} / {pb}")
    return problems


def _build_world(texts: dict[str, str]):
    statuses = check_buildable([SourceText(n, t) for n, t in texts.items()])
    asts = {n: s.ast for n, s in statuses.items() if s.buildable}
    bindings = {n: s.bindings for n, s in statuses.items() if s.buildable}
    table = assign_element_ids(ElementTable.empty(), asts, IdAllocator())
    graph = build_reference_graph(table, bindings)
    return table, graph
