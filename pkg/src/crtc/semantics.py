"""Element identity, reference graph, and the dependency predicates.

Elements are the named class/field/method declarations of a buildable
project. Ids are issued once and never reused; an element keeps its id
while its path is unchanged, and across a rename when the rename happened
under a lock pinning the id. Two elements are dependent when they are the
same element, share an AST parent, or one references the other; editing
must be serialized unless the only relation is a commutative shared
parent (class members and top-level classes reorder freely).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .toylang import (
    CLASS,
    ELEMENT_KINDS,
    AstNode,
    BindingTable,
    Span,
    element_path,
)


class UnknownElement(KeyError):
    pass


class PathCollision(ValueError):
    pass


@dataclass(frozen=True)
class ElementInfo:
    id: int
    file_name: str
    path: str
    span: Span
    kind: str  # Class | Field | Method


@dataclass(frozen=True)
class ElementTable:
    by_id: dict[int, ElementInfo]
    by_path: dict[str, int]
    generation: dict[str, int]  # file_name -> version the table was computed from

    @staticmethod
    def empty() -> "ElementTable":
        return ElementTable({}, {}, {})

    def info(self, element_id: int) -> ElementInfo:
        try:
            return self.by_id[element_id]
        except KeyError:
            raise UnknownElement(element_id) from None

    def id_of(self, path: str) -> int:
        try:
            return self.by_path[path]
        except KeyError:
            raise UnknownElement(path) from None

    def get_id(self, path: str) -> Optional[int]:
        return self.by_path.get(path)

    def file_slice(self, file_name: str) -> list[ElementInfo]:
        return sorted(
            (e for e in self.by_id.values() if e.file_name == file_name),
            key=lambda e: e.span.start,
        )

    def parent_key(self, element_id: int):
        """AST-parent identity: the owning class id for members, a
        per-file program marker for classes."""
        info = self.info(element_id)
        if "/" in info.path:
            owner = info.path.split("/", 1)[0]
            return ("class", self.by_path[owner])
        return ("program", info.file_name)


class IdAllocator:
    def __init__(self, start: int = 1):
        self.next_id = start

    def issue(self) -> int:
        out = self.next_id
        self.next_id += 1
        return out


def extract_elements(file_name: str, ast: AstNode) -> list[tuple[str, Span, str]]:
    """(path, span, kind) for every named element, in span order."""
    out = []
    for cls in ast.classes:
        out.append((cls.name, cls.span, CLASS))
        for member in cls.members:
            out.append((element_path(member), member.span, member.kind))
    return out


def assign_element_ids(
    previous: ElementTable,
    asts: dict[str, AstNode],
    allocator: IdAllocator,
    pins: frozenset[int] = frozenset(),
    provisionals: dict[int, tuple[str, str]] | None = None,
    generation: dict[str, int] | None = None,
) -> ElementTable:
    """Recompute the element table for a new buildable project state.

    Identity carries over by path; a path change is treated as a rename
    (keeping the old id) only when the vanished element's id is in
    ``pins`` (the committing session's locked elements). ``provisionals``
    maps pre-issued ids for announced new members to (file, class_path);
    matching new elements adopt them. Anything else gets a fresh id.
    """
    provisionals = provisionals or {}
    new_elements: dict[str, list[tuple[str, Span, str]]] = {
        f: extract_elements(f, ast) for f, ast in sorted(asts.items())
    }
    new_paths = {p for elems in new_elements.values() for (p, _, _) in elems}

    # Class renames first: member paths translate through them.
    rename: dict[str, str] = {}  # old path -> new path
    for file_name, elems in new_elements.items():
        old_classes = [
            e for e in previous.file_slice(file_name)
            if e.kind == CLASS and e.path not in new_paths
        ]
        vanished_pinned = [e for e in old_classes if e.id in pins]
        appeared = [
            (p, s) for (p, s, k) in elems
            if k == CLASS and p not in previous.by_path
        ]
        for old, (new_path, _) in zip(vanished_pinned, appeared):
            rename[old.path] = new_path

    class_rename = dict(rename)

    def translate(old_path: str) -> str:
        if old_path in class_rename:
            return class_rename[old_path]
        if "/" in old_path:
            owner, member = old_path.split("/", 1)
            if owner in class_rename:
                return f"{class_rename[owner]}/{member}"
        return old_path

    translated_old: dict[str, ElementInfo] = {}
    for info in previous.by_id.values():
        translated_old[translate(info.path)] = info

    # Member-level renames: vanished pinned members matched to appeared
    # members of the same class and kind, in span order.
    member_rename: dict[tuple[str, str, str], list[ElementInfo]] = {}
    for info in previous.by_id.values():
        tpath = translate(info.path)
        if tpath in new_paths or info.id not in pins or "/" not in tpath:
            continue
        owner = tpath.split("/", 1)[0]
        member_rename.setdefault((info.file_name, owner, info.kind), []).append(info)
    for bucket in member_rename.values():
        bucket.sort(key=lambda e: e.span.start)

    provisional_pool: dict[tuple[str, str], list[int]] = {}
    for pid, (pfile, pclass) in sorted(provisionals.items()):
        provisional_pool.setdefault((pfile, pclass), []).append(pid)

    by_id: dict[int, ElementInfo] = {}
    by_path: dict[str, int] = {}

    def emit(eid: int, file_name: str, path: str, span: Span, kind: str):
        if eid in by_id:
            raise PathCollision(f"element id {eid} claimed by {by_id[eid].path!r} and {path!r}")
        info = ElementInfo(eid, file_name, path, span, kind)
        by_id[eid] = info
        by_path[path] = eid

    for file_name, elems in new_elements.items():
        for path, span, kind in elems:
            old = translated_old.get(path)
            if old is not None and old.kind == kind:
                emit(old.id, file_name, path, span, kind)
                continue
            owner = path.split("/", 1)[0] if "/" in path else None
            bucket = member_rename.get((file_name, owner, kind)) if owner else None
            if bucket:
                emit(bucket.pop(0).id, file_name, path, span, kind)
                continue
            pool = provisional_pool.get((file_name, owner or ""))
            if pool:
                emit(pool.pop(0), file_name, path, span, kind)
                continue
            emit(allocator.issue(), file_name, path, span, kind)

    gen = dict(generation) if generation is not None else dict(previous.generation)
    return ElementTable(by_id, by_path, gen)


@dataclass(frozen=True)
class ReferenceGraph:
    """Directed edges (referencing element id -> referenced element id)."""
    edges: frozenset[tuple[int, int]]

    def successors(self, element_id: int) -> set[int]:
        return {b for (a, b) in self.edges if a == element_id}

    def predecessors(self, element_id: int) -> set[int]:
        return {a for (a, b) in self.edges if b == element_id}


def enclosing_element(node: AstNode) -> Optional[AstNode]:
    cur = node.parent
    while cur is not None and cur.kind not in ELEMENT_KINDS:
        cur = cur.parent
    return cur


def build_reference_graph(table: ElementTable, bindings: dict[str, BindingTable]) -> ReferenceGraph:
    """Edge A->B iff some NameRef inside element A binds to element B.

    ``bindings`` maps file_name to that file's binding table. Bindings to
    params and locals are method-internal and contribute no edges;
    self-edges from recursion are kept.
    """
    edges: set[tuple[int, int]] = set()
    for file_name in sorted(bindings):
        for ref, decl in bindings[file_name].items():
            if decl.kind not in ELEMENT_KINDS:
                continue
            src = enclosing_element(ref)
            if src is None:
                continue
            src_id = table.get_id(element_path(src))
            dst_id = table.get_id(element_path(decl))
            if src_id is not None and dst_id is not None:
                edges.add((src_id, dst_id))
    return ReferenceGraph(frozenset(edges))


def breakable_set(graph: ReferenceGraph, table: ElementTable, target: int) -> set[int]:
    """Elements containing at least one reference bound to ``target``
    (direct referencers only, non-transitive)."""
    table.info(target)  # raises UnknownElement
    return graph.predecessors(target)


def dependent(e1: int, e2: int, table: ElementTable, graph: ReferenceGraph) -> bool:
    """The literal three-rule predicate: identity, shared AST parent,
    or a reference in either direction."""
    table.info(e1)
    table.info(e2)
    if e1 == e2:
        return True
    if table.parent_key(e1) == table.parent_key(e2):
        return True
    return (e1, e2) in graph.edges or (e2, e1) in graph.edges


def must_serialize(e1: int, e2: int, table: ElementTable, graph: ReferenceGraph) -> bool:
    """Enforcement policy: like ``dependent`` but the shared-parent rule
    is waived for commutative parents. Class members and top-level
    classes reorder freely, so among lockable elements only identity and
    references force serialization."""
    table.info(e1)
    table.info(e2)
    if e1 == e2:
        return True
    return (e1, e2) in graph.edges or (e2, e1) in graph.edges


SerializeOracle = Callable[[int, int], bool]
