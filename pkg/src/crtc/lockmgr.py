"""Server-side pessimistic lock table.

Body locks cover a single element; defining locks cover the target plus
its breakable set (everything referencing it), computed once at
acquisition. A request is denied when any requested element is
serialization-related to an element held by another session. There is no
waiting and no timeout: locks fall away on commit, revert, going off the
record, or disconnect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .semantics import ReferenceGraph, SerializeOracle, breakable_set

BODY = "body"
DEFINING = "defining"


@dataclass(frozen=True)
class LockUnit:
    elements: frozenset[int]
    kind: str  # BODY | DEFINING

    def __post_init__(self):
        assert self.elements, "lock unit must cover at least one element"
        assert self.kind in (BODY, DEFINING)


@dataclass
class LockRecord:
    lock_id: int
    holder: str  # session id
    unit: LockUnit
    acquired_at: dict[str, int]  # file -> version at acquisition


@dataclass(frozen=True)
class Grant:
    record: LockRecord


@dataclass(frozen=True)
class Deny:
    holder: str  # blocking session id
    elements: frozenset[int]  # blocking elements of the existing record(s)


def compute_lock_unit(target: int, edit_class: str, graph: ReferenceGraph,
                      table) -> LockUnit:
    """Lock unit for an edit: body edits take the element alone; header
    (defining-attribute) edits cascade over the breakable set; a new
    member locks its provisional id; using an element counts as touching
    it, so a new reference takes a body lock on the referent."""
    if edit_class == "header":
        members = {target} | breakable_set(graph, table, target)
        return LockUnit(frozenset(members), DEFINING)
    if edit_class in ("body", "new_reference"):
        table.info(target)
        return LockUnit(frozenset({target}), BODY)
    if edit_class == "new_member":
        # provisional id: not yet in the table by design
        return LockUnit(frozenset({target}), BODY)
    raise ValueError(f"no lock unit for edit class {edit_class!r}")


class LockTable:
    def __init__(self):
        self.records: dict[int, LockRecord] = {}
        self.next_lock_id = 1

    def live_elements(self) -> dict[int, int]:
        """element id -> lock_id over all live records."""
        out = {}
        for lock_id in sorted(self.records):
            for el in self.records[lock_id].unit.elements:
                out[el] = lock_id
        return out

    def request(self, holder: str, unit: LockUnit, relations: SerializeOracle,
                versions: dict[str, int] | None = None) -> Grant | Deny:
        """Grant unless a serialization-related element is held elsewhere.

        Re-requesting covered elements is idempotent: the holder's
        overlapping records are merged into one extended record. A deny
        mutates nothing.
        """
        blocking: set[int] = set()
        blocking_holder: Optional[str] = None
        for lock_id in sorted(self.records):
            rec = self.records[lock_id]
            if rec.holder == holder:
                continue
            if blocking_holder is not None and rec.holder != blocking_holder:
                continue
            for held in sorted(rec.unit.elements):
                for wanted in sorted(unit.elements):
                    if relations(wanted, held):
                        blocking.add(held)
                        blocking_holder = rec.holder
        if blocking_holder is not None:
            return Deny(blocking_holder, frozenset(blocking))

        merged_elements = set(unit.elements)
        merged_kind = unit.kind
        absorbed = []
        for lock_id in sorted(self.records):
            rec = self.records[lock_id]
            if rec.holder == holder and rec.unit.elements & merged_elements:
                merged_elements |= rec.unit.elements
                if rec.unit.kind == DEFINING:
                    merged_kind = DEFINING
                absorbed.append(lock_id)
        if absorbed:
            lock_id = absorbed[0]
            base = self.records[lock_id]
            for other in absorbed[1:]:
                del self.records[other]
            record = LockRecord(lock_id, holder, LockUnit(frozenset(merged_elements), merged_kind),
                                base.acquired_at)
            self.records[lock_id] = record
            return Grant(record)

        record = LockRecord(self.next_lock_id, holder,
                            LockUnit(frozenset(merged_elements), merged_kind),
                            dict(versions or {}))
        self.next_lock_id += 1
        self.records[record.lock_id] = record
        return Grant(record)

    def release_all(self, holder: str) -> list[int]:
        """Drop every record of the holder; returns freed element ids."""
        freed: set[int] = set()
        for lock_id in sorted(self.records):
            if self.records[lock_id].holder == holder:
                freed |= self.records[lock_id].unit.elements
                del self.records[lock_id]
        return sorted(freed)

    def release_one(self, holder: str, lock_id: int) -> list[int]:
        rec = self.records.get(lock_id)
        if rec is None or rec.holder != holder:
            return []
        del self.records[lock_id]
        return sorted(rec.unit.elements)

    def release_elements(self, holder: str, element_ids: set[int]) -> list[int]:
        """Shrink the holder's records by the given elements, dropping
        records that become empty. Lets a commit release exactly the
        committed files' locks while cross-file locks keep protecting the
        rest of an in-flight batch."""
        freed: set[int] = set()
        for lock_id in sorted(self.records):
            rec = self.records[lock_id]
            if rec.holder != holder:
                continue
            hit = rec.unit.elements & element_ids
            if not hit:
                continue
            freed |= hit
            remaining = rec.unit.elements - element_ids
            if remaining:
                self.records[lock_id] = LockRecord(
                    lock_id, holder, LockUnit(frozenset(remaining), rec.unit.kind),
                    rec.acquired_at)
            else:
                del self.records[lock_id]
        return sorted(freed)

    def query(self, element: int) -> Optional[tuple[str, int, str]]:
        """(holder, lock_id, kind) of the live record covering element."""
        for lock_id in sorted(self.records):
            rec = self.records[lock_id]
            if element in rec.unit.elements:
                return (rec.holder, lock_id, rec.unit.kind)
        return None

    def held_by(self, holder: str) -> list[LockRecord]:
        return [self.records[i] for i in sorted(self.records)
                if self.records[i].holder == holder]

    def covered_elements(self, holder: str) -> set[int]:
        out: set[int] = set()
        for rec in self.held_by(holder):
            out |= rec.unit.elements
        return out
