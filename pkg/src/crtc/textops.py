"""Span patching over a base text.

A PatchSet records local edits as non-overlapping replacements of base
regions. The current buffer text is derived by splicing; rebasing onto a
new base shifts patch offsets through the diff, which is valid whenever
the upstream changes and the local patches touch disjoint regions (the
lock scheme guarantees this for on-record editing).
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from difflib import SequenceMatcher


class RebaseConflict(RuntimeError):
    pass


def diff_regions(old: str, new: str) -> list[tuple[int, int, int]]:
    """Non-equal blocks as (old_start, old_end, new_len), in order."""
    sm = SequenceMatcher(None, old, new, autojunk=False)
    out = []
    for tag, i1, i2, j1, j2 in sm.get_opcodes():
        if tag != "equal":
            out.append((i1, i2, j2 - j1))
    return out


@dataclass
class Patch:
    base_start: int
    base_end: int
    text: str
    locks: set[int] = field(default_factory=set)

    def clone(self) -> "Patch":
        return Patch(self.base_start, self.base_end, self.text, set(self.locks))


@dataclass(frozen=True)
class InsertPlan:
    cur_offset: int
    patch_index: int | None  # insert lands inside this patch's text
    text_offset: int         # offset within the patch text (when inside)
    base_offset: int         # gap position in base coords (when not inside)

    @property
    def in_gap(self) -> bool:
        return self.patch_index is None


@dataclass(frozen=True)
class DeletePlan:
    cur_offset: int
    length: int
    # ("patch", idx, lo, hi) trims patch text; ("gap", base_lo, base_hi)
    # removes untouched base bytes.
    parts: tuple[tuple, ...]

    def gap_regions(self) -> list[tuple[int, int]]:
        return [(p[1], p[2]) for p in self.parts if p[0] == "gap"]


class PatchSet:
    def __init__(self, base: str):
        self.base = base
        self.patches: list[Patch] = []

    def clone(self) -> "PatchSet":
        out = PatchSet(self.base)
        out.patches = [p.clone() for p in self.patches]
        return out

    @property
    def dirty(self) -> bool:
        return bool(self.patches)

    def text(self) -> str:
        parts = []
        base_pos = 0
        for p in self.patches:
            parts.append(self.base[base_pos:p.base_start])
            parts.append(p.text)
            base_pos = p.base_end
        parts.append(self.base[base_pos:])
        return "".join(parts)

    def pending_spans(self) -> list[tuple[int, int]]:
        return [(p.base_start, p.base_end) for p in self.patches]

    def all_locks(self) -> set[int]:
        out: set[int] = set()
        for p in self.patches:
            out |= p.locks
        return out

    def _segments(self):
        """Yield ("gap", cur_lo, cur_hi, base_lo) and ("patch", cur_lo,
        cur_hi, idx) segments covering the current text in order."""
        cur = 0
        base_pos = 0
        for idx, p in enumerate(self.patches):
            gap = p.base_start - base_pos
            if gap:
                yield ("gap", cur, cur + gap, base_pos)
            cur += gap
            yield ("patch", cur, cur + len(p.text), idx)
            cur += len(p.text)
            base_pos = p.base_end
        tail = len(self.base) - base_pos
        yield ("gap", cur, cur + tail, base_pos)

    def plan_insert(self, cur_offset: int) -> InsertPlan:
        if not 0 <= cur_offset <= len(self.text()):
            raise IndexError(f"insert offset {cur_offset} out of range")
        segs = list(self._segments())
        # Patch boundaries extend the patch (start prepends, end appends) so
        # continued typing stays inside the edit that already holds a lock.
        for kind, lo, hi, extra in segs:
            if kind == "patch" and lo <= cur_offset <= hi:
                return InsertPlan(cur_offset, extra, cur_offset - lo, -1)
        for kind, lo, hi, extra in segs:
            if kind == "gap" and lo <= cur_offset <= hi:
                return InsertPlan(cur_offset, None, -1, extra + (cur_offset - lo))
        raise AssertionError("unreachable")

    def apply_insert(self, plan: InsertPlan, text: str, locks: set[int]) -> None:
        if plan.patch_index is not None:
            p = self.patches[plan.patch_index]
            p.text = p.text[:plan.text_offset] + text + p.text[plan.text_offset:]
            p.locks |= locks
        else:
            self.patches.append(Patch(plan.base_offset, plan.base_offset, text, set(locks)))
        self._normalize()

    def plan_delete(self, cur_offset: int, length: int) -> DeletePlan:
        if length < 0 or cur_offset < 0 or cur_offset + length > len(self.text()):
            raise IndexError(f"delete [{cur_offset}, {cur_offset + length}) out of range")
        d0, d1 = cur_offset, cur_offset + length
        parts = []
        for kind, lo, hi, extra in self._segments():
            a, b = max(lo, d0), min(hi, d1)
            if a >= b:
                continue
            if kind == "patch":
                parts.append(("patch", extra, a - lo, b - lo))
            else:
                parts.append(("gap", extra + (a - lo), extra + (b - lo)))
        return DeletePlan(cur_offset, length, tuple(parts))

    def apply_delete(self, plan: DeletePlan, locks: set[int]) -> None:
        for part in plan.parts:
            if part[0] == "patch":
                _, idx, lo, hi = part
                p = self.patches[idx]
                p.text = p.text[:lo] + p.text[hi:]
                p.locks |= locks
            else:
                _, b_lo, b_hi = part
                self.patches.append(Patch(b_lo, b_hi, "", set(locks)))
        self._normalize()

    def _normalize(self) -> None:
        self.patches.sort(key=lambda p: (p.base_start, p.base_end))
        merged: list[Patch] = []
        for p in self.patches:
            if merged and p.base_start <= merged[-1].base_end:
                last = merged[-1]
                if p.base_start < last.base_end:
                    raise AssertionError("overlapping patches")
                last.base_end = p.base_end
                last.text += p.text
                last.locks |= p.locks
            else:
                merged.append(p)
        self.patches = [p for p in merged if p.text or p.base_start != p.base_end]

    def rebase(self, new_base: str) -> None:
        """Shift patches through the diff between the old and new base.

        Upstream regions must not overlap patch interiors; insertions at a
        patch boundary land before the patch (commit order wins)."""
        regions = diff_regions(self.base, new_base)
        for p in self.patches:
            delta = 0
            for os_, oe, nlen in regions:
                if oe <= p.base_start:
                    delta += nlen - (oe - os_)
                elif os_ >= p.base_end:
                    continue
                else:
                    raise RebaseConflict(
                        f"upstream change [{os_},{oe}) overlaps local patch "
                        f"[{p.base_start},{p.base_end})")
            p.base_start += delta
            p.base_end += delta
        self.base = new_base
        self._normalize()

    def rebase_anchored(self, new_base: str, anchors: list[tuple[int, int]]) -> None:
        """Rebase using (old_pos, new_pos) anchor pairs, e.g. the span
        boundaries of elements matched across the two base versions.

        Each patch shifts by the delta of the nearest anchor at or after
        it, which places edits pending in a structural gap after whatever
        upstream inserted into the same gap (commit order wins). Replaced
        base bytes must survive upstream verbatim; disagreement between
        anchors over a patch means overlapping edits, which locking is
        supposed to prevent, so both raise."""
        pts = sorted(set(anchors) | {(0, 0), (len(self.base), len(new_base))})
        olds = [o for o, _ in pts]
        news = [n for _, n in pts]
        if olds != sorted(olds) or news != sorted(news):
            raise RebaseConflict("element order changed upstream")

        def delta_at_or_after(pos: int) -> int:
            i = bisect_left(olds, pos)
            if i == len(olds):
                i -= 1
            return news[i] - olds[i]

        for p in self.patches:
            delta = delta_at_or_after(p.base_end)
            if delta_at_or_after(p.base_start) != delta:
                raise RebaseConflict(
                    f"upstream changes straddle local patch "
                    f"[{p.base_start},{p.base_end})")
            lo, hi = p.base_start + delta, p.base_end + delta
            if self.base[p.base_start:p.base_end] != new_base[lo:hi]:
                raise RebaseConflict("upstream changed bytes under a local edit")
            p.base_start, p.base_end = lo, hi
        self.base = new_base
        self._normalize()
