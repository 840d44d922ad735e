"""PatchSet vs a plain-string mirror, plus rebase behavior."""

from hypothesis import given, settings
from hypothesis import strategies as st

import pytest

from crtc.textops import PatchSet, RebaseConflict, diff_regions


def test_insert_and_delete_basic():
    ps = PatchSet("hello world")
    plan = ps.plan_insert(5)
    ps.apply_insert(plan, ",", {1})
    assert ps.text() == "hello, world"
    plan = ps.plan_delete(0, 5)
    ps.apply_delete(plan, {2})
    assert ps.text() == ", world"
    assert ps.all_locks() == {1, 2}


def test_sequential_typing_merges_into_one_patch():
    ps = PatchSet("ab")
    for i, ch in enumerate("xyz"):
        ps.apply_insert(ps.plan_insert(1 + i), ch, {7})
    assert ps.text() == "axyzb"
    assert len(ps.patches) == 1
    assert ps.pending_spans() == [(1, 1)]


def test_delete_spanning_patch_and_gap():
    ps = PatchSet("abcdef")
    ps.apply_insert(ps.plan_insert(3), "XX", {1})     # abcXXdef
    plan = ps.plan_delete(2, 4)                        # drop "cXXd"
    assert plan.gap_regions() == [(2, 3), (3, 4)]
    ps.apply_delete(plan, {2})
    assert ps.text() == "abef"


def test_rebase_shifts_patches_after_upstream_edit():
    ps = PatchSet("aaa bbb ccc")
    ps.apply_insert(ps.plan_insert(9), "X", {1})       # inside ccc
    assert ps.text() == "aaa bbb cXcc"
    ps.rebase("aaaZZ bbb ccc")                          # upstream grew aaa
    assert ps.base == "aaaZZ bbb ccc"
    assert ps.text() == "aaaZZ bbb cXcc"


def test_rebase_conflict_on_overlap():
    ps = PatchSet("aaa bbb ccc")
    ps.apply_delete(ps.plan_delete(4, 3), {1})          # deletes bbb
    with pytest.raises(RebaseConflict):
        ps.rebase("aaa BBB ccc")                        # upstream edited bbb too


def test_rebase_insert_at_same_point_orders_upstream_first():
    ps = PatchSet("class A {  }")
    ps.apply_insert(ps.plan_insert(10), "int b;", {1})
    ps.rebase("class A { int a; }")                     # upstream added at same gap
    assert ps.text() == "class A { int a;int b; }"


def test_diff_regions_roundtrip():
    old, new = "one two three", "one 2 three four"
    regions = diff_regions(old, new)
    assert regions
    # applying the regions reconstructs new
    out, pos, npos = [], 0, 0
    sm_new = new
    for os_, oe, nlen in regions:
        out.append(old[pos:os_])
        covered = sum(len(x) for x in out)
        out.append(sm_new[covered:covered + nlen])
        pos = oe
    out.append(old[pos:])
    assert "".join(out) == new


# --- randomized mirror property -----------------------------------------

@st.composite
def edit_scripts(draw):
    base = draw(st.text(alphabet="abc XY{};", min_size=0, max_size=30))
    ops = []
    length = len(base)
    for _ in range(draw(st.integers(0, 12))):
        if length == 0 or draw(st.booleans()):
            off = draw(st.integers(0, length))
            txt = draw(st.text(alphabet="qrz128", min_size=1, max_size=5))
            ops.append(("ins", off, txt))
            length += len(txt)
        else:
            off = draw(st.integers(0, length - 1))
            dlen = draw(st.integers(1, min(4, length - off)))
            ops.append(("del", off, dlen))
            length -= dlen
    return base, ops


@given(edit_scripts())
@settings(max_examples=250, deadline=None)
def test_patchset_matches_string_mirror(script):
    base, ops = script
    ps = PatchSet(base)
    mirror = base
    for op in ops:
        if op[0] == "ins":
            _, off, txt = op
            ps.apply_insert(ps.plan_insert(off), txt, set())
            mirror = mirror[:off] + txt + mirror[off:]
        else:
            _, off, dlen = op
            ps.apply_delete(ps.plan_delete(off, dlen), set())
            mirror = mirror[:off] + mirror[off + dlen:]
        assert ps.text() == mirror
    # pending spans are well-formed and ordered
    spans = ps.pending_spans()
    for (a, b), nxt in zip(spans, spans[1:]):
        assert a <= b <= nxt[0]
