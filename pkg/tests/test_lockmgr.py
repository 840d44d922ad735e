"""Lock table semantics: grants, cascading denies, idempotence, release."""

import copy

import pytest

from crtc.lockmgr import BODY, DEFINING, Deny, Grant, LockTable, LockUnit, compute_lock_unit
from crtc.semantics import ElementTable, IdAllocator, assign_element_ids, build_reference_graph, must_serialize
from crtc.toylang import SourceText, check_buildable


def make_world(texts: dict[str, str]):
    statuses = check_buildable([SourceText(n, t) for n, t in texts.items()])
    assert all(s.buildable for s in statuses.values())
    asts = {n: s.ast for n, s in statuses.items()}
    bindings = {n: s.bindings for n, s in statuses.items()}
    table = assign_element_ids(ElementTable.empty(), asts, IdAllocator())
    graph = build_reference_graph(table, bindings)
    oracle = lambda a, b: must_serialize(a, b, table, graph)
    return table, graph, oracle


WORLD = {
    "f1.toy": "class A { int Foo(int x) { return x; } int Sib() { return 1; } }",
    "f2.toy": "class B { int UsingFoo(int y) { return Foo(y); } }",
}


def test_header_lock_cascades_over_breakable_set():
    table, graph, _ = make_world(WORLD)
    foo = table.by_path["A/Foo"]
    unit = compute_lock_unit(foo, "header", graph, table)
    assert unit.kind == DEFINING
    assert unit.elements == {foo, table.by_path["B/UsingFoo"]}


def test_body_lock_is_singleton():
    table, graph, _ = make_world(WORLD)
    sib = table.by_path["A/Sib"]
    unit = compute_lock_unit(sib, "body", graph, table)
    assert unit == LockUnit(frozenset({sib}), BODY)


def test_new_reference_takes_body_lock_on_referent():
    table, graph, _ = make_world(WORLD)
    foo = table.by_path["A/Foo"]
    unit = compute_lock_unit(foo, "new_reference", graph, table)
    assert unit == LockUnit(frozenset({foo}), BODY)


def test_grant_on_empty_table_and_deny_on_conflict():
    table, graph, oracle = make_world(WORLD)
    foo = table.by_path["A/Foo"]
    using = table.by_path["B/UsingFoo"]
    locks = LockTable()
    res = locks.request("bob", compute_lock_unit(foo, "header", graph, table), oracle)
    assert isinstance(res, Grant)
    before = copy.deepcopy(locks.records)
    res2 = locks.request("john", LockUnit(frozenset({foo}), BODY), oracle)
    assert isinstance(res2, Deny)
    assert res2.holder == "bob"
    assert foo in res2.elements
    assert locks.records == before  # deny is read-only


def test_sibling_methods_lock_concurrently():
    table, graph, oracle = make_world(WORLD)
    locks = LockTable()
    r1 = locks.request("bob", LockUnit(frozenset({table.by_path["A/Foo"]}), BODY), oracle)
    r2 = locks.request("john", LockUnit(frozenset({table.by_path["A/Sib"]}), BODY), oracle)
    assert isinstance(r1, Grant) and isinstance(r2, Grant)
    # safety: no serialization-related pair held by different sessions
    for e1 in r1.record.unit.elements:
        for e2 in r2.record.unit.elements:
            assert not oracle(e1, e2)


def test_rerequest_is_idempotent_and_merges():
    table, graph, oracle = make_world(WORLD)
    foo = table.by_path["A/Foo"]
    using = table.by_path["B/UsingFoo"]
    locks = LockTable()
    r1 = locks.request("bob", LockUnit(frozenset({foo}), BODY), oracle)
    r2 = locks.request("bob", compute_lock_unit(foo, "header", graph, table), oracle)
    assert isinstance(r2, Grant)
    assert len(locks.records) == 1
    assert r2.record.lock_id == r1.record.lock_id
    assert r2.record.unit.elements == {foo, using}
    assert r2.record.unit.kind == DEFINING


def test_release_all_and_query():
    table, graph, oracle = make_world(WORLD)
    foo = table.by_path["A/Foo"]
    locks = LockTable()
    res = locks.request("bob", compute_lock_unit(foo, "header", graph, table), oracle)
    holder, lock_id, kind = locks.query(foo)
    assert (holder, kind) == ("bob", DEFINING)
    freed = locks.release_all("bob")
    assert set(freed) == set(res.record.unit.elements)
    assert locks.query(foo) is None
    assert locks.release_all("bob") == []
    assert locks.records == {}


def test_release_one_keeps_other_records():
    table, graph, oracle = make_world(WORLD)
    locks = LockTable()
    r1 = locks.request("bob", LockUnit(frozenset({table.by_path["A/Foo"]}), BODY), oracle)
    r2 = locks.request("bob", LockUnit(frozenset({table.by_path["A/Sib"]}), BODY), oracle)
    freed = locks.release_one("bob", r1.record.lock_id)
    assert freed == sorted(r1.record.unit.elements)
    assert locks.query(table.by_path["A/Sib"]) is not None
    # releasing someone else's lock is a no-op
    assert locks.release_one("john", r2.record.lock_id) == []


def test_lock_ids_monotone():
    table, graph, oracle = make_world(WORLD)
    locks = LockTable()
    ids = []
    for path in ["A/Foo", "A/Sib"]:
        res = locks.request("bob", LockUnit(frozenset({table.by_path[path]}), BODY), oracle)
        ids.append(res.record.lock_id)
    locks.release_all("bob")
    res = locks.request("john", LockUnit(frozenset({table.by_path["A/Foo"]}), BODY), oracle)
    ids.append(res.record.lock_id)
    assert ids == sorted(ids) and len(set(ids)) == 3
