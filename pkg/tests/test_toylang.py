"""MiniLang frontend tests: parsing oracle, resolution, verdicts, element_at."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crtc.toylang import (
    AstNode,
    DiagCode,
    SourceText,
    Span,
    check_buildable,
    element_at,
    parse,
    resolve,
)

from conftest import BROKEN_FILES, dependency_corpus, verdict_corpus

FIXTURE = "class A { int Foo(int x) { return x; } }"


def test_empty_program():
    ast, diags = parse("")
    assert diags == ()
    assert ast.kind == "Program" and ast.classes == []


def test_fixture_ast_node_by_node():
    # Hand-constructed oracle: every node kind, name and byte span.
    ast, diags = parse(FIXTURE)
    assert diags == ()
    assert ast.span == Span(0, 40)
    (cls,) = ast.classes
    assert (cls.kind, cls.name, cls.span) == ("Class", "A", Span(0, 40))
    (method,) = cls.members
    assert (method.kind, method.name, method.type_name) == ("Method", "Foo", "int")
    assert method.span == Span(10, 38)
    (param,) = method.params
    assert (param.kind, param.name, param.type_name) == ("Param", "x", "int")
    assert param.span == Span(18, 23)
    block = method.block
    assert block.span == Span(25, 38)
    (ret,) = block.children
    assert (ret.kind, ret.span) == ("Return", Span(27, 36))
    (name_ref,) = ret.children
    assert (name_ref.kind, name_ref.name, name_ref.span) == ("NameRef", "x", Span(34, 35))


def test_mistyped_param_type_reported_at_in():
    text = 'class A { int Foo(in newParam, int x) { return x; } }'
    statuses = check_buildable([SourceText("a.toy", text)])
    status = statuses["a.toy"]
    assert not status.buildable
    (diag,) = status.diagnostics
    assert diag.code == DiagCode.UNKNOWN_TYPE
    assert text[diag.span.start:diag.span.end] == "in"


def test_resolve_binds_param_and_checks_arity():
    ast, _ = parse(FIXTURE)
    bindings, diags = resolve(ast)
    assert diags == []
    # the return's x binds to the parameter
    refs = [n for n in ast.walk() if n.kind == "NameRef" and n.parent.kind == "Return"]
    assert len(refs) == 1 and bindings[refs[0]].kind == "Param"


def test_resolve_no_references():
    ast, _ = parse("class A { int m() { return 1; } }")
    bindings, diags = resolve(ast)
    assert bindings == {} and diags == []


def test_arity_mismatch():
    ast, _ = parse("class A { int Foo(int x) { return x; } int m() { return Foo(1, 2); } }")
    _, diags = resolve(ast)
    assert [d.code for d in diags] == [DiagCode.ARITY_MISMATCH]


def test_rename_breaks_caller():
    ast, _ = parse("class A { int Foo1(int x) { return x; } int UsingFoo() { return Foo(1); } }")
    _, diags = resolve(ast)
    assert [d.code for d in diags] == [DiagCode.UNRESOLVED_NAME]


def test_cross_file_resolution():
    f1 = SourceText("file1.toy", "class A { int Foo(int x) { return x; } }")
    f2 = SourceText("file2.toy", "class B { int UsingFoo(int y) { return Foo(y); } }")
    statuses = check_buildable([f1, f2])
    assert statuses["file1.toy"].buildable and statuses["file2.toy"].buildable


def test_cross_file_rename_breaks_other_file():
    f1 = SourceText("file1.toy", "class A { int Foo1(int x) { return x; } }")
    f2 = SourceText("file2.toy", "class B { int UsingFoo(int y) { return Foo(y); } }")
    statuses = check_buildable([f1, f2])
    assert statuses["file1.toy"].buildable
    assert not statuses["file2.toy"].buildable
    assert statuses["file2.toy"].diagnostics[0].code == DiagCode.UNRESOLVED_NAME


def test_check_buildable_empty():
    assert check_buildable([]) == {}


def test_verdict_corpus_half_and_half(mixed_corpus):
    statuses = check_buildable(mixed_corpus)
    assert len(statuses) == 20
    buildable = sorted(n for n, s in statuses.items() if s.buildable)
    assert buildable == [f"f{i:02d}.toy" for i in range(10)]
    for name, _, code in BROKEN_FILES:
        codes = {d.code.value for d in statuses[name].diagnostics}
        assert code in codes, (name, codes)


def test_element_at_fixture():
    ast, _ = parse(FIXTURE)
    loc = element_at(ast, FIXTURE, 15)  # inside "Foo"
    assert (loc.path, loc.part) == ("A/Foo", "header")
    loc = element_at(ast, FIXTURE, 30)  # inside "return"
    assert (loc.path, loc.part) == ("A/Foo", "body")
    loc = element_at(ast, FIXTURE, 0)
    assert (loc.path, loc.part) == ("A", "header")


def test_element_at_class_gap_and_outside():
    text = "class A { int a; }  class B { }"
    ast, _ = parse(text)
    # offsets 18-19 fall in the gap between the two classes
    assert element_at(ast, text, 18) is None
    assert element_at(ast, text, 19) is None
    from crtc.toylang import OffsetOutsideProgram
    with pytest.raises(OffsetOutsideProgram):
        element_at(ast, text, len(text) + 1)


def test_field_is_always_header():
    text = "class A { int counter; }"
    ast, _ = parse(text)
    loc = element_at(ast, text, 14)  # inside "counter"
    assert (loc.path, loc.part) == ("A/counter", "header")


def _structurally_equal(a: AstNode, b: AstNode) -> bool:
    return (
        a.kind == b.kind
        and a.name == b.name
        and a.span == b.span
        and len(a.children) == len(b.children)
        and all(_structurally_equal(x, y) for x, y in zip(a.children, b.children))
    )


def _assert_span_nesting(node: AstNode):
    prev_end = node.span.start
    for child in node.children:
        assert node.span.start <= child.span.start <= child.span.end <= node.span.end
        assert child.span.start >= prev_end, "sibling spans overlap"
        prev_end = child.span.end
        _assert_span_nesting(child)


def test_round_trip_and_span_nesting_on_corpus():
    for src in dependency_corpus():
        ast1, d1 = parse.__wrapped__(src.content)
        ast2, d2 = parse.__wrapped__(src.content)
        assert d1 == d2 == ()
        assert _structurally_equal(ast1, ast2)
        _assert_span_nesting(ast1)


def test_determinism_across_cache_resets(mixed_corpus):
    first = check_buildable(mixed_corpus)
    parse.cache_clear()
    second = check_buildable(mixed_corpus)
    assert {n: s.diagnostics for n, s in first.items()} == {
        n: s.diagnostics for n, s in second.items()
    }


# --- randomized structural properties ---------------------------------

_ident = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True).filter(
    lambda s: s not in {"class", "int", "bool", "void", "return", "true", "false"}
)


@st.composite
def _programs(draw):
    n_classes = draw(st.integers(1, 3))
    used_classes = set()
    out = []
    for _ in range(n_classes):
        cname = draw(_ident.map(str.capitalize).filter(lambda s: s not in used_classes))
        used_classes.add(cname)
        members = []
        used = set()
        for _ in range(draw(st.integers(0, 3))):
            mname = draw(_ident.filter(lambda s: s not in used))
            used.add(mname)
            if draw(st.booleans()):
                members.append(f"int {mname};")
            else:
                body = draw(st.sampled_from(["return 1;", "int t = 2; return t;", "return 1 + 2 * 3;"]))
                members.append(f"int {mname}() {{ {body} }}")
        out.append(f"class {cname} {{ {' '.join(members)} }}")
    return " ".join(out)


@given(_programs())
@settings(max_examples=60, deadline=None)
def test_generated_programs_parse_and_nest(text):
    ast, diags = parse.__wrapped__(text)
    assert diags == () and ast is not None
    _assert_span_nesting(ast)
    ast2, _ = parse.__wrapped__(text)
    assert _structurally_equal(ast, ast2)


@given(st.text(max_size=80))
@settings(max_examples=120, deadline=None)
def test_parse_never_crashes_on_garbage(text):
    ast, diags = parse.__wrapped__(text)
    assert (ast is None) == (len(diags) > 0)
