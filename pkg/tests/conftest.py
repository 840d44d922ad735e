"""Shared fixture corpora.

The dependency corpus is ten files / fifty elements with a known
reference structure; the verdict corpus is ten buildable files plus ten
broken ones, one per failure mode.
"""

import pytest

from crtc.toylang import SourceText


def dependency_corpus() -> list[SourceText]:
    """Ten files, five elements each: class Ki with field basei and three
    methods. mia reads basei, mib calls mia, mic calls m<next>a cross-file."""
    files = []
    for i in range(10):
        j = (i + 1) % 10
        text = (
            f"class K{i} {{ "
            f"int base{i}; "
            f"int m{i}a() {{ return base{i}; }} "
            f"int m{i}b(int x) {{ return m{i}a() + x; }} "
            f"int m{i}c() {{ return m{j}a(); }} "
            f"}}"
        )
        files.append(SourceText(f"f{i:02d}.toy", text))
    return files


BROKEN_FILES = [
    ("b00_lex.toy", "class Z0 { int a@; }", "LexError"),
    ("b01_parse.toy", "class Z1 { int a }", "ParseError"),
    ("b02_unresolved_call.toy", "class Z2 { int m() { return NoSuchFn(); } }", "UnresolvedName"),
    ("b03_unresolved_var.toy", "class Z3 { int m() { return nope; } }", "UnresolvedName"),
    ("b04_arity.toy", "class Z4 { int f(int x) { return x; } int m() { return f(1, 2); } }", "ArityMismatch"),
    ("b05_dup_member.toy", "class Z5 { int a; int a; }", "DuplicateName"),
    ("b06_dup_class.toy", "class Z6 { } class Z6 { }", "DuplicateName"),
    ("b07_unknown_type.toy", "class Z7 { Missing m() { return 1; } }", "UnknownType"),
    ("b08_use_before_decl.toy", "class Z8 { int m() { y = 1; int y; return y; } }", "UnresolvedName"),
    ("b09_unterminated.toy", "class Z9 { int m() { return 1; }", "ParseError"),
]


def verdict_corpus() -> list[SourceText]:
    files = dependency_corpus()
    files.extend(SourceText(name, text) for name, text, _ in BROKEN_FILES)
    return files


@pytest.fixture
def dep_corpus():
    return dependency_corpus()


@pytest.fixture
def mixed_corpus():
    return verdict_corpus()
