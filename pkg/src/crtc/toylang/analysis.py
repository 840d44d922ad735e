"""Name resolution, buildability verdicts and offset-to-element mapping.

Resolution is project-wide: a bare call like ``Foo(y)`` may bind to a
method of any class in any file. A file is buildable iff it parses and
every reference in it resolves against the project with matching arity,
no duplicate names and no unknown types.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .syntax import (
    ASSIGN,
    BUILTIN_TYPES,
    CALL,
    CLASS,
    FIELD,
    METHOD,
    NAME_REF,
    RETURN,
    VAR_DECL,
    AstNode,
    DiagCode,
    Diagnostic,
    Span,
    parse,
)


@dataclass(frozen=True)
class SourceText:
    file_name: str
    content: str


# BindingTable: NameRef node -> declaring node (Method/Field/Param/VarDecl/Class).
BindingTable = dict


@dataclass(frozen=True)
class BuildStatus:
    ast: Optional[AstNode]
    bindings: Optional[BindingTable]
    diagnostics: tuple[Diagnostic, ...]

    @property
    def buildable(self) -> bool:
        return not self.diagnostics


class OffsetOutsideProgram(ValueError):
    pass


def element_path(node: AstNode) -> str:
    """Textual address: ``ClassName`` or ``ClassName/memberName``."""
    if node.kind == CLASS:
        return node.name
    assert node.kind in (FIELD, METHOD) and node.parent is not None
    return f"{node.parent.name}/{node.name}"


@dataclass
class _ProjectScope:
    classes: dict[str, AstNode] = field(default_factory=dict)
    # Project-wide member indexes; first declaration wins on cross-class
    # name clashes (deterministic: files visited in sorted name order).
    methods: dict[str, AstNode] = field(default_factory=dict)
    fields: dict[str, AstNode] = field(default_factory=dict)


def _collect_decls(asts: list[tuple[str, AstNode]]) -> tuple[_ProjectScope, dict[str, list[Diagnostic]]]:
    scope = _ProjectScope()
    dup_diags: dict[str, list[Diagnostic]] = {}
    for file_name, ast in asts:
        for cls in ast.classes:
            if cls.name in scope.classes:
                dup_diags.setdefault(file_name, []).append(Diagnostic(
                    cls.span, DiagCode.DUPLICATE_NAME, f"duplicate class {cls.name!r}"))
                continue
            scope.classes[cls.name] = cls
            seen: dict[str, AstNode] = {}
            for member in cls.members:
                if member.name in seen:
                    dup_diags.setdefault(file_name, []).append(Diagnostic(
                        member.span, DiagCode.DUPLICATE_NAME,
                        f"duplicate member {member.name!r} in class {cls.name!r}"))
                    continue
                seen[member.name] = member
                index = scope.methods if member.kind == METHOD else scope.fields
                index.setdefault(member.name, member)
    return scope, dup_diags


def _check_type(node: AstNode, scope: _ProjectScope, bindings: BindingTable,
                diags: list[Diagnostic]) -> None:
    if node.type_name is None or node.type_name in BUILTIN_TYPES:
        return
    type_ref = node.children[0]
    assert type_ref.kind == NAME_REF
    cls = scope.classes.get(node.type_name)
    if cls is None:
        diags.append(Diagnostic(type_ref.span, DiagCode.UNKNOWN_TYPE,
                                f"unknown type {node.type_name!r}"))
    else:
        bindings[type_ref] = cls


def _resolve_method(method: AstNode, own_class: AstNode, scope: _ProjectScope,
                    bindings: BindingTable, diags: list[Diagnostic]) -> None:
    locals_: dict[str, AstNode] = {}
    for param in method.params:
        if param.name in locals_:
            diags.append(Diagnostic(param.span, DiagCode.DUPLICATE_NAME,
                                    f"duplicate parameter {param.name!r}"))
        else:
            locals_[param.name] = param
        _check_type(param, scope, bindings, diags)

    own_members = {m.name: m for m in own_class.members}

    def resolve_value(ref: AstNode) -> None:
        decl = locals_.get(ref.name)
        if decl is None:
            decl = own_members.get(ref.name)
            if decl is not None and decl.kind != FIELD:
                decl = None
        if decl is None:
            decl = scope.fields.get(ref.name)
        if decl is None:
            diags.append(Diagnostic(ref.span, DiagCode.UNRESOLVED_NAME,
                                    f"unresolved name {ref.name!r}"))
            return
        bindings[ref] = decl

    def resolve_call(call: AstNode) -> None:
        callee = call.children[0]
        decl = own_members.get(callee.name)
        if decl is not None and decl.kind != METHOD:
            decl = None
        if decl is None:
            decl = scope.methods.get(callee.name)
        if decl is None:
            diags.append(Diagnostic(callee.span, DiagCode.UNRESOLVED_NAME,
                                    f"unresolved method {callee.name!r}"))
            return
        bindings[callee] = decl
        n_args = len(call.children) - 1
        n_params = len(decl.params)
        if n_args != n_params:
            diags.append(Diagnostic(call.span, DiagCode.ARITY_MISMATCH,
                                    f"{callee.name!r} takes {n_params} argument(s), got {n_args}"))

    def resolve_expr(node: AstNode) -> None:
        if node.kind == NAME_REF:
            resolve_value(node)
        elif node.kind == CALL:
            resolve_call(node)
            for arg in node.children[1:]:
                resolve_expr(arg)
        else:
            for child in node.children:
                resolve_expr(child)

    for stmt in method.block.children:
        if stmt.kind == VAR_DECL:
            _check_type(stmt, scope, bindings, diags)
            exprs = stmt.children if stmt.type_name in BUILTIN_TYPES else stmt.children[1:]
            for child in exprs:
                resolve_expr(child)
            if stmt.name in locals_:
                diags.append(Diagnostic(stmt.span, DiagCode.DUPLICATE_NAME,
                                        f"duplicate local {stmt.name!r}"))
            else:
                locals_[stmt.name] = stmt
        elif stmt.kind == ASSIGN:
            resolve_value(stmt.children[0])
            resolve_expr(stmt.children[1])
        elif stmt.kind == RETURN:
            for child in stmt.children:
                resolve_expr(child)
        else:  # ExprStmt
            resolve_expr(stmt.children[0])


def _resolve_file(ast: AstNode, scope: _ProjectScope) -> tuple[BindingTable, list[Diagnostic]]:
    bindings: BindingTable = {}
    diags: list[Diagnostic] = []
    for cls in ast.classes:
        if scope.classes.get(cls.name) is not cls:
            continue  # duplicate class already reported
        for member in cls.members:
            _check_type(member, scope, bindings, diags)
            if member.kind == METHOD:
                _resolve_method(member, cls, scope, bindings, diags)
    return bindings, diags


def resolve(ast: AstNode, context: Iterable[AstNode] = ()) -> tuple[BindingTable, list[Diagnostic]]:
    """Resolve one file's references, optionally against other files' ASTs."""
    asts = [("<context>", c) for c in context] + [("<main>", ast)]
    scope, dup_diags = _collect_decls(asts)
    bindings, diags = _resolve_file(ast, scope)
    all_diags = dup_diags.get("<main>", []) + diags
    all_diags.sort(key=lambda d: (d.span.start, d.code.value))
    return bindings, all_diags


def check_buildable(files: Iterable[SourceText]) -> dict[str, BuildStatus]:
    """Project-wide buildability verdict, one BuildStatus per file.

    Files that fail to parse contribute no declarations, so references
    into them from other files come back unresolved.
    """
    ordered = sorted(files, key=lambda f: f.file_name)
    parsed: dict[str, tuple[Optional[AstNode], tuple[Diagnostic, ...]]] = {
        f.file_name: parse(f.content) for f in ordered
    }
    good = [(name, ast) for name, (ast, d) in parsed.items() if ast is not None]
    scope, dup_diags = _collect_decls(good)
    out: dict[str, BuildStatus] = {}
    for f in ordered:
        ast, parse_diags = parsed[f.file_name]
        if ast is None:
            out[f.file_name] = BuildStatus(None, None, tuple(parse_diags))
            continue
        bindings, diags = _resolve_file(ast, scope)
        diags = dup_diags.get(f.file_name, []) + diags
        diags.sort(key=lambda d: (d.span.start, d.code.value))
        if diags:
            out[f.file_name] = BuildStatus(None, None, tuple(diags))
        else:
            out[f.file_name] = BuildStatus(ast, bindings, ())
    return out


def project_buildable(statuses: dict[str, BuildStatus]) -> bool:
    return all(s.buildable for s in statuses.values())


def byte_intervals(ast: AstNode, content: str) -> list[tuple[int, int, str, Optional[str], str]]:
    """Contiguous (start, end, kind, element_path, class_path) intervals.

    kind is "header"/"body" for element bytes and "gap" for structural
    whitespace and braces; gaps inside a class body carry that class path,
    top-level gaps carry "". Covers [0, len(content)) exactly.
    """
    out = []
    pos = 0
    for cls in ast.classes:
        if pos < cls.span.start:
            out.append((pos, cls.span.start, "gap", None, ""))
        lbrace = content.index("{", cls.span.start)
        out.append((cls.span.start, lbrace, "header", cls.name, ""))
        gap_start = lbrace
        for member in cls.members:
            if gap_start < member.span.start:
                out.append((gap_start, member.span.start, "gap", None, cls.name))
            path = element_path(member)
            if member.kind == METHOD:
                block = member.block
                out.append((member.span.start, block.span.start, "header", path, cls.name))
                out.append((block.span.start, block.span.end, "body", path, cls.name))
            else:
                out.append((member.span.start, member.span.end, "header", path, cls.name))
            gap_start = member.span.end
        if gap_start < cls.span.end:
            out.append((gap_start, cls.span.end, "gap", None, cls.name))
        pos = cls.span.end
    if pos < len(content):
        out.append((pos, len(content), "gap", None, ""))
    return out


def part_at_point(intervals, p: int) -> tuple[str, Optional[str], str]:
    """Classify insertion point p against byte intervals.

    Interior points take their interval; boundary points belong to the
    adjacent gap when there is one (typing at an element's edge is
    structurally outside it), and to the element when the boundary is
    internal (e.g. between a method's header and its block). Points at
    file edges are top-level gaps.
    """
    prev = None
    for iv in intervals:
        lo, hi, kind, path, cls_path = iv
        if lo < p < hi:
            return (kind, path, cls_path)
        if p == lo:
            if kind == "gap":
                return (kind, path, cls_path)
            if prev is not None:
                return (prev[2], prev[3], prev[4])
            return ("gap", None, "")
        prev = iv
    return ("gap", None, "")


def interval_overlaps(intervals, a: int, b: int):
    """Sub-intervals of [a, b) annotated like byte_intervals entries."""
    for (lo, hi, kind, path, cls_path) in intervals:
        s, e = max(lo, a), min(hi, b)
        if s < e:
            yield (s, e, kind, path, cls_path)


@dataclass(frozen=True)
class ElementLocation:
    path: str
    part: str  # "header" | "body"
    node: AstNode


def element_at(ast: AstNode, content: str, offset: int) -> Optional[ElementLocation]:
    """Innermost named element (class/field/method) containing ``offset``.

    For methods, ``part`` is "body" inside the statement block and "header"
    over the return type, name and parameter list. Fields are all header.
    For classes, "header" covers ``class Name`` before the opening brace and
    "body" the brace region outside any member. Returns None in whitespace
    between classes or in an empty program.
    """
    if offset > len(content):
        raise OffsetOutsideProgram(f"offset {offset} beyond end of file ({len(content)})")
    for cls in ast.classes:
        if not cls.span.contains(offset):
            continue
        for member in cls.members:
            if not member.span.contains(offset):
                continue
            if member.kind == FIELD:
                return ElementLocation(element_path(member), "header", member)
            block = member.block
            part = "body" if block.span.contains(offset) else "header"
            return ElementLocation(element_path(member), part, member)
        lbrace = content.index("{", cls.span.start)
        part = "header" if offset < lbrace else "body"
        return ElementLocation(cls.name, part, cls)
    return None
