"""MiniLang lexer and recursive-descent parser.

MiniLang is a small Java-like language: classes containing fields and
methods, statement bodies with local variables, assignments, calls and
arithmetic. All positions are byte offsets into the source text; every
AST node carries the half-open span [start, end) it was parsed from.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional


class Span(NamedTuple):
    start: int
    end: int

    def contains(self, offset: int) -> bool:
        return self.start <= offset < self.end


class DiagCode(str, enum.Enum):
    LEX_ERROR = "LexError"
    PARSE_ERROR = "ParseError"
    UNRESOLVED_NAME = "UnresolvedName"
    ARITY_MISMATCH = "ArityMismatch"
    DUPLICATE_NAME = "DuplicateName"
    UNKNOWN_TYPE = "UnknownType"


@dataclass(frozen=True)
class Diagnostic:
    span: Span
    code: DiagCode
    message: str

    def to_json(self) -> dict:
        return {
            "start": self.span.start,
            "end": self.span.end,
            "code": self.code.value,
            "message": self.message,
        }


# AST node kinds. BinOp is not a lockable or named element; it exists only
# so arithmetic expressions have a structural home.
PROGRAM = "Program"
CLASS = "Class"
FIELD = "Field"
METHOD = "Method"
PARAM = "Param"
BLOCK = "Block"
VAR_DECL = "VarDecl"
ASSIGN = "Assign"
EXPR_STMT = "ExprStmt"
RETURN = "Return"
CALL = "Call"
NAME_REF = "NameRef"
LITERAL = "Literal"
BIN_OP = "BinOp"

ELEMENT_KINDS = frozenset({CLASS, FIELD, METHOD})
NAMED_KINDS = frozenset({CLASS, FIELD, METHOD, PARAM, VAR_DECL})

KEYWORDS = frozenset({"class", "int", "bool", "void", "return", "true", "false"})
BUILTIN_TYPES = frozenset({"int", "bool", "void"})


@dataclass(eq=False)
class AstNode:
    kind: str
    span: Span
    children: list["AstNode"] = field(default_factory=list)
    name: Optional[str] = None
    # For Field/Method/Param/VarDecl: the raw type text ("int", "bool",
    # "void" or a class name). Class-name types also appear as a NameRef
    # child so resolution sees them.
    type_name: Optional[str] = None
    parent: Optional["AstNode"] = None

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    # Kind-specific accessors.
    @property
    def members(self) -> list["AstNode"]:
        assert self.kind == CLASS
        return [c for c in self.children if c.kind in (FIELD, METHOD)]

    @property
    def params(self) -> list["AstNode"]:
        assert self.kind == METHOD
        return [c for c in self.children if c.kind == PARAM]

    @property
    def block(self) -> "AstNode":
        assert self.kind == METHOD
        return next(c for c in self.children if c.kind == BLOCK)

    @property
    def classes(self) -> list["AstNode"]:
        assert self.kind == PROGRAM
        return [c for c in self.children if c.kind == CLASS]

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"<{self.kind}{tag} @{self.span.start}:{self.span.end}>"


class Token(NamedTuple):
    kind: str  # "ident", "int", "punct", "kw", "eof"
    text: str
    span: Span


_PUNCT = frozenset("{}(),;=+-*/")


def lex(content: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    i, n = 0, len(content)
    while i < n:
        ch = content[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch == "/" and content.startswith("//", i):
            j = content.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if ch.isascii() and ch.isalpha():
            j = i + 1
            while j < n and content[j].isascii() and (content[j].isalnum() or content[j] == "_"):
                j += 1
            word = content[i:j]
            tokens.append(Token("kw" if word in KEYWORDS else "ident", word, Span(i, j)))
            i = j
            continue
        if ch.isdigit():
            j = i + 1
            while j < n and content[j].isdigit():
                j += 1
            tokens.append(Token("int", content[i:j], Span(i, j)))
            i = j
            continue
        if ch in _PUNCT:
            tokens.append(Token("punct", ch, Span(i, i + 1)))
            i += 1
            continue
        diags.append(Diagnostic(Span(i, i + 1), DiagCode.LEX_ERROR, f"unexpected character {ch!r}"))
        i += 1
    tokens.append(Token("eof", "", Span(n, n)))
    return tokens, diags


class _ParseError(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise _ParseError(Diagnostic(tok.span, DiagCode.PARSE_ERROR, msg))

    def expect_punct(self, ch: str) -> Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != ch:
            self.error(f"expected {ch!r}, found {tok.text or 'end of file'!r}")
        return self.advance()

    def expect_ident(self, what: str) -> Token:
        tok = self.peek()
        if tok.kind != "ident":
            self.error(f"expected {what}, found {tok.text or 'end of file'!r}")
        return self.advance()

    def at_punct(self, ch: str) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.text == ch

    def at_kw(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "kw" and tok.text == word

    def at_type(self) -> bool:
        tok = self.peek()
        return (tok.kind == "kw" and tok.text in BUILTIN_TYPES) or tok.kind == "ident"

    # type := "int" | "bool" | "void" | IDENT
    # Returns (type_name, span, optional NameRef node for class types).
    def parse_type(self) -> tuple[str, Span, Optional[AstNode]]:
        tok = self.peek()
        if tok.kind == "kw" and tok.text in BUILTIN_TYPES:
            self.advance()
            return tok.text, tok.span, None
        if tok.kind == "ident":
            self.advance()
            return tok.text, tok.span, AstNode(NAME_REF, tok.span, name=tok.text)
        self.error(f"expected a type, found {tok.text or 'end of file'!r}")

    def parse_program(self) -> AstNode:
        classes = []
        while not self.peek().kind == "eof":
            classes.append(self.parse_class())
        end = self.tokens[-1].span.end
        return AstNode(PROGRAM, Span(0, end), classes)

    def parse_class(self) -> AstNode:
        if not self.at_kw("class"):
            self.error("expected 'class'")
        start = self.advance().span.start
        name = self.expect_ident("class name")
        self.expect_punct("{")
        members = []
        while not self.at_punct("}"):
            if self.peek().kind == "eof":
                self.error("unterminated class body")
            members.append(self.parse_member())
        end = self.advance().span.end
        return AstNode(CLASS, Span(start, end), members, name=name.text)

    def parse_member(self) -> AstNode:
        type_name, type_span, type_ref = self.parse_type()
        name = self.expect_ident("member name")
        if self.at_punct("("):
            return self.parse_method_rest(type_name, type_span, type_ref, name)
        semi = self.expect_punct(";")
        children = [type_ref] if type_ref else []
        return AstNode(FIELD, Span(type_span.start, semi.span.end), children,
                       name=name.text, type_name=type_name)

    def parse_method_rest(self, type_name, type_span, type_ref, name) -> AstNode:
        self.expect_punct("(")
        params = []
        if not self.at_punct(")"):
            while True:
                params.append(self.parse_param())
                if self.at_punct(","):
                    self.advance()
                else:
                    break
        self.expect_punct(")")
        block = self.parse_block()
        children = ([type_ref] if type_ref else []) + params + [block]
        return AstNode(METHOD, Span(type_span.start, block.span.end), children,
                       name=name.text, type_name=type_name)

    def parse_param(self) -> AstNode:
        type_name, type_span, type_ref = self.parse_type()
        name = self.expect_ident("parameter name")
        children = [type_ref] if type_ref else []
        return AstNode(PARAM, Span(type_span.start, name.span.end), children,
                       name=name.text, type_name=type_name)

    def parse_block(self) -> AstNode:
        lbrace = self.expect_punct("{")
        stmts = []
        while not self.at_punct("}"):
            if self.peek().kind == "eof":
                self.error("unterminated block")
            stmts.append(self.parse_stmt())
        rbrace = self.advance()
        return AstNode(BLOCK, Span(lbrace.span.start, rbrace.span.end), stmts)

    def parse_stmt(self) -> AstNode:
        tok = self.peek()
        if self.at_kw("return"):
            start = self.advance().span.start
            expr = None if self.at_punct(";") else self.parse_expr()
            semi = self.expect_punct(";")
            children = [expr] if expr else []
            return AstNode(RETURN, Span(start, semi.span.end), children)
        if tok.kind == "kw" and tok.text in BUILTIN_TYPES:
            return self.parse_var_decl()
        if tok.kind == "ident":
            nxt = self.peek(1)
            if nxt.kind == "ident":
                return self.parse_var_decl()  # IDENT IDENT ... : class-typed local
            if nxt.kind == "punct" and nxt.text == "=":
                lhs = AstNode(NAME_REF, tok.span, name=tok.text)
                self.advance()
                self.advance()  # "="
                expr = self.parse_expr()
                semi = self.expect_punct(";")
                return AstNode(ASSIGN, Span(tok.span.start, semi.span.end), [lhs, expr])
        expr = self.parse_expr()
        semi = self.expect_punct(";")
        return AstNode(EXPR_STMT, Span(expr.span.start, semi.span.end), [expr])

    def parse_var_decl(self) -> AstNode:
        type_name, type_span, type_ref = self.parse_type()
        name = self.expect_ident("variable name")
        init = None
        if self.at_punct("="):
            self.advance()
            init = self.parse_expr()
        semi = self.expect_punct(";")
        children = ([type_ref] if type_ref else []) + ([init] if init else [])
        return AstNode(VAR_DECL, Span(type_span.start, semi.span.end), children,
                       name=name.text, type_name=type_name)

    # expr := term (("+"|"-") term)* ; term := factor (("*"|"/") factor)*
    def parse_expr(self) -> AstNode:
        node = self.parse_term()
        while self.peek().kind == "punct" and self.peek().text in "+-":
            op = self.advance().text
            rhs = self.parse_term()
            node = AstNode(BIN_OP, Span(node.span.start, rhs.span.end), [node, rhs], name=op)
        return node

    def parse_term(self) -> AstNode:
        node = self.parse_factor()
        while self.peek().kind == "punct" and self.peek().text in "*/":
            op = self.advance().text
            rhs = self.parse_factor()
            node = AstNode(BIN_OP, Span(node.span.start, rhs.span.end), [node, rhs], name=op)
        return node

    def parse_factor(self) -> AstNode:
        tok = self.peek()
        if tok.kind == "int":
            self.advance()
            return AstNode(LITERAL, tok.span, name=tok.text)
        if tok.kind == "kw" and tok.text in ("true", "false"):
            self.advance()
            return AstNode(LITERAL, tok.span, name=tok.text)
        if tok.kind == "punct" and tok.text == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect_punct(")")
            return inner
        if tok.kind == "ident":
            self.advance()
            callee = AstNode(NAME_REF, tok.span, name=tok.text)
            if self.at_punct("("):
                self.advance()
                args = []
                if not self.at_punct(")"):
                    while True:
                        args.append(self.parse_expr())
                        if self.at_punct(","):
                            self.advance()
                        else:
                            break
                rparen = self.expect_punct(")")
                return AstNode(CALL, Span(tok.span.start, rparen.span.end), [callee] + args)
            return callee
        self.error(f"expected an expression, found {tok.text or 'end of file'!r}")


def _link_parents(node: AstNode, parent: AstNode | None = None) -> None:
    node.parent = parent
    for child in node.children:
        _link_parents(child, node)


@lru_cache(maxsize=512)
def parse(content: str) -> tuple[Optional[AstNode], tuple[Diagnostic, ...]]:
    """Parse MiniLang source. Returns (ast, diagnostics).

    No error recovery: any lex or parse error yields diagnostics and no AST.
    Cached by content since parsing is pure and the engine re-checks whole
    projects on every edit.
    """
    tokens, diags = lex(content)
    if diags:
        return None, tuple(diags)
    parser = _Parser(tokens)
    try:
        program = parser.parse_program()
    except _ParseError as exc:
        return None, (exc.diag,)
    _link_parents(program)
    return program, ()
