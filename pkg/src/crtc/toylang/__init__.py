"""MiniLang frontend: parsing, resolution and buildability verdicts."""

from .analysis import (
    BindingTable,
    BuildStatus,
    ElementLocation,
    OffsetOutsideProgram,
    SourceText,
    byte_intervals,
    check_buildable,
    element_at,
    element_path,
    interval_overlaps,
    part_at_point,
    project_buildable,
    resolve,
)
from .syntax import (
    BIN_OP,
    BLOCK,
    CALL,
    CLASS,
    ELEMENT_KINDS,
    FIELD,
    LITERAL,
    METHOD,
    NAME_REF,
    PARAM,
    PROGRAM,
    VAR_DECL,
    AstNode,
    DiagCode,
    Diagnostic,
    Span,
    parse,
)

__all__ = [
    "AstNode", "BindingTable", "BuildStatus", "DiagCode", "Diagnostic",
    "ElementLocation", "OffsetOutsideProgram", "SourceText", "Span",
    "check_buildable", "element_at", "element_path",
    "parse", "project_buildable", "resolve",
    "PROGRAM", "CLASS", "FIELD", "METHOD", "PARAM", "BLOCK", "VAR_DECL",
    "CALL", "NAME_REF", "LITERAL", "BIN_OP", "ELEMENT_KINDS",
]
