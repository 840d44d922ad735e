"""Collaborative real-time coding engine.

Clients share a project through a central relay that only propagates
buildable snapshots; concurrent edits to dependent code elements are
prevented up front by AST-level pessimistic locks.
"""

__version__ = "0.1.0"
