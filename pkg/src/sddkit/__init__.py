"""Staged spec-driven development runs with grounding hooks, a run ledger,
rubric judging, and experiment aggregation."""

__version__ = "0.1.0"
