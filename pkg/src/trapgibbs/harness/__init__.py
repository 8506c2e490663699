"""Command line driver, strict configuration and persisted run records."""

from .records import FAIL, INCONCLUSIVE, PASS, ResultEntry, RunRecord

__all__ = ["FAIL", "INCONCLUSIVE", "PASS", "ResultEntry", "RunRecord"]
