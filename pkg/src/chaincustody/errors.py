"""Exception types shared across the toolkit.

The CLI maps these onto its exit codes: LedgerError means malformed input
(exit 2), ValidationError means a document or verification was rejected
(exit 1), IntegrityError means the audit chain itself is broken (exit 3).
"""

from __future__ import annotations


class ChainCustodyError(Exception):
    """Base class for all toolkit errors."""


class LedgerError(ChainCustodyError):
    """Malformed or inconsistent ledger input.

    ``line`` carries the 1-based line number for stream parse errors.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ChainCustodyError):
    """A document, record, or argument failed validation."""


class ProvenanceMismatch(ValidationError):
    """Two artifacts do not derive from the same ledger state."""


class IntegrityError(ChainCustodyError):
    """Tamper evidence: an audit log hash chain does not verify."""
