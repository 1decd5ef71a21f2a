"""Exception hierarchy shared by all engine modules."""

from __future__ import annotations


class KGApproxError(Exception):
    """Base class for every error raised by the engine."""


# -- loading / graph -------------------------------------------------------


class MalformedLine(KGApproxError, ValueError):
    def __init__(self, path: str, row: int, reason: str) -> None:
        super().__init__(f"{path}:{row}: {reason}")
        self.path = path
        self.row = row


class DanglingEdge(KGApproxError, ValueError):
    pass


class DuplicateNodeId(KGApproxError, ValueError):
    pass


class NonNumericAttribute(KGApproxError, ValueError):
    pass


class NoMappingNode(KGApproxError, LookupError):
    pass


class InfeasibleSpec(KGApproxError, ValueError):
    pass


# -- semantics ---------------------------------------------------------------


class UnknownPredicate(KGApproxError, KeyError):
    def __init__(self, predicate: str) -> None:
        super().__init__(predicate)
        self.predicate = predicate

    def __str__(self) -> str:
        return f"unknown predicate: {self.predicate!r}"


class EmptyPath(KGApproxError, ValueError):
    pass


class EmptyInput(KGApproxError, ValueError):
    pass


class MixedAnswers(KGApproxError, ValueError):
    pass


# -- queries -----------------------------------------------------------------


class SchemaError(KGApproxError, ValueError):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


class InvariantViolation(KGApproxError, ValueError):
    pass


# -- sampling / estimation ---------------------------------------------------


class NoCandidates(KGApproxError, LookupError):
    pass


class EmptyIntersection(KGApproxError, LookupError):
    pass


class EmptyAnswerSet(KGApproxError, ValueError):
    pass


class EmptyValidatedSample(KGApproxError, ValueError):
    def __init__(self, message: str = "no accepted answers", index: int | None = None) -> None:
        if index is not None:
            message = f"small sample {index}: {message}"
        super().__init__(message)
        self.index = index


class DomainError(KGApproxError, ValueError):
    pass


class SessionExpired(KGApproxError, RuntimeError):
    pass


class IsolatedNodeWarning(UserWarning):
    """A region member has no in-region edges; it is dropped from the walk."""
