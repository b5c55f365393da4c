from __future__ import annotations

from dataclasses import dataclass, field
from typing import List


class VertexRiskError(Exception):
    """Base error; ``exit_code`` is what the command line returns for it."""

    exit_code: int = 1
    kind: str = "runtime"


class DomainError(VertexRiskError):
    """Argument outside an operation's domain (unknown vertex, empty group, ...)."""

    exit_code = 3
    kind = "domain"


class UsageError(VertexRiskError):
    """Bad command-line or configuration parameters."""

    exit_code = 3
    kind = "usage"


class ContractError(VertexRiskError):
    """An operator was handed a graph it cannot work with."""

    exit_code = 1
    kind = "contract"


@dataclass(frozen=True)
class ValidationIssue:
    source: str
    line: int | None
    reason: str

    def __str__(self) -> str:
        where = f"{self.source}:{self.line}" if self.line is not None else self.source
        return f"{where}: {self.reason}"


@dataclass(eq=False)
class ValidationError(VertexRiskError):
    """Input data failed validation.

    Carries every issue found, not only the first.
    """

    message: str
    issues: List[ValidationIssue] = field(default_factory=list)

    exit_code = 2
    kind = "validation"

    def __post_init__(self) -> None:
        super().__init__(self.message)

    def __str__(self) -> str:
        if not self.issues:
            return self.message
        head = "; ".join(str(issue) for issue in self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        return f"{self.message}: {head}{more}"


class IssueCollector:
    """Accumulates validation issues and raises them together."""

    def __init__(self, source: str) -> None:
        self.source = source
        self.issues: List[ValidationIssue] = []

    def add(self, reason: str, line: int | None = None, *, source: str | None = None) -> None:
        self.issues.append(ValidationIssue(source or self.source, line, reason))

    def __bool__(self) -> bool:
        return bool(self.issues)

    def raise_if_any(self, message: str) -> None:
        if self.issues:
            raise ValidationError(message, list(self.issues))
