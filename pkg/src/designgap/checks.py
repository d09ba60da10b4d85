"""Result record shared by every inequality verifier."""

from __future__ import annotations

from dataclasses import dataclass, field

SLACK = 1e-8


@dataclass(frozen=True)
class BoundCheck:
    """Both sides of an inequality oriented so that ``lhs >= rhs`` is asserted.

    ``details`` holds the intermediate quantities (gaps, alphas, gammas, ...)
    that went into the two sides.
    """

    name: str
    lhs: float
    rhs: float
    slack: float = SLACK
    details: dict = field(default_factory=dict, compare=False)

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @property
    def passed(self) -> bool:
        return self.lhs >= self.rhs - self.slack

    def as_row(self) -> dict:
        row = {
            "check": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "passed": self.passed,
        }
        for key, value in self.details.items():
            if isinstance(value, (int, float, str, bool)):
                row[key] = value
        return row
