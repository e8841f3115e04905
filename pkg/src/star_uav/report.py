"""Per-subproblem solve reports shared by the three optimizers and the driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

VALID_STATUSES = ("ok", "flagged", "failed")


@dataclass
class SolveReport:
    """Outcome of one subproblem optimization (beams, trajectory or power).

    ``status`` is ``ok`` on a clean finish, ``flagged`` when the result is usable but a
    warning condition was hit (extraction slack, nonzero ordering slack, iteration cap),
    and ``failed`` when the very first convex subproblem was infeasible and the input was
    returned unchanged.
    """

    name: str
    status: str = "ok"
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list)
    rate_before: float = 0.0
    rate_after: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def set_status(self, status: str) -> None:
        if status not in VALID_STATUSES:
            raise ValueError(f"Invalid status {status!r}, must be one of {VALID_STATUSES}")
        # never downgrade a failure
        if self.status == "failed":
            return
        if status == "ok" and self.status == "flagged":
            return
        self.status = status

    def flag(self, message: str) -> None:
        log.warning("%s: %s", self.name, message)
        self.warnings.append(message)
        self.set_status("flagged")

    @property
    def failed(self) -> bool:
        return self.status == "failed"

    @classmethod
    def merge(cls, name: str, reports: list[SolveReport]) -> SolveReport:
        """Combine per-slot reports into one, worst status wins."""
        merged = cls(name=name)
        for r in reports:
            merged.iterations = max(merged.iterations, r.iterations)
            merged.rate_before += r.rate_before
            merged.rate_after += r.rate_after
            merged.warnings.extend(r.warnings)
            merged.set_status(r.status)
        if reports:
            length = max(len(r.objective_trace) for r in reports)
            trace = [0.0] * length
            for r in reports:
                for i in range(length):
                    if r.objective_trace:
                        trace[i] += r.objective_trace[min(i, len(r.objective_trace) - 1)]
            merged.objective_trace = trace
        return merged
