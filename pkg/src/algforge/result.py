"""Machine-readable check results shared by the axiom checks and the suite."""

from __future__ import annotations

import json
import math
import platform
import sys
from dataclasses import dataclass, field

import numpy as np

__all__ = ["CheckResult", "VerificationReport", "make_result"]


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one named residual check.

    Residuals are absolute (sample boxes keep quantities of order <= 10);
    ``largest_magnitude`` records the biggest value met while computing the
    residual so a relative reading stays possible.
    """

    check_id: str
    inputs_digest: str
    seed: int
    points: int
    max_residual: float
    tolerance: float
    passed: bool
    ms: float
    largest_magnitude: float = 0.0
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.check_id,
            "pass": self.passed,
            "max_residual": self.max_residual,
            "tolerance": self.tolerance,
            "seed": self.seed,
            "points": self.points,
            "ms": self.ms,
        }


def make_result(
    check_id: str,
    max_residual: float,
    tolerance: float,
    *,
    seed: int = 0,
    points: int = 0,
    digest: str = "",
    ms: float = 0.0,
    largest_magnitude: float = 0.0,
    note: str = "",
) -> CheckResult:
    residual = float(max_residual)
    # non-finite residuals always fail, with a diagnostic note
    finite = math.isfinite(residual)
    passed = finite and residual <= tolerance
    if not finite and not note:
        note = "non-finite residual"
    return CheckResult(
        check_id=check_id,
        inputs_digest=digest,
        seed=seed,
        points=points,
        max_residual=residual,
        tolerance=float(tolerance),
        passed=passed,
        ms=ms,
        largest_magnitude=float(largest_magnitude),
        note=note,
    )


def environment_fingerprint(version: str) -> dict:
    return {
        "artifact_version": version,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


@dataclass
class VerificationReport:
    results: list[CheckResult] = field(default_factory=list)
    version: str = "0"
    fingerprint: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps([r.to_dict() for r in self.results], indent=indent)

    def to_dict(self) -> dict:
        return {
            "results": [r.to_dict() for r in self.results],
            "version": self.version,
            "fingerprint": self.fingerprint,
        }
