"""Verification reports: violations, margin statistics, and JSON rendering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional


@dataclass
class Violation:
    sample_index: int
    point: dict
    measured: float
    required: float
    detail: str = ""

    def to_json(self) -> dict:
        return {"sample_index": self.sample_index, "point": self.point,
                "measured": self.measured, "required": self.required,
                "detail": self.detail}


@dataclass
class VerificationReport:
    condition: str
    samples_tested: int = 0
    samples_checked: int = 0  # samples where the condition's premise applied
    violations: List[Violation] = field(default_factory=list)
    margin_min: Optional[float] = None
    margin_mean: Optional[float] = None
    verdict: str = "pass"  # pass | fail | inconclusive
    notes: List[str] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add_margin(self, margin: float):
        if self.margin_min is None or margin < self.margin_min:
            self.margin_min = margin
        total = (self.margin_mean or 0.0) * (self.samples_checked - 1) + margin
        self.margin_mean = total / self.samples_checked if self.samples_checked else margin

    def finalize(self, reverify=None) -> "VerificationReport":
        """Set the verdict; violations surviving one re-evaluation decide failure."""
        if reverify is not None:
            self.violations = [v for v in self.violations if reverify(v)]
        self.violations.sort(key=lambda v: v.sample_index)
        if self.violations:
            self.verdict = "fail"
        elif self.verdict != "inconclusive":
            self.verdict = "pass"
        return self

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json(self, max_violations: int = 20) -> dict:
        out = {
            "condition": self.condition,
            "verdict": self.verdict,
            "samples_tested": self.samples_tested,
            "samples_checked": self.samples_checked,
            "violation_count": len(self.violations),
            "violations": [v.to_json() for v in self.violations[:max_violations]],
        }
        if self.margin_min is not None and math.isfinite(self.margin_min):
            out["margin_min"] = self.margin_min
        if self.margin_mean is not None and math.isfinite(self.margin_mean):
            out["margin_mean"] = self.margin_mean
        if self.notes:
            out["notes"] = list(self.notes)
        if self.extras:
            out["extras"] = self.extras
        return out

    def summary_line(self) -> str:
        flag = self.verdict.upper()
        extra = f", {len(self.violations)} violation(s)" if self.violations else ""
        margin = (f", min margin {self.margin_min:.3e}"
                  if self.margin_min is not None and math.isfinite(self.margin_min) else "")
        return f"[{flag}] {self.condition}: {self.samples_checked}/{self.samples_tested} samples checked{extra}{margin}"
