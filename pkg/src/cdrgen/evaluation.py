"""Reference-based metrics for designed CDRs.

Amino-acid recovery counts exact sequence matches; RMSD compares alpha
carbon coordinates in the shared global frame. No superposition is
applied before RMSD: the framework and antigen are fixed during
generation, so reference and design already share a frame and aligning
them would hide placement error. Binding-energy improvement requires an
external scoring stack and is reported as "not computed".
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field

import numpy as np


class EvaluationError(ValueError):
    """Raised when metric inputs are malformed."""


def aar(reference: str, designed: str) -> float:
    """Percent of positions where the designed sequence matches."""
    if len(reference) != len(designed):
        raise EvaluationError(
            f"sequence lengths differ: {len(reference)} vs {len(designed)}"
        )
    if not reference:
        raise EvaluationError("sequences must be non-empty")
    matches = sum(1 for a, b in zip(reference, designed) if a == b)
    return 100.0 * matches / len(reference)


def rmsd_ca(reference: np.ndarray, designed: np.ndarray) -> float:
    """Root mean square deviation of paired CA coordinates, in angstroms."""
    reference = np.asarray(reference, dtype=np.float64)
    designed = np.asarray(designed, dtype=np.float64)
    if reference.shape != designed.shape or reference.ndim != 2 \
            or reference.shape[1] != 3:
        raise EvaluationError("coordinate arrays must both be (m, 3)")
    if reference.shape[0] == 0:
        raise EvaluationError("coordinate arrays must be non-empty")
    if not (np.isfinite(reference).all() and np.isfinite(designed).all()):
        raise EvaluationError("coordinates must be finite")
    return float(np.sqrt(np.mean(np.sum((reference - designed) ** 2, axis=1))))


@dataclass
class MetricRow:
    design_id: str
    cdr_tag: str
    aar: float
    rmsd: float

    def validate(self) -> None:
        if not 0.0 <= self.aar <= 100.0:
            raise EvaluationError("AAR must lie in [0, 100]")
        if self.rmsd < 0.0:
            raise EvaluationError("RMSD must be non-negative")


@dataclass
class MetricReport:
    """Per-design metric rows plus their aggregate statistics."""

    rows: list[MetricRow] = field(default_factory=list)
    imp: str = "not computed"

    def validate(self) -> None:
        if not self.rows:
            raise EvaluationError("report has no rows")
        for row in self.rows:
            row.validate()

    @property
    def mean_aar(self) -> float:
        return statistics.fmean(r.aar for r in self.rows)

    @property
    def median_aar(self) -> float:
        return statistics.median(r.aar for r in self.rows)

    @property
    def mean_rmsd(self) -> float:
        return statistics.fmean(r.rmsd for r in self.rows)

    @property
    def median_rmsd(self) -> float:
        return statistics.median(r.rmsd for r in self.rows)

    def to_csv(self) -> str:
        """Serialize: one row per design, aggregate mean row appended."""
        self.validate()
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["design_id", "cdr_tag", "aar", "rmsd"])
        for row in self.rows:
            writer.writerow([row.design_id, row.cdr_tag,
                             f"{row.aar:.6f}", f"{row.rmsd:.6f}"])
        writer.writerow(["aggregate_mean", self.rows[0].cdr_tag,
                         f"{self.mean_aar:.6f}", f"{self.mean_rmsd:.6f}"])
        return buffer.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_csv())
