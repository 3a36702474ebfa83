"""Metric report container and its JSON serialization."""

from dataclasses import dataclass, field
import json
import math
import os

from .errors import ValidationError

SCHEMA_PATH = os.path.join(os.path.dirname(__file__), "assets", "report_schema.json")


@dataclass
class MetricReport:
    """One evaluation run's numbers; any subset may be populated."""

    fid: float | None = None
    mpjpe: float | None = None
    r_precision: dict | None = None  # {"1": ..., "2": ..., "3": ...}
    diversity: float | None = None
    mmdist: float | None = None
    judge: dict | None = None  # {"coherence","alignment","naturalness"} in [0,10]
    external: dict = field(default_factory=dict)  # adapter-supplied scores (e.g. METEOR)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("fid", "mpjpe", "diversity", "mmdist"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value}")
        if self.r_precision is not None:
            for k, v in self.r_precision.items():
                if not 0.0 <= v <= 1.0:
                    raise ValidationError(f"r_precision@{k} outside [0,1]: {v}")

    def to_json_dict(self) -> dict:
        doc = {}
        for name in ("fid", "mpjpe", "diversity", "mmdist"):
            if getattr(self, name) is not None:
                doc[name] = getattr(self, name)
        if self.r_precision is not None:
            doc["r_precision"] = {str(k): v for k, v in self.r_precision.items()}
        if self.judge is not None:
            doc["judge"] = self.judge
        if self.external:
            doc["external"] = self.external
        if self.warnings:
            doc["warnings"] = self.warnings
        return doc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MetricReport":
        return cls(
            fid=doc.get("fid"),
            mpjpe=doc.get("mpjpe"),
            r_precision=doc.get("r_precision"),
            diversity=doc.get("diversity"),
            mmdist=doc.get("mmdist"),
            judge=doc.get("judge"),
            external=doc.get("external", {}),
            warnings=doc.get("warnings", []),
        )


def attach_external_scores(report: MetricReport, scores: dict) -> MetricReport:
    """Adapter hook for externally computed language metrics."""
    for name, value in scores.items():
        if not math.isfinite(value):
            raise ValidationError(f"external score {name} must be finite")
        report.external[name] = float(value)
    return report
