"""Agreement scores between component importance maps and the overall map.

A high agreement for a component means its importance geometry matches the
overall importance geometry, i.e. that component drives the representation.
Two scoring modes are provided: Pearson correlation of the flattened maps
(default) and the raw double-sum inner product after scaling each map to
unit L2 norm (otherwise the sum would grow with resolution).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .engine import ImportanceMap

MODES = ("pearson", "raw-dot")

SCORED_COMPONENTS = ("color", "shape", "texture")

__all__ = ["MODES", "SCORED_COMPONENTS", "AgreementReport", "agreement_score", "score_maps",
           "aggregate", "write_csv", "read_csv"]


@dataclass(frozen=True)
class AgreementReport:
    """Per-component agreement for one image (count > 1 for aggregates)."""

    color: float
    shape: float
    texture: float
    mode: str = "pearson"
    image_id: str = ""
    count: int = 1

    def component_scores(self) -> dict[str, float]:
        return {"color": self.color, "shape": self.shape, "texture": self.texture}


def _flatten(m) -> np.ndarray:
    values = m.values if isinstance(m, ImportanceMap) else np.asarray(m, dtype=np.float64)
    return np.asarray(values, dtype=np.float64).ravel()


def agreement_score(component_map, overall_map, mode: str = "pearson") -> float:
    """Agreement between two same-shaped maps; symmetric in its arguments.

    Pearson mode returns 0 (with a warning) when either map has zero
    variance; raw-dot mode returns 0 when either map is identically zero.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    a = _flatten(component_map)
    b = _flatten(overall_map)
    if a.shape != b.shape:
        raise ValueError(f"map sizes differ: {a.size} vs {b.size}")
    if mode == "pearson":
        da = a - a.mean()
        db = b - b.mean()
        va = float(da @ da)
        vb = float(db @ db)
        # Variance at float-rounding scale is dust, not signal; correlating it
        # would return an arbitrary +-1, so treat it as zero variance.
        floor_a = (1e-9 * max(1.0, abs(float(a.mean())))) ** 2 * a.size
        floor_b = (1e-9 * max(1.0, abs(float(b.mean())))) ** 2 * b.size
        if va <= floor_a or vb <= floor_b:
            warnings.warn("zero-variance importance map; agreement defined as 0")
            return 0.0
        return float(np.clip((da @ db) / math.sqrt(va * vb), -1.0, 1.0))
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        warnings.warn("all-zero importance map; agreement defined as 0")
        return 0.0
    return float((a / na) @ (b / nb))


def score_maps(maps: dict[str, ImportanceMap], mode: str = "pearson", image_id: str = "") -> AgreementReport:
    """Score each component map in a run against the overall map."""
    missing = {"overall", *SCORED_COMPONENTS} - set(maps)
    if missing:
        raise ValueError(f"run is missing maps for {sorted(missing)}")
    overall = maps["overall"]
    scores = {name: agreement_score(maps[name], overall, mode) for name in SCORED_COMPONENTS}
    return AgreementReport(mode=mode, image_id=image_id, **scores)


def aggregate(reports: Sequence[AgreementReport]) -> AgreementReport:
    """Arithmetic mean of per-image scores; modes must be consistent."""
    if not reports:
        raise ValueError("cannot aggregate zero reports")
    modes = {r.mode for r in reports}
    if len(modes) > 1:
        raise ValueError(f"cannot aggregate mixed modes {sorted(modes)}")
    if len(reports) == 1:
        return replace(reports[0], image_id="aggregate", count=reports[0].count)
    total = sum(r.count for r in reports)
    means = {
        name: sum(getattr(r, name) * r.count for r in reports) / total
        for name in SCORED_COMPONENTS
    }
    return AgreementReport(mode=reports[0].mode, image_id="aggregate", count=total, **means)


_CSV_HEADER = ("image_id", "color", "shape", "texture", "mode")


def write_csv(path, reports: Sequence[AgreementReport], include_aggregate: bool = True) -> None:
    """Write per-image rows plus a one-row aggregate footer."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_CSV_HEADER)
        for report in reports:
            writer.writerow(_row(report))
        if include_aggregate and reports:
            writer.writerow(_row(aggregate(reports)))


def _row(report: AgreementReport) -> tuple:
    return (
        report.image_id,
        f"{report.color:.6f}",
        f"{report.shape:.6f}",
        f"{report.texture:.6f}",
        report.mode,
    )


def read_csv(path) -> list[AgreementReport]:
    """Read back rows written by write_csv (aggregate footer included)."""
    reports = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            reports.append(
                AgreementReport(
                    color=float(row["color"]),
                    shape=float(row["shape"]),
                    texture=float(row["texture"]),
                    mode=row["mode"],
                    image_id=row["image_id"],
                )
            )
    return reports
