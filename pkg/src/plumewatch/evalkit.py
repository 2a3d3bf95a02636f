"""Scene-level evaluation: average precision, binary metrics, flux strata.

A record is one scored scene with its hand label; metrics treat the pooled
record set as a single ranking task. Average precision uses the
step-interpolated rule with the precision envelope (precision at each
achieved recall level is the maximum precision at any recall at least that
high), with tied scores grouped so a tie can never be split by the
threshold sweep. Site-averaged AP is available behind a flag for
comparison, but pooled AP is the headline number.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EvalError(Exception):
    pass


class DegenerateEval(EvalError):
    """Raised when records contain only one class (or none at all)."""


DEFAULT_FLUX_BIN_EDGES_T_H = (0.5, 1.0, 2.0, 3.0, 5.0, 10.0, float("inf"))


@dataclass(frozen=True)
class EvalRecord:
    scene_id: str
    site_id: str
    country: str
    satellite: str
    scene_score: float
    label: str  # "plume" | "no_plume"
    flux_t_h: float | None = None  # hand-catalogued flux for stratification

    @property
    def is_positive(self) -> bool:
        return self.label == "plume"


@dataclass
class MetricsReport:
    mAP: float
    accuracy: float
    recall: float
    precision: float
    false_positive_rate: float
    threshold: float
    counts: dict[str, int] = field(default_factory=dict)
    per_flux_bin_recall: dict[str, float] = field(default_factory=dict)
    interpolation: str = "step-envelope"

    def to_dict(self) -> dict:
        return {
            "mAP": self.mAP,
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "false_positive_rate": self.false_positive_rate,
            "threshold": self.threshold,
            "counts": self.counts,
            "per_flux_bin_recall": self.per_flux_bin_recall,
            "interpolation": self.interpolation,
        }


def _check_two_classes(records) -> None:
    n_pos = sum(r.is_positive for r in records)
    if n_pos == 0 or n_pos == len(records):
        raise DegenerateEval(
            f"need at least one positive and one negative, got {n_pos}/{len(records)}"
        )


def average_precision(records: list[EvalRecord]) -> float:
    """Area under the precision-recall curve, step rule with envelope."""
    _check_two_classes(records)
    scores = np.array([r.scene_score for r in records])
    labels = np.array([r.is_positive for r in records])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    # Evaluate only at boundaries between distinct scores: tied records are
    # swept into the prediction set together.
    boundary = np.nonzero(np.diff(scores))[0]
    cut = np.concatenate([boundary, [scores.size - 1]])
    tp = np.cumsum(labels)[cut]
    n_pred = cut + 1
    n_pos = labels.sum()
    recall = tp / n_pos
    precision = tp / n_pred
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recall, envelope):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return float(ap)


def site_averaged_ap(records: list[EvalRecord]) -> float:
    """Mean of per-site AP over sites with both classes present."""
    by_site: dict[str, list[EvalRecord]] = {}
    for r in records:
        by_site.setdefault(r.site_id, []).append(r)
    values = []
    for site_records in by_site.values():
        n_pos = sum(r.is_positive for r in site_records)
        if 0 < n_pos < len(site_records):
            values.append(average_precision(site_records))
    if not values:
        raise DegenerateEval("no site has both classes")
    return float(np.mean(values))


def binary_metrics(records: list[EvalRecord], threshold: float = 0.5) -> MetricsReport:
    """Confusion-matrix metrics at a score threshold (predict plume if >=)."""
    _check_two_classes(records)
    tp = fp = tn = fn = 0
    for r in records:
        predicted = r.scene_score >= threshold
        if predicted and r.is_positive:
            tp += 1
        elif predicted:
            fp += 1
        elif r.is_positive:
            fn += 1
        else:
            tn += 1
    n = tp + fp + tn + fn
    return MetricsReport(
        mAP=average_precision(records),
        accuracy=(tp + tn) / n,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        false_positive_rate=fp / (fp + tn) if fp + tn else 0.0,
        threshold=threshold,
        counts={"TP": tp, "FP": fp, "TN": tn, "FN": fn, "N": n},
    )


def flux_stratified_recall(
    records: list[EvalRecord],
    bin_edges_t_h=DEFAULT_FLUX_BIN_EDGES_T_H,
    threshold: float = 0.5,
):
    """Recall of positive records per flux bin; empty bins are absent.

    Returns (per-bin recall dict, count of positives excluded for missing
    flux). Bin labels are half-open intervals over the given edges in t/h.
    """
    edges = list(bin_edges_t_h)
    per_bin: dict[str, list[bool]] = {}
    excluded = 0
    for r in records:
        if not r.is_positive:
            continue
        if r.flux_t_h is None:
            excluded += 1
            continue
        for lo, hi in zip(edges[:-1], edges[1:]):
            if lo <= r.flux_t_h < hi:
                label = f"[{lo:g}, {hi:g})" if np.isfinite(hi) else f">={lo:g}"
                per_bin.setdefault(label, []).append(r.scene_score >= threshold)
                break
    recall = {label: float(np.mean(hits)) for label, hits in per_bin.items()}
    return recall, excluded


def score_histogram(records: list[EvalRecord], n_bins: int = 20) -> dict:
    """Two-class scene-score histogram (the data behind case-study panels)."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return {
        "bin_edges": edges.tolist(),
        "plume": np.histogram(
            [r.scene_score for r in records if r.is_positive], bins=edges
        )[0].tolist(),
        "no_plume": np.histogram(
            [r.scene_score for r in records if not r.is_positive], bins=edges
        )[0].tolist(),
    }


def save_histogram_csv(hist: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "plume", "no_plume"])
        edges = hist["bin_edges"]
        for low, high, pos, neg in zip(edges[:-1], edges[1:], hist["plume"], hist["no_plume"]):
            writer.writerow([low, high, pos, neg])


def case_study_report(records: list[EvalRecord], region_filter, threshold: float = 0.5):
    """Metrics restricted to a region plus the two-class score histograms.

    ``region_filter`` is a country name or a predicate over records.
    """
    if callable(region_filter):
        subset = [r for r in records if region_filter(r)]
    else:
        subset = [r for r in records if r.country == region_filter]
    if not subset:
        raise DegenerateEval(f"no records match region filter {region_filter!r}")
    report = binary_metrics(subset, threshold)
    recall, _ = flux_stratified_recall(subset, threshold=threshold)
    report.per_flux_bin_recall = recall
    return report, score_histogram(subset)


# ---------------------------------------------------------------------------
# Record I/O (CSV or JSON), so external baselines can be scored too
# ---------------------------------------------------------------------------

_CSV_FIELDS = ["scene_id", "site_id", "country", "satellite", "scene_score", "label", "flux_t_h"]


def load_records(path) -> list[EvalRecord]:
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text())
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    records = []
    for row in rows:
        flux_raw = row.get("flux_t_h")
        records.append(EvalRecord(
            scene_id=row["scene_id"],
            site_id=row["site_id"],
            country=row.get("country", ""),
            satellite=row.get("satellite", ""),
            scene_score=float(row["scene_score"]),
            label=row["label"],
            flux_t_h=float(flux_raw) if flux_raw not in (None, "", "None") else None,
        ))
    return records


def save_records(records: list[EvalRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for r in records:
            writer.writerow([r.scene_id, r.site_id, r.country, r.satellite,
                             r.scene_score, r.label,
                             "" if r.flux_t_h is None else r.flux_t_h])
