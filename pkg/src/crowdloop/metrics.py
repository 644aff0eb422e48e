"""Evaluation quantities and machine-readable result curves.

All truth-dependent metrics are computed against simulation ground truth;
on runs without truth they are emitted as empty CSV fields / JSON nulls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyFinishedSet, IoError, MissingTruth
from .inference import LabelTable

CSV_HEADER = ("step,annotations_total,annotations_per_image,top1,top5,"
              "finished_size,finished_precision,unfinished_fraction,"
              "mean_precision_targets")


@dataclass
class StepMetrics:
    """One row of the per-step curve.

    ``mean_risk`` is a loop diagnostic kept in memory only; the CSV carries
    exactly the documented nine columns.
    """

    step: int
    annotations_total: int
    annotations_per_image: float
    top1: float | None
    top5: float | None
    finished_size: int
    finished_precision: float | None
    unfinished_fraction: float
    mean_precision_targets: float | None = None
    mean_risk: float | None = None


def top_k_accuracy(labels: LabelTable, truth: np.ndarray | None, k: int) -> float:
    """Fraction of items whose true label is among the k highest-posterior
    classes (stable ordering, so exact ties prefer lower class indices)."""
    if truth is None:
        raise MissingTruth("top-k accuracy requires ground-truth labels")
    truth = np.asarray(truth, dtype=np.int64)
    if len(truth) != len(labels):
        raise MissingTruth("truth vector does not cover every item")
    order = np.argsort(-labels.posterior, axis=1, kind="stable")[:, :k]
    hit = (order == truth[:, None]).any(axis=1)
    return float(hit.mean())


def finished_precision(labels: LabelTable, truth: np.ndarray | None,
                       mask: np.ndarray | None = None) -> float:
    """Top-1 accuracy restricted to the finished items.

    ``mask`` overrides the table's finished flags (the loop passes the
    risk-defined finished set)."""
    if truth is None:
        raise MissingTruth("finished precision requires ground-truth labels")
    if mask is None:
        mask = labels.finished
    if not np.any(mask):
        raise EmptyFinishedSet("no finished items")
    truth = np.asarray(truth, dtype=np.int64)
    return float(np.mean(labels.aggregated[mask] == truth[mask]))


def mean_precision_targets(labels: LabelTable, truth: np.ndarray | None,
                           n_target_classes: int) -> float | None:
    """Macro precision of the aggregated labels over the target (non-OOD)
    classes; classes never predicted are skipped."""
    if truth is None:
        raise MissingTruth("mean precision requires ground-truth labels")
    truth = np.asarray(truth, dtype=np.int64)
    precisions = []
    for c in range(n_target_classes):
        predicted = labels.aggregated == c
        if not np.any(predicted):
            continue
        precisions.append(float(np.mean(truth[predicted] == c)))
    if not precisions:
        return None
    return float(np.mean(precisions))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _parse(text: str):
    if text == "":
        return None
    return float(text)


def write_metrics_csv(rows: Sequence[StepMetrics], path: str | Path) -> None:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            str(r.step),
            str(r.annotations_total),
            _fmt(r.annotations_per_image),
            _fmt(r.top1),
            _fmt(r.top5),
            str(r.finished_size),
            _fmt(r.finished_precision),
            _fmt(r.unfinished_fraction),
            _fmt(r.mean_precision_targets),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path: str | Path) -> list[StepMetrics]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise IoError(f"{path}: unexpected CSV header")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        rows.append(StepMetrics(
            step=int(parts[0]),
            annotations_total=int(parts[1]),
            annotations_per_image=_parse(parts[2]),
            top1=_parse(parts[3]),
            top5=_parse(parts[4]),
            finished_size=int(parts[5]),
            finished_precision=_parse(parts[6]),
            unfinished_fraction=_parse(parts[7]),
            mean_precision_targets=_parse(parts[8]),
        ))
    return rows


def annotations_at_threshold(rows: Sequence[StepMetrics],
                             threshold: float) -> float | None:
    """Annotations/image at the first crossing of a top-1 threshold, linearly
    interpolated between adjacent steps; None if never reached."""
    prev = None
    for row in rows:
        if row.top1 is None:
            continue
        if row.top1 >= threshold:
            if prev is None or prev.top1 >= threshold:
                return float(row.annotations_per_image)
            span = row.top1 - prev.top1
            frac = 0.0 if span <= 0 else (threshold - prev.top1) / span
            return float(prev.annotations_per_image
                         + frac * (row.annotations_per_image
                                   - prev.annotations_per_image))
        prev = row
    return None


def emit_curves(rows: Sequence[StepMetrics], out_dir: str | Path,
                thresholds: Sequence[float] = (0.8,)) -> dict[str, Path]:
    """Write metrics.csv plus a summary.json with threshold crossings."""
    if not rows:
        raise ValueError("rows must be non-empty")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "metrics.csv"
        write_metrics_csv(rows, csv_path)
        last = rows[-1]
        summary = {
            "final_top1": last.top1,
            "final_top5": last.top5,
            "final_ann_per_image": last.annotations_per_image,
            "num_steps": len(rows),
            "ann_per_image_at": {
                repr(float(t)): annotations_at_threshold(rows, t)
                for t in thresholds
            },
        }
        summary_path = out_dir / "summary.json"
        summary_path.write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write curves under {out_dir}: {exc}") from exc
    return {"metrics": csv_path, "summary": summary_path}
