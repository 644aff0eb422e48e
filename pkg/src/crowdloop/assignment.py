"""Worker selection for HIT batches: random baseline and greedy skill-aware.

The greedy scheme assigns each item to the eligible worker maximizing the
posterior-weighted diagonal of the worker's *inferred* confusion matrix,
under a per-worker annotation cap. Eligibility always excludes workers who
have already annotated the item.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NoEligibleWorker
from .inference import AnnotationLog, LabelTable, WorkerSkill


@dataclass
class AssignmentConfig:
    mode: str = "random"  # random | greedy
    alpha_cap: int = 2000

    def __post_init__(self):
        if self.mode not in ("random", "greedy"):
            raise ValueError(f"unknown assignment mode {self.mode!r}")
        if self.mode == "greedy" and self.alpha_cap < 1:
            raise ValueError("alpha_cap must be >= 1 in greedy mode")


def _labeled_pairs(log: AnnotationLog) -> set[tuple[str, str]]:
    return {(rec.item_id, rec.worker_id) for rec in log.records}


def eligible_workers(item_id: str, worker_ids: Sequence[str],
                     log: AnnotationLog) -> list[str]:
    """Workers who have not yet annotated this item, in sorted id order."""
    pairs = _labeled_pairs(log)
    return [w for w in sorted(worker_ids) if (item_id, w) not in pairs]


def assign_random(
    hits: Sequence[str],
    worker_ids: Sequence[str],
    log: AnnotationLog,
    rng: np.random.Generator | int,
    skip_ineligible: bool = False,
) -> list[tuple[str, str]]:
    """A uniform eligible worker per item; (item, worker) pairs never repeat.

    Items with no eligible worker raise NoEligibleWorker, or are silently
    dropped when ``skip_ineligible`` is set (the loop's behavior).
    """
    if not worker_ids:
        raise NoEligibleWorker("the worker pool is empty")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    pairs = _labeled_pairs(log)
    ordered = sorted(worker_ids)
    out: list[tuple[str, str]] = []
    for item in hits:
        elig = [w for w in ordered if (item, w) not in pairs]
        if not elig:
            if skip_ineligible:
                continue
            raise NoEligibleWorker(f"every worker already annotated {item!r}")
        w = elig[int(rng.integers(0, len(elig)))]
        out.append((item, w))
        pairs.add((item, w))
    return out


def assign_greedy(
    hits: Sequence[str],
    labels: LabelTable,
    skills: Mapping[str, WorkerSkill],
    log: AnnotationLog,
    alpha_cap: int,
    skip_ineligible: bool = False,
) -> list[tuple[str, str]]:
    """Per item, the eligible worker maximizing sum_y posterior[y] * conf[y, y].

    Eligible means: under the per-worker cap (counting assignments made in
    this batch) and not already an annotator of the item. Ties break on the
    lowest worker id. Workers never exceed ``alpha_cap`` annotations. Items
    with no eligible worker raise, or are dropped when ``skip_ineligible``.
    """
    pairs = _labeled_pairs(log)
    counts = log.counts_by_worker()
    ordered = sorted(skills)
    diags = {w: np.diag(skills[w].confusion) for w in ordered}
    out: list[tuple[str, str]] = []
    for item in hits:
        posterior = labels.posterior[labels.index_of(item)]
        best_w = None
        best_score = -np.inf
        for w in ordered:
            if counts.get(w, 0) + 1 > alpha_cap:
                continue
            if (item, w) in pairs:
                continue
            score = float(posterior @ diags[w])
            if score > best_score:
                best_w, best_score = w, score
        if best_w is None:
            if skip_ineligible:
                continue
            raise NoEligibleWorker(f"no eligible worker for {item!r}")
        out.append((item, best_w))
        pairs.add((item, best_w))
        counts[best_w] = counts.get(best_w, 0) + 1
    return out


def worker_importance(
    skills: Mapping[str, WorkerSkill],
    log: AnnotationLog,
    per_class_accuracy: np.ndarray | None,
) -> list[dict]:
    """Report-only importance score per worker.

    importance = 0.5 * sum_k u_k * conf[k, k] + 0.5 * count / max_count,
    where u_k is proportional to 1 / max(per-class model accuracy, 0.05) and
    normalized to sum to 1 (uniform when no model accuracy is available).
    """
    ordered = sorted(skills)
    if not ordered:
        return []
    k = skills[ordered[0]].confusion.shape[0]
    if per_class_accuracy is None:
        u = np.full(k, 1.0 / k)
    else:
        inv = 1.0 / np.maximum(np.asarray(per_class_accuracy, dtype=np.float64),
                               0.05)
        u = inv / inv.sum()
    counts = log.counts_by_worker()
    max_count = max([counts.get(w, 0) for w in ordered] + [1])
    rows = []
    for w in ordered:
        reliability = float(u @ np.diag(skills[w].confusion))
        c = counts.get(w, 0)
        rows.append({
            "worker": w,
            "annotations": c,
            "reliability": reliability,
            "importance": 0.5 * reliability + 0.5 * c / max_count,
        })
    return rows
