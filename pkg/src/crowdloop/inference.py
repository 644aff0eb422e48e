"""Joint EM inference of item labels and worker confusion matrices.

Workers are modeled by row-stochastic confusion matrices (row = true class,
column = annotated class). The E-step combines a per-item prior (uniform, or
a learnt model's calibrated prediction) with the annotation likelihoods; the
M-step re-estimates each worker's matrix as Dirichlet-MAP counts against the
current aggregated labels. Both the hard (aggregated labels unchanged) and
soft (mean annotation likelihood change below epsilon) convergence tests are
provided.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_prob_rows, check_row_stochastic
from .errors import EmptyLog, ZeroPosterior

CONFUSION_FLOOR = 1e-12


@dataclass(frozen=True)
class AnnotationRecord:
    item_id: str
    worker_id: str
    label: int
    step: int


class AnnotationLog:
    """Append-only set of (item, worker, label, step) records.

    The per-item annotation cap is enforced by the loop, not here.
    """

    def __init__(self, records: Iterable[AnnotationRecord] = ()):
        self.records: list[AnnotationRecord] = list(records)

    def append(self, item_id: str, worker_id: str, label: int, step: int) -> None:
        self.records.append(AnnotationRecord(item_id, worker_id, int(label), step))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def counts_by_item(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.records:
            counts[rec.item_id] = counts.get(rec.item_id, 0) + 1
        return counts

    def counts_by_worker(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.records:
            counts[rec.worker_id] = counts.get(rec.worker_id, 0) + 1
        return counts

    def workers_of(self, item_id: str) -> set[str]:
        return {rec.worker_id for rec in self.records if rec.item_id == item_id}

    # -- serialization (JSON Lines) -------------------------------------

    def to_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            for rec in self.records:
                fh.write(json.dumps(
                    {"item": rec.item_id, "worker": rec.worker_id,
                     "label": rec.label, "step": rec.step},
                    sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "AnnotationLog":
        log = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            log.append(doc["item"], doc["worker"], doc["label"], doc["step"])
        return log


@dataclass(frozen=True)
class WorkerSkill:
    """Estimated reliability of one worker."""

    worker_id: str
    confusion: np.ndarray
    annotation_count: int = 0

    def __post_init__(self):
        check_row_stochastic(self.confusion, f"confusion[{self.worker_id}]",
                             tol=1e-9)


@dataclass
class SkillPrior:
    """Dirichlet prior over confusion-matrix rows, Dir(n_beta * alpha).

    The homogeneous tier puts ``alpha_diag`` on the diagonal and spreads the
    remaining mass uniformly over the off-diagonal entries. The class_aware
    and worker_aware tiers accept externally supplied per-class diagonals or
    per-worker row-stochastic matrices.
    """

    n_beta: float = 10.0
    alpha_diag: float = 0.7
    mode: str = "homogeneous"  # homogeneous | class_aware | worker_aware | both
    class_diags: np.ndarray | None = None
    worker_matrices: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.n_beta <= 0:
            raise ValueError("n_beta must be > 0")
        if not 0.0 < self.alpha_diag < 1.0:
            raise ValueError("alpha_diag must be in (0, 1)")
        if self.mode not in ("homogeneous", "class_aware", "worker_aware", "both"):
            raise ValueError(f"unknown prior mode {self.mode!r}")

    def pseudo_counts(self, k: int, worker_id: str | None = None) -> np.ndarray:
        if self.mode in ("worker_aware", "both") and self.worker_matrices:
            mat = self.worker_matrices.get(worker_id) if worker_id else None
            if mat is not None:
                return self.n_beta * np.asarray(mat, dtype=np.float64)
            if self.mode == "worker_aware":
                return self._homogeneous(k)
        if self.mode in ("class_aware", "both") and self.class_diags is not None:
            diags = np.asarray(self.class_diags, dtype=np.float64)
            if diags.shape != (k,):
                raise ValueError("class_diags must have one entry per class")
            counts = np.empty((k, k))
            for y in range(k):
                off = (1.0 - diags[y]) / max(k - 1, 1)
                counts[y, :] = off
                counts[y, y] = diags[y]
            return self.n_beta * counts
        return self._homogeneous(k)

    def _homogeneous(self, k: int) -> np.ndarray:
        off = (1.0 - self.alpha_diag) / max(k - 1, 1)
        counts = np.full((k, k), self.n_beta * off)
        np.fill_diagonal(counts, self.n_beta * self.alpha_diag)
        return counts

    def prior_skill(self, worker_id: str, k: int) -> WorkerSkill:
        counts = self.pseudo_counts(k, worker_id)
        return WorkerSkill(
            worker_id=worker_id,
            confusion=counts / counts.sum(axis=1, keepdims=True),
            annotation_count=0,
        )


@dataclass(frozen=True)
class LabelState:
    """Belief about one item's label."""

    posterior: np.ndarray
    aggregated: int
    risk: float
    finished: bool
    annotation_count: int


class LabelTable:
    """Per-item label beliefs for the whole dataset, stored as arrays.

    ``aggregated`` is the argmax of each posterior with lowest-index tie
    break; ``risk`` is 1 - max posterior (expected 0/1 mislabeling cost).
    """

    def __init__(self, item_ids: Sequence[str], posterior: np.ndarray,
                 annotation_count: np.ndarray | None = None):
        self.item_ids = list(item_ids)
        self.posterior = check_prob_rows(posterior, "posterior", tol=1e-6)
        if self.posterior.shape[0] != len(self.item_ids):
            raise ValueError("posterior rows must match item count")
        n = len(self.item_ids)
        if annotation_count is None:
            annotation_count = np.zeros(n, dtype=np.int64)
        self.annotation_count = np.asarray(annotation_count, dtype=np.int64)
        # Lowest-index argmax with ties at float resolution: summation-order
        # rounding must not break exact mathematical ties inconsistently.
        peak = self.posterior.max(axis=1)
        near_peak = self.posterior >= (peak - peak * 1e-12)[:, None]
        self.aggregated = np.argmax(near_peak, axis=1)
        self.risk = 1.0 - peak
        self.finished = np.zeros(n, dtype=bool)
        self._index = {iid: i for i, iid in enumerate(self.item_ids)}

    def __len__(self) -> int:
        return len(self.item_ids)

    @property
    def n_classes(self) -> int:
        return self.posterior.shape[1]

    def index_of(self, item_id: str) -> int:
        return self._index[item_id]

    def __getitem__(self, i: int) -> LabelState:
        return LabelState(
            posterior=self.posterior[i],
            aggregated=int(self.aggregated[i]),
            risk=float(self.risk[i]),
            finished=bool(self.finished[i]),
            annotation_count=int(self.annotation_count[i]),
        )

    @classmethod
    def uniform(cls, item_ids: Sequence[str], k: int) -> "LabelTable":
        n = len(item_ids)
        return cls(item_ids, np.full((n, k), 1.0 / k))


def _index_records(log: AnnotationLog, item_index: Mapping[str, int],
                   worker_index: Mapping[str, int]):
    items = np.array([item_index[r.item_id] for r in log.records], dtype=np.int64)
    workers = np.array([worker_index[r.worker_id] for r in log.records],
                       dtype=np.int64)
    labels = np.array([r.label for r in log.records], dtype=np.int64)
    return items, workers, labels


def _stack_skills(skills: Mapping[str, WorkerSkill]):
    worker_ids = sorted(skills)
    stack = np.stack([skills[w].confusion for w in worker_ids])
    return worker_ids, {w: i for i, w in enumerate(worker_ids)}, stack


def e_step(log: AnnotationLog, skills: Mapping[str, WorkerSkill],
           model_prior: np.ndarray, item_ids: Sequence[str]) -> LabelTable:
    """Posterior over labels per item given skills and a per-item prior.

    posterior_i(y) is proportional to prior_i(y) times the product over the
    item's annotations of confusion_j[y, z_ij]. Items without annotations
    keep their prior row. Skill matrices are used verbatim, so externally
    injected exact zeros combined with contradictory evidence raise
    ZeroPosterior.
    """
    prior = check_prob_rows(model_prior, "model_prior")
    n, k = prior.shape
    if len(item_ids) != n:
        raise ValueError("model_prior rows must match item count")
    counts = np.zeros(n, dtype=np.int64)
    with np.errstate(divide="ignore"):
        log_post = np.log(prior)
    if len(log):
        item_index = {iid: i for i, iid in enumerate(item_ids)}
        _, worker_index, stack = _stack_skills(skills)
        items, workers, labels = _index_records(log, item_index, worker_index)
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError("annotation label outside [0, K)")
        with np.errstate(divide="ignore"):
            contrib = np.log(stack[workers, :, labels])  # (R, K)
        np.add.at(log_post, items, contrib)
        np.add.at(counts, items, 1)
    peak = log_post.max(axis=1)
    dead = ~np.isfinite(peak)
    if np.any(dead & (counts > 0)):
        bad = [item_ids[i] for i in np.nonzero(dead & (counts > 0))[0][:3]]
        raise ZeroPosterior(f"zero posterior mass for items {bad}")
    posterior = np.exp(log_post - peak[:, None])
    posterior /= posterior.sum(axis=1, keepdims=True)
    return LabelTable(item_ids, posterior, counts)


def m_step(log: AnnotationLog, labels: LabelTable, prior: SkillPrior,
           worker_ids: Sequence[str]) -> dict[str, WorkerSkill]:
    """MAP confusion matrices from aggregated labels plus Dirichlet counts.

    Row y of worker j is the prior pseudo-counts plus one count at column
    z_ij for every item the worker annotated whose aggregated label is y,
    normalized. Workers without annotations get the normalized prior.
    """
    worker_ids = sorted(worker_ids)
    k = labels.n_classes
    index = {w: i for i, w in enumerate(worker_ids)}
    counts = np.zeros((len(worker_ids), k, k))
    per_worker = np.zeros(len(worker_ids), dtype=np.int64)
    if len(log):
        item_index = labels._index
        items, workers, z = _index_records(log, item_index, index)
        y_hat = labels.aggregated[items]
        np.add.at(counts, (workers, y_hat, z), 1.0)
        np.add.at(per_worker, workers, 1)
    skills: dict[str, WorkerSkill] = {}
    for w in worker_ids:
        i = index[w]
        total = counts[i] + prior.pseudo_counts(k, w)
        skills[w] = WorkerSkill(
            worker_id=w,
            confusion=total / total.sum(axis=1, keepdims=True),
            annotation_count=int(per_worker[i]),
        )
    return skills


def mean_likelihood(log: AnnotationLog, labels: LabelTable,
                    skills: Mapping[str, WorkerSkill]) -> float:
    """Average annotation likelihood p(z_ij | aggregated_i, w_j) over the log."""
    if not len(log):
        raise EmptyLog("mean_likelihood requires a non-empty log")
    total = 0.0
    for rec in log.records:
        y = labels.aggregated[labels.index_of(rec.item_id)]
        total += float(skills[rec.worker_id].confusion[y, rec.label])
    return total / len(log)


def _floor_skills(skills: dict[str, WorkerSkill]) -> dict[str, WorkerSkill]:
    floored = {}
    for w, s in skills.items():
        conf = np.maximum(s.confusion, CONFUSION_FLOOR)
        conf = conf / conf.sum(axis=1, keepdims=True)
        floored[w] = WorkerSkill(w, conf, s.annotation_count)
    return floored


def run_em(
    log: AnnotationLog,
    skills_init: Mapping[str, WorkerSkill],
    model_prior: np.ndarray,
    item_ids: Sequence[str],
    prior: SkillPrior,
    epsilon: float = 0.01,
    max_iters: int = 50,
    mode: str = "soft",
) -> tuple[LabelTable, dict[str, WorkerSkill], int]:
    """Alternate e_step/m_step until the chosen convergence test fires.

    hard: stop once no aggregated label changed between iterations.
    soft: stop once the mean annotation likelihood changes by at most
    ``epsilon`` between iterations. Matrices produced by the M-step are
    floored at 1e-12 (and renormalized) before reuse; the initial skills are
    used verbatim.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if mode not in ("hard", "soft"):
        raise ValueError(f"unknown EM mode {mode!r}")

    if not len(log):
        labels = LabelTable(item_ids, model_prior)
        skills = m_step(log, labels, prior, list(skills_init))
        return labels, skills, 1

    skills: Mapping[str, WorkerSkill] = skills_init
    prev_agg: np.ndarray | None = None
    prev_ml: float | None = None
    labels = None
    iters = 0
    for iters in range(1, max_iters + 1):
        labels = e_step(log, skills, model_prior, item_ids)
        skills = _floor_skills(m_step(log, labels, prior, list(skills_init)))
        if mode == "hard":
            if prev_agg is not None and np.array_equal(labels.aggregated, prev_agg):
                break
            prev_agg = labels.aggregated.copy()
        else:
            ml = mean_likelihood(log, labels, skills)
            if prev_ml is not None and abs(ml - prev_ml) <= epsilon:
                break
            prev_ml = ml
    return labels, dict(skills), iters


class DawidSkene(BaseEstimator):
    """Estimator wrapper around the EM routine.

    fit() consumes an AnnotationLog plus the item universe and leaves the
    results in ``posterior_``, ``labels_``, ``skills_`` and ``n_iter_``.
    """

    def __init__(self, n_beta: float = 10.0, alpha_diag: float = 0.7,
                 epsilon: float = 0.01, max_iters: int = 50,
                 mode: str = "soft"):
        self.n_beta = n_beta
        self.alpha_diag = alpha_diag
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.mode = mode

    def fit(self, log: AnnotationLog, item_ids: Sequence[str], n_classes: int,
            worker_ids: Sequence[str] | None = None,
            model_prior: np.ndarray | None = None):
        prior = SkillPrior(n_beta=self.n_beta, alpha_diag=self.alpha_diag)
        if worker_ids is None:
            worker_ids = sorted({rec.worker_id for rec in log.records})
        if model_prior is None:
            model_prior = np.full((len(item_ids), n_classes), 1.0 / n_classes)
        skills_init = {w: prior.prior_skill(w, n_classes) for w in worker_ids}
        labels, skills, iters = run_em(
            log, skills_init, model_prior, item_ids, prior,
            epsilon=self.epsilon, max_iters=self.max_iters, mode=self.mode,
        )
        self.posterior_ = labels.posterior
        self.labels_ = labels
        self.skills_ = skills
        self.n_iter_ = iters
        return self
