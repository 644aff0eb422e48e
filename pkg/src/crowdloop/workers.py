"""Simulated annotators with realistic, structured class confusion.

A skill bank stores per-group empirical confusion matrices over the global
class set (each matrix is nonzero only inside its group's block, mirroring
how a worker only ever labels one group's items). Sampling a simulated
worker picks one stored matrix per group, smooths it with the group's pooled
matrix, restricts to the target classes, row-normalizes, and finally moves a
small probability mass from each row's within-group columns onto the
out-of-group columns. A symmetric uniform-noise worker is kept as the
over-optimistic baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datastore import FeatureStore, ItemMeta, Manifest
from .errors import EmptyBank, InvalidGroups, InvalidParam, UnknownClass

ROW_SUM_TOL = 1e-6


@dataclass
class SimWorker:
    """Generative confusion matrix plus an independent annotation stream."""

    worker_id: str
    confusion: np.ndarray
    rng_seed: int
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.float64)
        if np.any(self.confusion < 0):
            raise InvalidParam(f"{self.worker_id}: negative confusion entries")
        sums = self.confusion.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            raise InvalidParam(
                f"{self.worker_id}: confusion rows must sum to 1 "
                f"(max deviation {np.max(np.abs(sums - 1.0)):.3g})"
            )
        self._rng = np.random.default_rng(self.rng_seed)

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def annotate(self, true_label: int) -> int:
        """Draw one annotation from the row of ``true_label``."""
        row = self.confusion[true_label]
        cdf = np.cumsum(row)
        r = self._rng.random() * cdf[-1]
        return int(np.searchsorted(cdf, r, side="right").clip(0, len(row) - 1))

    def mean_diagonal(self) -> float:
        return float(np.mean(np.diag(self.confusion)))


def annotate(worker: SimWorker, true_label: int) -> int:
    return worker.annotate(true_label)


@dataclass
class BankWorker:
    group: int
    matrix: np.ndarray  # global K x K count/frequency matrix, zero off-block


@dataclass
class SkillBank:
    """Per-group empirical worker matrices over the global class set."""

    class_names: list[str]
    groups: list[list[int]]
    workers: list[BankWorker]

    def by_group(self) -> dict[int, list[np.ndarray]]:
        out: dict[int, list[np.ndarray]] = {}
        for w in self.workers:
            out.setdefault(w.group, []).append(np.asarray(w.matrix, dtype=np.float64))
        return out

    def pooled(self, group: int) -> np.ndarray:
        mats = self.by_group().get(group, [])
        if not mats:
            raise EmptyBank(f"group {group} has no stored workers")
        return np.sum(mats, axis=0)

    # -- serialization ---------------------------------------------------

    def to_json(self, path: str | Path) -> None:
        doc = {
            "classes": list(self.class_names),
            "groups": [list(g) for g in self.groups],
            "workers": [
                {"group": w.group, "matrix": np.asarray(w.matrix).tolist()}
                for w in self.workers
            ],
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "SkillBank":
        doc = json.loads(Path(path).read_text())
        return cls(
            class_names=list(doc["classes"]),
            groups=[list(g) for g in doc["groups"]],
            workers=[
                BankWorker(group=int(w["group"]),
                           matrix=np.asarray(w["matrix"], dtype=np.float64))
                for w in doc["workers"]
            ],
        )


def _resolve_classes(bank: SkillBank, target_classes: Sequence) -> np.ndarray:
    """Map target class names (or indices) onto bank class indices."""
    idx = []
    for c in target_classes:
        if isinstance(c, str):
            if c not in bank.class_names:
                raise UnknownClass(f"class {c!r} not in the bank")
            idx.append(bank.class_names.index(c))
        else:
            if not 0 <= int(c) < len(bank.class_names):
                raise UnknownClass(f"class index {c} not in the bank")
            idx.append(int(c))
    return np.asarray(idx, dtype=np.int64)


def sample_confusion_matrix(
    bank: SkillBank,
    smooth_ratio: float,
    noise_level: float,
    target_classes: Sequence,
    groups: Sequence[Sequence] | None,
    seed: int,
    worker_id: str | None = None,
) -> SimWorker:
    """Sample one simulated worker from the bank.

    Per group: one stored matrix is picked uniformly at random and combined
    as smooth_ratio * pooled + picked; the per-group results are summed,
    restricted to ``target_classes``, and row-normalized (with a 1e-8 guard).
    Then, for each row, the within-group mass is scaled by (1 - noise_level)
    and the removed mass is spread uniformly over the out-of-group columns.
    The diagonal always counts as within-group, even for singleton groups.
    """
    if not bank.workers:
        raise EmptyBank("the bank holds no workers")
    rng = np.random.default_rng(seed)
    keep = _resolve_classes(bank, target_classes)
    k = len(keep)

    by_group = bank.by_group()
    cm = np.zeros((len(bank.class_names), len(bank.class_names)))
    for g in sorted(by_group):
        mats = by_group[g]
        pooled = np.sum(mats, axis=0)
        pick = mats[int(rng.integers(0, len(mats)))]
        cm += smooth_ratio * pooled + pick
    cm = cm[keep, :][:, keep]
    cm = cm / (cm.sum(axis=1, keepdims=True) + 1e-8)

    if groups is None:
        target_groups = [
            [c for c in range(k) if int(keep[c]) in bank_group]
            for bank_group in bank.groups
        ]
        target_groups = [g for g in target_groups if g]
    else:
        # Groups given in target-class identifiers; map onto row positions.
        pos = {int(c): i for i, c in enumerate(keep)}
        name_pos = {bank.class_names[int(c)]: i for i, c in enumerate(keep)}
        target_groups = []
        for group in groups:
            members = []
            for c in group:
                members.append(name_pos[c] if isinstance(c, str) else pos[int(c)])
            target_groups.append(members)

    group_of = {}
    for gi, group in enumerate(target_groups):
        for c in group:
            group_of[c] = gi

    for i in range(k):
        same = np.zeros(k, dtype=bool)
        same[i] = True
        for j in range(k):
            if i != j and group_of.get(i) == group_of.get(j):
                same[j] = True
        if not np.any(~same):
            # one group spans every target class: no noise target exists,
            # and scaling would silently break row stochasticity
            continue
        density = cm[i, same].sum()
        cm[i, same] = cm[i, same] * (1.0 - noise_level)
        cm[i, ~same] += density * noise_level / max((~same).sum(), 1e-8)

    return SimWorker(
        worker_id=worker_id or f"sim-{seed}",
        confusion=cm,
        rng_seed=seed,
    )


def make_uniform_worker(k: int, accuracy: float, seed: int,
                        worker_id: str | None = None) -> SimWorker:
    """Symmetric uniform-noise baseline: diagonal = accuracy, off-diagonal
    mass spread evenly."""
    if not 0.0 < accuracy <= 1.0:
        raise InvalidParam("accuracy must be in (0, 1]")
    cm = np.full((k, k), (1.0 - accuracy) / max(k - 1, 1))
    np.fill_diagonal(cm, accuracy)
    return SimWorker(
        worker_id=worker_id or f"uniform-{seed}",
        confusion=cm,
        rng_seed=seed,
    )


def make_skill_bank_synthetic(
    k: int,
    groups: Sequence[Sequence[int]],
    n_workers_per_group: int,
    within_acc_range: tuple[float, float],
    seed: int,
) -> SkillBank:
    """Generate a bank of workers whose confusion stays inside their group.

    Per worker and class, the diagonal is drawn from ``within_acc_range``
    and the remaining row mass is spread over the other in-group classes
    with random Dirichlet weights (asymmetric, like real annotators).
    Cross-group mass is exactly zero; the noise injection happens later in
    sample_confusion_matrix.
    """
    covered: set[int] = set()
    for g in groups:
        for c in g:
            if not 0 <= c < k or c in covered:
                raise InvalidGroups("groups must partition the class set")
            covered.add(c)
    if covered != set(range(k)):
        raise InvalidGroups("groups must cover every class")
    lo, hi = within_acc_range
    if not 0.0 < lo <= hi <= 1.0:
        raise InvalidParam("within_acc_range must satisfy 0 < lo <= hi <= 1")

    rng = np.random.default_rng(seed)
    workers: list[BankWorker] = []
    for gi, group in enumerate(groups):
        members = sorted(group)
        for _ in range(n_workers_per_group):
            mat = np.zeros((k, k))
            for y in members:
                if len(members) == 1:
                    mat[y, y] = 1.0
                    continue
                acc = rng.uniform(lo, hi)
                others = [c for c in members if c != y]
                weights = rng.dirichlet(np.ones(len(others)))
                mat[y, y] = acc
                mat[y, others] = (1.0 - acc) * weights
            workers.append(BankWorker(group=gi, matrix=mat))
    return SkillBank(
        class_names=[f"class-{c:03d}" for c in range(k)],
        groups=[sorted(g) for g in groups],
        workers=workers,
    )


def inject_ood(
    manifest: Manifest,
    store: FeatureStore,
    fraction: float,
    seed: int,
) -> tuple[Manifest, FeatureStore]:
    """Append ceil(fraction * N) out-of-distribution items.

    Injected items carry the reserved label K and features drawn from a few
    phantom clusters whose scale matches the existing class means, standing
    in for images of irrelevant classes. The feature store is extended in
    lockstep so rows stay aligned with the manifest.
    """
    if fraction < 0:
        raise InvalidParam("fraction must be >= 0")
    if fraction == 0:
        return manifest, store
    rng = np.random.default_rng(seed)
    n = manifest.n_items
    k = manifest.n_classes
    n_new = math.ceil(fraction * n)

    truths = manifest.true_labels()
    data = store.data.astype(np.float64)
    if truths is not None:
        class_means = np.stack([data[truths == c].mean(axis=0)
                                for c in range(k) if np.any(truths == c)])
        scale = float(np.mean(np.linalg.norm(class_means, axis=1)))
    else:
        scale = float(np.mean(np.linalg.norm(data, axis=1)))

    n_phantom = max(2, k // 2)
    dirs = rng.standard_normal((n_phantom, store.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    phantom_means = dirs * scale

    rows = np.empty((n_new, store.dim))
    items = list(manifest.items)
    for i in range(n_new):
        cluster = int(rng.integers(0, n_phantom))
        rows[i] = phantom_means[cluster] + rng.standard_normal(store.dim)
        items.append(ItemMeta(id=f"ood-{i:05d}", true_label=k,
                              is_prototype=False))

    new_manifest = Manifest(
        items=items,
        class_names=list(manifest.class_names),
        groups=[list(g) for g in manifest.groups],
        has_ood_class=True,
    )
    new_store = FeatureStore(
        data=np.vstack([store.data, rows.astype(np.float32)])
    )
    return new_manifest, new_store


OOD_COLUMN_MASS = 0.02


def extend_worker_for_ood(worker: SimWorker) -> SimWorker:
    """Grow a K x K worker to (K+1) x (K+1) for the "None of These" class.

    OOD items are labeled OOD with probability equal to the worker's mean
    diagonal (remainder uniform over the real classes); real-class rows gain
    an OOD column of fixed small mass and are renormalized.
    """
    k = worker.n_classes
    ext = np.zeros((k + 1, k + 1))
    ext[:k, :k] = worker.confusion / (1.0 + OOD_COLUMN_MASS)
    ext[:k, k] = OOD_COLUMN_MASS / (1.0 + OOD_COLUMN_MASS)
    d = worker.mean_diagonal()
    ext[k, :k] = (1.0 - d) / k
    ext[k, k] = d
    return SimWorker(
        worker_id=worker.worker_id,
        confusion=ext,
        rng_seed=worker.rng_seed,
    )
