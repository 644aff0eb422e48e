"""Feature/manifest storage, file formats, and synthetic dataset generation.

The on-disk contract is deliberately small: features are a binary matrix
(``FEAT`` magic, version byte, little-endian u32 N and D, float32 rows) and
the manifest is a JSON document listing items, class names, and the class
group structure used by the worker simulator.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    GroupOverlap,
    InvalidParam,
    NonFiniteValue,
    SchemaError,
    TooFewPrototypes,
    TruncatedFile,
    UnknownClassIndex,
)

FEATURE_MAGIC = b"FEAT"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class ItemMeta:
    """One dataset item; ``true_label`` is only present in simulation."""

    id: str
    true_label: int | None = None
    is_prototype: bool = False


@dataclass
class Manifest:
    """Item list plus class metadata.

    ``groups`` partitions the class indices ``0..K-1`` into semantically
    related subsets; when ``has_ood_class`` is set, the reserved index K
    marks out-of-distribution items ("None of These").
    """

    items: list[ItemMeta]
    class_names: list[str]
    groups: list[list[int]]
    has_ood_class: bool = False

    def __post_init__(self):
        self.validate()

    # -- derived views -------------------------------------------------

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_label_classes(self) -> int:
        """Size of the label space the loop operates over (K, or K+1 with OOD)."""
        return self.n_classes + (1 if self.has_ood_class else 0)

    @property
    def ood_index(self) -> int:
        return self.n_classes

    def item_ids(self) -> list[str]:
        return [it.id for it in self.items]

    def index_of(self) -> dict[str, int]:
        return {it.id: i for i, it in enumerate(self.items)}

    def true_labels(self) -> np.ndarray | None:
        """Ground-truth vector, or None if any item lacks a label."""
        if any(it.true_label is None for it in self.items):
            return None
        return np.array([it.true_label for it in self.items], dtype=np.int64)

    def prototype_indices(self) -> np.ndarray:
        return np.array(
            [i for i, it in enumerate(self.items) if it.is_prototype],
            dtype=np.int64,
        )

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        k = self.n_classes
        seen: set[str] = set()
        for pos, it in enumerate(self.items):
            if it.id in seen:
                raise SchemaError(f"items[{pos}].id: duplicate id {it.id!r}")
            seen.add(it.id)
            if it.true_label is not None:
                upper = k + 1 if self.has_ood_class else k
                if not 0 <= it.true_label < upper:
                    raise UnknownClassIndex(
                        f"items[{pos}].true_label: {it.true_label} outside "
                        f"[0, {upper})"
                    )
            if it.is_prototype and it.true_label is None:
                raise SchemaError(
                    f"items[{pos}]: prototype without a true_label"
                )
        covered: set[int] = set()
        for gi, group in enumerate(self.groups):
            for c in group:
                if not 0 <= c < k:
                    raise UnknownClassIndex(
                        f"groups[{gi}]: class index {c} outside [0, {k})"
                    )
                if c in covered:
                    raise GroupOverlap(
                        f"groups[{gi}]: class {c} appears in more than one group"
                    )
                covered.add(c)
        if covered != set(range(k)):
            missing = sorted(set(range(k)) - covered)
            raise GroupOverlap(f"groups do not cover classes {missing}")


@dataclass
class FeatureStore:
    """N x D float32 feature matrix, row-aligned with the manifest."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise InvalidParam("feature data must be a 2-D matrix")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue("feature matrix contains non-finite values")

    @property
    def n_items(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


# -- binary feature format ---------------------------------------------------

def save_features(store: FeatureStore, path: str | Path) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(bytes([FEATURE_VERSION]))
        fh.write(struct.pack("<II", store.n_items, store.dim))
        fh.write(store.data.astype("<f4", copy=False).tobytes(order="C"))


def load_features(path: str | Path) -> FeatureStore:
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(5)
        if len(head) < 5 or head[:4] != FEATURE_MAGIC:
            raise BadMagic(f"{path}: not a feature file")
        if head[4] != FEATURE_VERSION:
            raise BadMagic(f"{path}: unsupported version {head[4]}")
        dims = fh.read(8)
        if len(dims) < 8:
            raise TruncatedFile(f"{path}: header truncated")
        n, d = struct.unpack("<II", dims)
        payload = fh.read(n * d * 4)
    if len(payload) < n * d * 4:
        raise TruncatedFile(
            f"{path}: expected {n * d * 4} payload bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: payload contains non-finite values")
    return FeatureStore(data=data.copy())


# -- manifest JSON format ----------------------------------------------------

def save_manifest(manifest: Manifest, path: str | Path) -> None:
    doc = {
        "classes": list(manifest.class_names),
        "groups": [list(g) for g in manifest.groups],
        "has_ood_class": manifest.has_ood_class,
        "items": [
            {"id": it.id, "true_label": it.true_label,
             "is_prototype": it.is_prototype}
            for it in manifest.items
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> Manifest:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    for key in ("classes", "groups", "items"):
        if key not in doc:
            raise SchemaError(f"{key}: missing")
    classes = doc["classes"]
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise SchemaError("classes: must be a list of strings")
    groups = doc["groups"]
    if not isinstance(groups, list) or not all(
        isinstance(g, list) and all(isinstance(c, int) for c in g) for g in groups
    ):
        raise SchemaError("groups: must be a list of integer lists")
    items_doc = doc["items"]
    if not isinstance(items_doc, list):
        raise SchemaError("items: must be a list")
    items = []
    for pos, raw in enumerate(items_doc):
        if not isinstance(raw, dict):
            raise SchemaError(f"items[{pos}]: must be an object")
        if not isinstance(raw.get("id"), str):
            raise SchemaError(f"items[{pos}].id: must be a string")
        label = raw.get("true_label")
        if label is not None and not isinstance(label, int):
            raise SchemaError(f"items[{pos}].true_label: must be int or null")
        items.append(
            ItemMeta(
                id=raw["id"],
                true_label=label,
                is_prototype=bool(raw.get("is_prototype", False)),
            )
        )
    return Manifest(
        items=items,
        class_names=list(classes),
        groups=[list(g) for g in groups],
        has_ood_class=bool(doc.get("has_ood_class", False)),
    )


# -- synthetic data ----------------------------------------------------------

def gen_synthetic(
    k: int,
    n_per_class: int,
    dim: int,
    separation: float,
    prototypes_per_class: int,
    seed: int,
    groups: list[list[int]] | None = None,
) -> tuple[Manifest, FeatureStore]:
    """Class-conditional unit-variance Gaussians with means on a scaled simplex.

    ``separation`` is the pairwise distance between class means (the simplex
    edge length), so one scalar controls task difficulty. When K exceeds the
    feature dimension an exact simplex does not exist and seeded random unit
    directions of matching scale are used instead. Deterministic in ``seed``.
    """
    if k < 2:
        raise InvalidParam("k must be >= 2")
    if dim < 2:
        raise InvalidParam("dim must be >= 2")
    if separation < 0:
        raise InvalidParam("separation must be >= 0")
    if n_per_class < 1:
        raise InvalidParam("n_per_class must be >= 1")
    if not 0 <= prototypes_per_class <= n_per_class:
        raise InvalidParam("prototypes_per_class must be in [0, n_per_class]")

    rng = np.random.default_rng(seed)
    scale = separation / math.sqrt(2.0)
    if k <= dim:
        means = np.zeros((k, dim))
        means[:, :k] = np.eye(k) * scale
    else:
        dirs = rng.standard_normal((k, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        means = dirs * scale

    items: list[ItemMeta] = []
    rows = np.empty((k * n_per_class, dim), dtype=np.float64)
    idx = 0
    for c in range(k):
        rows[idx:idx + n_per_class] = means[c] + rng.standard_normal(
            (n_per_class, dim)
        )
        for j in range(n_per_class):
            items.append(
                ItemMeta(
                    id=f"item-{c:03d}-{j:05d}",
                    true_label=c,
                    is_prototype=j < prototypes_per_class,
                )
            )
        idx += n_per_class

    manifest = Manifest(
        items=items,
        class_names=[f"class-{c:03d}" for c in range(k)],
        groups=[list(g) for g in groups] if groups else [[c] for c in range(k)],
    )
    return manifest, FeatureStore(data=rows.astype(np.float32))


def prototype_split(manifest: Manifest) -> tuple[list[str], list[str]]:
    """Split prototypes into stable per-class train/validation halves.

    Deterministic by sorted item id (not seeded): the validation set must
    stay fixed across loop steps. The extra prototype of an odd class goes
    to the train half.
    """
    by_class: dict[int, list[str]] = {}
    for it in manifest.items:
        if it.is_prototype:
            by_class.setdefault(it.true_label, []).append(it.id)
    train: list[str] = []
    val: list[str] = []
    for c in sorted(by_class):
        ids = sorted(by_class[c])
        if len(ids) < 2:
            raise TooFewPrototypes(
                f"class {c} has {len(ids)} prototype(s); need at least 2"
            )
        n_train = math.ceil(len(ids) / 2)
        train.extend(ids[:n_train])
        val.extend(ids[n_train:])
    return sorted(train), sorted(val)
