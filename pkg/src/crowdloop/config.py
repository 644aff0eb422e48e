"""Experiment configuration: JSON schema with strict validation, method
presets, and the builders that tie the modules into one reproducible run.

A single master seed fans out to per-module seeds through a fixed SHA-256
derivation, so two runs from the same resolved config are byte-identical.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .assignment import AssignmentConfig
from .datastore import (
    FeatureStore,
    Manifest,
    gen_synthetic,
    load_features,
    load_manifest,
)
from .errors import SchemaError
from .inference import SkillPrior
from .learner import TrainConfig
from .loop import EmConfig, LoopConfig, MethodSwitches, RunContext
from .seeding import derive_seed
from .workers import (
    SimWorker,
    SkillBank,
    extend_worker_for_ood,
    inject_ood,
    make_skill_bank_synthetic,
    make_uniform_worker,
    sample_confusion_matrix,
)

METHOD_PRESETS: dict[str, MethodSwitches] = {
    "online_ds": MethodSwitches(model_enabled=False, calibration="none",
                                semi_mode="none", em_mode="hard",
                                global_selection=False),
    "lean": MethodSwitches(model_enabled=True, calibration="cross_val",
                           semi_mode="none", em_mode="hard",
                           global_selection=False),
    "lean_star": MethodSwitches(model_enabled=True, calibration="prototype",
                                semi_mode="none", em_mode="hard",
                                global_selection=False),
    "full": MethodSwitches(model_enabled=True, calibration="prototype",
                           semi_mode="pseudo", em_mode="soft",
                           global_selection=True),
}


@dataclass
class SyntheticSpec:
    k: int = 10
    n_per_class: int = 100
    dim: int = 16
    separation: float = 4.0
    prototypes_per_class: int = 10
    group_size: int = 1
    seed: int | None = None


@dataclass
class DatasetConfig:
    features: str | None = None
    manifest: str | None = None
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    ood_fraction: float = 0.0


@dataclass
class BankSpec:
    n_workers_per_group: int = 10
    acc_min: float = 0.55
    acc_max: float = 0.9


@dataclass
class WorkerPoolConfig:
    kind: str = "structured"  # structured | uniform
    n_workers: int = 30
    noise_level: float = 0.03
    smooth_ratio: float = 1.0
    uniform_accuracy: float = 0.7
    bank_path: str | None = None
    bank: BankSpec = field(default_factory=BankSpec)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    workers: WorkerPoolConfig = field(default_factory=WorkerPoolConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    skill_prior: SkillPrior = field(default_factory=SkillPrior)
    assignment: AssignmentConfig = field(default_factory=AssignmentConfig)
    em: EmConfig = field(default_factory=EmConfig)
    method: str = "full"
    seed: int = 0
    switches: MethodSwitches = field(init=False)

    def __post_init__(self):
        if self.method not in METHOD_PRESETS:
            raise SchemaError(f"method: unknown preset {self.method!r}")
        self.switches = MethodSwitches(**asdict(METHOD_PRESETS[self.method]))

    def to_dict(self) -> dict:
        doc = {
            "method": self.method,
            "seed": self.seed,
            "dataset": asdict(self.dataset),
            "workers": asdict(self.workers),
            "loop": asdict(self.loop),
            "train": {k: v for k, v in asdict(self.train).items()
                      if k not in ("semi_mode", "seed")},
            "skill_prior": {"n_beta": self.skill_prior.n_beta,
                            "alpha_diag": self.skill_prior.alpha_diag,
                            "mode": self.skill_prior.mode},
            "assignment": asdict(self.assignment),
            "em": asdict(self.em),
            "switches": asdict(self.switches),
        }
        return doc


# -- schema-checked parsing ---------------------------------------------------

def _expect(doc: Any, path: str, kind) -> Any:
    if not isinstance(doc, kind):
        names = kind[0].__name__ if isinstance(kind, tuple) else kind.__name__
        raise SchemaError(f"{path}: expected {names}")
    return doc


def _label(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _num(doc: dict, key: str, path: str, default, lo=None, hi=None,
         open_lo=False, open_hi=False, integer=False):
    if key not in doc:
        return default
    value = doc.pop(key)
    if value is None and default is None:
        return None
    if integer:
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaError(f"{_label(path, key)}: expected integer")
    elif not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SchemaError(f"{_label(path, key)}: expected number")
    if lo is not None and (value <= lo if open_lo else value < lo):
        raise SchemaError(f"{_label(path, key)}: out of range")
    if hi is not None and (value >= hi if open_hi else value > hi):
        raise SchemaError(f"{_label(path, key)}: out of range")
    return int(value) if integer else float(value)


def _text(doc: dict, key: str, path: str, default, choices=None):
    if key not in doc:
        return default
    value = doc.pop(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise SchemaError(f"{_label(path, key)}: expected string")
    if choices and value not in choices:
        raise SchemaError(f"{_label(path, key)}: must be one of "
                          f"{sorted(choices)}")
    return value


def _flag(doc: dict, key: str, path: str, default):
    if key not in doc:
        return default
    value = doc.pop(key)
    if not isinstance(value, bool):
        raise SchemaError(f"{_label(path, key)}: expected boolean")
    return value


def _reject_unknown(doc: dict, path: str):
    if doc:
        key = sorted(doc)[0]
        raise SchemaError(f"{path}.{key}: unknown key" if path
                          else f"{key}: unknown key")


def _parse_dataset(doc: dict) -> DatasetConfig:
    out = DatasetConfig(synthetic=None)
    out.features = _text(doc, "features", "dataset", None)
    out.manifest = _text(doc, "manifest", "dataset", None)
    out.ood_fraction = _num(doc, "ood_fraction", "dataset", 0.0, lo=0.0)
    if doc.get("synthetic") is None:
        doc.pop("synthetic", None)
    if "synthetic" in doc:
        sub = _expect(doc.pop("synthetic"), "dataset.synthetic", dict)
        spec = SyntheticSpec()
        spec.k = _num(sub, "k", "dataset.synthetic", spec.k, lo=2, integer=True)
        spec.n_per_class = _num(sub, "n_per_class", "dataset.synthetic",
                                spec.n_per_class, lo=1, integer=True)
        spec.dim = _num(sub, "dim", "dataset.synthetic", spec.dim, lo=2,
                        integer=True)
        spec.separation = _num(sub, "separation", "dataset.synthetic",
                               spec.separation, lo=0.0)
        spec.prototypes_per_class = _num(sub, "prototypes_per_class",
                                         "dataset.synthetic",
                                         spec.prototypes_per_class, lo=0,
                                         integer=True)
        spec.group_size = _num(sub, "group_size", "dataset.synthetic",
                               spec.group_size, lo=1, integer=True)
        spec.seed = _num(sub, "seed", "dataset.synthetic", None, integer=True)
        _reject_unknown(sub, "dataset.synthetic")
        out.synthetic = spec
    _reject_unknown(doc, "dataset")
    if out.synthetic is None and (out.features is None or out.manifest is None):
        out.synthetic = SyntheticSpec()
    return out


def _parse_workers(doc: dict) -> WorkerPoolConfig:
    out = WorkerPoolConfig()
    out.kind = _text(doc, "kind", "workers", out.kind,
                     choices={"structured", "uniform"})
    out.n_workers = _num(doc, "n_workers", "workers", out.n_workers, lo=1,
                         integer=True)
    out.noise_level = _num(doc, "noise_level", "workers", out.noise_level,
                           lo=0.0, hi=1.0)
    out.smooth_ratio = _num(doc, "smooth_ratio", "workers", out.smooth_ratio,
                            lo=0.0)
    out.uniform_accuracy = _num(doc, "uniform_accuracy", "workers",
                                out.uniform_accuracy, lo=0.0, hi=1.0,
                                open_lo=True)
    out.bank_path = _text(doc, "bank_path", "workers", None)
    if "bank" in doc:
        sub = _expect(doc.pop("bank"), "workers.bank", dict)
        spec = BankSpec()
        spec.n_workers_per_group = _num(sub, "n_workers_per_group",
                                        "workers.bank",
                                        spec.n_workers_per_group, lo=1,
                                        integer=True)
        spec.acc_min = _num(sub, "acc_min", "workers.bank", spec.acc_min,
                            lo=0.0, hi=1.0, open_lo=True)
        spec.acc_max = _num(sub, "acc_max", "workers.bank", spec.acc_max,
                            lo=0.0, hi=1.0, open_lo=True)
        _reject_unknown(sub, "workers.bank")
        out.bank = spec
    _reject_unknown(doc, "workers")
    return out


def _parse_loop(doc: dict) -> LoopConfig:
    out = LoopConfig()
    rt = _num(doc, "risk_threshold", "loop", out.risk_threshold,
              lo=0.0, hi=1.0, open_lo=True, open_hi=True)
    bs = _num(doc, "batch_size", "loop", out.batch_size, lo=1, integer=True)
    cap = _num(doc, "max_annotations_per_item", "loop",
               out.max_annotations_per_item, lo=1, integer=True)
    beta = _num(doc, "stop_patience", "loop", out.stop_patience, lo=1,
                integer=True)
    horizon = _num(doc, "max_steps", "loop", out.max_steps, lo=1, integer=True)
    lpu = _num(doc, "labels_per_update", "loop", None, lo=1, integer=True)
    mode = _text(doc, "assignment", "loop", out.assignment,
                 choices={"random", "greedy"})
    _reject_unknown(doc, "loop")
    return LoopConfig(risk_threshold=rt, batch_size=bs,
                      max_annotations_per_item=cap, stop_patience=beta,
                      max_steps=horizon,
                      labels_per_update=lpu if lpu is not None else bs,
                      assignment=mode)


def _parse_train(doc: dict) -> TrainConfig:
    out = TrainConfig()
    return_cfg = TrainConfig(
        lr_ratio=_num(doc, "lr_ratio", "train", out.lr_ratio, lo=0.0,
                      open_lo=True),
        batch_size=_num(doc, "batch_size", "train", out.batch_size, lo=1,
                        integer=True),
        weight_decay=_num(doc, "weight_decay", "train", out.weight_decay,
                          lo=0.0),
        epochs=_num(doc, "epochs", "train", out.epochs, lo=0, integer=True),
        hidden_dim=_num(doc, "hidden_dim", "train", out.hidden_dim, lo=1,
                        integer=True),
        tau=_num(doc, "tau", "train", out.tau, lo=0.0, hi=1.0, open_lo=True,
                 open_hi=True),
        mu=_num(doc, "mu", "train", out.mu, lo=0.0),
        gamma=_num(doc, "gamma", "train", out.gamma, lo=1, integer=True),
        mix_alpha=_num(doc, "mix_alpha", "train", out.mix_alpha, lo=0.0,
                       open_lo=True),
    )
    _reject_unknown(doc, "train")
    return return_cfg


def _parse_skill_prior(doc: dict) -> SkillPrior:
    out = SkillPrior()
    return_prior = SkillPrior(
        n_beta=_num(doc, "n_beta", "skill_prior", out.n_beta, lo=0.0,
                    open_lo=True),
        alpha_diag=_num(doc, "alpha_diag", "skill_prior", out.alpha_diag,
                        lo=0.0, hi=1.0, open_lo=True, open_hi=True),
        mode=_text(doc, "mode", "skill_prior", out.mode,
                   choices={"homogeneous", "class_aware", "worker_aware",
                            "both"}),
    )
    _reject_unknown(doc, "skill_prior")
    return return_prior


def _parse_assignment(doc: dict) -> AssignmentConfig:
    out = AssignmentConfig()
    cfg = AssignmentConfig(
        mode=_text(doc, "mode", "assignment", out.mode,
                   choices={"random", "greedy"}),
        alpha_cap=_num(doc, "alpha_cap", "assignment", out.alpha_cap, lo=1,
                       integer=True),
    )
    _reject_unknown(doc, "assignment")
    return cfg


def _parse_em(doc: dict) -> EmConfig:
    out = EmConfig()
    cfg = EmConfig(
        epsilon=_num(doc, "epsilon", "em", out.epsilon, lo=0.0, open_lo=True),
        max_iters=_num(doc, "max_iters", "em", out.max_iters, lo=1,
                       integer=True),
    )
    _reject_unknown(doc, "em")
    return cfg


def _parse_switches(doc: dict, base: MethodSwitches) -> MethodSwitches:
    out = MethodSwitches(
        model_enabled=_flag(doc, "model_enabled", "switches",
                            base.model_enabled),
        calibration=_text(doc, "calibration", "switches", base.calibration,
                          choices={"none", "cross_val", "prototype"}),
        semi_mode=_text(doc, "semi_mode", "switches", base.semi_mode,
                        choices={"none", "pseudo", "mixmatch"}),
        em_mode=_text(doc, "em_mode", "switches", base.em_mode,
                      choices={"hard", "soft"}),
        global_selection=_flag(doc, "global_selection", "switches",
                               base.global_selection),
    )
    _reject_unknown(doc, "switches")
    return out


def validate_config(raw: dict) -> ExperimentConfig:
    """Parse a raw JSON document into a fully-defaulted ExperimentConfig.

    Unknown keys are rejected with their field path; numeric ranges follow
    each module's invariants. The input document is left untouched.
    """
    doc = copy.deepcopy(_expect(raw, "config", dict))
    method = _text(doc, "method", "", "full", choices=set(METHOD_PRESETS))
    seed = _num(doc, "seed", "", 0, integer=True)
    cfg = ExperimentConfig(method=method, seed=seed)
    if "dataset" in doc:
        cfg.dataset = _parse_dataset(_expect(doc.pop("dataset"), "dataset", dict))
    if "workers" in doc:
        cfg.workers = _parse_workers(_expect(doc.pop("workers"), "workers", dict))
    if "loop" in doc:
        cfg.loop = _parse_loop(_expect(doc.pop("loop"), "loop", dict))
    if "train" in doc:
        cfg.train = _parse_train(_expect(doc.pop("train"), "train", dict))
    if "skill_prior" in doc:
        cfg.skill_prior = _parse_skill_prior(
            _expect(doc.pop("skill_prior"), "skill_prior", dict))
    if "assignment" in doc:
        cfg.assignment = _parse_assignment(
            _expect(doc.pop("assignment"), "assignment", dict))
    if "em" in doc:
        cfg.em = _parse_em(_expect(doc.pop("em"), "em", dict))
    if "switches" in doc:
        cfg.switches = _parse_switches(
            _expect(doc.pop("switches"), "switches", dict), cfg.switches)
    _reject_unknown(doc, "")
    # loop.assignment and assignment.mode describe the same knob; keep them
    # coherent, letting whichever departed from the default win
    if cfg.loop.assignment != cfg.assignment.mode:
        if cfg.loop.assignment != "random" and cfg.assignment.mode != "random":
            raise SchemaError(
                "assignment.mode: conflicts with loop.assignment")
        mode = (cfg.loop.assignment if cfg.loop.assignment != "random"
                else cfg.assignment.mode)
        cfg.loop.assignment = mode
        cfg.assignment.mode = mode
    return cfg


# -- builders ------------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig) -> tuple[Manifest, FeatureStore]:
    ds = cfg.dataset
    if ds.synthetic is not None and (ds.features is None or ds.manifest is None):
        spec = ds.synthetic
        seed = spec.seed if spec.seed is not None else derive_seed(
            cfg.seed, "dataset")
        groups = None
        if spec.group_size > 1:
            groups = [list(range(c, min(c + spec.group_size, spec.k)))
                      for c in range(0, spec.k, spec.group_size)]
        manifest, store = gen_synthetic(
            spec.k, spec.n_per_class, spec.dim, spec.separation,
            spec.prototypes_per_class, seed, groups=groups,
        )
    else:
        store = load_features(ds.features)
        manifest = load_manifest(ds.manifest)
        if store.n_items != manifest.n_items:
            raise SchemaError(
                f"dataset: feature rows ({store.n_items}) do not match "
                f"manifest items ({manifest.n_items})")
    if ds.ood_fraction > 0:
        manifest, store = inject_ood(manifest, store, ds.ood_fraction,
                                     derive_seed(cfg.seed, "ood"))
    return manifest, store


def build_bank(cfg: ExperimentConfig, manifest: Manifest) -> SkillBank:
    if cfg.workers.bank_path:
        return SkillBank.from_json(cfg.workers.bank_path)
    return make_skill_bank_synthetic(
        manifest.n_classes,
        manifest.groups,
        cfg.workers.bank.n_workers_per_group,
        (cfg.workers.bank.acc_min, cfg.workers.bank.acc_max),
        derive_seed(cfg.seed, "bank"),
    )


def build_pool(cfg: ExperimentConfig, manifest: Manifest) -> dict[str, SimWorker]:
    wc = cfg.workers
    k = manifest.n_classes
    pool: dict[str, SimWorker] = {}
    if wc.kind == "uniform":
        for i in range(wc.n_workers):
            wid = f"w{i:03d}"
            pool[wid] = make_uniform_worker(
                k, wc.uniform_accuracy, derive_seed(cfg.seed, f"worker/{wid}"),
                worker_id=wid)
    else:
        bank = build_bank(cfg, manifest)
        for i in range(wc.n_workers):
            wid = f"w{i:03d}"
            pool[wid] = sample_confusion_matrix(
                bank, wc.smooth_ratio, wc.noise_level,
                list(range(k)), None,
                derive_seed(cfg.seed, f"worker/{wid}"), worker_id=wid)
    if manifest.has_ood_class:
        pool = {wid: extend_worker_for_ood(w) for wid, w in pool.items()}
    return pool


def build_context(cfg: ExperimentConfig, manifest: Manifest,
                  store: FeatureStore,
                  pool: dict[str, SimWorker]) -> RunContext:
    return RunContext(
        manifest=manifest,
        store=store,
        pool=pool,
        loop=cfg.loop,
        train=cfg.train,
        skill_prior=cfg.skill_prior,
        assignment=cfg.assignment,
        switches=cfg.switches,
        em=cfg.em,
        seed=cfg.seed,
    )


def config_from_file(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return validate_config(raw)
