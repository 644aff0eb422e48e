"""The online annotation loop: risk-driven querying, per-step EM and model
refits, global model selection, and the finished-set stopping rule.

One step gathers a batch of annotations from the unfinished set, re-runs EM
over the full log with the current model's calibrated predictions as the
label prior, retrains the classifier head from scratch on the current label
estimates (optionally with pseudo-labels or MixMatch), calibrates it, keeps
the best model by prototype-validation loss, and re-partitions items by
risk. The loop halts when the unfinished set empties, when the finished-set
size stops setting new records for ``stop_patience`` consecutive steps, or
at the step horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import learner
from .assignment import AssignmentConfig, assign_greedy, assign_random
from .datastore import FeatureStore, Manifest, prototype_split
from .errors import InvalidParam
from .inference import (
    AnnotationLog,
    LabelTable,
    SkillPrior,
    WorkerSkill,
    e_step,
    run_em,
)
from .learner import MlpParams, TrainConfig
from .metrics import (
    StepMetrics,
    finished_precision,
    mean_precision_targets,
    top_k_accuracy,
)
from .seeding import derive_seed
from .workers import SimWorker


@dataclass
class LoopConfig:
    risk_threshold: float = 0.1
    batch_size: int = 256
    max_annotations_per_item: int = 3
    stop_patience: int = 5
    max_steps: int = 200
    labels_per_update: int = 256
    assignment: str = "random"

    def __post_init__(self):
        if not 0.0 < self.risk_threshold < 1.0:
            raise ValueError("risk_threshold must be in (0, 1)")
        if self.stop_patience < 1:
            raise ValueError("stop_patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.labels_per_update < 1:
            raise ValueError("labels_per_update must be >= 1")


@dataclass
class MethodSwitches:
    """The exact knobs that differ between the method presets."""

    model_enabled: bool = True
    calibration: str = "prototype"  # none | cross_val | prototype
    semi_mode: str = "pseudo"       # none | pseudo | mixmatch
    em_mode: str = "soft"           # hard | soft
    global_selection: bool = True


@dataclass
class EmConfig:
    epsilon: float = 0.01
    max_iters: int = 50


@dataclass
class LoopState:
    step: int
    labels: LabelTable
    skills: dict[str, WorkerSkill]
    model: MlpParams | None
    best_model: MlpParams | None
    best_val_loss: float
    finished_set_max: int
    patience_counter: int
    log: AnnotationLog


def compute_risk(posterior: np.ndarray) -> np.ndarray | float:
    """Expected 0/1 cost of committing to the argmax label: 1 - max posterior."""
    posterior = np.asarray(posterior, dtype=np.float64)
    return 1.0 - posterior.max(axis=-1)


def partition(labels: LabelTable, cfg: LoopConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sampling partition: finished = risk below threshold (zero-risk items
    always finish) or at the per-item annotation cap; returns (finished,
    unfinished) index arrays and updates the table's flags.

    Items at the cap leave the sampling pool but still count as *at risk*
    for stopping, reporting, and the residual (see ``risk_finished_mask``):
    the requestor is expected to hand them to a separate process.
    """
    finished = (
        (labels.risk < cfg.risk_threshold)
        | (labels.risk <= 0.0)
        | (labels.annotation_count >= cfg.max_annotations_per_item)
    )
    labels.finished = finished
    idx = np.arange(len(labels))
    return idx[finished], idx[~finished]


def risk_finished_mask(labels: LabelTable, cfg: LoopConfig) -> np.ndarray:
    """The risk-defined finished set F = {i : risk < C}, regardless of the
    annotation cap. Drives the stopping rule and the reported curves."""
    return (labels.risk < cfg.risk_threshold) | (labels.risk <= 0.0)


def build_hits(unfinished: np.ndarray, b: int,
               rng: np.random.Generator | int) -> np.ndarray:
    """min(b, |unfinished|) distinct items, uniform without replacement."""
    if b < 1:
        raise InvalidParam("HIT batch size must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    unfinished = np.asarray(unfinished)
    take = min(b, len(unfinished))
    if take == 0:
        return unfinished[:0]
    return rng.choice(unfinished, size=take, replace=False)


def should_stop(state: LoopState, cfg: LoopConfig) -> tuple[bool, str | None]:
    """Stop when the risk-defined unfinished set empties, when its size has
    not set a new record for ``stop_patience`` consecutive steps, or at the
    step horizon."""
    if state.step > 0 and bool(
            risk_finished_mask(state.labels, cfg).all()):
        return True, "unfinished_empty"
    if state.patience_counter >= cfg.stop_patience:
        return True, "patience"
    if state.step >= cfg.max_steps:
        return True, "max_steps"
    return False, None


@dataclass
class RunContext:
    """Everything a step needs besides the mutable state."""

    manifest: Manifest
    store: FeatureStore
    pool: Mapping[str, SimWorker]
    loop: LoopConfig
    train: TrainConfig
    skill_prior: SkillPrior
    assignment: AssignmentConfig
    switches: MethodSwitches
    em: EmConfig
    seed: int
    rng_hits: np.random.Generator = field(init=False)
    rng_assign: np.random.Generator = field(init=False)

    def __post_init__(self):
        self.rng_hits = np.random.default_rng(derive_seed(self.seed, "hits"))
        self.rng_assign = np.random.default_rng(derive_seed(self.seed, "assign"))
        self.item_ids = self.manifest.item_ids()
        self.n_classes = self.manifest.n_label_classes
        self.features = self.store.data.astype(np.float64)
        self.truths = self.manifest.true_labels()
        proto_train, proto_val = ([], [])
        if len(self.manifest.prototype_indices()):
            proto_train, proto_val = prototype_split(self.manifest)
        index = self.manifest.index_of()
        self.proto_train_idx = np.array([index[i] for i in proto_train],
                                        dtype=np.int64)
        self.proto_val_idx = np.array([index[i] for i in proto_val],
                                      dtype=np.int64)
        self.worker_ids = sorted(self.pool)

    def uniform_prior(self) -> np.ndarray:
        n = len(self.item_ids)
        return np.full((n, self.n_classes), 1.0 / self.n_classes)

    def model_prior(self, model: MlpParams | None) -> np.ndarray:
        if not self.switches.model_enabled or model is None:
            return self.uniform_prior()
        return learner.forward(model, self.features)

    def proto_val_data(self):
        idx = self.proto_val_idx
        return self.features[idx], self.truths[idx]


def init_state(ctx: RunContext) -> LoopState:
    labels = LabelTable.uniform(ctx.item_ids, ctx.n_classes)
    partition(labels, ctx.loop)
    model = None
    if ctx.switches.model_enabled:
        rng = np.random.default_rng(derive_seed(ctx.seed, "model-init"))
        model = learner.init_params(ctx.store.dim, ctx.train.hidden_dim,
                                    ctx.n_classes, rng)
    skills = {w: ctx.skill_prior.prior_skill(w, ctx.n_classes)
              for w in ctx.worker_ids}
    return LoopState(
        step=0,
        labels=labels,
        skills=skills,
        model=model,
        best_model=None,
        best_val_loss=math.inf,
        finished_set_max=0,
        patience_counter=0,
        log=AnnotationLog(),
    )


def _gather_annotations(state: LoopState, ctx: RunContext) -> int:
    """Fill up to labels_per_update annotations in HIT batches of batch_size.

    Items are drawn uniformly from the unfinished set, skipping items at the
    annotation cap or with no eligible worker left; every (item, worker)
    pair is annotated at most once over the whole run.
    """
    cfg = ctx.loop
    counts = {iid: 0 for iid in ctx.item_ids}
    annotators: dict[str, set[str]] = {iid: set() for iid in ctx.item_ids}
    for rec in state.log.records:
        counts[rec.item_id] += 1
        annotators[rec.item_id].add(rec.worker_id)
    n_workers = len(ctx.worker_ids)
    index = {iid: i for i, iid in enumerate(ctx.item_ids)}

    unfinished_ids = [ctx.item_ids[i]
                      for i in np.nonzero(~state.labels.finished)[0]]
    gathered = 0
    blocked: set[str] = set()
    while gathered < cfg.labels_per_update:
        avail = [iid for iid in unfinished_ids
                 if counts[iid] < cfg.max_annotations_per_item
                 and len(annotators[iid]) < n_workers
                 and iid not in blocked]
        if not avail:
            break
        b = min(cfg.batch_size, cfg.labels_per_update - gathered, len(avail))
        hit_idx = build_hits(np.arange(len(avail)), b, ctx.rng_hits)
        hits = [avail[i] for i in hit_idx]
        if ctx.assignment.mode == "greedy":
            pairs = assign_greedy(hits, state.labels, state.skills, state.log,
                                  ctx.assignment.alpha_cap,
                                  skip_ineligible=True)
        else:
            pairs = assign_random(hits, ctx.worker_ids, state.log,
                                  ctx.rng_assign, skip_ineligible=True)
        assigned = {item for item, _ in pairs}
        blocked.update(item for item in hits if item not in assigned)
        if not pairs:
            continue
        for item_id, worker_id in pairs:
            truth = int(ctx.truths[index[item_id]])
            label = ctx.pool[worker_id].annotate(truth)
            state.log.append(item_id, worker_id, label, state.step)
            counts[item_id] += 1
            annotators[item_id].add(worker_id)
        gathered += len(pairs)
    return gathered


def _train_candidate(state: LoopState, ctx: RunContext,
                     labels: LabelTable) -> MlpParams | None:
    """Fit the classifier head on current label estimates.

    The labeled set is the annotated items (aggregated labels) plus the
    train half of the prototypes (trusted labels, which win on overlap).
    Pseudo mode adds confident unannotated items with hard labels; MixMatch
    mixes them in through the L2 consistency term instead.
    """
    sw = ctx.switches
    annotated = np.nonzero(labels.annotation_count > 0)[0]
    targets = np.zeros(len(labels), dtype=np.int64)
    targets[annotated] = labels.aggregated[annotated]
    labeled = set(annotated.tolist())
    for i in ctx.proto_train_idx:
        labeled.add(int(i))
        targets[i] = int(ctx.truths[i])
    confident_idx, confident_y = learner.select_pseudo_labels(labels,
                                                              ctx.train.tau)
    extra = [int(i) for i in confident_idx if int(i) not in labeled
             and labels.annotation_count[i] == 0]
    if sw.semi_mode == "pseudo":
        for i, y in zip(confident_idx, confident_y):
            if int(i) in labeled or labels.annotation_count[i] > 0:
                continue
            labeled.add(int(i))
            targets[int(i)] = int(y)

    labeled_idx = np.array(sorted(labeled), dtype=np.int64)
    if len(labeled_idx) == 0:
        return None
    cfg = replace(ctx.train, semi_mode=sw.semi_mode,
                  seed=derive_seed(ctx.seed, f"train/{state.step}"))
    x = ctx.features[labeled_idx]
    y = targets[labeled_idx]
    if sw.semi_mode == "mixmatch" and extra:
        extra_idx = np.array(extra, dtype=np.int64)
        return learner.fit_mixmatch(
            x, y, ctx.n_classes, cfg,
            ctx.features[extra_idx], labels.posterior[extra_idx],
        )
    return learner.fit(x, y, ctx.n_classes, cfg)


def _cross_val_temperature(state: LoopState, ctx: RunContext,
                           labels: LabelTable, n_folds: int = 3) -> float:
    """Lean-style calibration: pool held-out logits from folds over the
    annotated items (noisy aggregated labels) and fit one temperature."""
    annotated = np.nonzero(labels.annotation_count > 0)[0]
    if len(annotated) < n_folds:
        return 1.0
    x = ctx.features[annotated]
    y = labels.aggregated[annotated]
    folds = np.array_split(np.arange(len(annotated)), n_folds)
    pooled_z, pooled_y = [], []
    for fi, fold in enumerate(folds):
        mask = np.ones(len(annotated), dtype=bool)
        mask[fold] = False
        if not mask.any() or not len(fold):
            continue
        cfg = replace(ctx.train, seed=derive_seed(
            ctx.seed, f"cvfold/{state.step}/{fi}"))
        params_f = learner.fit(x[mask], y[mask], ctx.n_classes, cfg)
        pooled_z.append(learner.logits(params_f, x[fold]))
        pooled_y.append(y[fold])
    if not pooled_z:
        return 1.0
    return learner.fit_temperature_on_logits(
        np.vstack(pooled_z), np.concatenate(pooled_y))


def run_step(state: LoopState, ctx: RunContext) -> LoopState:
    """Execute one body of the annotation loop in place and return the state."""
    if bool(risk_finished_mask(state.labels, ctx.loop).all()):
        state.step += 1
        return state

    _gather_annotations(state, ctx)

    skills_init = {w: ctx.skill_prior.prior_skill(w, ctx.n_classes)
                   for w in ctx.worker_ids}
    em_prior = ctx.model_prior(state.model)
    labels_em, skills, _ = run_em(
        state.log, skills_init, em_prior, ctx.item_ids, ctx.skill_prior,
        epsilon=ctx.em.epsilon, max_iters=ctx.em.max_iters,
        mode=ctx.switches.em_mode,
    )

    if ctx.switches.model_enabled:
        candidate = _train_candidate(state, ctx, labels_em)
        if candidate is not None:
            if ctx.switches.calibration == "prototype":
                x_val, y_val = ctx.proto_val_data()
                candidate = learner.calibrate_temperature(candidate, x_val, y_val)
            elif ctx.switches.calibration == "cross_val":
                t = _cross_val_temperature(state, ctx, labels_em)
                candidate = replace(candidate, temperature=t)
            if ctx.switches.global_selection:
                x_val, y_val = ctx.proto_val_data()
                chosen, best_loss = learner.select_model(
                    candidate, state.best_model, x_val, y_val,
                    state.best_val_loss)
                state.best_model = chosen
                state.best_val_loss = best_loss
                state.model = chosen
            else:
                state.model = candidate
                if len(ctx.proto_val_idx):
                    x_val, y_val = ctx.proto_val_data()
                    state.best_val_loss = learner.nll(candidate, x_val, y_val)

    final_prior = ctx.model_prior(state.model)
    labels_final = e_step(state.log, skills, final_prior, ctx.item_ids)
    partition(labels_final, ctx.loop)
    state.labels = labels_final
    state.skills = skills

    finished_size = int(risk_finished_mask(labels_final, ctx.loop).sum())
    if finished_size > state.finished_set_max:
        state.finished_set_max = finished_size
        state.patience_counter = 0
    else:
        state.patience_counter += 1
    state.step += 1
    return state


@dataclass
class ResidualItem:
    id: str
    risk: float
    annotation_count: int
    aggregated: int


@dataclass
class RunResult:
    state: LoopState
    metrics: list[StepMetrics]
    residual: list[ResidualItem]
    stop_reason: str
    per_class_val_accuracy: list[float] | None


def _step_metrics(state: LoopState, ctx: RunContext) -> StepMetrics:
    labels = state.labels
    n = len(labels)
    risk_mask = risk_finished_mask(labels, ctx.loop)
    finished = int(risk_mask.sum())
    truths = ctx.truths
    top1 = top5 = fprec = mprec = None
    if truths is not None:
        top1 = top_k_accuracy(labels, truths, 1)
        top5 = top_k_accuracy(labels, truths, min(5, labels.n_classes))
        if finished:
            fprec = finished_precision(labels, truths, mask=risk_mask)
        if ctx.manifest.has_ood_class:
            mprec = mean_precision_targets(labels, truths,
                                           ctx.manifest.n_classes)
    return StepMetrics(
        step=state.step,
        annotations_total=len(state.log),
        annotations_per_image=len(state.log) / n,
        top1=top1,
        top5=top5,
        finished_size=finished,
        finished_precision=fprec,
        unfinished_fraction=1.0 - finished / n,
        mean_precision_targets=mprec,
        mean_risk=float(labels.risk.mean()),
    )


def run(ctx: RunContext) -> RunResult:
    """Loop run_step until a stopping rule fires; emit per-step metrics and
    the residual report of still-risky items (capped ones included)."""
    state = init_state(ctx)
    rows: list[StepMetrics] = []
    reason = "max_steps"
    while True:
        stop, why = should_stop(state, ctx.loop)
        if stop:
            reason = why
            break
        run_step(state, ctx)
        rows.append(_step_metrics(state, ctx))

    residual = [
        ResidualItem(
            id=ctx.item_ids[i],
            risk=float(state.labels.risk[i]),
            annotation_count=int(state.labels.annotation_count[i]),
            aggregated=int(state.labels.aggregated[i]),
        )
        for i in range(len(state.labels))
        if state.labels.risk[i] >= ctx.loop.risk_threshold
    ]

    per_class_acc = None
    if (ctx.switches.model_enabled and state.model is not None
            and ctx.truths is not None and len(ctx.proto_val_idx)):
        x_val, y_val = ctx.proto_val_data()
        pred = learner.forward(state.model, x_val).argmax(axis=1)
        per_class_acc = []
        for c in range(ctx.n_classes):
            mask = y_val == c
            per_class_acc.append(
                float(np.mean(pred[mask] == c)) if np.any(mask) else 0.0)

    return RunResult(
        state=state,
        metrics=rows,
        residual=residual,
        stop_reason=reason,
        per_class_val_accuracy=per_class_acc,
    )
