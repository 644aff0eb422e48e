"""crowdloop: online multi-class annotation with a learner in the loop.

Joint EM inference of labels and worker confusion matrices, a small MLP head
retrained each round with semi-supervised objectives and temperature
calibration, risk-driven annotation batching with a finished-set stopping
rule, and a realistic structured-noise worker simulator.
"""

from .assignment import AssignmentConfig, assign_greedy, assign_random
from .config import ExperimentConfig, METHOD_PRESETS, validate_config
from .datastore import (
    FeatureStore,
    ItemMeta,
    Manifest,
    gen_synthetic,
    load_features,
    load_manifest,
    prototype_split,
    save_features,
    save_manifest,
)
from .inference import (
    AnnotationLog,
    DawidSkene,
    LabelState,
    LabelTable,
    SkillPrior,
    WorkerSkill,
    e_step,
    m_step,
    mean_likelihood,
    run_em,
)
from .learner import (
    MlpClassifier,
    MlpParams,
    TrainConfig,
    calibrate_temperature,
    fit,
    fit_mixmatch,
    forward,
    hyperparam_search,
    mixmatch_batch,
    select_model,
    select_pseudo_labels,
)
from .loop import (
    EmConfig,
    LoopConfig,
    LoopState,
    MethodSwitches,
    RunContext,
    build_hits,
    compute_risk,
    partition,
    risk_finished_mask,
    run,
    run_step,
    should_stop,
)
from .metrics import (
    StepMetrics,
    annotations_at_threshold,
    emit_curves,
    finished_precision,
    top_k_accuracy,
)
from .workers import (
    SimWorker,
    SkillBank,
    annotate,
    inject_ood,
    make_skill_bank_synthetic,
    make_uniform_worker,
    sample_confusion_matrix,
)

__version__ = "0.1.0"
