"""The in-loop classifier: a 2-layer MLP head over fixed feature vectors.

The head is trained from scratch each round by plain mini-batch SGD with
weight decay (effective learning rate = lr_ratio * batch_size), optionally
augmented with hard pseudo-labels or a feature-space MixMatch objective, and
calibrated afterwards by temperature scaling against trusted prototype
labels. Gradients are hand-written so they can be verified against finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_features, check_labels
from .errors import EmptyTrainSet, EmptyValidationSet
from .inference import LabelTable


@dataclass(frozen=True)
class MlpParams:
    """Weights of the classifier head plus its calibration temperature."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]


@dataclass
class TrainConfig:
    """Hyperparameters for one fit() call."""

    lr_ratio: float = 0.0005
    batch_size: int = 128
    weight_decay: float = 0.0005
    epochs: int = 30
    hidden_dim: int = 128
    semi_mode: str = "none"  # none | pseudo | mixmatch
    tau: float = 0.1
    mu: float = 5.0
    gamma: int = 100
    mix_alpha: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.semi_mode not in ("none", "pseudo", "mixmatch"):
            raise ValueError(f"unknown semi_mode {self.semi_mode!r}")

    @property
    def learning_rate(self) -> float:
        return self.lr_ratio * self.batch_size


def init_params(dim: int, hidden_dim: int, n_classes: int,
                rng: np.random.Generator) -> MlpParams:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; zero biases."""
    lim1 = 1.0 / math.sqrt(dim)
    lim2 = 1.0 / math.sqrt(hidden_dim)
    return MlpParams(
        w1=rng.uniform(-lim1, lim1, size=(dim, hidden_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-lim2, lim2, size=(hidden_dim, n_classes)),
        b2=np.zeros(n_classes),
        temperature=1.0,
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Raw (untempered) logits for one vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    h = np.maximum(x @ params.w1 + params.b1, 0.0)
    return h @ params.w2 + params.b2


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Tempered softmax probabilities; accepts a vector or a batch."""
    return _softmax(logits(params, x) / params.temperature)


def _zero_grads(params: MlpParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(getattr(params, name))
            for name in ("w1", "b1", "w2", "b2")}


def loss_and_grad(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
    x_mix: np.ndarray | None = None,
    p_mix: np.ndarray | None = None,
    mu: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Full training loss and its analytic gradients.

    loss = mean cross-entropy on (x, y)
         + weight_decay * (sum w1^2 + sum w2^2)
         + mu * mean ||p_mix - forward(x_mix)||^2     (when a mixed set is given)
    """
    t = params.temperature
    grads = _zero_grads(params)
    loss = 0.0

    if len(x):
        a = x @ params.w1 + params.b1
        h = np.maximum(a, 0.0)
        z = h @ params.w2 + params.b2
        s = _softmax(z / t)
        n = len(x)
        loss += float(-np.log(s[np.arange(n), y] + 1e-300).mean())
        dz = s.copy()
        dz[np.arange(n), y] -= 1.0
        dz /= n * t
        grads["w2"] += h.T @ dz
        grads["b2"] += dz.sum(axis=0)
        dh = dz @ params.w2.T
        da = dh * (a > 0)
        grads["w1"] += x.T @ da
        grads["b1"] += da.sum(axis=0)

    if x_mix is not None and len(x_mix) and mu != 0.0:
        a = x_mix @ params.w1 + params.b1
        h = np.maximum(a, 0.0)
        z = h @ params.w2 + params.b2
        s = _softmax(z / t)
        m = len(x_mix)
        diff = s - p_mix
        loss += float(mu * np.sum(diff * diff) / m)
        g = 2.0 * mu * diff / m              # dL/ds
        dz = s * (g - np.sum(g * s, axis=1, keepdims=True)) / t
        grads["w2"] += h.T @ dz
        grads["b2"] += dz.sum(axis=0)
        dh = dz @ params.w2.T
        da = dh * (a > 0)
        grads["w1"] += x_mix.T @ da
        grads["b1"] += da.sum(axis=0)

    if weight_decay:
        loss += float(weight_decay * (np.sum(params.w1 ** 2)
                                      + np.sum(params.w2 ** 2)))
        grads["w1"] += 2.0 * weight_decay * params.w1
        grads["w2"] += 2.0 * weight_decay * params.w2

    return loss, grads


def mixmatch_batch(
    labeled: tuple[np.ndarray, np.ndarray],
    unlabeled: tuple[np.ndarray, np.ndarray],
    mix_alpha: float,
    rng: np.random.Generator | int,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex mixes of (feature, probability) pairs with the labeled side
    dominant.

    Per pair: lam ~ Beta(alpha, alpha), lam' = max(lam, 1 - lam), so
    lam' >= 0.5 always. The labeled batch is cycled when the unlabeled batch
    is longer.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    xl, pl = (np.asarray(a, dtype=np.float64) for a in labeled)
    xu, pu = (np.asarray(a, dtype=np.float64) for a in unlabeled)
    if not len(xl) or not len(xu):
        raise ValueError("mixmatch_batch requires non-empty batches")
    n = len(xu)
    sel = np.resize(np.arange(len(xl)), n)
    lam = rng.beta(mix_alpha, mix_alpha, size=n)
    lam = np.maximum(lam, 1.0 - lam)[:, None]
    x_mixed = lam * xl[sel] + (1.0 - lam) * xu
    p_mixed = lam * pl[sel] + (1.0 - lam) * pu
    return x_mixed, p_mixed


def _one_hot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def _train(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    cfg: TrainConfig,
    unlabeled: tuple[np.ndarray, np.ndarray] | None = None,
) -> MlpParams:
    x = check_features(x)
    if len(x) == 0:
        raise EmptyTrainSet("no training items")
    y = check_labels(y, n_classes)
    rng = np.random.default_rng(cfg.seed)
    # Independent stream for mix sampling so that mu=0 reproduces fit() exactly.
    rng_mix = np.random.default_rng((cfg.seed, 0x6D6978))
    params = init_params(x.shape[1], cfg.hidden_dim, n_classes, rng)
    if cfg.epochs == 0:
        return params
    lr = cfg.learning_rate
    n = len(x)
    p_labeled = _one_hot(y, n_classes)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            xb, yb = x[batch], y[batch]
            x_mix = p_mix = None
            if unlabeled is not None and len(unlabeled[0]):
                xu, pu = unlabeled
                m = min(cfg.gamma * len(batch), len(xu))
                pick = rng_mix.integers(0, len(xu), size=m)
                partners = rng_mix.integers(0, n, size=m)
                x_mix, p_mix = mixmatch_batch(
                    (x[partners], p_labeled[partners]),
                    (xu[pick], pu[pick]),
                    cfg.mix_alpha, rng_mix,
                )
            _, grads = loss_and_grad(
                params, xb, yb, cfg.weight_decay, x_mix, p_mix, cfg.mu
            )
            params = MlpParams(
                w1=params.w1 - lr * grads["w1"],
                b1=params.b1 - lr * grads["b1"],
                w2=params.w2 - lr * grads["w2"],
                b2=params.b2 - lr * grads["b2"],
                temperature=params.temperature,
            )
    return params


def fit(x: np.ndarray, y: np.ndarray, n_classes: int, cfg: TrainConfig) -> MlpParams:
    """Fresh seeded init, then SGD on cross-entropy with weight decay."""
    return _train(x, y, n_classes, cfg)


def fit_mixmatch(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    cfg: TrainConfig,
    x_unlabeled: np.ndarray,
    p_unlabeled: np.ndarray,
) -> MlpParams:
    """Cross-entropy on the labeled set plus the mu-weighted L2 consistency
    term on mixes of labeled and confident-unlabeled pairs.

    An empty unlabeled set (or mu=0) reduces to fit() on the labeled items.
    """
    unlabeled = None
    if len(x_unlabeled):
        unlabeled = (
            check_features(x_unlabeled, "x_unlabeled"),
            np.asarray(p_unlabeled, dtype=np.float64),
        )
    return _train(x, y, n_classes, cfg, unlabeled=unlabeled)


def select_pseudo_labels(labels: LabelTable, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices and hard labels of items whose max posterior exceeds 1 - tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    confident = labels.posterior.max(axis=1) > 1.0 - tau
    idx = np.nonzero(confident)[0]
    return idx, labels.aggregated[idx]


def nll(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood under the tempered softmax."""
    probs = forward(params, np.asarray(x, dtype=np.float64))
    return float(-np.log(probs[np.arange(len(y)), y] + 1e-300).mean())


def fit_temperature_on_logits(
    z: np.ndarray,
    y: np.ndarray,
    log_t_range: tuple[float, float] = (-3.0, 3.0),
    tol: float = 1e-3,
) -> float:
    """Golden-section search on log T for the NLL-minimizing temperature."""
    y = np.asarray(y, dtype=np.int64)
    rows = np.arange(len(y))

    def objective(log_t: float) -> float:
        probs = _softmax(z / math.exp(log_t))
        return float(-np.log(probs[rows, y] + 1e-300).mean())

    lo, hi = log_t_range
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = objective(c), objective(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = objective(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = objective(d)
    return math.exp((lo + hi) / 2.0)


def calibrate_temperature(
    params: MlpParams,
    x_val: np.ndarray,
    y_val: np.ndarray,
    log_t_range: tuple[float, float] = (-3.0, 3.0),
    tol: float = 1e-3,
) -> MlpParams:
    """Pick the temperature minimizing validation NLL; predictions unchanged.

    The previous temperature is discarded: scaling applies to the raw
    logits. Temperature is a monotone transform per item, so every argmax is
    exactly preserved.
    """
    if len(x_val) == 0:
        raise EmptyValidationSet("calibration requires validation items")
    z = logits(params, np.asarray(x_val, dtype=np.float64))
    t = fit_temperature_on_logits(z, y_val, log_t_range, tol)
    return replace(params, temperature=t)


def select_model(
    candidate: MlpParams,
    best: MlpParams | None,
    x_val: np.ndarray,
    y_val: np.ndarray,
    best_loss: float = math.inf,
) -> tuple[MlpParams, float]:
    """Keep the candidate only when its validation NLL does not exceed the
    best seen so far (global model selection across loop steps)."""
    if len(x_val) == 0:
        raise EmptyValidationSet("model selection requires validation items")
    cand_loss = nll(candidate, x_val, y_val)
    if best is None or cand_loss <= best_loss:
        return candidate, cand_loss
    return best, best_loss


def hyperparam_search(
    grid: Sequence[TrainConfig],
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    n_classes: int,
) -> TrainConfig:
    """Exhaustive grid evaluation by validation accuracy; ties keep the
    earliest grid entry."""
    if not grid:
        raise ValueError("grid must be non-empty")
    best_cfg = None
    best_acc = -1.0
    for cfg in grid:
        params = fit(x_train, y_train, n_classes, cfg)
        pred = forward(params, np.asarray(x_val, dtype=np.float64)).argmax(axis=1)
        acc = float(np.mean(pred == np.asarray(y_val)))
        if acc > best_acc:
            best_cfg, best_acc = cfg, acc
    return best_cfg


DEFAULT_GRID_LR = (0.001, 0.0005, 0.0001, 0.00005)
DEFAULT_GRID_WEIGHT_DECAY = (0.001, 0.005, 0.0005, 0.0001)
DEFAULT_GRID_MU = (3.0, 5.0, 10.0)
DEFAULT_GRID_GAMMA = (50, 75, 100, 150)


def default_grid(base: TrainConfig, include_mix: bool = False) -> list[TrainConfig]:
    """The standard search lattice over lr_ratio and weight decay, extended
    with mu and gamma when tuning the MixMatch objective."""
    grid = []
    for lr in DEFAULT_GRID_LR:
        for wd in DEFAULT_GRID_WEIGHT_DECAY:
            if include_mix:
                for mu in DEFAULT_GRID_MU:
                    for gamma in DEFAULT_GRID_GAMMA:
                        grid.append(replace(base, lr_ratio=lr, weight_decay=wd,
                                            mu=mu, gamma=gamma))
            else:
                grid.append(replace(base, lr_ratio=lr, weight_decay=wd))
    return grid


class MlpClassifier(BaseEstimator, ClassifierMixin):
    """scikit-learn style wrapper: fit(X, y) / predict_proba / predict."""

    def __init__(self, hidden_dim: int = 128, lr_ratio: float = 0.0005,
                 batch_size: int = 128, weight_decay: float = 0.0005,
                 epochs: int = 30, seed: int = 0):
        self.hidden_dim = hidden_dim
        self.lr_ratio = lr_ratio
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        X = check_features(X)
        y = np.asarray(y, dtype=np.int64)
        self.classes_ = np.unique(y)
        n_classes = int(y.max()) + 1 if len(y) else 0
        cfg = TrainConfig(
            lr_ratio=self.lr_ratio, batch_size=self.batch_size,
            weight_decay=self.weight_decay, epochs=self.epochs,
            hidden_dim=self.hidden_dim, seed=self.seed,
        )
        self.params_ = fit(X, y, n_classes, cfg)
        return self

    def predict_proba(self, X):
        return forward(self.params_, check_features(X))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)
