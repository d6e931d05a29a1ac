"""Optimizer, metrics, the training loop with early stopping, and evaluation.

Every source of randomness is derived statelessly from (seed, epoch, ...)
so runs are reproducible and training can resume mid-stream without drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from . import posedata as pd
from . import tensor as T
from .errors import ConfigError, DegenerateBatchError, EvaluationError
from .model import LossConfig, ModelConfig, ModelParameters
from .posedata import AugmentationConfig, PairSample

# parameters excluded from weight decay: biases, norm scales/shifts, embeddings
_NO_DECAY_LEAVES = ("bias", "beta", "gamma", "b1", "b2", "bq", "bk", "bv", "bo")
_NO_DECAY_NAMES = ("cls", "sep", "pos.table", "type.table")


@dataclass
class TrainConfig:
    lr: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 7
    monitor: str = "accuracy"            # accuracy | f1
    loss: LossConfig = field(default_factory=LossConfig)
    # pipeline knobs (local defaults, not part of the published recipe)
    max_sentence_frames: int = 24
    max_query_frames: int = 8
    trim_eps: float = pd.DEFAULT_TRIM_EPS
    trim_sentences: bool = True
    trim_queries: bool = True
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    dtype: str = "float32"               # float32 | float64
    threshold: float = 0.5
    lr_schedule: str = "none"            # none | cosine (off by default)
    target_metric: float | None = None   # stop as soon as the monitor reaches this
    max_grad_norm: float | None = 1.0    # global-norm gradient clipping

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.monitor not in ("accuracy", "f1"):
            raise ConfigError(f"monitor must be accuracy or f1, got {self.monitor!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.lr_schedule not in ("none", "cosine"):
            raise ConfigError(f"lr_schedule must be none or cosine, got {self.lr_schedule!r}")
        self.loss.validate()
        return self

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "betas": list(self.betas), "eps": self.eps,
            "weight_decay": self.weight_decay, "batch_size": self.batch_size,
            "max_epochs": self.max_epochs, "patience": self.patience,
            "seed": self.seed, "monitor": self.monitor,
            "loss": self.loss.to_dict(),
            "max_sentence_frames": self.max_sentence_frames,
            "max_query_frames": self.max_query_frames,
            "trim_eps": self.trim_eps,
            "trim_sentences": self.trim_sentences,
            "trim_queries": self.trim_queries,
            "augmentation": {
                "mask_prob": self.augmentation.mask_prob,
                "scale_range": list(self.augmentation.scale_range),
                "jitter_std": self.augmentation.jitter_std,
                "noise_std": self.augmentation.noise_std,
                "seed": self.augmentation.seed,
            },
            "dtype": self.dtype, "threshold": self.threshold,
            "lr_schedule": self.lr_schedule, "target_metric": self.target_metric,
            "max_grad_norm": self.max_grad_norm,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["betas"] = tuple(d.get("betas", (0.9, 0.999)))
        if "loss" in d:
            d["loss"] = LossConfig.from_dict(d["loss"])
        if "augmentation" in d:
            a = dict(d["augmentation"])
            a["scale_range"] = tuple(a.get("scale_range", (0.9, 1.1)))
            d["augmentation"] = AugmentationConfig(**a)
        return TrainConfig(**d).validate()


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


class OptimizerState:
    """First/second moment arrays per parameter plus the shared step count."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step: int = 0

    def ensure(self, name: str, like: np.ndarray) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)


def decays(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf not in _NO_DECAY_LEAVES and name not in _NO_DECAY_NAMES


def adamw_step(params: ModelParameters, state: OptimizerState, cfg: TrainConfig,
               lr: float | None = None) -> None:
    """One decoupled-weight-decay Adam update over all gradients."""
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, tensor in params.items():
        g = tensor.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise EvaluationError(
                f"non-finite gradient in {name} at step {t}; aborting the update"
            )
        state.ensure(name, tensor.data)
        m, v = state.m[name], state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / bias1
        v_hat = v / bias2
        if cfg.weight_decay and decays(name):
            tensor.data *= 1.0 - lr * cfg.weight_decay  # decay acts on the pre-step value
        tensor.data -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps))


def schedule_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "cosine":
        frac = (epoch - 1) / max(cfg.max_epochs - 1, 1)
        return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * frac))
    return cfg.lr


def clip_gradients(params: ModelParameters, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, tensor in params.items():
        if tensor.grad is not None:
            g = tensor.grad
            total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, tensor in params.items():
            if tensor.grad is not None:
                tensor.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1, "flags": list(self.flags),
        }

    def monitored(self, monitor: str) -> float:
        return self.accuracy if monitor == "accuracy" else self.f1


def compute_metrics(predictions, labels) -> MetricsReport:
    preds = np.asarray(predictions, dtype=np.int64)
    labs = np.asarray(labels, dtype=np.int64)
    if preds.size == 0:
        raise DegenerateBatchError("compute_metrics on empty input")
    if preds.shape != labs.shape:
        raise DegenerateBatchError(f"length mismatch: {preds.shape} vs {labs.shape}")
    tp = int(((preds == 1) & (labs == 1)).sum())
    fp = int(((preds == 1) & (labs == 0)).sum())
    tn = int(((preds == 0) & (labs == 0)).sum())
    fn = int(((preds == 0) & (labs == 1)).sum())
    flags = []
    accuracy = (tp + tn) / preds.size
    if tp + fp == 0:
        precision = 0.0
        flags.append("precision undefined (no positive predictions)")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("recall undefined (no positive labels)")
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return MetricsReport(tp, fp, tn, fn, accuracy, precision, recall, f1, flags)


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


def prepare_samples(samples: list[PairSample], cfg: TrainConfig) -> list[PairSample]:
    """Normalize and trim once, ahead of training or evaluation."""
    out = []
    for p in samples:
        s = pd.normalize_sequence(p.sentence)
        q = pd.normalize_sequence(p.query)
        if cfg.trim_sentences:
            s = pd.trim_still_frames(s, cfg.trim_eps)
        if cfg.trim_queries:
            q = pd.trim_still_frames(q, cfg.trim_eps)
        out.append(PairSample(s, q, p.label))
    return out


def _augmented(sample: PairSample, cfg: TrainConfig, epoch: int, index: int) -> PairSample:
    aug_seed = cfg.augmentation.seed or cfg.seed
    rng = np.random.default_rng([aug_seed, epoch, index])
    return PairSample(
        pd.augment(sample.sentence, cfg.augmentation, rng),
        pd.augment(sample.query, cfg.augmentation, rng),
        sample.label,
    )


def iter_batches(samples: list[PairSample], cfg: TrainConfig, epoch: int,
                 shuffle: bool, augmented: bool):
    """Deterministic batch stream for one epoch."""
    n = len(samples)
    order = (
        np.random.default_rng([cfg.seed, epoch]).permutation(n)
        if shuffle else np.arange(n)
    )
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        chosen = [samples[i] for i in idx]
        if augmented:
            chosen = [_augmented(p, cfg, epoch, int(i)) for p, i in zip(chosen, idx)]
        batch = pd.collate_batch(chosen, cfg.max_sentence_frames, cfg.max_query_frames)
        batch.sentence_frames = batch.sentence_frames.astype(cfg.np_dtype)
        batch.query_frames = batch.query_frames.astype(cfg.np_dtype)
        yield batch


# ---------------------------------------------------------------------------
# Train / evaluate
# ---------------------------------------------------------------------------


def train_epoch(params: ModelParameters, samples: list[PairSample],
                opt: OptimizerState, model_cfg: ModelConfig, cfg: TrainConfig,
                epoch: int) -> tuple[float, MetricsReport]:
    """One shuffled, augmented pass; returns (mean loss, train metrics)."""
    params.set_requires_grad(True)
    lr = schedule_lr(cfg, epoch)
    losses = []
    all_preds, all_labels = [], []
    needs_contrast = cfg.loss.mode != "bce"
    for step, batch in enumerate(iter_batches(samples, cfg, epoch, True, True)):
        rng = np.random.default_rng([cfg.seed, epoch, step, 104729])
        with T.Tape():
            res = M.forward(batch, params, model_cfg, mode="train", rng=rng)
            if needs_contrast and batch.size >= 2:
                q_vecs, s_vecs = M.contrastive_embeddings(res.encoded, res.seqs)
            else:
                q_vecs = s_vecs = None
            lcfg = cfg.loss
            if needs_contrast and q_vecs is None:
                lcfg = replace(cfg.loss, mode="bce")  # last odd-sized batch
            loss, _ = M.total_loss(res.logits, batch.labels, q_vecs, s_vecs, lcfg)
            if not np.isfinite(loss.data):
                raise EvaluationError(
                    f"non-finite loss in epoch {epoch} batch {step}"
                )
            params.zero_grads()
            T.backward(loss)
        if cfg.max_grad_norm is not None:
            clip_gradients(params, cfg.max_grad_norm)
        adamw_step(params, opt, cfg, lr=lr)
        losses.append(float(loss.data))
        all_preds.extend(M.predict_labels(res.logits.data, cfg.threshold).tolist())
        all_labels.extend(int(v) for v in batch.labels)
    params.set_requires_grad(False)
    return float(np.mean(losses)), compute_metrics(all_preds, all_labels)


def evaluate(params: ModelParameters, samples: list[PairSample],
             model_cfg: ModelConfig, cfg: TrainConfig,
             threshold: float | None = None) -> MetricsReport:
    """Eval-mode metrics; no augmentation, no shuffling."""
    if not samples:
        raise DegenerateBatchError("evaluate on an empty dataset")
    threshold = cfg.threshold if threshold is None else threshold
    preds, labels = [], []
    for batch in iter_batches(samples, cfg, epoch=0, shuffle=False, augmented=False):
        res = M.forward(batch, params, model_cfg, mode="eval")
        preds.extend(M.predict_labels(res.logits.data, threshold).tolist())
        labels.extend(int(v) for v in batch.labels)
    return compute_metrics(preds, labels)


def predict_pair(params: ModelParameters, sentence, query, model_cfg: ModelConfig,
                 cfg: TrainConfig) -> float:
    """Presence probability for one (sentence, query) pair."""
    sample = prepare_samples([PairSample(sentence, query, 0)], cfg)[0]
    batch = pd.collate_batch([sample], cfg.max_sentence_frames, cfg.max_query_frames)
    batch.sentence_frames = batch.sentence_frames.astype(cfg.np_dtype)
    batch.query_frames = batch.query_frames.astype(cfg.np_dtype)
    res = M.forward(batch, params, model_cfg, mode="eval")
    return float(M.sigmoid_np(res.logits.data)[0])


# ---------------------------------------------------------------------------
# fit with early stopping
# ---------------------------------------------------------------------------


@dataclass
class FitState:
    """Early-stopping bookkeeping, serialized into checkpoints for resume."""

    epoch: int = 0
    best_metric: float = -np.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch, "best_metric": self.best_metric,
            "best_epoch": self.best_epoch,
            "epochs_since_improvement": self.epochs_since_improvement,
        }

    @staticmethod
    def from_dict(d: dict) -> "FitState":
        return FitState(**d)


@dataclass
class FitResult:
    best_params: ModelParameters
    best_epoch: int
    best_metric: float
    history: list[dict]
    stopped_epoch: int


def fit(params: ModelParameters, train_samples: list[PairSample],
        val_samples: list[PairSample], model_cfg: ModelConfig, cfg: TrainConfig,
        opt: OptimizerState | None = None, fit_state: FitState | None = None,
        on_epoch=None) -> FitResult:
    """Train with early stopping on the monitored validation metric.

    Keeps the parameters from the best epoch (ties keep the earlier one) and
    stops after `patience` consecutive epochs without strict improvement, at
    `max_epochs`, or once `target_metric` is reached.
    """
    cfg.validate()
    opt = opt or OptimizerState()
    state = fit_state or FitState()
    history: list[dict] = []
    best_params = params.copy()
    for epoch in range(state.epoch + 1, cfg.max_epochs + 1):
        train_loss, train_metrics = train_epoch(
            params, train_samples, opt, model_cfg, cfg, epoch
        )
        val_metrics = evaluate(params, val_samples, model_cfg, cfg)
        record = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_accuracy": val_metrics.accuracy,
            "val_f1": val_metrics.f1,
            "val_precision": val_metrics.precision,
            "val_recall": val_metrics.recall,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        monitored = val_metrics.monitored(cfg.monitor)
        if monitored > state.best_metric:
            state.best_metric = monitored
            state.best_epoch = epoch
            state.epochs_since_improvement = 0
            best_params = params.copy()
        else:
            state.epochs_since_improvement += 1
        state.epoch = epoch
        if cfg.target_metric is not None and monitored >= cfg.target_metric:
            break
        if state.epochs_since_improvement >= cfg.patience:
            break
    return FitResult(best_params, state.best_epoch, state.best_metric, history, state.epoch)
