"""Training orchestration: supervised source phase, self-adaptive target
reconstruction phase, evaluation, and full source->target direction runs.

The adaptation phase's only inputs are the source model's parameters, the
target images, and a config; source images are not a parameter anywhere
in its call graph, and target labels are never read by it.
"""

import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics as M
from .data import DatasetIndex, batches, stratified_split
from .engine import tensor as T
from .engine.prng import Prng
from .engine.tensor import Tensor
from .errors import ContractError, DegenerateDataError
from .losses import LossWeights, cross_entropy, satl_loss
from .models import (
    ClassifierModel,
    EncoderConfig,
    VaeModel,
    build_classifier,
    build_vae_from_encoder,
    compose_adapted,
    params_hash,
)

LOG_CSV_HEADER = "epoch,total_loss,kl,pixel,gram,val_accuracy,seconds"


@dataclass(frozen=True)
class SourceTrainConfig:
    learning_rate: float = 1e-6
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 50
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ContractError("train_fraction must be in (0, 1)")


@dataclass(frozen=True)
class AdaptConfig:
    encoder_lr: float = 1e-7
    other_lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    loss_weights: LossWeights = field(default_factory=LossWeights)
    latent_channels: int = 32
    seed: int = 0
    allow_lr_inversion: bool = False  # overrides the encoder_lr <= other_lr guard

    def __post_init__(self):
        if self.encoder_lr < 0 or self.other_lr <= 0:
            raise ContractError("learning rates must be non-negative (other_lr positive)")
        if self.encoder_lr > self.other_lr and not self.allow_lr_inversion:
            raise ContractError(
                "encoder_lr exceeds other_lr; the encoder is meant to move slowly "
                "(set allow_lr_inversion to override)"
            )
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.latent_channels < 1:
            raise ContractError("latent_channels must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    total_loss: float
    kl: Optional[float] = None
    pixel: Optional[float] = None
    gram: Optional[float] = None
    val_accuracy: Optional[float] = None
    wall_seconds: float = 0.0


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        expected = self.records[-1].epoch + 1 if self.records else 1
        if rec.epoch != expected:
            raise ContractError(f"epoch {rec.epoch} out of order (expected {expected})")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        """CSV with the documented header. The seconds column is left empty:
        wall time is not reproducible, and rerunning a command with fixed
        seeds must yield byte-identical logs (wall_seconds stays available
        in memory)."""

        def fmt(v) -> str:
            return "" if v is None else repr(float(v))

        lines = [LOG_CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.epoch},{fmt(r.total_loss)},{fmt(r.kl)},{fmt(r.pixel)},"
                f"{fmt(r.gram)},{fmt(r.val_accuracy)},"
            )
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


class SgdMomentum:
    """SGD with momentum 0.9 and weight decay folded into the gradient:
    v <- momentum*v + g + wd*p ; p <- p - lr_group*v. Velocity buffers
    persist across steps."""

    def __init__(self, groups, momentum: float = 0.9, weight_decay: float = 0.0):
        # groups: iterable of (params dict, learning rate)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._entries = []
        seen = set()
        for params, lr in groups:
            for name, p in params.items():
                if name in seen:
                    raise ContractError(f"parameter {name!r} appears in two groups")
                seen.add(name)
                self._entries.append((name, p, lr))
        self._velocity = {name: np.zeros_like(p.data) for name, p, _ in self._entries}

    def zero_grad(self) -> None:
        for _, p, _ in self._entries:
            p.zero_grad()

    def step(self) -> None:
        for name, p, lr in self._entries:
            g = p.grad
            if g is None:
                raise ContractError(f"parameter {name!r} has no gradient (backward not run?)")
            dt = p.data.dtype.type
            v = self._velocity[name]
            v *= dt(self.momentum)
            v += g
            if self.weight_decay:
                v += dt(self.weight_decay) * p.data
            p.data -= dt(lr) * v


def _stable_sigmoid(d: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def predict_scores(model: ClassifierModel, ds: DatasetIndex, batch_size: int = 64):
    """Positive-class probabilities (softmax of the 2 logits) per item."""
    scores = []
    with T.no_grad():
        for batch in batches(ds, batch_size):
            logits = model.forward(batch.x).data.astype(np.float64)
            scores.append(_stable_sigmoid(logits[:, 1] - logits[:, 0]))
    return np.concatenate(scores)


def accuracy_of(model: ClassifierModel, ds: DatasetIndex, threshold: float = 0.5) -> float:
    scores = predict_scores(model, ds)
    labels = np.array([item.label for item in ds.items])
    tp, fp, tn, fn = M.confusion(scores, labels, threshold)
    return (tp + tn) / len(ds.items)


def evaluate(
    model: ClassifierModel,
    ds: DatasetIndex,
    threshold: float = 0.5,
    direction: str = "",
    strategy: str = "",
):
    """MetricsReport + RocCurve of a classifier on a labeled dataset."""
    if not ds.labeled:
        raise ContractError("evaluate needs a labeled dataset")
    counts = ds.class_counts
    if counts[0] == 0 or counts[1] == 0:
        raise DegenerateDataError("evaluation set has a single class; AUC undefined")
    scores = predict_scores(model, ds)
    labels = np.array([item.label for item in ds.items])
    return M.evaluate_scores(scores, labels, threshold, direction=direction, strategy=strategy)


def _snapshot(params: dict) -> dict:
    return {k: p.data.copy() for k, p in params.items()}


def train_source(
    ds: DatasetIndex, cfg: SourceTrainConfig, progress: bool = False
) -> "tuple[ClassifierModel, TrainingLog]":
    """Supervised phase: stratified split, CE + momentum SGD, and the
    checkpoint with maximum validation accuracy (earliest epoch on ties)."""
    rng = Prng(cfg.seed)
    train, val = stratified_split(ds, cfg.train_fraction, rng.split(1))
    config = EncoderConfig(input_shape=ds.image_shape())
    model = build_classifier(config, rng.split(2))
    opt = SgdMomentum([(model.params, cfg.learning_rate)], weight_decay=cfg.weight_decay)

    best_acc = -1.0
    best_epoch = -1
    best_params = _snapshot(model.params)
    log = TrainingLog()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        n_batches = 0
        for batch in batches(train, cfg.batch_size, rng.split(3, epoch)):
            opt.zero_grad()
            loss = cross_entropy(model.forward(batch.x), batch.labels)
            T.backward(loss)
            opt.step()
            total += loss.item()
            n_batches += 1
        val_acc = accuracy_of(model, val)
        wall = time.perf_counter() - t0
        log.append(
            EpochRecord(
                epoch=epoch,
                total_loss=total / max(n_batches, 1),
                val_accuracy=val_acc,
                wall_seconds=wall,
            )
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = _snapshot(model.params)
        if progress:
            print(
                f"[train] epoch {epoch}/{cfg.epochs} loss={total / max(n_batches, 1):.4f} "
                f"val_acc={val_acc:.3f} ({wall:.1f}s)",
                file=sys.stderr,
            )

    best = ClassifierModel(
        config, {k: Tensor(v, requires_grad=True) for k, v in best_params.items()}
    )
    best.best_epoch = best_epoch
    best.best_val_accuracy = best_acc
    return best, log


def adapt_target(
    source: ClassifierModel,
    target_unlabeled: DatasetIndex,
    cfg: AdaptConfig,
    progress: bool = False,
) -> "tuple[VaeModel, TrainingLog]":
    """Self-adaptive phase: train the transplanted-encoder VAE on target
    images only. Labels, if the dataset has them, are never read; source
    images are not reachable from here at all."""
    if len(target_unlabeled.items) == 0:
        raise ContractError("target dataset is empty")
    rng = Prng(cfg.seed)
    vae = build_vae_from_encoder(source, rng.split(1), cfg.latent_channels)
    log = TrainingLog()
    if cfg.epochs == 0:
        return vae, log

    enc_names = set(vae.encoder_param_names())
    enc_params = {k: v for k, v in vae.params.items() if k in enc_names}
    other_params = {k: v for k, v in vae.params.items() if k not in enc_names}
    opt = SgdMomentum([(enc_params, cfg.encoder_lr), (other_params, cfg.other_lr)])

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        eps_rng = rng.split(3, epoch)
        sums = {"total": 0.0, "kl": 0.0, "pixel": 0.0, "gram": 0.0}
        n_batches = 0
        for batch in batches(target_unlabeled, cfg.batch_size, rng.split(2, epoch)):
            opt.zero_grad()
            recon, mu, logvar, _ = vae.forward(batch.x, mode="train", prng=eps_rng)
            total, parts = satl_loss(recon, mu, logvar, batch.x, cfg.loss_weights)
            T.backward(total)
            opt.step()
            sums["total"] += total.item()
            for k in ("kl", "pixel", "gram"):
                sums[k] += parts[k]
            n_batches += 1
        wall = time.perf_counter() - t0
        nb = max(n_batches, 1)
        log.append(
            EpochRecord(
                epoch=epoch,
                total_loss=sums["total"] / nb,
                kl=sums["kl"] / nb,
                pixel=sums["pixel"] / nb,
                gram=sums["gram"] / nb,
                wall_seconds=wall,
            )
        )
        if progress:
            print(
                f"[adapt] epoch {epoch}/{cfg.epochs} loss={sums['total'] / nb:.5f} "
                f"(kl={sums['kl'] / nb:.5f} pixel={sums['pixel'] / nb:.5f} "
                f"gram={sums['gram'] / nb:.5f}) ({wall:.1f}s)",
                file=sys.stderr,
            )
    return vae, log


@dataclass
class DirectionResult:
    direction: str
    source_model: ClassifierModel
    adapted_vae: VaeModel
    composed_model: ClassifierModel
    report_wo: M.MetricsReport
    report_w: M.MetricsReport
    roc_wo: M.RocCurve
    roc_w: M.RocCurve
    train_log: TrainingLog
    adapt_log: TrainingLog
    head_hash_before: str
    head_hash_after: str


def run_direction(
    source_ds: DatasetIndex,
    target_ds: DatasetIndex,
    src_cfg: SourceTrainConfig,
    adapt_cfg: AdaptConfig,
    threshold: float = 0.5,
    progress: bool = False,
) -> DirectionResult:
    """Full protocol for one source->target pairing: train on source,
    evaluate raw on target, adapt on unlabeled target, recompose, evaluate
    again. Target labels are used for evaluation only."""
    if not source_ds.labeled or not target_ds.labeled:
        raise ContractError("run_direction needs labeled source and target datasets")
    direction = f"{source_ds.domain_tag}->{target_ds.domain_tag}"

    source_model, train_log = train_source(source_ds, src_cfg, progress=progress)
    head_names = source_model.head_param_names()
    head_before = params_hash(source_model.params, head_names)

    report_wo, roc_wo = evaluate(
        source_model, target_ds, threshold, direction=direction, strategy="source"
    )
    vae, adapt_log = adapt_target(
        source_model, target_ds.unlabeled_view(), adapt_cfg, progress=progress
    )
    composed = compose_adapted(source_model, vae)
    head_after = params_hash(composed.params, head_names)
    if head_after != head_before:
        raise ContractError("source head parameters changed during adaptation")

    report_w, roc_w = evaluate(
        composed, target_ds, threshold, direction=direction, strategy="adapted"
    )
    return DirectionResult(
        direction=direction,
        source_model=source_model,
        adapted_vae=vae,
        composed_model=composed,
        report_wo=report_wo,
        report_w=report_w,
        roc_wo=roc_wo,
        roc_w=roc_w,
        train_log=train_log,
        adapt_log=adapt_log,
        head_hash_before=head_before,
        head_hash_after=head_after,
    )
