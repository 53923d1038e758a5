"""Optimization loop, LR schedule, checkpointing, CV orchestration, ablations.

Phase 1 trains the feature extractor on 3-class diagnosis images with
cross-entropy; Phase 2 trains the sequence classifier per fold with focal
loss under the two-step LR schedule.  Every run is a pure function of
(config, seed): batch order, dropout masks, and fold membership all derive
from seeded generators, and checkpoints carry enough state (parameters,
Adam moments, RNG state, epoch) to resume bit-exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import serial
from . import tensor as T
from .data import (
    SEQUENCE_WIDTH,
    VISIT_ORDER,
    FeatureSequence,
    kfold_split,
    normalize_image,
    rotate_augment,
)
from .errors import ConfigurationError, InputError, TrainingError
from .losses import (
    FocalLossConfig,
    bce_from_logits,
    ce_from_logits,
    confusion_and_metrics,
    focal_from_logits,
)
from .recurrent import BiLstmConfig, SequenceClassifier, count_recurrent_params
from .stem import ExtractorModel, StemConfig
from .tensor import Tensor
from .vit import ViTConfig

ABLATION_MODES = ("no_biomarkers", "vanilla_lstm", "bce_loss")


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "predictor"
    epochs: int = 100
    batch_size: int = 64
    base_lr: float = 1e-3
    low_lr: float = 1e-4
    switch_epoch: int = 50
    loss: str = "focal"
    dropout: float = 0.5
    seed: int = 0
    k: int = 5
    hidden: int = 256
    bidirectional: bool = True
    input_columns: int = SEQUENCE_WIDTH
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    focal: FocalLossConfig = field(default_factory=FocalLossConfig)

    def __post_init__(self):
        if self.phase not in ("extractor", "predictor"):
            raise ConfigurationError(f"unknown phase {self.phase!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")
        if self.switch_epoch > self.epochs:
            raise ConfigurationError(
                f"switch epoch {self.switch_epoch} exceeds epochs {self.epochs}")
        if self.loss not in ("ce", "focal", "bce"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")


def desk_extractor_config(seed: int = 0, epochs: int = 20) -> TrainConfig:
    return TrainConfig(phase="extractor", epochs=epochs, batch_size=32,
                       loss="ce", switch_epoch=epochs, seed=seed)


def desk_predictor_config(seed: int = 0, epochs: int = 100) -> TrainConfig:
    return TrainConfig(phase="predictor", epochs=epochs, batch_size=64,
                       loss="focal", switch_epoch=max(1, epochs // 2), seed=seed)


def paper_extractor_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(phase="extractor", epochs=100, batch_size=32, loss="ce",
                       switch_epoch=100, seed=seed)


def paper_predictor_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(phase="predictor", epochs=400, batch_size=64,
                       loss="focal", switch_epoch=200, seed=seed)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Base LR throughout for the extractor; two-step drop for the predictor."""
    if not 1 <= epoch <= cfg.epochs:
        raise ConfigurationError(f"epoch {epoch} outside 1..{cfg.epochs}")
    if cfg.phase == "extractor":
        return cfg.base_lr
    return cfg.base_lr if epoch <= cfg.switch_epoch else cfg.low_lr


class Adam:
    """Adam with bias correction; only requires_grad parameters are updated."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = {name: p for name, p in params.items() if p.requires_grad}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.moments = {name: (np.zeros_like(p.data), np.zeros_like(p.data))
                        for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m, v = self.moments[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> dict:
        return {"step": self.step_count,
                "moments": {k: (m.copy(), v.copy())
                            for k, (m, v) in self.moments.items()}}

    def load_state(self, state: dict) -> None:
        self.step_count = state["step"]
        for name, (m, v) in state["moments"].items():
            if name in self.moments:
                self.moments[name] = (m.copy(), v.copy())


@dataclass
class CurveRow:
    fold: int
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class FoldResult:
    fold: int
    best_epoch: int
    metrics: "object"
    confusion: "object"
    val_loss: float
    predictions: list[int]
    subject_order: list[str]
    curves: list[CurveRow]
    best_params: dict[str, np.ndarray]
    final_checkpoint: dict
    norm_mean: np.ndarray
    norm_std: np.ndarray


def _loss_fn(cfg: TrainConfig):
    if cfg.loss == "focal":
        return lambda logits, labels: focal_from_logits(logits, labels, cfg.focal)
    if cfg.loss == "bce":
        return bce_from_logits
    return ce_from_logits


def _check_finite_loss(value: float, context: str) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"training diverged: loss={value} at {context}")


# ---------------------------------------------------------------------------
# Phase 1: extractor training and feature extraction
# ---------------------------------------------------------------------------

@dataclass
class ExtractorRun:
    curves: list[CurveRow]
    best_epoch: int
    best_val_acc: float
    best_checkpoint: dict
    final_checkpoint: dict
    arch: dict


def _extractor_arch(stem_cfg: StemConfig, vit_cfg: ViTConfig,
                    freeze_backbone: bool, seed: int) -> dict:
    return {
        "stem": {"channels": list(stem_cfg.channels),
                 "strides": list(stem_cfg.strides),
                 "kernel": stem_cfg.kernel,
                 "bridge_channels": list(stem_cfg.bridge_channels),
                 "bridge_side": stem_cfg.bridge_side},
        "vit": {"blocks": vit_cfg.blocks, "dim": vit_cfg.dim,
                "heads": vit_cfg.heads, "patch": vit_cfg.patch,
                "image_side": vit_cfg.image_side, "rank": vit_cfg.rank,
                "lora_alpha": vit_cfg.lora_alpha, "mlp_ratio": vit_cfg.mlp_ratio},
        "freeze_backbone": freeze_backbone,
        "seed": seed,
    }


def build_extractor(arch: dict) -> ExtractorModel:
    stem_cfg = StemConfig(channels=tuple(arch["stem"]["channels"]),
                          strides=tuple(arch["stem"]["strides"]),
                          kernel=arch["stem"]["kernel"],
                          bridge_channels=tuple(arch["stem"]["bridge_channels"]),
                          bridge_side=arch["stem"]["bridge_side"])
    vit_cfg = ViTConfig(**arch["vit"])
    return ExtractorModel(stem_cfg, vit_cfg, seed=arch["seed"],
                          freeze_backbone=arch["freeze_backbone"])


def load_extractor(checkpoint: dict) -> ExtractorModel:
    model = build_extractor(checkpoint["arch"])
    params = model.named_parameters()
    for name, arr in checkpoint["params"].items():
        params[name].data[:] = arr
    return model


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def _checkpoint_dict(kind, arch, params, adam, epoch, fold, rng) -> dict:
    return {"kind": kind, "arch": arch, "epoch": epoch, "fold": fold,
            "params": _snapshot(params), "adam": adam.state(),
            "rng": serial.restore_rng(serial.rng_state(rng)),
            "trainable": {n for n, p in params.items() if p.requires_grad}}


def save_checkpoint_file(path, ckpt: dict, extra: dict | None = None) -> None:
    class _Wrap:
        def __init__(self, data, requires_grad):
            self.data = data
            self.requires_grad = requires_grad

    params = {n: _Wrap(arr, n in ckpt["trainable"])
              for n, arr in ckpt["params"].items()}
    serial.save_checkpoint(path, kind=ckpt["kind"], arch=ckpt["arch"],
                           params=params, epoch=ckpt["epoch"],
                           fold=ckpt["fold"], rng=ckpt["rng"],
                           adam_state=ckpt["adam"], extra=extra)


def train_extractor(images: dict[str, np.ndarray], labels: dict[str, int],
                    cfg: TrainConfig, stem_cfg: StemConfig | None = None,
                    vit_cfg: ViTConfig | None = None,
                    freeze_backbone: bool = False,
                    resume: dict | None = None) -> ExtractorRun:
    """Train the Phase-1 model on 3-class images; fold 0 of a k-fold split
    serves as validation, and the best-validation checkpoint is retained."""
    if set(labels.values()) != {0, 1, 2}:
        raise InputError("extractor training expects the three diagnosis classes")
    stem_cfg = stem_cfg or StemConfig()
    vit_cfg = vit_cfg or ViTConfig(image_side=stem_cfg.bridge_side)
    arch = _extractor_arch(stem_cfg, vit_cfg, freeze_backbone, cfg.seed)
    model = build_extractor(arch)
    params = model.named_parameters()
    adam = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(100,)))
    start_epoch = 0
    if resume is not None:
        for name, arr in resume["params"].items():
            params[name].data[:] = arr
        adam.load_state(resume["adam"])
        rng = resume["rng"]
        start_epoch = resume["epoch"]

    train_ids, val_ids = kfold_split(labels, k=cfg.k, seed=cfg.seed)[0]
    cache = {sid: normalize_image(images[sid]) for sid in labels}

    def batch_logits(ids, training):
        rows = []
        for sid in ids:
            _, logits = model.forward(cache[sid])
            rows.append(T.reshape(logits, (1, 3)))
        return T.concat(rows, axis=0)

    curves: list[CurveRow] = []
    best = (-1.0, 0, None)  # acc, epoch, checkpoint
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        lr = lr_schedule(epoch, cfg)
        order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        losses, hits, seen = [], 0, 0
        for i in range(0, len(order), cfg.batch_size):
            chunk = order[i : i + cfg.batch_size]
            y = np.array([labels[sid] for sid in chunk])
            adam.zero_grad()
            logits = batch_logits(chunk, training=True)
            loss = ce_from_logits(logits, y)
            _check_finite_loss(loss.item(), f"epoch {epoch}")
            loss.backward()
            adam.step(lr)
            losses.append(loss.item())
            hits += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(chunk)
        y_val = np.array([labels[sid] for sid in val_ids])
        val_logits = batch_logits(val_ids, training=False)
        val_loss = ce_from_logits(val_logits, y_val).item()
        val_acc = float((val_logits.data.argmax(axis=1) == y_val).mean())
        curves.append(CurveRow(0, epoch, lr, float(np.mean(losses)), val_loss,
                               hits / seen, val_acc))
        if val_acc > best[0]:
            best = (val_acc, epoch,
                    _checkpoint_dict("extractor", arch, params, adam, epoch,
                                     None, rng))
    final = _checkpoint_dict("extractor", arch, params, adam, cfg.epochs,
                             None, rng)
    best_ckpt = best[2] if best[2] is not None else final
    return ExtractorRun(curves, best[1], best[0], best_ckpt, final, arch)


def extract_features(model_or_ckpt, images: dict[tuple[str, str], np.ndarray],
                     augment_subjects: set[str] | None = None,
                     augment_variants: int = 0, seed: int = 0):
    """Inference-mode 256-vectors per subject-visit, plus rotated variants.

    Augmented variants draw one angle in [-5, 5] degrees per
    (subject, variant, visit) from the given seed; the rotated image is
    re-normalized before extraction so augmented features differ while the
    subject's biomarkers stay shared.
    """
    model = (model_or_ckpt if isinstance(model_or_ckpt, ExtractorModel)
             else load_extractor(model_or_ckpt))
    augment_subjects = augment_subjects or set()
    subject_index = {sid: i for i, sid in
                     enumerate(sorted({sid for sid, _ in images}))}
    features: dict[tuple[str, str], np.ndarray] = {}
    augmented: dict[tuple[str, int, str], np.ndarray] = {}
    for (sid, code) in sorted(images):
        img = images[(sid, code)]
        features[(sid, code)] = model.extract(normalize_image(img))
        if sid in augment_subjects:
            for variant in range(1, augment_variants + 1):
                key = np.random.SeedSequence(
                    entropy=seed,
                    spawn_key=(300, subject_index[sid], variant,
                               VISIT_ORDER.index(code)))
                angle = float(np.random.default_rng(key).uniform(-5.0, 5.0))
                rotated = rotate_augment(img, angle)
                augmented[(sid, variant, code)] = model.extract(
                    normalize_image(rotated))
    return features, augmented


# ---------------------------------------------------------------------------
# Phase 2: predictor training
# ---------------------------------------------------------------------------

def _sequence_matrix(seqs: list[FeatureSequence], columns: int) -> np.ndarray:
    return np.stack([s.data[:, :columns] for s in seqs])


def _fold_model_seed(cfg: TrainConfig, fold: int) -> int:
    return int(np.random.SeedSequence(
        entropy=cfg.seed, spawn_key=(200, fold)).generate_state(1)[0])


def _train_predictor_fold(fold: int, sequences: list[FeatureSequence],
                          train_ids: list[str], val_ids: list[str],
                          cfg: TrainConfig,
                          resume: dict | None = None) -> FoldResult:
    train_set = set(train_ids)
    val_set = set(val_ids)
    train_seqs = [s for s in sequences if s.source_subject_id in train_set]
    val_seqs = [s for s in sequences if s.source_subject_id in val_set]
    if not train_seqs or not val_seqs:
        raise InputError(f"fold {fold}: empty train or validation split")

    cols = cfg.input_columns
    x_train = _sequence_matrix(train_seqs, cols)
    x_val = _sequence_matrix(val_seqs, cols)
    flat = x_train.reshape(-1, cols)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), 1e-8)
    x_train = (x_train - mean) / std
    x_val = (x_val - mean) / std
    y_train = np.array([s.label for s in train_seqs])
    y_val = np.array([s.label for s in val_seqs])

    lstm_cfg = BiLstmConfig(cols, cfg.hidden, cfg.dropout, cfg.bidirectional)
    model = SequenceClassifier(lstm_cfg, seed=_fold_model_seed(cfg, fold))
    params = model.named_parameters()
    adam = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(201, fold)))
    arch = {"lstm": {"input_width": cols, "hidden_width": cfg.hidden,
                     "dropout": cfg.dropout, "bidirectional": cfg.bidirectional},
            "seed": _fold_model_seed(cfg, fold)}
    start_epoch = 0
    if resume is not None:
        for name, arr in resume["params"].items():
            params[name].data[:] = arr
        adam.load_state(resume["adam"])
        rng = resume["rng"]
        start_epoch = resume["epoch"]

    loss_fn = _loss_fn(cfg)
    curves: list[CurveRow] = []
    best = (-1.0, 0, None, None, None)  # acc, epoch, params, preds, val_loss
    n = len(train_seqs)
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        lr = lr_schedule(epoch, cfg)
        perm = rng.permutation(n)
        losses, hits, seen = [], 0, 0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            adam.zero_grad()
            logits = model.forward_batch(xb, training=True, rng=rng)
            loss = loss_fn(logits, yb)
            _check_finite_loss(loss.item(), f"fold {fold} epoch {epoch}")
            loss.backward()
            adam.step(lr)
            losses.append(loss.item())
            probs = T.sigmoid(logits).data[:, 0]
            hits += int(((probs >= 0.5).astype(int) == yb).sum())
            seen += len(idx)
        val_logits = model.forward_batch(x_val, training=False)
        val_loss = loss_fn(val_logits, y_val).item()
        val_probs = T.sigmoid(val_logits).data[:, 0]
        val_preds = (val_probs >= 0.5).astype(int)
        val_acc = float((val_preds == y_val).mean())
        curves.append(CurveRow(fold, epoch, lr, float(np.mean(losses)),
                               val_loss, hits / seen, val_acc))
        if val_acc > best[0]:
            best = (val_acc, epoch, _snapshot(params), val_preds.tolist(),
                    val_loss)
    final = _checkpoint_dict("predictor", arch, params, adam, cfg.epochs,
                             fold, rng)
    best_acc, best_epoch, best_params, best_preds, best_val_loss = best
    cm, metrics = confusion_and_metrics(best_preds, y_val.tolist())
    return FoldResult(fold, best_epoch, metrics, cm, best_val_loss, best_preds,
                      [s.subject_id for s in val_seqs], curves, best_params,
                      final, mean, std)


@dataclass
class PredictorRun:
    folds: list[FoldResult]
    mean_accuracy: float
    mean_precision: float | None
    mean_recall: float | None
    mean_f1: float | None
    mean_val_loss: float
    config: TrainConfig
    fold_membership: list[tuple[list[str], list[str]]]

    @property
    def curves(self) -> list[CurveRow]:
        return [row for f in self.folds for row in f.curves]


def train_predictor(sequences: list[FeatureSequence], cfg: TrainConfig,
                    jobs: int = 1) -> PredictorRun:
    """k-fold CV over subjects; augmented copies follow their source subject."""
    base = [s for s in sequences if not s.augmented]
    labels = {s.subject_id: s.label for s in base}
    folds = kfold_split(labels, k=cfg.k, seed=cfg.seed)

    def run_fold(i):
        train_ids, val_ids = folds[i]
        return _train_predictor_fold(i, sequences, train_ids, val_ids, cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_fold, range(cfg.k)))
    else:
        results = [run_fold(i) for i in range(cfg.k)]

    def mean_of(attr):
        vals = [getattr(f.metrics, attr) for f in results]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    return PredictorRun(
        folds=results,
        mean_accuracy=float(np.mean([f.metrics.accuracy for f in results])),
        mean_precision=mean_of("precision"),
        mean_recall=mean_of("recall"),
        mean_f1=mean_of("f1"),
        mean_val_loss=float(np.mean([f.val_loss for f in results])),
        config=cfg,
        fold_membership=folds,
    )


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

@dataclass
class AblationReport:
    mode: str
    baseline: PredictorRun
    ablation: PredictorRun
    baseline_params: int
    ablation_params: int


def run_ablation(mode: str, sequences: list[FeatureSequence], cfg: TrainConfig,
                 baseline: PredictorRun | None = None,
                 jobs: int = 1) -> AblationReport:
    """Retrain with exactly one ingredient changed and report both runs."""
    if mode not in ABLATION_MODES:
        raise ConfigurationError(
            f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")
    if baseline is None:
        baseline = train_predictor(sequences, cfg, jobs=jobs)
    if mode == "no_biomarkers":
        ablated_cfg = replace(cfg, input_columns=256)
    elif mode == "vanilla_lstm":
        ablated_cfg = replace(cfg, bidirectional=False)
    else:
        ablated_cfg = replace(cfg, loss="bce")
    ablation = train_predictor(sequences, ablated_cfg, jobs=jobs)

    def params_of(c: TrainConfig) -> int:
        return count_recurrent_params(
            BiLstmConfig(c.input_columns, c.hidden, c.dropout, c.bidirectional))

    return AblationReport(mode, baseline, ablation, params_of(cfg),
                          params_of(ablated_cfg))


def load_predictor(checkpoint: dict) -> SequenceClassifier:
    """Rebuild the sequence classifier from a stored checkpoint."""
    arch = checkpoint["arch"]
    cfg = BiLstmConfig(**arch["lstm"])
    model = SequenceClassifier(cfg, seed=arch["seed"])
    params = model.named_parameters()
    for name, arr in checkpoint["params"].items():
        params[name].data[:] = arr
    return model


# ---------------------------------------------------------------------------
# plot-ready text reports
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def write_curves(path, rows: list[CurveRow]) -> None:
    with open(path, "w") as fh:
        fh.write("fold,epoch,lr,train_loss,val_loss,train_acc,val_acc\n")
        for r in rows:
            fh.write(f"{r.fold},{r.epoch},{r.lr:.6g},{r.train_loss:.6f},"
                     f"{r.val_loss:.6f},{r.train_acc:.6f},{r.val_acc:.6f}\n")


def write_metric_report(path, run: PredictorRun) -> None:
    with open(path, "w") as fh:
        fh.write("fold,accuracy,precision,recall,f1,loss\n")
        for f in run.folds:
            m = f.metrics
            fh.write(f"{f.fold},{_fmt(m.accuracy)},{_fmt(m.precision)},"
                     f"{_fmt(m.recall)},{_fmt(m.f1)},{_fmt(f.val_loss)}\n")
        fh.write(f"mean,{_fmt(run.mean_accuracy)},{_fmt(run.mean_precision)},"
                 f"{_fmt(run.mean_recall)},{_fmt(run.mean_f1)},"
                 f"{_fmt(run.mean_val_loss)}\n")


def write_confusion_report(path, run: PredictorRun) -> None:
    with open(path, "w") as fh:
        fh.write("fold,tp,fp,fn,tn\n")
        total = [0, 0, 0, 0]
        for f in run.folds:
            cm = f.confusion
            fh.write(f"{f.fold},{cm.tp},{cm.fp},{cm.fn},{cm.tn}\n")
            total[0] += cm.tp
            total[1] += cm.fp
            total[2] += cm.fn
            total[3] += cm.tn
        fh.write(f"all,{total[0]},{total[1]},{total[2]},{total[3]}\n")


def write_ablation_table(path, report: AblationReport) -> None:
    with_params = report.mode == "vanilla_lstm"
    header = "variant,accuracy,precision,recall,f1"
    if with_params:
        header += ",parameters"
    rows = [("baseline", report.baseline, report.baseline_params),
            (report.mode, report.ablation, report.ablation_params)]
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for name, run, n_params in rows:
            line = (f"{name},{_fmt(run.mean_accuracy)},{_fmt(run.mean_precision)},"
                    f"{_fmt(run.mean_recall)},{_fmt(run.mean_f1)}")
            if with_params:
                line += f",{n_params}"
            fh.write(line + "\n")
