"""Mini-batch SGD with learning-rate decay, truncated BPTT windows,
best-checkpoint selection on the development split, and a finite-difference
gradient verification harness.

Training protocol: unimodal stacks train for the full schedule; model-level,
late, and conditional attention fusion start from pretrained stacks and
fine-tune briefly at a smaller rate; early fusion trains from scratch. The
per-epoch development score is the pooled concordance correlation of the
fully postprocessed predictions (delay unshift plus binomial smoothing), and
the best-scoring epoch's parameters are returned.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Recording, make_windows
from .errors import DimensionError, TrainingDivergedError
from .fusion import (
    ConditionalAttentionFusion,
    EarlyFusion,
    FusionModel,
    LateFusion,
    ModelLevelFusion,
    ReliabilitySignals,
    fusion_backward,
    fusion_forward,
    fusion_param_blocks,
    make_conditional_attention,
    make_early_fusion,
    make_late_fusion,
    make_model_level,
    total_loss,
)
from .lstm import LstmStack, init_stack, stack_backward, stack_forward
from .numeric import make_rng
from .pipeline import DelaySpec, NormStats, apply_norm, ccc, fit_norm, shift_for_delay, smooth, unshift_predictions


@dataclass
class TrainConfig:
    """Optimizer, schedule, regularization, and loss-weight hyperparameters."""

    lr_init: float = 0.01
    lr_decay: float = 0.98
    epochs: int = 100
    finetune_epochs: int = 10
    finetune_lr: float = 0.001
    batch_size: int = 256
    bptt_len: int = 80
    dropout_rate: float = 0.2
    alpha: float = 0.0
    beta: float = 0.0
    seed: int = 0
    grad_clip: float = 5.0
    audio_hidden: tuple[int, ...] = (100, 100)
    visual_hidden: tuple[int, ...] = (120, 120)
    early_hidden: tuple[int, ...] = (150, 150)

    def __post_init__(self):
        if self.lr_init <= 0 or self.finetune_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0,1], got {self.lr_decay}")
        if self.batch_size < 1 or self.bptt_len < 1:
            raise ValueError("batch_size and bptt_len must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")

    @classmethod
    def for_target(cls, target: str, **overrides) -> "TrainConfig":
        """Per-target gate-loss weights: zero for arousal, 0.04/0.02 for valence."""
        weights = {"arousal": (0.0, 0.0), "valence": (0.04, 0.02)}[target]
        overrides.setdefault("alpha", weights[0])
        overrides.setdefault("beta", weights[1])
        return cls(**overrides)


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    dev_cccs: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "dev_ccc", "lr"])
            for e, (loss, dev, lr) in enumerate(zip(self.losses, self.dev_cccs, self.lrs)):
                writer.writerow([e, f"{loss:.17g}", f"{dev:.17g}", f"{lr:.17g}"])


@dataclass
class DataSplit:
    train: list[Recording]
    dev: list[Recording]


# ---------------------------------------------------------------------------
# SGD

def _blocks_of(obj) -> list[tuple[str, np.ndarray]]:
    if isinstance(obj, np.ndarray):
        return [("param", obj)]
    if isinstance(obj, (list, tuple)) and all(isinstance(a, np.ndarray) for a in obj):
        return [(f"param{i}", a) for i, a in enumerate(obj)]
    return fusion_param_blocks(obj)


def sgd_step(params, grads, lr: float, grad_clip: float | None = None):
    """Global-norm clipping followed by an in-place descent step."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    p_blocks = _blocks_of(params)
    g_blocks = _blocks_of(grads)
    if len(p_blocks) != len(g_blocks):
        raise DimensionError("parameter and gradient structures differ")
    sq = 0.0
    for (pn, p), (gn, g) in zip(p_blocks, g_blocks):
        if p.shape != g.shape:
            raise DimensionError(f"block {pn}: shape {p.shape} vs gradient {g.shape}")
        sq += float(np.sum(g * g))
    norm = math.sqrt(sq)
    scale = 1.0
    if grad_clip is not None and math.isfinite(grad_clip) and norm > grad_clip:
        scale = grad_clip / norm
    for (_, p), (_, g) in zip(p_blocks, g_blocks):
        p -= lr * scale * g
    return params


def schedule_lr(lr_init: float, lr_decay: float, epoch: int) -> float:
    return lr_init * lr_decay**epoch


# ---------------------------------------------------------------------------
# Prediction through the full postprocessing path

def _group_by_length(items: list[int], lengths: list[int]) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for idx, length in zip(items, lengths):
        groups.setdefault(length, []).append(idx)
    return list(groups.values())


def predict_unimodal(
    stack: LstmStack,
    recordings: list[Recording],
    stats: NormStats,
    modality: str,
    delay: DelaySpec,
    smooth_window: int,
) -> list[np.ndarray]:
    """Full-length smoothed predictions for each recording."""
    feats = [getattr(r, modality) for r in recordings]
    preds_out: list[np.ndarray | None] = [None] * len(recordings)
    cut = delay.n_frames
    lengths = [len(f) - cut for f in feats]
    for group in _group_by_length(list(range(len(recordings))), lengths):
        xs = np.stack(
            [apply_norm(stats, feats[i][: lengths[i]]) for i in group], axis=1
        )
        preds, _, _ = stack_forward(stack, xs, "infer")
        for j, i in enumerate(group):
            up = unshift_predictions(preds[:, j], delay, len(feats[i]))
            preds_out[i] = smooth(up, smooth_window)
    return preds_out


def predict_fusion(
    model: FusionModel,
    recordings: list[Recording],
    stats_a: NormStats,
    stats_v: NormStats,
    delay: DelaySpec,
    smooth_window: int,
) -> tuple[list[np.ndarray], list[np.ndarray] | None]:
    """Smoothed full-length predictions (and lambda traces for the CA variant)."""
    cut = delay.n_frames
    lengths = [r.n_frames - cut for r in recordings]
    preds_out: list[np.ndarray | None] = [None] * len(recordings)
    lam_out: list[np.ndarray | None] = [None] * len(recordings)
    has_lam = isinstance(model, ConditionalAttentionFusion)
    for group in _group_by_length(list(range(len(recordings))), lengths):
        xa = np.stack([apply_norm(stats_a, recordings[i].audio[: lengths[i]]) for i in group], axis=1)
        xv = np.stack([apply_norm(stats_v, recordings[i].visual[: lengths[i]]) for i in group], axis=1)
        y_hat, lam, _ = fusion_forward(model, xa, xv, "infer")
        for j, i in enumerate(group):
            up = unshift_predictions(y_hat[:, j], delay, recordings[i].n_frames)
            preds_out[i] = smooth(up, smooth_window)
            if has_lam:
                lam_out[i] = lam[:, j]
    return preds_out, (lam_out if has_lam else None)


def pooled_ccc(preds: list[np.ndarray], recordings: list[Recording], target: str) -> float:
    """CCC over the concatenated frames of all recordings."""
    return ccc(
        np.concatenate(preds), np.concatenate([r.labels(target) for r in recordings])
    )


# ---------------------------------------------------------------------------
# Unimodal training

def _aligned_train_dicts(
    recordings: list[Recording],
    stats_a: NormStats | None,
    stats_v: NormStats | None,
    target: str,
    delay: DelaySpec,
) -> list[dict[str, np.ndarray]]:
    out = []
    for rec in recordings:
        entry = {}
        labels = rec.labels(target)
        if stats_a is not None:
            xa, ya = shift_for_delay(apply_norm(stats_a, rec.audio), labels, delay)
            entry["xa"] = xa
        if stats_v is not None:
            xv, ya = shift_for_delay(apply_norm(stats_v, rec.visual), labels, delay)
            entry["xv"] = xv
        entry["y"] = ya
        cut = len(labels) - delay.n_frames
        entry["ga"] = rec.g_a[:cut]
        entry["gv"] = rec.g_v[:cut]
        out.append(entry)
    return out


def train_unimodal(
    data: DataSplit,
    modality: str,
    target: str,
    cfg: TrainConfig,
    delay: DelaySpec = DelaySpec(20),
    smooth_window: int = 11,
) -> tuple[LstmStack, TrainHistory]:
    """Train one modality's stack with MSE over BPTT windows; return the
    development-best checkpoint."""
    if modality not in ("audio", "visual"):
        raise ValueError(f"modality must be 'audio' or 'visual', got {modality!r}")
    if not data.train:
        raise ValueError("no training recordings")
    rng = make_rng(cfg.seed)
    stats = fit_norm([getattr(r, modality) for r in data.train])
    hidden = cfg.audio_hidden if modality == "audio" else cfg.visual_hidden
    stack = init_stack(
        stats.dim, hidden, rng, dropout_rate=cfg.dropout_rate
    )
    key = "xa" if modality == "audio" else "xv"
    aligned = _aligned_train_dicts(
        data.train,
        stats if modality == "audio" else None,
        stats if modality == "visual" else None,
        target, delay,
    )

    history = TrainHistory()
    best = copy.deepcopy(stack)
    best_ccc = -math.inf
    for epoch in range(cfg.epochs):
        lr = schedule_lr(cfg.lr_init, cfg.lr_decay, epoch)
        loss_sum, window_count = 0.0, 0.0
        for b_idx, batch in enumerate(
            make_windows(aligned, cfg.bptt_len, cfg.batch_size, rng)
        ):
            xs, y, mask = batch[key], batch["y"], batch["mask"]
            preds, _, tape = stack_forward(stack, xs, "train", rng)
            n_windows = mask.shape[1]
            batch_loss = total_loss(preds, y, None, None, 0.0, 0.0, mask=mask)
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b_idx}"
                )
            # per-window sum loss, averaged over the mini-batch
            grads, _ = stack_backward(stack, tape, (preds - y) * mask / n_windows)
            sgd_step(stack, grads, lr, cfg.grad_clip)
            loss_sum += batch_loss
            window_count += n_windows
        dev = _dev_score_unimodal(stack, data.dev, stats, modality, target, delay, smooth_window)
        history.losses.append(loss_sum / max(window_count, 1.0))
        history.dev_cccs.append(dev)
        history.lrs.append(lr)
        if not data.dev or dev > best_ccc:
            best_ccc = dev if data.dev else best_ccc
            best = copy.deepcopy(stack)
            history.best_epoch = epoch
    return best, history


def _dev_score_unimodal(stack, dev, stats, modality, target, delay, smooth_window) -> float:
    if not dev:
        return math.nan
    preds = predict_unimodal(stack, dev, stats, modality, delay, smooth_window)
    return pooled_ccc(preds, dev, target)


# ---------------------------------------------------------------------------
# Fusion training

def train_fusion(
    variant: str,
    pre_audio: LstmStack | None,
    pre_visual: LstmStack | None,
    data: DataSplit,
    target: str,
    cfg: TrainConfig,
    delay: DelaySpec = DelaySpec(20),
    smooth_window: int = 11,
    use_gate_bias: bool = True,
) -> tuple[FusionModel, TrainHistory]:
    """Fine-tune a fusion model (or train early fusion from scratch)."""
    if not data.train:
        raise ValueError("no training recordings")
    rng = make_rng(cfg.seed)
    stats_a = fit_norm([r.audio for r in data.train])
    stats_v = fit_norm([r.visual for r in data.train])

    if variant == "early":
        model = make_early_fusion(
            stats_a.dim, stats_v.dim, cfg.early_hidden, rng, dropout_rate=cfg.dropout_rate
        )
        epochs, lr0 = cfg.epochs, cfg.lr_init
    else:
        if pre_audio is None or pre_visual is None:
            raise ValueError(f"variant {variant!r} needs pretrained unimodal stacks")
        if variant == "model":
            model = make_model_level(pre_audio, pre_visual)
        elif variant == "late":
            model = make_late_fusion(pre_audio, pre_visual)
        elif variant == "ca":
            model = make_conditional_attention(pre_audio, pre_visual, use_bias=use_gate_bias)
        else:
            raise ValueError(f"unknown fusion variant {variant!r}")
        epochs, lr0 = cfg.finetune_epochs, cfg.finetune_lr

    aligned = _aligned_train_dicts(data.train, stats_a, stats_v, target, delay)
    is_ca = isinstance(model, ConditionalAttentionFusion)

    history = TrainHistory()
    best = copy.deepcopy(model)
    best_ccc = -math.inf
    for epoch in range(epochs):
        lr = schedule_lr(lr0, cfg.lr_decay, epoch)
        loss_sum, window_count = 0.0, 0.0
        for b_idx, batch in enumerate(
            make_windows(aligned, cfg.bptt_len, cfg.batch_size, rng)
        ):
            xa, xv, y, mask = batch["xa"], batch["xv"], batch["y"], batch["mask"]
            signals = ReliabilitySignals(batch["ga"], batch["gv"]) if is_ca else None
            y_hat, lam, tapes = fusion_forward(model, xa, xv, "train", rng)
            n_windows = mask.shape[1]
            batch_loss = total_loss(
                y_hat, y, lam, signals, cfg.alpha, cfg.beta, mask=mask
            )
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b_idx}"
                )
            grads = fusion_backward(
                model, tapes, y_hat, y, lam, signals, cfg.alpha, cfg.beta,
                mask=mask, scale=1.0 / n_windows,
            )
            sgd_step(model, grads, lr, cfg.grad_clip)
            loss_sum += batch_loss
            window_count += n_windows
        dev = _dev_score_fusion(model, data.dev, stats_a, stats_v, target, delay, smooth_window)
        history.losses.append(loss_sum / max(window_count, 1.0))
        history.dev_cccs.append(dev)
        history.lrs.append(lr)
        if not data.dev or dev > best_ccc:
            best_ccc = dev if data.dev else best_ccc
            best = copy.deepcopy(model)
            history.best_epoch = epoch
    return best, history


def _dev_score_fusion(model, dev, stats_a, stats_v, target, delay, smooth_window) -> float:
    if not dev:
        return math.nan
    preds, _ = predict_fusion(model, dev, stats_a, stats_v, delay, smooth_window)
    return pooled_ccc(preds, dev, target)


# ---------------------------------------------------------------------------
# Gradient verification

@dataclass
class GradSample:
    """Short bimodal probe sequence with targets and reliability signals."""

    seq_a: np.ndarray
    seq_v: np.ndarray | None
    y: np.ndarray
    g_a: np.ndarray | None = None
    g_v: np.ndarray | None = None


def make_grad_sample(rng, steps: int, audio_dim: int, visual_dim: int | None) -> GradSample:
    seq_a = rng.standard_normal((steps, audio_dim))
    seq_v = rng.standard_normal((steps, visual_dim)) if visual_dim else None
    y = rng.uniform(-1.0, 1.0, steps)
    g_a = rng.uniform(0.0, 1.0, steps)
    g_v = rng.integers(0, 2, steps).astype(np.float64)
    return GradSample(seq_a, seq_v, y, g_a, g_v)


@dataclass
class BlockCheck:
    max_rel_err: float
    argmax_index: int


@dataclass
class GradCheckReport:
    blocks: dict[str, BlockCheck]
    tol: float
    passed: bool
    worst_block: str | None

    @property
    def max_rel_err(self) -> float:
        if not self.blocks:
            return 0.0
        return max(b.max_rel_err for b in self.blocks.values())


def _loss_of(model, sample: GradSample, alpha: float, beta: float) -> float:
    if isinstance(model, LstmStack):
        preds, _, _ = stack_forward(model, sample.seq_a, "infer")
        return total_loss(preds, sample.y, None, None, 0.0, 0.0)
    y_hat, lam, _ = fusion_forward(model, sample.seq_a, sample.seq_v, "infer")
    signals = ReliabilitySignals(sample.g_a, sample.g_v)
    return total_loss(y_hat, sample.y, lam, signals, alpha, beta)


def _analytic_grads(model, sample: GradSample, alpha: float, beta: float):
    if isinstance(model, LstmStack):
        preds, _, tape = stack_forward(model, sample.seq_a, "infer")
        grads, _ = stack_backward(model, tape, preds - sample.y)
        return grads
    y_hat, lam, tapes = fusion_forward(model, sample.seq_a, sample.seq_v, "infer")
    signals = ReliabilitySignals(sample.g_a, sample.g_v)
    return fusion_backward(model, tapes, y_hat, sample.y, lam, signals, alpha, beta)


def grad_check(
    model,
    sample: GradSample,
    eps: float = 1e-5,
    tol: float = 1e-4,
    alpha: float = 0.0,
    beta: float = 0.0,
    fault_block: str | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Relative error per entry is |a - n| / max(|a|, |n|, 1e-8). ``fault_block``
    deliberately corrupts one analytic entry (for harness self-tests).
    """
    analytic = _analytic_grads(model, sample, alpha, beta)
    p_blocks = fusion_param_blocks(model)
    g_blocks = dict(fusion_param_blocks(analytic))
    if fault_block is not None:
        if fault_block not in g_blocks:
            raise KeyError(f"unknown block {fault_block!r}")
        g = g_blocks[fault_block]
        idx = int(np.argmax(np.abs(g))) if g.size else 0
        if g.flat[idx] != 0.0:
            g.flat[idx] *= 2.0
        else:
            g.flat[idx] = 1.0

    blocks: dict[str, BlockCheck] = {}
    for name, param in p_blocks:
        grad = g_blocks[name]
        worst, worst_idx = 0.0, 0
        flat = param.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = _loss_of(model, sample, alpha, beta)
            flat[i] = orig - eps
            lm = _loss_of(model, sample, alpha, beta)
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise TrainingDivergedError(
                    f"non-finite loss probing block {name!r} entry {i}"
                )
            numeric = (lp - lm) / (2.0 * eps)
            a = grad.flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst, worst_idx = rel, i
        blocks[name] = BlockCheck(max_rel_err=worst, argmax_index=worst_idx)

    worst_block = max(blocks, key=lambda k: blocks[k].max_rel_err) if blocks else None
    passed = all(b.max_rel_err < tol for b in blocks.values())
    return GradCheckReport(blocks=blocks, tol=tol, passed=passed, worst_block=worst_block)
