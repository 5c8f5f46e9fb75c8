"""Audio-visual fusion strategies over unimodal LSTM stacks.

Four variants:

* early   -- one stack over concatenated feature vectors
* model   -- two stacks, joint linear head over concatenated hidden states
* late    -- two stacks, affine frame-wise mix of the two predictions
* ca      -- conditional attention: per-frame convex blend
             y_t = lam_t * f_audio(t) + (1 - lam_t) * f_visual(t), with
             lam_t = sigmoid(w_g . [h_a | h_v | x_a | x_v] + b_g)

The attention weight can additionally be supervised by reliability signals
(scaled acoustic energy g_a, face-detected flag g_v) through a quadratic
penalty added to the squared prediction error:

    loss_gate(t) = 0.5 * (alpha * (g_a - lam)^2 + beta * (g_v - (1 - lam))^2)
    loss        = sum_t 0.5 * (y_hat - y)^2 + loss_gate(t)
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, DimensionError
from .lstm import (
    CHECKPOINT_MAGIC,
    BpttTape,
    LstmStack,
    _Reader,
    init_stack,
    load_stack_bytes,
    param_blocks,
    save_stack_bytes,
    stack_backward,
    stack_forward,
    zeros_like_stack,
)
from .numeric import RngState, sigmoid


@dataclass
class GateParams:
    """Attention gate weights over the concatenation [h_a | h_v | x_a | x_v]."""

    w_g: np.ndarray
    b_g: np.ndarray  # shape (1,); stays zero when use_bias is False
    use_bias: bool = True


@dataclass
class ReliabilitySignals:
    """Per-frame modality reliability: g_a in [0,1], g_v in {0,1}."""

    g_a: np.ndarray
    g_v: np.ndarray


@dataclass
class EarlyFusion:
    variant = "early"
    stack: LstmStack
    audio_dim: int
    visual_dim: int


@dataclass
class ModelLevelFusion:
    variant = "model"
    audio_stack: LstmStack
    visual_stack: LstmStack
    joint_out: np.ndarray  # (H_a + H_v,)
    joint_b: np.ndarray  # (1,)


@dataclass
class LateFusion:
    variant = "late"
    audio_stack: LstmStack
    visual_stack: LstmStack
    mix_w: np.ndarray  # (2,): audio weight, visual weight
    mix_b: np.ndarray  # (1,)


@dataclass
class ConditionalAttentionFusion:
    variant = "ca"
    audio_stack: LstmStack
    visual_stack: LstmStack
    gate: GateParams


FusionModel = EarlyFusion | ModelLevelFusion | LateFusion | ConditionalAttentionFusion

_VARIANT_TAGS = {"early": 1, "model": 2, "late": 3, "ca": 4}
_TAG_VARIANTS = {v: k for k, v in _VARIANT_TAGS.items()}


# ---------------------------------------------------------------------------
# Construction

def make_early_fusion(
    audio_dim: int,
    visual_dim: int,
    hidden_dims,
    rng: RngState,
    dropout_rate: float = 0.0,
) -> EarlyFusion:
    stack = init_stack(audio_dim + visual_dim, hidden_dims, rng, dropout_rate=dropout_rate)
    return EarlyFusion(stack=stack, audio_dim=audio_dim, visual_dim=visual_dim)


def make_model_level(audio_stack: LstmStack, visual_stack: LstmStack) -> ModelLevelFusion:
    """Joint head initialised to reproduce the mean of the two unimodal heads."""
    audio_stack = copy.deepcopy(audio_stack)
    visual_stack = copy.deepcopy(visual_stack)
    joint_out = 0.5 * np.concatenate([audio_stack.out_w, visual_stack.out_w])
    joint_b = 0.5 * (audio_stack.out_b + visual_stack.out_b)
    return ModelLevelFusion(audio_stack, visual_stack, joint_out, joint_b)


def make_late_fusion(audio_stack: LstmStack, visual_stack: LstmStack) -> LateFusion:
    return LateFusion(
        copy.deepcopy(audio_stack), copy.deepcopy(visual_stack),
        mix_w=np.array([0.5, 0.5]), mix_b=np.zeros(1),
    )


def make_conditional_attention(
    audio_stack: LstmStack, visual_stack: LstmStack, use_bias: bool = True
) -> ConditionalAttentionFusion:
    """Gate starts at zero, i.e. a fixed 0.5 blend of the pretrained stacks."""
    audio_stack = copy.deepcopy(audio_stack)
    visual_stack = copy.deepcopy(visual_stack)
    dim = (
        audio_stack.hidden_dims[-1] + visual_stack.hidden_dims[-1]
        + audio_stack.input_dim + visual_stack.input_dim
    )
    gate = GateParams(w_g=np.zeros(dim), b_g=np.zeros(1), use_bias=use_bias)
    return ConditionalAttentionFusion(audio_stack, visual_stack, gate)


def zeros_like_fusion(model: FusionModel) -> FusionModel:
    if isinstance(model, EarlyFusion):
        return EarlyFusion(zeros_like_stack(model.stack), model.audio_dim, model.visual_dim)
    if isinstance(model, ModelLevelFusion):
        return ModelLevelFusion(
            zeros_like_stack(model.audio_stack), zeros_like_stack(model.visual_stack),
            np.zeros_like(model.joint_out), np.zeros_like(model.joint_b),
        )
    if isinstance(model, LateFusion):
        return LateFusion(
            zeros_like_stack(model.audio_stack), zeros_like_stack(model.visual_stack),
            np.zeros_like(model.mix_w), np.zeros_like(model.mix_b),
        )
    if isinstance(model, ConditionalAttentionFusion):
        gate = GateParams(
            np.zeros_like(model.gate.w_g), np.zeros_like(model.gate.b_g), model.gate.use_bias
        )
        return ConditionalAttentionFusion(
            zeros_like_stack(model.audio_stack), zeros_like_stack(model.visual_stack), gate
        )
    raise TypeError(f"not a fusion model: {type(model)!r}")


def fusion_param_blocks(model) -> list[tuple[str, np.ndarray]]:
    """Named trainable arrays for any stack or fusion variant."""
    if isinstance(model, LstmStack):
        return param_blocks(model)
    if isinstance(model, EarlyFusion):
        return param_blocks(model.stack, "stack.")
    if isinstance(model, ModelLevelFusion):
        return (
            param_blocks(model.audio_stack, "audio.")
            + param_blocks(model.visual_stack, "visual.")
            + [("joint_out", model.joint_out), ("joint_b", model.joint_b)]
        )
    if isinstance(model, LateFusion):
        return (
            param_blocks(model.audio_stack, "audio.")
            + param_blocks(model.visual_stack, "visual.")
            + [("mix_w", model.mix_w), ("mix_b", model.mix_b)]
        )
    if isinstance(model, ConditionalAttentionFusion):
        blocks = (
            param_blocks(model.audio_stack, "audio.")
            + param_blocks(model.visual_stack, "visual.")
            + [("gate.w_g", model.gate.w_g)]
        )
        if model.gate.use_bias:
            blocks.append(("gate.b_g", model.gate.b_g))
        return blocks
    raise TypeError(f"not a fusion model or stack: {type(model)!r}")


# ---------------------------------------------------------------------------
# Gate and losses

def attention_gate(
    gate: GateParams, h_a: np.ndarray, h_v: np.ndarray, x_a: np.ndarray, x_v: np.ndarray
) -> float:
    """Attention weight for one frame: sigmoid(w_g . concat + b_g)."""
    concat = np.concatenate([
        np.asarray(h_a, dtype=np.float64).ravel(),
        np.asarray(h_v, dtype=np.float64).ravel(),
        np.asarray(x_a, dtype=np.float64).ravel(),
        np.asarray(x_v, dtype=np.float64).ravel(),
    ])
    if concat.shape != gate.w_g.shape:
        raise DimensionError(
            f"gate expects concat length {gate.w_g.shape[0]}, got {concat.shape[0]}"
        )
    return float(sigmoid(concat @ gate.w_g + gate.b_g[0]))


def gate_loss(lam, g_a, g_v, alpha: float, beta: float):
    """Quadratic pull of lam toward g_a and of (1 - lam) toward g_v."""
    if alpha < 0 or beta < 0:
        raise ValueError(f"alpha and beta must be >= 0, got {alpha}, {beta}")
    lam = np.asarray(lam, dtype=np.float64)
    g_a = np.asarray(g_a, dtype=np.float64)
    g_v = np.asarray(g_v, dtype=np.float64)
    out = 0.5 * (alpha * (g_a - lam) ** 2 + beta * (g_v - (1.0 - lam)) ** 2)
    return float(out) if out.ndim == 0 else out


def gate_loss_grad(lam, g_a, g_v, alpha: float, beta: float):
    """Closed-form d(gate_loss)/d(lam) = beta*g_v - alpha*g_a - beta + (alpha+beta)*lam."""
    if alpha < 0 or beta < 0:
        raise ValueError(f"alpha and beta must be >= 0, got {alpha}, {beta}")
    lam = np.asarray(lam, dtype=np.float64)
    g_a = np.asarray(g_a, dtype=np.float64)
    g_v = np.asarray(g_v, dtype=np.float64)
    out = beta * g_v - alpha * g_a - beta + (alpha + beta) * lam
    return float(out) if out.ndim == 0 else out


def total_loss(
    y_hat: np.ndarray,
    y: np.ndarray,
    lam_seq: np.ndarray | None,
    signals: ReliabilitySignals | None,
    alpha: float,
    beta: float,
    mask: np.ndarray | None = None,
) -> float:
    """Sum over frames of squared error plus the gate penalty.

    ``lam_seq``/``signals`` may be None for variants without a gate. ``mask``
    (same shape, 0/1) restricts the sum to unmasked frames.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise DimensionError(f"prediction/label shapes differ: {y_hat.shape} vs {y.shape}")
    with np.errstate(over="ignore", invalid="ignore"):  # divergence caught by caller
        per_frame = 0.5 * (y_hat - y) ** 2
        if lam_seq is not None and signals is not None and (alpha > 0 or beta > 0):
            lam_seq = np.asarray(lam_seq, dtype=np.float64)
            if lam_seq.shape != y.shape:
                raise DimensionError(f"lambda shape {lam_seq.shape} does not match {y.shape}")
            if np.shape(signals.g_a) != y.shape or np.shape(signals.g_v) != y.shape:
                raise DimensionError("reliability signal shapes do not match the sequence")
            per_frame = per_frame + gate_loss(lam_seq, signals.g_a, signals.g_v, alpha, beta)
        if mask is not None:
            per_frame = per_frame * mask
        return float(per_frame.sum())


# ---------------------------------------------------------------------------
# Forward passes

@dataclass
class CaTapes:
    audio: BpttTape
    visual: BpttTape
    preds_a: np.ndarray
    preds_v: np.ndarray
    concat: np.ndarray  # (T, B, H_a + H_v + D_a + D_v)
    lam: np.ndarray
    single: bool


@dataclass
class TwoStackTapes:
    audio: BpttTape
    visual: BpttTape
    preds_a: np.ndarray
    preds_v: np.ndarray
    h_a: np.ndarray
    h_v: np.ndarray
    single: bool


def _promote_pair(seq_a, seq_v):
    seq_a = np.asarray(seq_a, dtype=np.float64)
    seq_v = np.asarray(seq_v, dtype=np.float64)
    if seq_a.ndim != seq_v.ndim:
        raise DimensionError("audio and visual sequences must have the same layout")
    single = seq_a.ndim == 2
    if single:
        seq_a, seq_v = seq_a[:, None, :], seq_v[:, None, :]
    if seq_a.shape[:2] != seq_v.shape[:2]:
        raise DimensionError(
            f"sequence lengths differ: audio {seq_a.shape[:2]}, visual {seq_v.shape[:2]}"
        )
    return seq_a, seq_v, single


def ca_forward(
    model: ConditionalAttentionFusion,
    seq_a: np.ndarray,
    seq_v: np.ndarray,
    mode: str = "infer",
    rng: RngState | None = None,
) -> tuple[np.ndarray, np.ndarray, CaTapes]:
    """Blend the two unimodal predictions with per-frame attention weights."""
    xs_a, xs_v, single = _promote_pair(seq_a, seq_v)
    preds_a, h_a, tape_a = stack_forward(model.audio_stack, xs_a, mode, rng)
    preds_v, h_v, tape_v = stack_forward(model.visual_stack, xs_v, mode, rng)
    concat = np.concatenate([h_a, h_v, xs_a, xs_v], axis=2)
    if concat.shape[2] != model.gate.w_g.shape[0]:
        raise DimensionError(
            f"gate expects concat length {model.gate.w_g.shape[0]}, got {concat.shape[2]}"
        )
    lam = sigmoid(concat @ model.gate.w_g + model.gate.b_g[0])
    y_hat = lam * preds_a + (1.0 - lam) * preds_v
    tapes = CaTapes(tape_a, tape_v, preds_a, preds_v, concat, lam, single)
    if single:
        return y_hat[:, 0], lam[:, 0], tapes
    return y_hat, lam, tapes


def early_forward(
    model: EarlyFusion,
    seq_a: np.ndarray,
    seq_v: np.ndarray,
    mode: str = "infer",
    rng: RngState | None = None,
) -> tuple[np.ndarray, BpttTape]:
    seq_a = np.asarray(seq_a, dtype=np.float64)
    seq_v = np.asarray(seq_v, dtype=np.float64)
    if seq_a.ndim != seq_v.ndim or seq_a.shape[:-1] != seq_v.shape[:-1]:
        raise DimensionError(
            f"audio/visual layouts differ: {seq_a.shape} vs {seq_v.shape}"
        )
    xs = np.concatenate([seq_a, seq_v], axis=-1)
    preds, _, tape = stack_forward(model.stack, xs, mode, rng)
    return preds, tape


def model_level_forward(
    model: ModelLevelFusion,
    seq_a: np.ndarray,
    seq_v: np.ndarray,
    mode: str = "infer",
    rng: RngState | None = None,
) -> tuple[np.ndarray, TwoStackTapes]:
    xs_a, xs_v, single = _promote_pair(seq_a, seq_v)
    preds_a, h_a, tape_a = stack_forward(model.audio_stack, xs_a, mode, rng)
    preds_v, h_v, tape_v = stack_forward(model.visual_stack, xs_v, mode, rng)
    joint_h = np.concatenate([h_a, h_v], axis=2)
    y_hat = joint_h @ model.joint_out + model.joint_b[0]
    tapes = TwoStackTapes(tape_a, tape_v, preds_a, preds_v, h_a, h_v, single)
    if single:
        return y_hat[:, 0], tapes
    return y_hat, tapes


def late_forward(
    model: LateFusion,
    seq_a: np.ndarray,
    seq_v: np.ndarray,
    mode: str = "infer",
    rng: RngState | None = None,
) -> tuple[np.ndarray, TwoStackTapes]:
    xs_a, xs_v, single = _promote_pair(seq_a, seq_v)
    preds_a, h_a, tape_a = stack_forward(model.audio_stack, xs_a, mode, rng)
    preds_v, h_v, tape_v = stack_forward(model.visual_stack, xs_v, mode, rng)
    y_hat = model.mix_w[0] * preds_a + model.mix_w[1] * preds_v + model.mix_b[0]
    tapes = TwoStackTapes(tape_a, tape_v, preds_a, preds_v, h_a, h_v, single)
    if single:
        return y_hat[:, 0], tapes
    return y_hat, tapes


# ---------------------------------------------------------------------------
# Backward passes

def _promote_scalar_seq(arr, single: bool) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if single and arr.ndim == 1:
        return arr[:, None]
    return arr


def ca_backward(
    model: ConditionalAttentionFusion,
    tapes: CaTapes,
    y_hat: np.ndarray,
    y: np.ndarray,
    lam_seq: np.ndarray,
    signals: ReliabilitySignals,
    alpha: float,
    beta: float,
    mask: np.ndarray | None = None,
    scale: float = 1.0,
) -> ConditionalAttentionFusion:
    """Gradient of the total loss for every stack and gate parameter.

    The attention weight receives two contributions: the gate penalty's
    closed-form derivative and the prediction-blend path
    (y_hat - y) * (f_audio - f_visual). Input-feature gradients exist but
    are discarded; inputs are data. ``scale`` multiplies the whole loss
    (used for per-frame averaging in training).
    """
    y_hat = _promote_scalar_seq(y_hat, tapes.single)
    y = _promote_scalar_seq(y, tapes.single)
    lam = _promote_scalar_seq(lam_seq, tapes.single)
    g_a = _promote_scalar_seq(signals.g_a, tapes.single)
    g_v = _promote_scalar_seq(signals.g_v, tapes.single)

    d_yhat = (y_hat - y) * scale
    d_lam = gate_loss_grad(lam, g_a, g_v, alpha, beta) * scale
    if mask is not None:
        mask = _promote_scalar_seq(mask, tapes.single)
        d_yhat = d_yhat * mask
        d_lam = d_lam * mask
    d_lam = d_lam + d_yhat * (tapes.preds_a - tapes.preds_v)
    dz = d_lam * lam * (1.0 - lam)

    grads = zeros_like_fusion(model)
    tb = dz.shape[0] * dz.shape[1]
    grads.gate.w_g[:] = tapes.concat.reshape(tb, -1).T @ dz.reshape(tb)
    if model.gate.use_bias:
        grads.gate.b_g[0] = dz.sum()

    h_a_dim = model.audio_stack.hidden_dims[-1]
    h_v_dim = model.visual_stack.hidden_dims[-1]
    w_ha = model.gate.w_g[:h_a_dim]
    w_hv = model.gate.w_g[h_a_dim : h_a_dim + h_v_dim]
    extra_a = dz[:, :, None] * w_ha
    extra_v = dz[:, :, None] * w_hv

    ga, _ = stack_backward(model.audio_stack, tapes.audio, d_yhat * lam, extra_a)
    gv, _ = stack_backward(model.visual_stack, tapes.visual, d_yhat * (1.0 - lam), extra_v)
    grads.audio_stack = ga
    grads.visual_stack = gv
    return grads


def early_backward(
    model: EarlyFusion,
    tape: BpttTape,
    y_hat: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray | None = None,
    scale: float = 1.0,
) -> EarlyFusion:
    d_yhat = (np.asarray(y_hat, dtype=np.float64) - np.asarray(y, dtype=np.float64)) * scale
    if mask is not None:
        d_yhat = d_yhat * mask
    grads = zeros_like_fusion(model)
    grads.stack, _ = stack_backward(model.stack, tape, d_yhat)
    return grads


def model_level_backward(
    model: ModelLevelFusion,
    tapes: TwoStackTapes,
    y_hat: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray | None = None,
    scale: float = 1.0,
) -> ModelLevelFusion:
    y_hat = _promote_scalar_seq(y_hat, tapes.single)
    y = _promote_scalar_seq(y, tapes.single)
    d_yhat = (y_hat - y) * scale
    if mask is not None:
        d_yhat = d_yhat * _promote_scalar_seq(mask, tapes.single)

    grads = zeros_like_fusion(model)
    joint_h = np.concatenate([tapes.h_a, tapes.h_v], axis=2)
    tb = d_yhat.shape[0] * d_yhat.shape[1]
    grads.joint_out[:] = joint_h.reshape(tb, -1).T @ d_yhat.reshape(tb)
    grads.joint_b[0] = d_yhat.sum()

    h_a_dim = model.audio_stack.hidden_dims[-1]
    extra_a = d_yhat[:, :, None] * model.joint_out[:h_a_dim]
    extra_v = d_yhat[:, :, None] * model.joint_out[h_a_dim:]
    zeros = np.zeros_like(d_yhat)
    grads.audio_stack, _ = stack_backward(model.audio_stack, tapes.audio, zeros, extra_a)
    grads.visual_stack, _ = stack_backward(model.visual_stack, tapes.visual, zeros, extra_v)
    return grads


def late_backward(
    model: LateFusion,
    tapes: TwoStackTapes,
    y_hat: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray | None = None,
    scale: float = 1.0,
) -> LateFusion:
    y_hat = _promote_scalar_seq(y_hat, tapes.single)
    y = _promote_scalar_seq(y, tapes.single)
    d_yhat = (y_hat - y) * scale
    if mask is not None:
        d_yhat = d_yhat * _promote_scalar_seq(mask, tapes.single)

    grads = zeros_like_fusion(model)
    grads.mix_w[0] = float((d_yhat * tapes.preds_a).sum())
    grads.mix_w[1] = float((d_yhat * tapes.preds_v).sum())
    grads.mix_b[0] = d_yhat.sum()
    grads.audio_stack, _ = stack_backward(
        model.audio_stack, tapes.audio, d_yhat * model.mix_w[0]
    )
    grads.visual_stack, _ = stack_backward(
        model.visual_stack, tapes.visual, d_yhat * model.mix_w[1]
    )
    return grads


# ---------------------------------------------------------------------------
# Variant dispatch (used by the trainer and the gradient checker)

def fusion_forward(model: FusionModel, seq_a, seq_v, mode="infer", rng=None):
    """Uniform forward: returns (y_hat, lam_or_None, tapes)."""
    if isinstance(model, ConditionalAttentionFusion):
        y_hat, lam, tapes = ca_forward(model, seq_a, seq_v, mode, rng)
        return y_hat, lam, tapes
    if isinstance(model, EarlyFusion):
        y_hat, tape = early_forward(model, seq_a, seq_v, mode, rng)
        return y_hat, None, tape
    if isinstance(model, ModelLevelFusion):
        y_hat, tapes = model_level_forward(model, seq_a, seq_v, mode, rng)
        return y_hat, None, tapes
    if isinstance(model, LateFusion):
        y_hat, tapes = late_forward(model, seq_a, seq_v, mode, rng)
        return y_hat, None, tapes
    raise TypeError(f"not a fusion model: {type(model)!r}")


def fusion_backward(
    model: FusionModel,
    tapes,
    y_hat,
    y,
    lam_seq=None,
    signals: ReliabilitySignals | None = None,
    alpha: float = 0.0,
    beta: float = 0.0,
    mask=None,
    scale: float = 1.0,
):
    if isinstance(model, ConditionalAttentionFusion):
        if signals is None:
            raise ValueError("conditional attention backward needs reliability signals")
        return ca_backward(model, tapes, y_hat, y, lam_seq, signals, alpha, beta, mask, scale)
    if isinstance(model, EarlyFusion):
        return early_backward(model, tapes, y_hat, y, mask, scale)
    if isinstance(model, ModelLevelFusion):
        return model_level_backward(model, tapes, y_hat, y, mask, scale)
    if isinstance(model, LateFusion):
        return late_backward(model, tapes, y_hat, y, mask, scale)
    raise TypeError(f"not a fusion model: {type(model)!r}")


# ---------------------------------------------------------------------------
# Checkpoints: stack format preceded by a variant tag byte

def save_fusion(model: FusionModel, path) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<B", _VARIANT_TAGS[model.variant])]
    if isinstance(model, EarlyFusion):
        parts.append(struct.pack("<II", model.audio_dim, model.visual_dim))
        parts.append(save_stack_bytes(model.stack))
    elif isinstance(model, ModelLevelFusion):
        parts.append(save_stack_bytes(model.audio_stack))
        parts.append(save_stack_bytes(model.visual_stack))
        parts.append(struct.pack("<I", model.joint_out.shape[0]))
        parts.append(np.ascontiguousarray(model.joint_out, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(model.joint_b, dtype="<f8").tobytes())
    elif isinstance(model, LateFusion):
        parts.append(save_stack_bytes(model.audio_stack))
        parts.append(save_stack_bytes(model.visual_stack))
        parts.append(np.ascontiguousarray(model.mix_w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(model.mix_b, dtype="<f8").tobytes())
    elif isinstance(model, ConditionalAttentionFusion):
        parts.append(save_stack_bytes(model.audio_stack))
        parts.append(save_stack_bytes(model.visual_stack))
        parts.append(struct.pack("<BI", 1 if model.gate.use_bias else 0, model.gate.w_g.shape[0]))
        parts.append(np.ascontiguousarray(model.gate.w_g, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(model.gate.b_g, dtype="<f8").tobytes())
    else:
        raise TypeError(f"not a fusion model: {type(model)!r}")
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_fusion(path, expect_variant: str | None = None) -> FusionModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    reader = _Reader(buf, len(CHECKPOINT_MAGIC))
    (tag,) = reader.take("<B")
    if tag not in _TAG_VARIANTS:
        raise CheckpointError(f"unknown fusion variant tag {tag} in {path}")
    variant = _TAG_VARIANTS[tag]
    if expect_variant is not None and variant != expect_variant:
        raise CheckpointError(
            f"checkpoint {path} holds variant {variant!r}, expected {expect_variant!r}"
        )
    if variant == "early":
        audio_dim, visual_dim = reader.take("<II")
        stack = load_stack_bytes(reader)
        model = EarlyFusion(stack, audio_dim, visual_dim)
    elif variant == "model":
        audio = load_stack_bytes(reader)
        visual = load_stack_bytes(reader)
        (joint_dim,) = reader.take("<I")
        joint_out = reader.array((joint_dim,))
        joint_b = reader.array((1,))
        model = ModelLevelFusion(audio, visual, joint_out, joint_b)
    elif variant == "late":
        audio = load_stack_bytes(reader)
        visual = load_stack_bytes(reader)
        mix_w = reader.array((2,))
        mix_b = reader.array((1,))
        model = LateFusion(audio, visual, mix_w, mix_b)
    else:
        audio = load_stack_bytes(reader)
        visual = load_stack_bytes(reader)
        use_bias, gate_dim = reader.take("<BI")
        w_g = reader.array((gate_dim,))
        b_g = reader.array((1,))
        model = ConditionalAttentionFusion(
            audio, visual, GateParams(w_g, b_g, use_bias=bool(use_bias))
        )
    if reader.pos != len(buf):
        raise CheckpointError(f"trailing bytes in {path}")
    return model
