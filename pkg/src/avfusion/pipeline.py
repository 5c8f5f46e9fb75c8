"""Feature preprocessing, prediction postprocessing, and evaluation metrics.

Conventions: feature normalization statistics come from the training split
only; annotation delay compensation drops the first N labels and last N
feature frames during training and shifts predictions back by N (zero-filled
head) at evaluation time; predictions are smoothed with a binomial kernel.
Metric moments are population (1/T) moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSeriesError, DimensionError
from .numeric import binomial_kernel

ENERGY_COLUMN = 0  # loudness/energy column of the audio feature block


@dataclass
class NormStats:
    """Per-dimension min/max observed on the training split."""

    lo: np.ndarray
    hi: np.ndarray

    @property
    def dim(self) -> int:
        return self.lo.shape[0]


@dataclass
class DelaySpec:
    """Annotation reaction latency in frames."""

    n_frames: int = 20

    def __post_init__(self):
        if self.n_frames < 0:
            raise ValueError(f"delay must be >= 0, got {self.n_frames}")


@dataclass
class MetricsReport:
    rmse: float
    pcc: float
    ccc: float


def fit_norm(features: list[np.ndarray] | np.ndarray) -> NormStats:
    """Column-wise min/max over one array or a list of (T, D) arrays."""
    if isinstance(features, np.ndarray):
        features = [features]
    if not features:
        raise DimensionError("fit_norm needs at least one array")
    dim = features[0].shape[1]
    lo = np.full(dim, np.inf)
    hi = np.full(dim, -np.inf)
    for arr in features:
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise DimensionError(f"expected (T, {dim}) arrays, got {arr.shape}")
        lo = np.minimum(lo, arr.min(axis=0))
        hi = np.maximum(hi, arr.max(axis=0))
    return NormStats(lo=lo, hi=hi)


def apply_norm(stats: NormStats, features: np.ndarray) -> np.ndarray:
    """Map into [-1, 1]; constant training dimensions go to 0; clip outside."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != stats.dim:
        raise DimensionError(f"feature dim {features.shape[-1]} does not match stats {stats.dim}")
    span = stats.hi - stats.lo
    safe = np.where(span > 0, span, 1.0)
    out = 2.0 * (features - stats.lo) / safe - 1.0
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, -1.0, 1.0)


def shift_for_delay(
    features: np.ndarray, labels: np.ndarray, spec: DelaySpec
) -> tuple[np.ndarray, np.ndarray]:
    """Drop the first N labels and last N feature frames."""
    n = spec.n_frames
    t = len(labels)
    if len(features) != t:
        raise DimensionError(f"features ({len(features)}) and labels ({t}) differ in length")
    if t <= n:
        raise DimensionError(f"sequence length {t} must exceed delay {n}")
    if n == 0:
        return features, labels
    return features[: t - n], labels[n:]


def unshift_predictions(preds: np.ndarray, spec: DelaySpec, original_len: int) -> np.ndarray:
    """Shift predictions back by N frames, zero-filling the first N."""
    preds = np.asarray(preds, dtype=np.float64)
    n = spec.n_frames
    if len(preds) != original_len - n:
        raise DimensionError(
            f"expected {original_len - n} predictions for length {original_len} "
            f"with delay {n}, got {len(preds)}"
        )
    out = np.zeros(original_len)
    out[n:] = preds
    return out


def smooth(preds: np.ndarray, window: int) -> np.ndarray:
    """Binomial-kernel smoothing; edge taps are renormalized, not zero-padded."""
    preds = np.asarray(preds, dtype=np.float64)
    kernel = binomial_kernel(window)
    if window == 1 or len(preds) == 0:
        return preds.copy()
    num = np.convolve(preds, kernel, mode="same")
    den = np.convolve(np.ones_like(preds), kernel, mode="same")
    return num / den


def ccc(pred: np.ndarray, truth: np.ndarray) -> float:
    """Concordance correlation: 2*cov / (var_p + var_t + (mean_p - mean_t)^2)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DimensionError(f"ccc needs equal-length 1-D inputs, got {pred.shape}, {truth.shape}")
    if len(pred) < 2:
        raise DimensionError("ccc needs at least 2 samples")
    mp, mt = pred.mean(), truth.mean()
    vp, vt = pred.var(), truth.var()
    cov = ((pred - mp) * (truth - mt)).mean()
    den = vp + vt + (mp - mt) ** 2
    if den == 0.0:
        return 0.0
    return float(2.0 * cov / den)


def pcc(pred: np.ndarray, truth: np.ndarray) -> float:
    """Pearson correlation; rejects constant inputs instead of returning NaN."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DimensionError(f"pcc needs equal-length 1-D inputs, got {pred.shape}, {truth.shape}")
    if len(pred) < 2:
        raise DimensionError("pcc needs at least 2 samples")
    vp, vt = pred.var(), truth.var()
    if vp == 0.0 or vt == 0.0:
        raise DegenerateSeriesError("pcc is undefined for a constant series")
    cov = ((pred - pred.mean()) * (truth - truth.mean())).mean()
    return float(cov / np.sqrt(vp * vt))


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"rmse needs equal shapes, got {pred.shape}, {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def evaluate(pred: np.ndarray, truth: np.ndarray) -> MetricsReport:
    return MetricsReport(rmse=rmse(pred, truth), pcc=pcc(pred, truth), ccc=ccc(pred, truth))


def energy_to_ga(energy: np.ndarray, train_lo: float, train_hi: float) -> np.ndarray:
    """Scale raw acoustic energy into [0, 1] with training-split min/max."""
    energy = np.asarray(energy, dtype=np.float64)
    span = train_hi - train_lo
    if span <= 0:
        return np.zeros_like(energy)
    return np.clip((energy - train_lo) / span, 0.0, 1.0)
