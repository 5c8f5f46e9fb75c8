"""Corpus ingestion, synthetic data generation, splits, and batch windowing.

A recording is one subject session: per-frame audio/visual feature rows at a
40 ms frame period, per-frame arousal/valence labels in [-1, 1], and two
reliability signals (scaled acoustic energy g_a, face-detected flag g_v).
The real benchmark corpus is access-restricted, so a deterministic synthetic
generator with the same file layout stands in for it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataFormatError, DimensionError
from .numeric import binomial_kernel, make_rng
from .pipeline import ENERGY_COLUMN, DelaySpec, ccc, energy_to_ga, fit_norm, apply_norm, shift_for_delay

FRAME_PERIOD_MS = 40.0
FACE_EPS = 1e-12  # zero-filled frames may pick up serialization rounding


@dataclass
class Recording:
    """Per-frame features, labels, and reliability signals for one session."""

    id: str
    audio: np.ndarray  # (T, D_a)
    visual: np.ndarray  # (T, D_v)
    arousal: np.ndarray  # (T,)
    valence: np.ndarray  # (T,)
    g_a: np.ndarray  # (T,) in [0, 1]
    g_v: np.ndarray  # (T,) in {0, 1}
    frame_period_ms: float = FRAME_PERIOD_MS

    def __post_init__(self):
        t = len(self.arousal)
        lengths = {
            "audio": len(self.audio), "visual": len(self.visual),
            "arousal": len(self.arousal), "valence": len(self.valence),
            "g_a": len(self.g_a), "g_v": len(self.g_v),
        }
        if len(set(lengths.values())) != 1:
            raise DataFormatError(f"recording {self.id}: unequal lengths {lengths}")
        if t == 0:
            raise DataFormatError(f"recording {self.id}: empty")
        for name in ("arousal", "valence"):
            vals = getattr(self, name)
            bad = np.flatnonzero((vals < -1.0) | (vals > 1.0))
            if bad.size:
                raise DataFormatError(
                    f"recording {self.id}: {name} out of [-1,1] at row {bad[0]} "
                    f"(value {vals[bad[0]]})"
                )

    @property
    def n_frames(self) -> int:
        return len(self.arousal)

    def labels(self, target: str) -> np.ndarray:
        if target == "arousal":
            return self.arousal
        if target == "valence":
            return self.valence
        raise ValueError(f"target must be 'arousal' or 'valence', got {target!r}")


@dataclass
class SplitPlan:
    train_ids: list[str]
    dev_ids: list[str]
    test_ids: list[str]
    fold_seed: int

    def __post_init__(self):
        all_ids = self.train_ids + self.dev_ids + self.test_ids
        if len(set(all_ids)) != len(all_ids):
            raise ValueError("split ids overlap")


def make_split(ids: list[str], n_dev: int, n_test: int, fold_seed: int) -> SplitPlan:
    """Random disjoint train/dev/test covering all ids."""
    if n_dev + n_test >= len(ids):
        raise ValueError(
            f"cannot hold out {n_dev}+{n_test} of {len(ids)} recordings"
        )
    order = list(make_rng(fold_seed).permutation(len(ids)))
    shuffled = [ids[i] for i in order]
    return SplitPlan(
        train_ids=sorted(shuffled[n_dev + n_test :]),
        dev_ids=sorted(shuffled[:n_dev]),
        test_ids=sorted(shuffled[n_dev : n_dev + n_test]),
        fold_seed=fold_seed,
    )


def detect_face(visual_frame: np.ndarray) -> int:
    """1 when the frame carries any signal; zero-filled frames mean no face."""
    frame = np.asarray(visual_frame, dtype=np.float64)
    return int(np.max(np.abs(frame)) >= FACE_EPS) if frame.size else 0


# ---------------------------------------------------------------------------
# File I/O

def _read_csv(path: Path, kind: str) -> pd.DataFrame:
    if not path.exists():
        raise DataFormatError(f"{kind} file missing: {path}")
    try:
        frame = pd.read_csv(path)
    except pd.errors.ParserError as exc:
        raise DataFormatError(f"{kind} file {path} has ragged rows: {exc}") from exc
    if frame.empty:
        raise DataFormatError(f"{kind} file {path} has no data rows")
    values = frame.to_numpy(dtype=np.float64, copy=True)
    nan_rows, nan_cols = np.nonzero(np.isnan(values))
    if nan_rows.size:
        raise DataFormatError(
            f"{kind} file {path}: non-numeric or NaN cell at row {nan_rows[0]}, "
            f"column {frame.columns[nan_cols[0]]!r}"
        )
    return frame


def load_recording(
    audio_path,
    visual_path,
    label_path,
    rec_id: str | None = None,
    energy_lo: float | None = None,
    energy_hi: float | None = None,
) -> Recording:
    """Load one feature/label file triple and derive reliability signals.

    g_v comes from detect_face per frame. g_a is the energy column scaled by
    the given training-split min/max; without them the recording's own range
    is used provisionally (rescale with scale_energy_signals after splitting).
    """
    audio_path, visual_path, label_path = Path(audio_path), Path(visual_path), Path(label_path)
    audio = _read_csv(audio_path, "audio")
    visual = _read_csv(visual_path, "visual")
    labels = _read_csv(label_path, "label")
    if list(labels.columns) != ["arousal", "valence"]:
        raise DataFormatError(
            f"label file {label_path} must have columns arousal,valence, "
            f"got {list(labels.columns)}"
        )
    t_a, t_v, t_l = len(audio), len(visual), len(labels)
    if not (t_a == t_v == t_l):
        raise DataFormatError(
            f"length mismatch: audio {t_a}, visual {t_v}, labels {t_l} "
            f"({audio_path.name}, {visual_path.name}, {label_path.name})"
        )
    audio_arr = audio.to_numpy(dtype=np.float64)
    visual_arr = visual.to_numpy(dtype=np.float64)
    g_v = np.array([detect_face(row) for row in visual_arr], dtype=np.float64)
    energy = audio_arr[:, ENERGY_COLUMN]
    if energy_lo is None or energy_hi is None:
        energy_lo, energy_hi = float(energy.min()), float(energy.max())
    g_a = energy_to_ga(energy, energy_lo, energy_hi)
    return Recording(
        id=rec_id or audio_path.stem.removesuffix("_audio"),
        audio=audio_arr,
        visual=visual_arr,
        arousal=labels["arousal"].to_numpy(dtype=np.float64),
        valence=labels["valence"].to_numpy(dtype=np.float64),
        g_a=g_a,
        g_v=g_v,
    )


def scale_energy_signals(recordings: list[Recording], train_ids: list[str]) -> None:
    """Recompute every g_a with global training-split energy statistics."""
    train = [r for r in recordings if r.id in set(train_ids)]
    if not train:
        raise ValueError("no training recordings found for energy scaling")
    energies = np.concatenate([r.audio[:, ENERGY_COLUMN] for r in train])
    lo, hi = float(energies.min()), float(energies.max())
    for rec in recordings:
        rec.g_a = energy_to_ga(rec.audio[:, ENERGY_COLUMN], lo, hi)


def save_recording(rec: Recording, out_dir) -> dict[str, str]:
    """Write the three CSV files; returns relative file names for the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = {
        "audio": f"{rec.id}_audio.csv",
        "visual": f"{rec.id}_visual.csv",
        "labels": f"{rec.id}_labels.csv",
    }
    audio_cols = ["energy"] + [f"a{j:03d}" for j in range(1, rec.audio.shape[1])]
    visual_cols = [f"v{j:03d}" for j in range(rec.visual.shape[1])]
    np.savetxt(out_dir / names["audio"], rec.audio, fmt="%.12g", delimiter=",",
               header=",".join(audio_cols), comments="")
    np.savetxt(out_dir / names["visual"], rec.visual, fmt="%.12g", delimiter=",",
               header=",".join(visual_cols), comments="")
    np.savetxt(out_dir / names["labels"],
               np.column_stack([rec.arousal, rec.valence]), fmt="%.12g", delimiter=",",
               header="arousal,valence", comments="")
    return names


def write_manifest(out_dir, entries: list[tuple[str, dict[str, str]]]) -> Path:
    path = Path(out_dir) / "manifest.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "audio", "visual", "labels"])
        for rec_id, names in entries:
            writer.writerow([rec_id, names["audio"], names["visual"], names["labels"]])
    return path


def load_corpus(corpus_dir) -> list[Recording]:
    """Load every recording listed in the corpus manifest."""
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / "manifest.csv"
    if not manifest.exists():
        raise DataFormatError(f"manifest missing: {manifest}")
    recordings = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            recordings.append(
                load_recording(
                    corpus_dir / row["audio"],
                    corpus_dir / row["visual"],
                    corpus_dir / row["labels"],
                    rec_id=row["id"],
                )
            )
    if not recordings:
        raise DataFormatError(f"manifest {manifest} lists no recordings")
    dims = {(r.audio.shape[1], r.visual.shape[1]) for r in recordings}
    if len(dims) != 1:
        raise DataFormatError(f"inconsistent feature dims across corpus: {sorted(dims)}")
    return recordings


# ---------------------------------------------------------------------------
# Synthetic corpus

@dataclass
class SynthConfig:
    """Generator knobs; defaults mirror the benchmark corpus shape."""

    n_recordings: int = 27
    frames_per_recording: int = 7500
    audio_dim: int = 76
    visual_dim: int = 400
    latent_smoothness: int = 151  # binomial window applied to the latent walks
    audio_informativeness: float = 1.0
    visual_informativeness: float = 1.0
    audio_noise: float = 0.1
    visual_noise: float = 0.02
    face_dropout_rate: float = 0.0  # stationary fraction of face-missing frames
    face_dropout_mean_len: int = 75
    label_lag: int = 20  # frames by which labels trail the signal content
    seed: int = 0

    def __post_init__(self):
        for name in ("audio_informativeness", "visual_informativeness", "face_dropout_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.n_recordings < 1 or self.frames_per_recording < 1:
            raise ValueError("need at least one recording and one frame")
        if self.face_dropout_mean_len < 1:
            raise ValueError("face_dropout_mean_len must be >= 1")
        if self.label_lag < 0:
            raise ValueError("label_lag must be >= 0")
        if self.label_lag >= self.frames_per_recording:
            raise ValueError("label_lag must be shorter than a recording")


def _smooth_walk(rng, length: int, window: int) -> np.ndarray:
    """Random walk passed through the binomial smoother, max-abs scaled to [-1,1]."""
    walk = np.cumsum(rng.standard_normal(length))
    kernel = binomial_kernel(window if window % 2 == 1 else window + 1)
    padded = np.concatenate([np.full(len(kernel) // 2, walk[0]), walk,
                             np.full(len(kernel) // 2, walk[-1])])
    smoothed = np.convolve(padded, kernel, mode="valid")
    smoothed -= smoothed.mean()
    peak = np.max(np.abs(smoothed))
    return smoothed / peak if peak > 0 else smoothed


def _distractor(rng, length: int, window: int) -> np.ndarray:
    """Band-limited noise: varies too fast to mimic the slow latents."""
    kernel = binomial_kernel(window | 1)
    padded = rng.standard_normal(length + len(kernel) - 1)
    out = np.convolve(padded, kernel, mode="valid")
    std = out.std()
    return out / std if std > 0 else out


def _dropout_mask(rng, length: int, rate: float, mean_len: int) -> np.ndarray:
    """Two-state Markov chain with stationary missing fraction ``rate``."""
    if rate <= 0.0:
        return np.zeros(length, dtype=bool)
    p_exit = 1.0 / mean_len
    p_enter = p_exit * rate / (1.0 - rate)
    missing = np.zeros(length, dtype=bool)
    state = rng.random() < rate
    draws = rng.random(length)
    for t in range(length):
        missing[t] = state
        state = draws[t] >= p_exit if state else draws[t] < p_enter
    return missing


def synth_generate(cfg: SynthConfig) -> list[Recording]:
    """Deterministic synthetic corpus with controllable modality reliability.

    Each recording carries two smooth latent trajectories (the arousal and
    valence labels). Features encode the latents ``label_lag`` frames ahead
    of the labels, mimicking annotation delay. Audio column 0 is an energy
    envelope; informative audio columns get noisier as energy drops, so the
    scaled energy is a meaningful reliability signal. Face-dropout segments
    zero the visual features.
    """
    rng = make_rng(cfg.seed)
    frames, lag = cfg.frames_per_recording, cfg.label_lag
    full = frames + lag

    # Corpus-global projection coefficients: the feature-to-label mapping must
    # be shared across recordings for cross-recording regression to transfer.
    n_info_a = max(1, (cfg.audio_dim - 1) // 4)
    n_info_v = max(1, cfg.visual_dim // 4)
    def draw_coefs(n):
        return rng.uniform(0.5, 1.5, n) * rng.choice([-1.0, 1.0], n)

    coef_a = [draw_coefs(n_info_a), draw_coefs(n_info_a)]  # per latent
    coef_v = [draw_coefs(n_info_v), draw_coefs(n_info_v)]
    # Visual descriptors sit on positive offsets (histogram counts, landmark
    # coordinates), so a zero-filled no-face frame lands at the edge of the
    # feature range instead of mid-range.
    offset_v = rng.uniform(2.0, 3.0, cfg.visual_dim)
    # Distractor columns wander much faster than the latents, like the many
    # annotation-irrelevant dimensions of real descriptors.
    distractor_window = max(5, cfg.latent_smoothness // 8) | 1
    # Audio corruption is episodic (interfering speakers), not white: slow
    # enough that a recurrent model cannot average it away, and strongest
    # where the energy envelope is low.
    audio_noise_window = max(5, cfg.latent_smoothness // 3) | 1

    recordings = []
    for r in range(cfg.n_recordings):
        z_arousal = _smooth_walk(rng, full, cfg.latent_smoothness)
        z_valence = _smooth_walk(rng, full, cfg.latent_smoothness)
        envelope = 0.2 + 0.8 * (_smooth_walk(rng, full, cfg.latent_smoothness) + 1.0) / 2.0

        arousal, valence = z_arousal[:frames], z_valence[:frames]
        zf_a, zf_v, env = z_arousal[lag:full], z_valence[lag:full], envelope[lag:full]

        audio = np.empty((frames, cfg.audio_dim))
        audio[:, ENERGY_COLUMN] = env
        col = 1
        for latent, coefs in zip((zf_a, zf_v), coef_a):
            for coef in coefs:
                if col >= cfg.audio_dim:
                    break
                noise = cfg.audio_noise * (1.5 - env) * _distractor(rng, frames, audio_noise_window)
                audio[:, col] = cfg.audio_informativeness * coef * latent + noise
                col += 1
        while col < cfg.audio_dim:
            audio[:, col] = _distractor(rng, frames, distractor_window)
            col += 1

        visual = np.empty((frames, cfg.visual_dim))
        col = 0
        for latent, coefs in zip((zf_a, zf_v), coef_v):
            for coef in coefs:
                if col >= cfg.visual_dim:
                    break
                visual[:, col] = (
                    offset_v[col]
                    + cfg.visual_informativeness * coef * latent
                    + cfg.visual_noise * rng.standard_normal(frames)
                )
                col += 1
        while col < cfg.visual_dim:
            visual[:, col] = offset_v[col] + _distractor(rng, frames, distractor_window)
            col += 1

        missing = _dropout_mask(rng, frames, cfg.face_dropout_rate, cfg.face_dropout_mean_len)
        visual[missing] = 0.0

        recordings.append(
            Recording(
                id=f"rec{r:03d}",
                audio=audio,
                visual=visual,
                arousal=arousal,
                valence=valence,
                g_a=np.clip(env, 0.0, 1.0),
                g_v=(~missing).astype(np.float64),
            )
        )
    return recordings


# ---------------------------------------------------------------------------
# Mini-batch windowing

def make_windows(
    recordings: list[dict[str, np.ndarray]],
    bptt_len: int,
    batch_size: int,
    rng,
):
    """Yield shuffled fixed-length window batches covering every frame once.

    ``recordings`` maps field names to equal-length per-frame arrays (for one
    recording each). Yields dicts of (T, B, ...) arrays plus a (T, B) "mask"
    that zeroes padded tail frames.
    """
    if bptt_len < 1:
        raise ValueError(f"bptt_len must be >= 1, got {bptt_len}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    windows = []
    for rec in recordings:
        lengths = {len(v) for v in rec.values()}
        if len(lengths) != 1:
            raise DimensionError(f"per-recording array lengths differ: {lengths}")
        t_total = lengths.pop()
        for start in range(0, t_total, bptt_len):
            windows.append((rec, start, min(start + bptt_len, t_total)))
    if not windows:
        return
    order = rng.permutation(len(windows))
    keys = list(recordings[0].keys())
    for batch_start in range(0, len(order), batch_size):
        chosen = [windows[i] for i in order[batch_start : batch_start + batch_size]]
        b = len(chosen)
        batch = {}
        mask = np.zeros((bptt_len, b))
        for key in keys:
            proto = chosen[0][0][key]
            shape = (bptt_len, b) + proto.shape[1:]
            batch[key] = np.zeros(shape)
        for j, (rec, start, stop) in enumerate(chosen):
            n = stop - start
            mask[:n, j] = 1.0
            for key in keys:
                batch[key][:n, j] = rec[key][start:stop]
        batch["mask"] = mask
        yield batch


# ---------------------------------------------------------------------------
# Annotation delay search

def delay_search(
    recordings: list[Recording],
    n_candidates: list[int],
    target: str = "both",
    ridge: float = 1.0,
) -> int:
    """Pick the delay whose aligned frame-wise ridge fit scores best CCC.

    Cross-validates by recording within the given (training) set; with a
    single recording the two time halves stand in for folds. Ties break
    toward the smaller candidate.
    """
    if not n_candidates:
        raise ValueError("no delay candidates given")
    if not recordings:
        raise ValueError("no recordings given")
    targets = ["arousal", "valence"] if target == "both" else [target]
    min_len = min(r.n_frames for r in recordings)
    for n in n_candidates:
        if n < 0 or n >= min_len:
            raise ValueError(f"candidate delay {n} invalid for min length {min_len}")

    features = [np.concatenate([r.audio, r.visual], axis=1) for r in recordings]
    if len(recordings) >= 2:
        k = min(3, len(recordings))
        folds = [list(range(i, len(recordings), k)) for i in range(k)]
        parts = [(features[i], recordings[i]) for i in range(len(recordings))]
    else:
        half = recordings[0].n_frames // 2
        parts = [
            (features[0][:half], _slice_recording(recordings[0], 0, half)),
            (features[0][half:], _slice_recording(recordings[0], half, recordings[0].n_frames)),
        ]
        folds = [[0], [1]]

    best_n, best_score = None, -np.inf
    for n in sorted(n_candidates):
        spec = DelaySpec(n)
        scores = []
        for fold in folds:
            train_idx = [i for i in range(len(parts)) if i not in fold]
            stats = fit_norm([parts[i][0] for i in train_idx])
            x_tr, y_tr, x_va, y_va = [], [], [], []
            for tgt in targets:
                for i in train_idx:
                    xa, ya = shift_for_delay(apply_norm(stats, parts[i][0]), parts[i][1].labels(tgt), spec)
                    x_tr.append(xa)
                    y_tr.append(ya)
                for i in fold:
                    xa, ya = shift_for_delay(apply_norm(stats, parts[i][0]), parts[i][1].labels(tgt), spec)
                    x_va.append(xa)
                    y_va.append(ya)
            # One ridge fit per target, scored on pooled validation frames.
            per_target = []
            m = len(train_idx)
            for t_idx, tgt in enumerate(targets):
                xs = np.concatenate(x_tr[t_idx * m : (t_idx + 1) * m])
                ys = np.concatenate(y_tr[t_idx * m : (t_idx + 1) * m])
                x_mean, y_mean = xs.mean(axis=0), ys.mean()
                xc = xs - x_mean
                w = np.linalg.solve(
                    xc.T @ xc + ridge * np.eye(xs.shape[1]), xc.T @ (ys - y_mean)
                )
                xv = np.concatenate(x_va[t_idx * len(fold) : (t_idx + 1) * len(fold)])
                yv = np.concatenate(y_va[t_idx * len(fold) : (t_idx + 1) * len(fold)])
                per_target.append(ccc((xv - x_mean) @ w + y_mean, yv))
            scores.append(float(np.mean(per_target)))
        score = float(np.mean(scores))
        if score > best_score:
            best_n, best_score = n, score
    return best_n


def _slice_recording(rec: Recording, start: int, stop: int) -> Recording:
    return Recording(
        id=f"{rec.id}[{start}:{stop}]",
        audio=rec.audio[start:stop],
        visual=rec.visual[start:stop],
        arousal=rec.arousal[start:stop],
        valence=rec.valence[start:stop],
        g_a=rec.g_a[start:stop],
        g_v=rec.g_v[start:stop],
    )
