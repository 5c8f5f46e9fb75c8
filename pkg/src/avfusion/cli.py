"""Command-line entry point for reproducible experiments.

Subcommands: synth | train | evaluate | predict | gradcheck | delay-search.
Exit codes: 0 success, 1 verification/training failure, 2 usage or config
errors. Every command takes a seed and writes a manifest sufficient to
re-run it; reruns with the same seed are bit-identical.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, format_config, load_config, resolve_loss_weights
from .data import (
    Recording,
    SplitPlan,
    SynthConfig,
    delay_search,
    load_corpus,
    make_split,
    save_recording,
    scale_energy_signals,
    synth_generate,
    write_manifest,
)
from .errors import AvFusionError, CheckpointError, ConfigError, TrainingDivergedError
from .fusion import (
    fusion_param_blocks,
    load_fusion,
    make_conditional_attention,
    make_early_fusion,
    make_late_fusion,
    make_model_level,
    save_fusion,
)
from .lstm import init_stack, load_stack, save_stack
from .numeric import make_rng
from .pipeline import DelaySpec, evaluate, fit_norm
from .plots import render_prediction_figure
from .training import (
    DataSplit,
    GradSample,
    TrainConfig,
    grad_check,
    make_grad_sample,
    predict_fusion,
    train_fusion,
    train_unimodal,
)

_SYNTH_KEYS = (
    "n_recordings", "frames_per_recording", "audio_dim", "visual_dim",
    "latent_smoothness", "audio_informativeness", "visual_informativeness",
    "audio_noise", "visual_noise", "face_dropout_rate", "face_dropout_mean_len",
    "label_lag", "seed",
)


def _synth_config(cfg: ExperimentConfig) -> SynthConfig:
    return SynthConfig(**{k: getattr(cfg, k) for k in _SYNTH_KEYS})


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    alpha, beta = resolve_loss_weights(cfg)
    return TrainConfig(
        lr_init=cfg.lr_init, lr_decay=cfg.lr_decay, epochs=cfg.epochs,
        finetune_epochs=cfg.finetune_epochs, finetune_lr=cfg.finetune_lr,
        batch_size=cfg.batch_size, bptt_len=cfg.bptt_len,
        dropout_rate=cfg.dropout_rate, alpha=alpha, beta=beta,
        seed=cfg.seed, grad_clip=cfg.grad_clip,
        audio_hidden=cfg.audio_hidden, visual_hidden=cfg.visual_hidden,
        early_hidden=cfg.early_hidden,
    )


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "variant", None) is not None:
        cfg.variant = args.variant
    if getattr(args, "target", None) is not None:
        cfg.target = args.target
    return cfg


def _load_split(cfg: ExperimentConfig) -> tuple[list[Recording], SplitPlan]:
    if not cfg.corpus_dir:
        raise ConfigError("corpus_dir is not set")
    recordings = load_corpus(cfg.corpus_dir)
    fold_seed = cfg.seed if cfg.fold_seed is None else cfg.fold_seed
    split = make_split([r.id for r in recordings], cfg.n_dev, cfg.n_test, fold_seed)
    scale_energy_signals(recordings, split.train_ids)
    return recordings, split


def _by_ids(recordings: list[Recording], ids: list[str]) -> list[Recording]:
    table = {r.id: r for r in recordings}
    return [table[i] for i in ids]


def _write_run_manifest(out_dir: Path, command: str, cfg: ExperimentConfig, extra: dict) -> None:
    lines = [f"# avfusion {command} manifest"]
    for key, value in extra.items():
        lines.append(f"# {key} = {value}")
    text = "\n".join(lines) + "\n" + format_config(cfg)
    (out_dir / "manifest.txt").write_text(text)


# ---------------------------------------------------------------------------
# Commands

def cmd_synth(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    synth_cfg = _synth_config(cfg)
    recordings = synth_generate(synth_cfg)
    entries = [(rec.id, save_recording(rec, out_dir)) for rec in recordings]
    write_manifest(out_dir, entries)
    provenance = "\n".join(
        f"{k} = {getattr(synth_cfg, k)}" for k in _SYNTH_KEYS
    ) + "\n"
    (out_dir / "synth_config.txt").write_text(provenance)
    _write_run_manifest(out_dir, "synth", cfg, {"recordings": len(recordings)})
    print(f"wrote {len(recordings)} recordings to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    recordings, split = _load_split(cfg)
    data = DataSplit(_by_ids(recordings, split.train_ids), _by_ids(recordings, split.dev_ids))
    tc = _train_config(cfg)
    delay = DelaySpec(cfg.delay_n)
    extra = {
        "variant": cfg.variant, "target": cfg.target,
        "alpha": tc.alpha, "beta": tc.beta,
        "train_ids": ",".join(split.train_ids),
        "dev_ids": ",".join(split.dev_ids),
        "test_ids": ",".join(split.test_ids),
    }

    pre_audio = pre_visual = None
    if cfg.variant != "early":
        if args.audio_checkpoint and args.visual_checkpoint:
            pre_audio = load_stack(args.audio_checkpoint)
            pre_visual = load_stack(args.visual_checkpoint)
            if pre_audio.input_dim != data.train[0].audio.shape[1]:
                raise CheckpointError(
                    f"audio checkpoint expects {pre_audio.input_dim} features, "
                    f"corpus has {data.train[0].audio.shape[1]}"
                )
            if pre_visual.input_dim != data.train[0].visual.shape[1]:
                raise CheckpointError(
                    f"visual checkpoint expects {pre_visual.input_dim} features, "
                    f"corpus has {data.train[0].visual.shape[1]}"
                )
        else:
            pre_audio, hist_a = train_unimodal(
                data, "audio", cfg.target, tc, delay, cfg.smooth_window
            )
            save_stack(pre_audio, out_dir / "unimodal_audio.ckpt")
            hist_a.save_csv(out_dir / "unimodal_audio_history.csv")
            extra["audio_best_epoch"] = hist_a.best_epoch
            visual_tc = dataclasses.replace(tc, seed=tc.seed + 1)
            pre_visual, hist_v = train_unimodal(
                data, "visual", cfg.target, visual_tc, delay, cfg.smooth_window
            )
            save_stack(pre_visual, out_dir / "unimodal_visual.ckpt")
            hist_v.save_csv(out_dir / "unimodal_visual_history.csv")
            extra["visual_best_epoch"] = hist_v.best_epoch

    model, history = train_fusion(
        cfg.variant, pre_audio, pre_visual, data, cfg.target, tc,
        delay, cfg.smooth_window, use_gate_bias=cfg.gate_bias,
    )
    ckpt = out_dir / f"fusion_{cfg.variant}.ckpt"
    save_fusion(model, ckpt)
    history.save_csv(out_dir / "fusion_history.csv")
    extra["fusion_best_epoch"] = history.best_epoch
    extra["checkpoint"] = ckpt.name
    _write_run_manifest(out_dir, "train", cfg, extra)
    best = history.dev_cccs[history.best_epoch] if history.dev_cccs else float("nan")
    print(f"trained {cfg.variant} for {cfg.target}: best dev ccc {best:.4f} -> {ckpt}")
    return 0


def _split_recordings(cfg, args) -> tuple[list[Recording], list[Recording]]:
    recordings, split = _load_split(cfg)
    ids = {"train": split.train_ids, "dev": split.dev_ids, "test": split.test_ids}[args.split]
    return _by_ids(recordings, split.train_ids), _by_ids(recordings, ids)


def cmd_evaluate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_recs, eval_recs = _split_recordings(cfg, args)
    delay = DelaySpec(cfg.delay_n)

    if args.identity:
        preds = [rec.labels(cfg.target).copy() for rec in eval_recs]
        lams = None
    else:
        if not Path(args.checkpoint).exists():
            raise CheckpointError(f"checkpoint missing: {args.checkpoint}")
        model = load_fusion(args.checkpoint, expect_variant=cfg.variant)
        stats_a = fit_norm([r.audio for r in train_recs])
        stats_v = fit_norm([r.visual for r in train_recs])
        preds, lams = predict_fusion(
            model, eval_recs, stats_a, stats_v, delay, cfg.smooth_window
        )

    rows = []
    for rec, pred in zip(eval_recs, preds):
        report = evaluate(pred, rec.labels(cfg.target))
        rows.append((rec.id, report))
    pooled = evaluate(
        np.concatenate(preds), np.concatenate([r.labels(cfg.target) for r in eval_recs])
    )
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "rmse", "pcc", "ccc"])
        for rec_id, rep in rows:
            writer.writerow([rec_id, f"{rep.rmse:.17g}", f"{rep.pcc:.17g}", f"{rep.ccc:.17g}"])
        writer.writerow(["pooled", f"{pooled.rmse:.17g}", f"{pooled.pcc:.17g}", f"{pooled.ccc:.17g}"])

    for idx, (rec, pred) in enumerate(zip(eval_recs, preds)):
        labels = rec.labels(cfg.target)
        lam_full = None
        if lams is not None:
            # Frames before the delay horizon carry the uninformed gate value.
            lam_full = np.full(rec.n_frames, 0.5)
            lam_full[delay.n_frames :] = lams[idx]
        stem = f"{rec.id}_{cfg.target}"
        with open(out_dir / f"{stem}_plotdata.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["frame_index", "prediction", "label"]
            if lam_full is not None:
                header.append("lambda")
            writer.writerow(header)
            for t in range(rec.n_frames):
                row = [t, f"{pred[t]:.17g}", f"{labels[t]:.17g}"]
                if lam_full is not None:
                    row.append(f"{lam_full[t]:.17g}")
                writer.writerow(row)
        render_prediction_figure(
            out_dir / f"{stem}.png", labels, pred, lam_full,
            title=f"{rec.id} ({cfg.target})",
        )

    _write_run_manifest(
        out_dir, "evaluate", cfg,
        {"split": args.split, "checkpoint": args.checkpoint or "identity",
         "pooled_ccc": pooled.ccc},
    )
    print(f"pooled: rmse {pooled.rmse:.4f} pcc {pooled.pcc:.4f} ccc {pooled.ccc:.4f}")
    return 0


def cmd_predict(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_recs, eval_recs = _split_recordings(cfg, args)
    if not Path(args.checkpoint).exists():
        raise CheckpointError(f"checkpoint missing: {args.checkpoint}")
    model = load_fusion(args.checkpoint, expect_variant=cfg.variant)
    delay = DelaySpec(cfg.delay_n)
    stats_a = fit_norm([r.audio for r in train_recs])
    stats_v = fit_norm([r.visual for r in train_recs])
    preds, lams = predict_fusion(model, eval_recs, stats_a, stats_v, delay, cfg.smooth_window)
    for idx, (rec, pred) in enumerate(zip(eval_recs, preds)):
        with open(out_dir / f"{rec.id}_predictions.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["frame_index", "prediction"]
            if lams is not None:
                header.append("lambda")
            writer.writerow(header)
            for t in range(rec.n_frames):
                row = [t, f"{pred[t]:.17g}"]
                if lams is not None:
                    lam_t = 0.5 if t < delay.n_frames else lams[idx][t - delay.n_frames]
                    row.append(f"{lam_t:.17g}")
                writer.writerow(row)
    _write_run_manifest(
        out_dir, "predict", cfg, {"split": args.split, "checkpoint": args.checkpoint}
    )
    print(f"wrote predictions for {len(eval_recs)} recordings to {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    if not 1e-7 <= args.eps <= 1e-4:
        print(f"warning: eps {args.eps:g} is outside the validated range [1e-7, 1e-4]",
              file=sys.stderr)
    rng = make_rng(args.seed)
    h = (args.hidden, args.hidden)
    d_a, d_v, steps = args.audio_dim, args.visual_dim, args.timesteps

    models = {
        "audio": init_stack(d_a, h, rng),
        "visual": init_stack(d_v, h, rng),
        "early": make_early_fusion(d_a, d_v, h, rng),
        "model": make_model_level(init_stack(d_a, h, rng), init_stack(d_v, h, rng)),
        "late": make_late_fusion(init_stack(d_a, h, rng), init_stack(d_v, h, rng)),
        "ca": make_conditional_attention(init_stack(d_a, h, rng), init_stack(d_v, h, rng)),
    }
    total_params = sum(
        sum(a.size for _, a in fusion_param_blocks(m)) for m in models.values()
    )
    if total_params > 50_000:
        raise ConfigError(
            f"{total_params} parameters exceed the gradcheck cap of 50000; use smaller dims"
        )

    sample = make_grad_sample(rng, steps, d_a, d_v)
    all_pass = True
    for name, model in models.items():
        probe = sample
        if name == "audio":
            probe = GradSample(sample.seq_a, None, sample.y)
        elif name == "visual":
            probe = GradSample(sample.seq_v, None, sample.y)
        alpha, beta = (args.alpha, args.beta) if name == "ca" else (0.0, 0.0)
        fault = "gate.w_g" if (args.inject_fault and name == "ca") else None
        report = grad_check(
            model, probe, eps=args.eps, tol=args.tol, alpha=alpha, beta=beta,
            fault_block=fault,
        )
        status = "PASS" if report.passed else "FAIL"
        all_pass = all_pass and report.passed
        print(
            f"{name:<7} {status}  max_rel_err {report.max_rel_err:.3e} "
            f"(block {report.worst_block})"
        )
    print("gradcheck:", "PASS" if all_pass else "FAIL")
    return 0 if all_pass else 1


def cmd_delay_search(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    recordings, split = _load_split(cfg)
    train_recs = _by_ids(recordings, split.train_ids)
    candidates = [int(c) for c in args.candidates.split(",") if c.strip()]
    chosen = delay_search(train_recs, candidates, target="both")
    _write_run_manifest(
        out_dir, "delay-search", cfg,
        {"candidates": args.candidates, "chosen_delay": chosen},
    )
    print(f"chosen delay: {chosen} frames")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avfusion",
        description="Audio-visual sequence regression with conditional attention fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, checkpoint=False, split=False):
        p.add_argument("--config", required=True, help="key=value experiment config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--variant", choices=["early", "model", "late", "ca"], default=None)
        p.add_argument("--target", choices=["arousal", "valence"], default=None)
        if checkpoint:
            p.add_argument("--checkpoint", default=None, help="fusion checkpoint path")
        if split:
            p.add_argument("--split", choices=["train", "dev", "test"], default="dev")

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    add_common(p_synth)

    p_train = sub.add_parser("train", help="train unimodal stacks and a fusion model")
    add_common(p_train)
    p_train.add_argument("--audio-checkpoint", default=None, help="pretrained audio stack")
    p_train.add_argument("--visual-checkpoint", default=None, help="pretrained visual stack")

    p_eval = sub.add_parser("evaluate", help="metrics, plot data, and figures for a split")
    add_common(p_eval, checkpoint=True, split=True)
    p_eval.add_argument(
        "--identity", action="store_true",
        help="score the labels against themselves (pipeline sanity mode)",
    )

    p_pred = sub.add_parser("predict", help="write per-frame predictions for a split")
    add_common(p_pred, checkpoint=True, split=True)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.add_argument("--hidden", type=int, default=4)
    p_grad.add_argument("--audio-dim", type=int, default=3)
    p_grad.add_argument("--visual-dim", type=int, default=5)
    p_grad.add_argument("--timesteps", type=int, default=8)
    p_grad.add_argument("--alpha", type=float, default=0.04)
    p_grad.add_argument("--beta", type=float, default=0.02)
    p_grad.add_argument("--inject-fault", action="store_true",
                        help="corrupt one gradient entry (harness self-test)")

    p_delay = sub.add_parser("delay-search", help="pick the annotation delay by ridge CV")
    add_common(p_delay)
    p_delay.add_argument(
        "--candidates", default=",".join(str(n) for n in range(0, 41, 2)),
        help="comma-separated delay candidates in frames",
    )
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "delay-search": cmd_delay_search,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "evaluate" and not args.identity and not args.checkpoint:
        print("error: evaluate needs --checkpoint (or --identity)", file=sys.stderr)
        return 2
    if args.command == "predict" and not args.checkpoint:
        print("error: predict needs --checkpoint", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AvFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
