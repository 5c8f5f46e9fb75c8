import math

import numpy as np
import pytest

from avfusion.data import SynthConfig, synth_generate
from avfusion.errors import TrainingDivergedError
from avfusion.fusion import fusion_param_blocks, save_stack_bytes
from avfusion.lstm import init_stack, save_stack, load_stack, param_blocks
from avfusion.numeric import make_rng
from avfusion.pipeline import DelaySpec, fit_norm
from avfusion.training import (
    DataSplit,
    GradCheckReport,
    GradSample,
    TrainConfig,
    grad_check,
    make_grad_sample,
    pooled_ccc,
    predict_unimodal,
    schedule_lr,
    sgd_step,
    train_fusion,
    train_unimodal,
)


def small_corpus(seed=1, n=4, frames=800, dropout=0.0):
    cfg = SynthConfig(
        n_recordings=n, frames_per_recording=frames, audio_dim=6, visual_dim=6,
        audio_noise=0.0, visual_noise=0.0, face_dropout_rate=dropout, seed=seed,
    )
    recs = synth_generate(cfg)
    return DataSplit(train=recs[: n - 1], dev=recs[n - 1 :])


def fast_config(**overrides):
    overrides.setdefault("epochs", 5)
    overrides.setdefault("batch_size", 8)
    overrides.setdefault("bptt_len", 40)
    overrides.setdefault("dropout_rate", 0.0)
    overrides.setdefault("audio_hidden", (8,))
    overrides.setdefault("visual_hidden", (8,))
    overrides.setdefault("early_hidden", (8,))
    overrides.setdefault("seed", 0)
    return TrainConfig(**overrides)


class TestSgdStep:
    def test_zero_gradient_no_change(self):
        p = [np.array([1.0, 2.0]), np.array([[3.0]])]
        sgd_step(p, [np.zeros(2), np.zeros((1, 1))], lr=0.5, grad_clip=5.0)
        np.testing.assert_array_equal(p[0], [1.0, 2.0])
        np.testing.assert_array_equal(p[1], [[3.0]])

    def test_plain_descent(self):
        p = np.array([2.0])
        sgd_step(p, np.array([0.5]), lr=1.0, grad_clip=math.inf)
        assert p[0] == 1.5

    def test_global_norm_clipping(self):
        p = [np.zeros(3), np.zeros(2)]
        g = [np.full(3, 4.0), np.full(2, 6.0)]  # global norm sqrt(48+72) > 5
        norm = math.sqrt(sum(float(np.sum(x * x)) for x in g))
        lr = 0.1
        sgd_step(p, g, lr=lr, grad_clip=5.0)
        applied = math.sqrt(sum(float(np.sum(x * x)) for x in p))
        assert applied == pytest.approx(5.0 * lr, abs=1e-12)
        np.testing.assert_allclose(p[0], -lr * 5.0 / norm * g[0], atol=1e-15)

    def test_below_clip_untouched(self):
        p = [np.zeros(2)]
        sgd_step(p, [np.array([0.3, 0.4])], lr=1.0, grad_clip=5.0)
        np.testing.assert_allclose(p[0], [-0.3, -0.4], atol=1e-15)


class TestSchedule:
    def test_exact_decay_law(self):
        for k in range(60):
            assert schedule_lr(0.01, 0.98, k) == 0.01 * 0.98**k


class TestTrainUnimodal:
    def test_zero_epochs_returns_init(self):
        data = small_corpus()
        stack, hist = train_unimodal(data, "audio", "arousal", fast_config(epochs=0),
                                     DelaySpec(20), 11)
        assert hist.losses == [] and hist.dev_cccs == []
        reference = init_stack(6, (8,), make_rng(0), dropout_rate=0.0)
        # untouched parameters come straight from the seeded initializer
        for (_, a), (_, b) in zip(param_blocks(stack), param_blocks(reference)):
            np.testing.assert_array_equal(a, b)

    def test_deterministic_across_runs(self):
        data = small_corpus()
        cfg = fast_config(epochs=3)
        s1, h1 = train_unimodal(data, "audio", "arousal", cfg, DelaySpec(20), 11)
        s2, h2 = train_unimodal(small_corpus(), "audio", "arousal", cfg, DelaySpec(20), 11)
        assert h1.losses == h2.losses
        assert h1.dev_cccs == h2.dev_cccs
        assert save_stack_bytes(s1) == save_stack_bytes(s2)

    def test_noiseless_linear_target_learnable(self):
        # noiseless, linearly decodable audio: loss must fall monotonically
        # over the first 10 epochs and the best dev CCC must clear 0.9
        data = small_corpus(seed=1)
        cfg = fast_config(epochs=40)
        stack, hist = train_unimodal(data, "audio", "arousal", cfg, DelaySpec(20), 11)
        first10 = hist.losses[:10]
        assert all(b < a for a, b in zip(first10, first10[1:]))
        assert hist.dev_cccs[hist.best_epoch] > 0.9

    def test_history_lengths_and_lr_column(self):
        data = small_corpus()
        cfg = fast_config(epochs=4, lr_decay=0.9)
        _, hist = train_unimodal(data, "audio", "arousal", cfg, DelaySpec(20), 11)
        assert len(hist.losses) == len(hist.dev_cccs) == len(hist.lrs) == 4
        assert hist.lrs == [0.01 * 0.9**k for k in range(4)]

    def test_empty_training_data_rejected(self):
        with pytest.raises(ValueError):
            train_unimodal(DataSplit([], []), "audio", "arousal", fast_config())

    def test_best_checkpoint_reload_reproduces_dev_ccc(self, tmp_path):
        data = small_corpus()
        cfg = fast_config(epochs=6)
        stack, hist = train_unimodal(data, "audio", "arousal", cfg, DelaySpec(20), 11)
        path = tmp_path / "best.ckpt"
        save_stack(stack, path)
        reloaded = load_stack(path)
        stats = fit_norm([r.audio for r in data.train])
        preds = predict_unimodal(reloaded, data.dev, stats, "audio", DelaySpec(20), 11)
        again = pooled_ccc(preds, data.dev, "arousal")
        assert again == pytest.approx(hist.dev_cccs[hist.best_epoch], abs=1e-12)

    def test_divergence_reports_epoch_and_batch(self):
        data = small_corpus()
        cfg = fast_config(epochs=30, lr_init=1e24, grad_clip=math.inf)
        with pytest.raises(TrainingDivergedError, match=r"epoch \d+, batch \d+"):
            train_unimodal(data, "audio", "arousal", cfg, DelaySpec(20), 11)


class TestTrainFusion:
    def pretrained(self, data, cfg):
        audio, _ = train_unimodal(data, "audio", "arousal", cfg, DelaySpec(20), 11)
        visual, _ = train_unimodal(data, "visual", "arousal", cfg, DelaySpec(20), 11)
        return audio, visual

    def test_zero_finetune_keeps_pretrained_bitwise(self):
        data = small_corpus()
        cfg = fast_config(epochs=2, finetune_epochs=0)
        audio, visual = self.pretrained(data, cfg)
        model, hist = train_fusion("ca", audio, visual, data, "arousal", cfg,
                                   DelaySpec(20), 11)
        assert hist.losses == []
        assert save_stack_bytes(model.audio_stack) == save_stack_bytes(audio)
        assert save_stack_bytes(model.visual_stack) == save_stack_bytes(visual)
        assert not model.gate.w_g.any() and model.gate.b_g[0] == 0.0

    def test_missing_pretrained_rejected(self):
        data = small_corpus()
        with pytest.raises(ValueError, match="pretrained"):
            train_fusion("ca", None, None, data, "arousal", fast_config())

    def test_alpha_beta_zero_ignores_signals(self):
        data = small_corpus()
        cfg = fast_config(epochs=2, finetune_epochs=3, alpha=0.0, beta=0.0)
        audio, visual = self.pretrained(data, cfg)
        m1, h1 = train_fusion("ca", audio, visual, data, "arousal", cfg,
                              DelaySpec(20), 11)
        scrambled = small_corpus()
        for rec in scrambled.train + scrambled.dev:
            rec.g_a = 1.0 - rec.g_a
            rec.g_v = 1.0 - rec.g_v
        m2, h2 = train_fusion("ca", audio, visual, scrambled, "arousal", cfg,
                              DelaySpec(20), 11)
        assert h1.losses == h2.losses
        assert save_stack_bytes(m1.audio_stack) == save_stack_bytes(m2.audio_stack)
        np.testing.assert_array_equal(m1.gate.w_g, m2.gate.w_g)

    def test_early_fusion_trains_from_scratch(self):
        data = small_corpus()
        cfg = fast_config(epochs=10)
        model, hist = train_fusion("early", None, None, data, "arousal", cfg,
                                   DelaySpec(20), 11)
        assert model.variant == "early"
        assert len(hist.losses) == 10  # full schedule, not finetune_epochs
        assert hist.losses[-1] < hist.losses[0]

    def test_finetuning_improves_or_holds_dev(self):
        data = small_corpus(dropout=0.2)
        cfg = fast_config(epochs=12, finetune_epochs=6, alpha=0.04, beta=0.02)
        audio, visual = self.pretrained(data, cfg)
        model, hist = train_fusion("ca", audio, visual, data, "arousal", cfg,
                                   DelaySpec(20), 11)
        assert len(hist.losses) == 6
        assert hist.best_epoch == int(np.argmax(hist.dev_cccs))

    def test_unknown_variant(self):
        data = small_corpus()
        cfg = fast_config()
        audio, visual = self.pretrained(data, cfg)
        with pytest.raises(ValueError, match="variant"):
            train_fusion("mystery", audio, visual, data, "arousal", cfg)


class TestGradCheckHarness:
    def test_spec_dims_pass(self):
        rng = make_rng(0)
        from avfusion.fusion import make_conditional_attention

        model = make_conditional_attention(
            init_stack(3, (4, 4), rng), init_stack(5, (4, 4), rng)
        )
        sample = make_grad_sample(rng, 8, 3, 5)
        for alpha, beta in ((0.0, 0.0), (0.04, 0.02)):
            report = grad_check(model, sample, eps=1e-5, tol=1e-4,
                                alpha=alpha, beta=beta)
            assert report.passed
            assert report.max_rel_err < 1e-4

    def test_corrupted_gradient_detected(self):
        rng = make_rng(1)
        stack = init_stack(3, (4,), rng)
        sample = GradSample(rng.standard_normal((6, 3)), None, rng.uniform(-1, 1, 6))
        report = grad_check(stack, sample, fault_block="layer0.w_xi")
        assert not report.passed
        assert report.worst_block == "layer0.w_xi"

    def test_empty_report_trivially_passes(self):
        report = GradCheckReport(blocks={}, tol=1e-4, passed=True, worst_block=None)
        assert report.passed and report.max_rel_err == 0.0

    def test_unknown_fault_block(self):
        rng = make_rng(2)
        stack = init_stack(3, (4,), rng)
        sample = GradSample(rng.standard_normal((4, 3)), None, rng.uniform(-1, 1, 4))
        with pytest.raises(KeyError):
            grad_check(stack, sample, fault_block="nope")


class TestHistoryCsv:
    def test_round_trip_columns(self, tmp_path):
        data = small_corpus()
        _, hist = train_unimodal(data, "audio", "arousal", fast_config(epochs=3),
                                 DelaySpec(20), 11)
        path = tmp_path / "history.csv"
        hist.save_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,loss,dev_ccc,lr"
        assert len(lines) == 4
        epoch, loss, dev, lr = lines[1].split(",")
        assert float(loss) == hist.losses[0]
        assert float(dev) == hist.dev_cccs[0]
        assert float(lr) == hist.lrs[0]
