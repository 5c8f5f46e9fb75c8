import numpy as np
import pytest

from avfusion.data import (
    Recording,
    SynthConfig,
    delay_search,
    detect_face,
    load_corpus,
    load_recording,
    make_split,
    make_windows,
    save_recording,
    scale_energy_signals,
    synth_generate,
    write_manifest,
)
from avfusion.errors import DataFormatError
from avfusion.numeric import make_rng
from avfusion.pipeline import DelaySpec, apply_norm, ccc, fit_norm, shift_for_delay


def tiny_recording(t=30, d_a=4, d_v=6, rec_id="r0"):
    rng = make_rng(0)
    visual = rng.standard_normal((t, d_v))
    return Recording(
        id=rec_id,
        audio=np.abs(rng.standard_normal((t, d_a))),
        visual=visual,
        arousal=rng.uniform(-1, 1, t),
        valence=rng.uniform(-1, 1, t),
        g_a=rng.uniform(0, 1, t),
        g_v=np.ones(t),
    )


class TestRecordingInvariants:
    def test_unequal_lengths_rejected(self):
        rec = tiny_recording()
        with pytest.raises(DataFormatError, match="unequal lengths"):
            Recording(
                id="bad", audio=rec.audio[:-1], visual=rec.visual,
                arousal=rec.arousal, valence=rec.valence, g_a=rec.g_a, g_v=rec.g_v,
            )

    def test_label_range_names_row(self):
        rec = tiny_recording()
        bad = rec.arousal.copy()
        bad[7] = 1.5
        with pytest.raises(DataFormatError, match="row 7"):
            Recording(
                id="bad", audio=rec.audio, visual=rec.visual,
                arousal=bad, valence=rec.valence, g_a=rec.g_a, g_v=rec.g_v,
            )


class TestSplit:
    def test_paper_shape_split(self):
        ids = [f"rec{i:03d}" for i in range(27)]
        plan = make_split(ids, n_dev=5, n_test=4, fold_seed=1)
        assert len(plan.dev_ids) == 5 and len(plan.test_ids) == 4
        assert len(plan.train_ids) == 18
        assert sorted(plan.train_ids + plan.dev_ids + plan.test_ids) == ids

    def test_split_deterministic(self):
        ids = [f"r{i}" for i in range(10)]
        a = make_split(ids, 2, 2, fold_seed=9)
        b = make_split(ids, 2, 2, fold_seed=9)
        assert a == b

    def test_too_many_held_out(self):
        with pytest.raises(ValueError):
            make_split(["a", "b", "c"], 2, 1, 0)


class TestDetectFace:
    def test_all_zero_frame(self):
        assert detect_face(np.zeros(400)) == 0

    def test_any_signal(self):
        frame = np.zeros(400)
        frame[123] = 0.3
        assert detect_face(frame) == 1

    def test_below_threshold(self):
        assert detect_face(np.full(400, 1e-15)) == 0


class TestLoadRecording:
    def test_full_shape_round_trip(self, tmp_path):
        # benchmark-shaped recording: 5 minutes at 40 ms, 76/400 feature dims
        cfg = SynthConfig(n_recordings=1, frames_per_recording=7500, seed=0)
        rec = synth_generate(cfg)[0]
        names = save_recording(rec, tmp_path)
        loaded = load_recording(
            tmp_path / names["audio"], tmp_path / names["visual"], tmp_path / names["labels"]
        )
        assert loaded.n_frames == 7500
        assert loaded.audio.shape == (7500, 76)
        assert loaded.visual.shape == (7500, 400)
        np.testing.assert_array_equal(loaded.g_v, rec.g_v)

    def test_zero_visual_rows_clear_gv(self, tmp_path):
        rec = tiny_recording()
        rec.visual[5:9] = 0.0
        names = save_recording(rec, tmp_path)
        loaded = load_recording(
            tmp_path / names["audio"], tmp_path / names["visual"], tmp_path / names["labels"]
        )
        np.testing.assert_array_equal(loaded.g_v[5:9], np.zeros(4))
        assert loaded.g_v[4] == 1.0 and loaded.g_v[9] == 1.0

    def test_missing_file(self, tmp_path):
        rec = tiny_recording()
        names = save_recording(rec, tmp_path)
        with pytest.raises(DataFormatError, match="missing"):
            load_recording(tmp_path / "nope.csv", tmp_path / names["visual"],
                           tmp_path / names["labels"])

    def test_label_out_of_range_names_row(self, tmp_path):
        rec = tiny_recording()
        names = save_recording(rec, tmp_path)
        label_path = tmp_path / names["labels"]
        lines = label_path.read_text().splitlines()
        lines[4] = "1.5,0.0"  # row 3 after the header
        label_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="row 3"):
            load_recording(tmp_path / names["audio"], tmp_path / names["visual"], label_path)

    def test_nan_cell_names_row_and_column(self, tmp_path):
        rec = tiny_recording()
        names = save_recording(rec, tmp_path)
        audio_path = tmp_path / names["audio"]
        lines = audio_path.read_text().splitlines()
        parts = lines[3].split(",")
        parts[2] = "nan"
        lines[3] = ",".join(parts)
        audio_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="row 2.*a002"):
            load_recording(audio_path, tmp_path / names["visual"], tmp_path / names["labels"])

    def test_length_mismatch_across_files(self, tmp_path):
        rec = tiny_recording()
        names = save_recording(rec, tmp_path)
        label_path = tmp_path / names["labels"]
        lines = label_path.read_text().splitlines()
        label_path.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(DataFormatError, match="length mismatch"):
            load_recording(tmp_path / names["audio"], tmp_path / names["visual"], label_path)

    def test_corpus_manifest(self, tmp_path):
        recs = synth_generate(SynthConfig(n_recordings=3, frames_per_recording=40,
                                          audio_dim=5, visual_dim=6, seed=2))
        entries = [(r.id, save_recording(r, tmp_path)) for r in recs]
        write_manifest(tmp_path, entries)
        loaded = load_corpus(tmp_path)
        assert [r.id for r in loaded] == [r.id for r in recs]


class TestSynthGenerate:
    def test_same_seed_identical(self):
        cfg = SynthConfig(n_recordings=2, frames_per_recording=200, audio_dim=6,
                          visual_dim=8, face_dropout_rate=0.2, seed=11)
        a = synth_generate(cfg)
        b = synth_generate(cfg)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.audio, rb.audio)
            np.testing.assert_array_equal(ra.visual, rb.visual)
            np.testing.assert_array_equal(ra.arousal, rb.arousal)
            np.testing.assert_array_equal(ra.g_v, rb.g_v)

    def test_no_dropout_all_faces(self):
        recs = synth_generate(SynthConfig(n_recordings=2, frames_per_recording=100,
                                          audio_dim=5, visual_dim=6,
                                          face_dropout_rate=0.0, seed=3))
        for r in recs:
            np.testing.assert_array_equal(r.g_v, np.ones(100))

    def test_labels_slow_and_bounded(self):
        recs = synth_generate(SynthConfig(n_recordings=3, frames_per_recording=1500,
                                          audio_dim=5, visual_dim=6, seed=4))
        for r in recs:
            for z in (r.arousal, r.valence):
                assert np.all(np.abs(z) <= 1.0)
                assert np.corrcoef(z[:-1], z[1:])[0, 1] > 0.99

    def test_dropout_zeroes_frames_and_gv(self):
        recs = synth_generate(SynthConfig(n_recordings=4, frames_per_recording=2000,
                                          audio_dim=5, visual_dim=6,
                                          face_dropout_rate=0.15, seed=5))
        missing = np.concatenate([1 - r.g_v for r in recs])
        assert 0.05 < missing.mean() < 0.3
        for r in recs:
            gone = r.g_v == 0
            assert np.all(r.visual[gone] == 0.0)
            assert np.all(np.abs(r.visual[~gone]).max(axis=1) > 0)

    def test_informativeness_oracle(self):
        # linear-regression oracle: decodable from noiseless audio, not from
        # uninformative visual features
        cfg = SynthConfig(n_recordings=8, frames_per_recording=2000,
                          audio_dim=12, visual_dim=16,
                          audio_noise=0.0, visual_noise=0.0,
                          visual_informativeness=0.0, seed=5)
        recs = synth_generate(cfg)
        audio_ccc = self._ridge_oracle(recs, 5, "audio", "arousal")
        visual_ccc = self._ridge_oracle(recs, 5, "visual", "arousal")
        assert audio_ccc > 0.8
        assert abs(visual_ccc) < 0.1

    @staticmethod
    def _ridge_oracle(recs, n_train, feats_name, target, n=20):
        stats = fit_norm([getattr(r, feats_name) for r in recs[:n_train]])
        xs, ys = [], []
        for r in recs[:n_train]:
            xa, ya = shift_for_delay(
                apply_norm(stats, getattr(r, feats_name)), r.labels(target), DelaySpec(n)
            )
            xs.append(xa)
            ys.append(ya)
        x_all, y_all = np.concatenate(xs), np.concatenate(ys)
        xm, ym = x_all.mean(axis=0), y_all.mean()
        w = np.linalg.solve(
            (x_all - xm).T @ (x_all - xm) + np.eye(x_all.shape[1]),
            (x_all - xm).T @ (y_all - ym),
        )
        preds, truths = [], []
        for r in recs[n_train:]:
            xa, ya = shift_for_delay(
                apply_norm(stats, getattr(r, feats_name)), r.labels(target), DelaySpec(n)
            )
            preds.append((xa - xm) @ w + ym)
            truths.append(ya)
        return ccc(np.concatenate(preds), np.concatenate(truths))

    def test_invalid_probability_rejected(self):
        with pytest.raises(ValueError, match="face_dropout_rate"):
            SynthConfig(face_dropout_rate=1.5)

    def test_defaults_mirror_benchmark_shape(self):
        cfg = SynthConfig()
        assert cfg.n_recordings == 27
        assert cfg.frames_per_recording == 7500  # 5 min at 40 ms
        assert cfg.audio_dim == 76 and cfg.visual_dim == 400


class TestMakeWindows:
    def test_exact_multiple_no_padding(self):
        rec = {"x": np.arange(160.0)[:, None], "y": np.arange(160.0)}
        batches = list(make_windows([rec], 80, 8, make_rng(0)))
        assert len(batches) == 1
        assert batches[0]["x"].shape == (80, 2, 1)
        np.testing.assert_array_equal(batches[0]["mask"], np.ones((80, 2)))

    def test_tail_padding_masked(self):
        rec = {"y": np.arange(100.0)}
        batches = list(make_windows([rec], 80, 8, make_rng(0)))
        assert len(batches) == 1
        mask = batches[0]["mask"]
        assert mask.shape == (80, 2)
        lengths = sorted(mask.sum(axis=0).tolist())
        assert lengths == [20.0, 80.0]

    def test_empty_recordings(self):
        assert list(make_windows([], 80, 8, make_rng(0))) == []

    def test_partition_covers_every_frame_once(self):
        recs = [
            {"y": np.arange(0.0, 190.0)},
            {"y": np.arange(1000.0, 1055.0)},
        ]
        seen = []
        for batch in make_windows(recs, 64, 2, make_rng(7)):
            vals = batch["y"][batch["mask"] == 1.0]
            seen.extend(vals.tolist())
        expected = list(np.arange(0.0, 190.0)) + list(np.arange(1000.0, 1055.0))
        assert sorted(seen) == sorted(expected)

    def test_shuffle_deterministic(self):
        recs = [{"y": np.arange(200.0)}]
        a = [b["y"].tobytes() for b in make_windows(recs, 32, 2, make_rng(5))]
        b = [b["y"].tobytes() for b in make_windows(recs, 32, 2, make_rng(5))]
        assert a == b


class TestDelaySearch:
    def test_recovers_planted_lag(self):
        cfg = SynthConfig(n_recordings=3, frames_per_recording=1200, audio_dim=10,
                          visual_dim=12, audio_noise=0.0, visual_noise=0.0,
                          label_lag=20, seed=7)
        assert delay_search(synth_generate(cfg), list(range(0, 31))) == 20

    def test_single_candidate(self):
        cfg = SynthConfig(n_recordings=2, frames_per_recording=300, audio_dim=6,
                          visual_dim=6, seed=8)
        assert delay_search(synth_generate(cfg), [0]) == 0

    def test_lag_free_returns_zero(self):
        cfg = SynthConfig(n_recordings=3, frames_per_recording=1200, audio_dim=10,
                          visual_dim=12, audio_noise=0.0, visual_noise=0.0,
                          label_lag=0, seed=8)
        assert delay_search(synth_generate(cfg), list(range(0, 31))) == 0

    def test_empty_candidates(self):
        with pytest.raises(ValueError):
            delay_search(synth_generate(SynthConfig(n_recordings=1, frames_per_recording=100,
                                                    audio_dim=4, visual_dim=4, seed=0)), [])


class TestEnergyScaling:
    def test_global_training_stats(self):
        recs = synth_generate(SynthConfig(n_recordings=4, frames_per_recording=200,
                                          audio_dim=5, visual_dim=6, seed=9))
        scale_energy_signals(recs, [recs[0].id, recs[1].id])
        energies = np.concatenate([recs[0].audio[:, 0], recs[1].audio[:, 0]])
        lo, hi = energies.min(), energies.max()
        for rec in recs:
            expected = np.clip((rec.audio[:, 0] - lo) / (hi - lo), 0.0, 1.0)
            np.testing.assert_allclose(rec.g_a, expected, atol=1e-15)
