"""Trainer, checkpoint, and gradient-verification tests."""

import dataclasses

import numpy as np
import pytest

import listenhead.autodiff as ad
from listenhead import synthdata, trainer
from listenhead.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from listenhead.coeffspace import CoefficientFrame, CoefficientSequence
from listenhead.hiercoder import contrastive_loss, project_text


def tiny_cfg(**overrides):
    base = dict(
        epochs=2, batch_size=2, learning_rate=1e-3, hidden_size=4, d_proj=6,
        d_text=4, d_fused=10, d_xm=10, n_mfcc=8, t_train=8,
        enc_widths=(6, 6, 6), seed=0,
    )
    base.update(overrides)
    return trainer.TrainConfig(**base)


@pytest.fixture(scope="module")
def dyads():
    cfg = synthdata.DyadConfig(seed=0, duration_s=0.8, fps=30.0, sample_rate=8000)
    return [
        synthdata.generate_dyad(dataclasses.replace(cfg, seed=i)) for i in range(6)
    ]


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = trainer.TrainConfig()
        assert cfg.stage == "joint"
        assert cfg.enc_widths == (64, 64, 64)

    def test_widths_coerced_to_tuple(self):
        cfg = trainer.TrainConfig(enc_widths=[8, 8, 8])
        assert cfg.enc_widths == (8, 8, 8)
        assert isinstance(cfg.enc_widths, tuple)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"stage": "both"},
            {"optimizer": "rmsprop"},
            {"t_train": 1},
            {"learning_rate": -1.0},
            {"tau": 0.0},
            {"enc_widths": (8, 8)},
            {"epochs": -1},
            {"lambda_contrastive": -0.5},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            trainer.TrainConfig(**kwargs)

    def test_total_epochs(self):
        assert trainer.TrainConfig(epochs=5).total_epochs == 5
        staged = trainer.TrainConfig(epochs=5, stage="staged", pretrain_epochs=3)
        assert staged.total_epochs == 8


class TestConfigFile:
    def test_round_trip_non_defaults(self, tmp_path):
        cfg = trainer.TrainConfig(
            epochs=7, learning_rate=0.0025, stage="staged", pretrain_epochs=2,
            optimizer="sgd", enc_widths=(8, 16, 32), use_listener_init=True,
            squared_norm=True, text_provider="stub", tau=0.21,
        )
        path = tmp_path / "run.cfg"
        trainer.write_train_config(cfg, path)
        assert trainer.read_train_config(path) == cfg

    def test_file_lists_every_field(self, tmp_path):
        path = tmp_path / "run.cfg"
        trainer.write_train_config(trainer.TrainConfig(), path)
        keys = {
            line.split("=")[0].strip() for line in path.read_text().splitlines()
        }
        assert keys == {f.name for f in dataclasses.fields(trainer.TrainConfig)}

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = 3\nmomentum = 0.9\n")
        with pytest.raises(ValueError, match="unknown key"):
            trainer.read_train_config(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs 3\n")
        with pytest.raises(ValueError, match="key = value"):
            trainer.read_train_config(path)

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# a comment\n\nepochs = 3\n")
        assert trainer.read_train_config(path).epochs == 3

    def test_bad_bool_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("use_listener_init = maybe\n")
        with pytest.raises(ValueError, match="boolean"):
            trainer.read_train_config(path)


class TestModelParams:
    def test_init_deterministic(self):
        cfg = tiny_cfg()
        a = trainer.init_model(cfg).named()
        b = trainer.init_model(cfg).named()
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_namespaces_disjoint_and_prefixed(self):
        named = trainer.init_model(tiny_cfg()).named()
        prefixes = {name.split(".")[0] for name in named}
        assert prefixes == {"enc", "fus", "xm", "dec"}

    def test_export_import_round_trip(self):
        cfg = tiny_cfg()
        model = trainer.init_model(cfg)
        flat = trainer.export_params(model)
        other = trainer.init_model(dataclasses.replace(cfg, seed=9))
        trainer.import_params(other, flat)
        for name, t in other.named().items():
            np.testing.assert_array_equal(t.data, flat[name])

    def test_import_rejects_shape_mismatch(self):
        model = trainer.init_model(tiny_cfg())
        flat = trainer.export_params(model)
        key = sorted(flat)[0]
        flat[key] = np.zeros((2, 2, 2))
        with pytest.raises(ValueError, match="shape mismatch"):
            trainer.import_params(model, flat)

    def test_import_rejects_missing_name(self):
        model = trainer.init_model(tiny_cfg())
        flat = trainer.export_params(model)
        flat.pop(sorted(flat)[0])
        with pytest.raises(ValueError, match="mismatch"):
            trainer.import_params(model, flat)


class TestFeaturize:
    def test_shapes(self, dyads):
        cfg = tiny_cfg()
        f = trainer.featurize_sample(dyads[0], cfg)
        n = f.length
        assert f.audio.shape == (n, 3 * cfg.n_mfcc)
        assert f.text.shape == (n, cfg.d_text)
        assert f.spk_beta.shape == (n, 64)
        assert f.lis_pose.shape == (n, 6)
        assert f.init_frame.shape == (70,)

    def test_align_tolerates_one_frame(self):
        rows = np.arange(20.0).reshape(10, 2)
        np.testing.assert_array_equal(trainer._align_rows(rows, 10, "x"), rows)
        np.testing.assert_array_equal(trainer._align_rows(rows, 9, "x"), rows[:9])
        padded = trainer._align_rows(rows, 11, "x")
        assert padded.shape == (11, 2)
        np.testing.assert_array_equal(padded[-1], rows[-1])
        with pytest.raises(ValueError, match="cannot align"):
            trainer._align_rows(rows, 13, "x")

    def test_stats_floor(self):
        f = trainer.SampleFeatures(
            audio=np.ones((4, 3)), text=np.zeros((4, 2)),
            spk_beta=np.zeros((4, 64)), spk_pose=np.zeros((4, 6)),
            lis_beta=np.zeros((4, 64)), lis_pose=np.zeros((4, 6)),
            init_frame=np.zeros(70), length=4,
        )
        mean, std = trainer.compute_feature_stats([f])
        np.testing.assert_array_equal(mean, np.ones(3))
        assert (std >= trainer.STD_FLOOR).all()

    def test_batch_pads_with_zeros(self, dyads):
        cfg = tiny_cfg(t_train=40)  # longer than the 24-frame samples
        feats = [trainer.featurize_sample(dyads[0], cfg)]
        mean, std = trainer.compute_feature_stats(feats)
        batch = trainer.make_batch(feats, [0], cfg.t_train, mean, std)
        n = feats[0].length
        assert batch.lengths[0] == n
        assert np.all(batch.audio[n:] == 0.0)
        assert np.all(batch.lis_beta[n:] == 0.0)

    def test_batch_truncates_to_t_train(self, dyads):
        cfg = tiny_cfg(t_train=8)
        feats = [trainer.featurize_sample(dyads[0], cfg)]
        mean, std = trainer.compute_feature_stats(feats)
        batch = trainer.make_batch(feats, [0], cfg.t_train, mean, std)
        assert batch.audio.shape[0] == 8
        assert batch.lengths[0] == 8


class TestTrainingLoop:
    def test_zero_lr_keeps_params(self, dyads):
        for opt in ("adam", "sgd"):
            cfg = tiny_cfg(learning_rate=0.0, epochs=2, optimizer=opt)
            before = trainer.export_params(trainer.init_model(cfg))
            res = trainer.train(cfg, dyads[:4], dyads[4:])
            for name, arr in res.checkpoint.params.items():
                np.testing.assert_array_equal(arr, before[name], err_msg=name)

    def test_loss_decreases_on_one_sample(self, dyads):
        cfg = tiny_cfg(epochs=60, batch_size=1, learning_rate=5e-3)
        res = trainer.train(cfg, dyads[:1], dyads[1:2])
        first = float(res.log_rows[0].split(",")[1])
        last = float(res.log_rows[-1].split(",")[1])
        assert last < 0.5 * first

    def test_identical_runs_identical_logs(self, dyads):
        cfg = tiny_cfg()
        a = trainer.train(cfg, dyads[:4], dyads[4:])
        b = trainer.train(cfg, dyads[:4], dyads[4:])
        assert a.log_rows == b.log_rows
        for name in a.checkpoint.params:
            np.testing.assert_array_equal(
                a.checkpoint.params[name], b.checkpoint.params[name]
            )

    def test_resume_matches_straight_run(self, dyads, tmp_path):
        cfg4 = tiny_cfg(epochs=4)
        cfg2 = dataclasses.replace(cfg4, epochs=2)
        straight = trainer.train(cfg4, dyads[:4], dyads[4:], log_path=tmp_path / "a.csv")
        first = trainer.train(cfg2, dyads[:4], dyads[4:], log_path=tmp_path / "b.csv")
        save_checkpoint(first.checkpoint, tmp_path / "ck.bin")
        loaded = load_checkpoint(tmp_path / "ck.bin")
        second = trainer.train(
            cfg4, dyads[:4], dyads[4:], log_path=tmp_path / "b.csv", resume_from=loaded
        )
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert straight.log_rows == first.log_rows + second.log_rows
        for name in straight.checkpoint.params:
            np.testing.assert_array_equal(
                straight.checkpoint.params[name], second.checkpoint.params[name],
                err_msg=name,
            )
        assert straight.checkpoint.rng_state == second.checkpoint.rng_state

    def test_resume_rejects_changed_config(self, dyads, tmp_path):
        cfg = tiny_cfg(epochs=2)
        res = trainer.train(cfg, dyads[:4], dyads[4:])
        other = dataclasses.replace(cfg, epochs=4, hidden_size=6)
        with pytest.raises(ValueError, match="resume config"):
            trainer.train(other, dyads[:4], dyads[4:], resume_from=res.checkpoint)

    def test_staged_freezes_each_phase(self, dyads):
        cfg = tiny_cfg(stage="staged", pretrain_epochs=1, epochs=1)
        init = trainer.export_params(trainer.init_model(cfg))

        mid = trainer.train(
            dataclasses.replace(cfg, epochs=0), dyads[:4], dyads[4:]
        ).checkpoint.params
        # phase 1 moves only encoder blocks
        for name in init:
            moved = not np.array_equal(mid[name], init[name])
            assert moved == name.startswith("enc."), name

        final = trainer.train(cfg, dyads[:4], dyads[4:]).checkpoint.params
        # phase 2 leaves the encoder exactly where phase 1 put it
        for name in init:
            if name.startswith("enc."):
                np.testing.assert_array_equal(final[name], mid[name], err_msg=name)
        assert any(
            not np.array_equal(final[n], mid[n])
            for n in init if not n.startswith("enc.")
        )

    def test_val_contrastive_frozen_with_encoder(self, dyads):
        # validation runs after each epoch's updates, so every row reflects
        # the post-pretrain encoder, which phase 2 then never touches
        cfg = tiny_cfg(stage="staged", pretrain_epochs=1, epochs=3)
        res = trainer.train(cfg, dyads[:4], dyads[4:])
        val_con = [row.split(",")[4] for row in res.log_rows]
        assert len(set(val_con)) == 1
        joint = trainer.train(tiny_cfg(epochs=4), dyads[:4], dyads[4:])
        joint_val_con = [row.split(",")[4] for row in joint.log_rows]
        assert len(set(joint_val_con)) > 1  # joint training keeps moving it

    def test_encoder_learns_from_regression_alone(self, dyads):
        cfg = tiny_cfg(lambda_contrastive=0.0, epochs=1)
        init = trainer.export_params(trainer.init_model(cfg))
        res = trainer.train(cfg, dyads[:4], dyads[4:])
        changed = [
            name for name in init
            if name.startswith("enc.")
            and not np.array_equal(res.checkpoint.params[name], init[name])
        ]
        assert changed  # gradient flows back through fusion into the encoder

    def test_divergence_guard(self, dyads):
        cfg = tiny_cfg(
            optimizer="sgd", learning_rate=1e12, squared_norm=True, epochs=8
        )
        with np.errstate(invalid="ignore", over="ignore"):
            with pytest.raises(RuntimeError, match="divergence at epoch"):
                trainer.train(cfg, dyads[:4], dyads[4:])

    def test_empty_sets_rejected(self, dyads):
        with pytest.raises(ValueError, match="empty training set"):
            trainer.train(tiny_cfg(), [], dyads[4:])
        with pytest.raises(ValueError, match="empty validation set"):
            trainer.train(tiny_cfg(), dyads[:4], [])

    def test_log_header_and_row_shape(self, dyads):
        res = trainer.train(tiny_cfg(epochs=1), dyads[:4], dyads[4:])
        assert res.log_text.splitlines()[0] == trainer.LOG_HEADER
        fields = res.log_rows[0].split(",")
        assert fields[0] == "0"
        assert len(fields) == 5
        for v in fields[1:]:
            assert np.isfinite(float(v))


class TestContrastiveParity:
    def test_batched_matches_reference_loss(self, dyads):
        cfg = tiny_cfg()
        model = trainer.init_model(cfg)
        feats = [trainer.featurize_sample(dyads[0], cfg)]
        mean, std = trainer.compute_feature_stats(feats)
        batch = trainer.make_batch(feats, [0], cfg.t_train, mean, std)
        with ad.no_grad():
            _, level_rows = trainer._predict(model, cfg, batch)
            low_r, mid_r, high_r = level_rows
            text_flat = batch.text.reshape(-1, cfg.d_text)
            t_anchor = 3
            idx = np.array([t_anchor], dtype=np.intp)
            batched = trainer._contrastive_from_rows(
                level_rows, text_flat, idx, model, cfg
            )
            text_feat = project_text(ad.tensor(text_flat[idx]), model.encoder)
            n = high_r.data.shape[0]
            pool = (
                [high_r.data[t] for t in range(n)]
                + [mid_r.data[t] for t in range(n)]
                + [low_r.data[t] for t in range(n)]
            )
            ref = contrastive_loss(
                text_feat.data[0], high_r.data[t_anchor], pool, cfg.tau
            )
        assert abs(float(batched.data) - float(ref.data)) < 1e-12

    def test_anchor_positions_respect_lengths(self):
        idx = trainer._anchor_positions(8, 2, np.array([8, 3]), offset=0)
        # column 1 only contributes frames below its length
        cols = idx % 2
        frames = idx // 2
        assert (frames[cols == 1] < 3).all()
        assert (frames[cols == 0] < 8).all()

    def test_anchor_offset_rotates(self):
        a = trainer._anchor_positions(64, 1, np.array([64]), offset=0)
        b = trainer._anchor_positions(64, 1, np.array([64]), offset=1)
        assert set(a.tolist()).isdisjoint(b.tolist())


class TestInfer:
    def test_shapes_fps_and_determinism(self, dyads):
        cfg = tiny_cfg(epochs=1)
        ck = trainer.train(cfg, dyads[:4], dyads[4:]).checkpoint
        s = dyads[5]
        a = trainer.infer(ck, s.speaker_audio, s.speaker_coeffs, s.transcript_tokens)
        b = trainer.infer(ck, s.speaker_audio, s.speaker_coeffs, s.transcript_tokens)
        assert len(a) == len(s.speaker_coeffs)
        assert a.fps == s.speaker_coeffs.fps
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(a.pose, b.pose)

    def test_listener_init_changes_output(self, dyads):
        cfg = tiny_cfg(epochs=1, use_listener_init=True)
        ck = trainer.train(cfg, dyads[:4], dyads[4:]).checkpoint
        s = dyads[5]
        base = trainer.infer(ck, s.speaker_audio, s.speaker_coeffs, s.transcript_tokens)
        frame = CoefficientFrame(beta=np.full(64, 0.5), pose=np.full(6, 0.2))
        seeded = trainer.infer(
            ck, s.speaker_audio, s.speaker_coeffs, s.transcript_tokens,
            listener_init=frame,
        )
        assert not np.allclose(base.beta, seeded.beta)

    def test_residual_output_offsets_prediction(self, dyads):
        cfg = tiny_cfg(epochs=0, residual_output=True)
        ck = trainer.train(cfg, dyads[:4], dyads[4:]).checkpoint
        s = dyads[5]
        zero = trainer.infer(ck, s.speaker_audio, s.speaker_coeffs, s.transcript_tokens)
        frame = CoefficientFrame(beta=np.full(64, 0.25), pose=np.zeros(6))
        shifted = trainer.infer(
            ck, s.speaker_audio, s.speaker_coeffs, s.transcript_tokens,
            listener_init=frame,
        )
        np.testing.assert_allclose(shifted.beta, zero.beta + 0.25, atol=1e-12)

    def test_frame_count_mismatch_rejected(self, dyads):
        cfg = tiny_cfg(epochs=0)
        ck = trainer.train(cfg, dyads[:4], dyads[4:]).checkpoint
        s = dyads[5]
        bad = CoefficientSequence(
            s.speaker_coeffs.beta[:-4], s.speaker_coeffs.pose[:-4],
            fps=s.speaker_coeffs.fps,
        )
        with pytest.raises(ValueError, match="cannot align"):
            trainer.infer(ck, s.speaker_audio, bad, s.transcript_tokens)


class TestGradientCheck:
    def test_passes_and_is_exhaustive(self, dyads):
        cfg = tiny_cfg(hidden_size=3, d_proj=4, d_text=3, d_fused=6, d_xm=6,
                       enc_widths=(4, 4, 4), t_train=6)
        report = trainer.gradient_check(cfg, dyads[0], tolerance=1e-4)
        assert report.passed, report.summary()
        assert set(report.block_errors) == set(
            trainer.init_model(cfg).named()
        )
        assert "PASS" in report.summary()

    def test_catches_corrupted_block(self, dyads):
        cfg = tiny_cfg(hidden_size=3, d_proj=4, d_text=3, d_fused=6, d_xm=6,
                       enc_widths=(4, 4, 4), t_train=6)
        report = trainer.gradient_check(
            cfg, dyads[0], tolerance=1e-4, corrupt_block="dec.l2.f.u_h"
        )
        assert not report.passed
        assert report.failed_blocks == ("dec.l2.f.u_h",)
        assert "dec.l2.f.u_h" in report.summary()

    def test_refuses_large_models(self, dyads):
        with pytest.raises(ValueError, match="hidden_size"):
            trainer.gradient_check(tiny_cfg(hidden_size=16), dyads[0])
        with pytest.raises(ValueError, match="t_train"):
            trainer.gradient_check(tiny_cfg(t_train=32), dyads[0])

    def test_unknown_corrupt_block(self, dyads):
        with pytest.raises(ValueError, match="unknown parameter block"):
            trainer.gradient_check(tiny_cfg(), dyads[0], corrupt_block="nope.w")


class TestCheckpointIO:
    def make_checkpoint(self, dyads, **overrides):
        cfg = tiny_cfg(epochs=1, **overrides)
        return trainer.train(cfg, dyads[:4], dyads[4:]).checkpoint

    def test_round_trip_exact(self, dyads, tmp_path):
        ck = self.make_checkpoint(dyads)
        path = tmp_path / "ck.bin"
        save_checkpoint(ck, path)
        loaded = load_checkpoint(path)
        assert loaded.config == ck.config
        assert loaded.epoch == ck.epoch
        assert loaded.rng_state == ck.rng_state
        assert set(loaded.params) == set(ck.params)
        for name in ck.params:
            np.testing.assert_array_equal(loaded.params[name], ck.params[name])
        for name in ck.opt_state:
            np.testing.assert_array_equal(loaded.opt_state[name], ck.opt_state[name])
        for name in ck.buffers:
            np.testing.assert_array_equal(loaded.buffers[name], ck.buffers[name])

    def test_resave_byte_identical(self, dyads, tmp_path):
        ck = self.make_checkpoint(dyads)
        save_checkpoint(ck, tmp_path / "a.bin")
        save_checkpoint(load_checkpoint(tmp_path / "a.bin"), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_bad_magic(self, dyads, tmp_path):
        ck = self.make_checkpoint(dyads)
        path = tmp_path / "ck.bin"
        save_checkpoint(ck, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch(self, dyads, tmp_path):
        ck = self.make_checkpoint(dyads)
        path = tmp_path / "ck.bin"
        save_checkpoint(ck, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncation(self, dyads, tmp_path):
        ck = self.make_checkpoint(dyads)
        path = tmp_path / "ck.bin"
        save_checkpoint(ck, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_sgd_state_round_trips(self, dyads, tmp_path):
        ck = self.make_checkpoint(dyads, optimizer="sgd")
        save_checkpoint(ck, tmp_path / "ck.bin")
        loaded = load_checkpoint(tmp_path / "ck.bin")
        assert set(loaded.opt_state) == {"step"}
        assert float(loaded.opt_state["step"]) == float(ck.opt_state["step"])


class TestHelpers:
    def test_constant_mean_baseline(self, dyads):
        beta_mean, pose_mean = trainer.constant_mean_baseline(dyads[:3])
        stack = np.concatenate([d.listener_coeffs.beta for d in dyads[:3]])
        np.testing.assert_allclose(beta_mean, stack.mean(axis=0), atol=1e-12)
        seq = trainer.baseline_sequence(beta_mean, pose_mean, 10, 30.0)
        assert len(seq) == 10
        np.testing.assert_array_equal(seq.beta[0], seq.beta[9])

    def test_contrastive_margin_deterministic(self, dyads):
        ck = trainer.train(tiny_cfg(epochs=1), dyads[:4], dyads[4:]).checkpoint
        a = trainer.contrastive_margin(ck, dyads[4:], k=4, stride=6, rng_seed=0)
        b = trainer.contrastive_margin(ck, dyads[4:], k=4, stride=6, rng_seed=0)
        assert a == b
        assert np.isfinite(a)
