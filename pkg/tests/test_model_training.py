"""Model wiring, checkpoints, the optimizer and the training loop."""

import numpy as np
import pytest

from avinseg.model import CheckpointError, Model, load_checkpoint, save_checkpoint
from avinseg.training import (
    Adam,
    TrainingDivergedError,
    prepare_targets,
    train_run,
    video_objective,
)
from avinseg.autodiff import Tensor

from conftest import micro_run_config


class TestModelForward:
    def test_forward_shapes(self, micro_corpus):
        cfg = micro_run_config()
        model = Model(cfg.model, np.random.default_rng(0))
        video = micro_corpus.videos[0]
        fwd = model.forward_video(video.frames, video.audio)
        t = video.frames.shape[0]
        assert len(fwd.frame_outputs) == t
        fo = fwd.frame_outputs[0]
        assert fo.frame_queries.shape == (cfg.model.n_f, cfg.model.d_model)
        assert fo.mask_logits.shape == (cfg.model.n_f, cfg.model.h * cfg.model.w)
        assert fo.class_logits.shape == (cfg.model.n_f, cfg.model.k_classes + 1)
        assert fo.count_logits.shape == (1, cfg.model.k_max)
        assert fwd.video_out.class_logits.shape == (cfg.model.n_v, cfg.model.k_classes + 1)
        assert len(fwd.video_out.mask_logits) == t

    def test_forward_deterministic(self, micro_corpus):
        cfg = micro_run_config()
        video = micro_corpus.videos[0]
        outs = []
        for _ in range(2):
            model = Model(cfg.model, np.random.default_rng(3))
            fwd = model.forward_video(video.frames, video.audio)
            outs.append(fwd.video_out.class_logits.data.copy())
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_additive_mode_requires_single_audio_token(self, micro_corpus):
        cfg = micro_run_config()
        cfg.model.use_acqg = False
        model = Model(cfg.model, np.random.default_rng(0))
        video = micro_corpus.videos[0]
        fwd = model.forward_video(video.frames, video.audio)
        assert fwd.frame_outputs[0].frame_queries.shape == (cfg.model.n_f, cfg.model.d_model)

    def test_ce_mode_count_head_width(self):
        cfg = micro_run_config()
        cfg.model.count_loss = "ce"
        model = Model(cfg.model, np.random.default_rng(0))
        assert model.count_head.w.shape[1] == cfg.model.k_max + 1

    def test_count_decoding_modes(self, micro_corpus):
        video = micro_corpus.videos[0]
        for mode in ("saoc", "ce"):
            cfg = micro_run_config()
            cfg.model.count_loss = mode
            model = Model(cfg.model, np.random.default_rng(0))
            fwd = model.forward_video(video.frames, video.audio)
            counts = model.decode_counts(fwd.frame_outputs)
            assert len(counts) == video.frames.shape[0]
            assert all(0 <= c <= cfg.model.k_max for c in counts)


class TestObjective:
    def test_components_finite_and_positive(self, micro_corpus):
        cfg = micro_run_config()
        model = Model(cfg.model, np.random.default_rng(1))
        video = micro_corpus.videos[0]
        fwd = model.forward_video(video.frames, video.audio)
        comps = video_objective(model, fwd, prepare_targets(video), cfg)
        for name, tensor in comps.items():
            assert np.isfinite(tensor.item()), name
        assert comps["total"].item() > 0

    def test_gradients_reach_all_parameter_groups(self, micro_corpus):
        cfg = micro_run_config()
        cfg.data.m_audio = 1
        model = Model(cfg.model, np.random.default_rng(1))
        video = micro_corpus.videos[1]
        fwd = model.forward_video(video.frames, video.audio)
        comps = video_objective(model, fwd, prepare_targets(video), cfg)
        comps["total"].backward()
        groups = {
            "queries": ["queries"],
            "count": ["count_token", "count_head.w"],
            "embed": ["embed.w_pix", "embed.row"],
            "decoder": ["decoder.0.cross_w_v"],
            "tracker": ["tracker.cross_w_v", "video_queries"],
            "heads": ["mask_head.w1", "class_head.w", "video_mask_head.w1", "video_class_head.w"],
        }
        params = model.parameters()
        for group, names in groups.items():
            for name in names:
                g = params[name].grad
                assert g is not None and np.abs(g).max() > 0, f"{group}: {name} has no gradient"


class TestCheckpoint:
    def test_round_trip_bitwise_forward(self, tmp_path, micro_corpus):
        cfg = micro_run_config()
        model = Model(cfg.model, np.random.default_rng(5))
        video = micro_corpus.videos[0]
        before = model.forward_video(video.frames, video.audio).video_out.class_logits.data.copy()
        save_checkpoint(tmp_path / "ckpt.npz", model, cfg, step=17, rng_state={"note": 1})
        loaded, loaded_cfg, step, rng_state = load_checkpoint(tmp_path / "ckpt.npz")
        assert step == 17
        assert rng_state == {"note": 1}
        assert loaded_cfg.model == cfg.model
        after = loaded.forward_video(video.frames, video.audio).video_out.class_logits.data
        np.testing.assert_array_equal(before, after)

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "nope.npz")

    def test_corrupt_checkpoint(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not an npz at all")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestAdam:
    def test_quadratic_convergence(self):
        x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = Adam({"x": x}, lr=0.1)
        from avinseg import autodiff as ad

        for _ in range(300):
            loss = ad.tsum(ad.mul(x, x))
            loss.backward()
            opt.step()
        assert np.abs(x.data).max() < 1e-2

    def test_missing_gradient_treated_as_zero(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam({"x": x}, lr=0.1)
        x.grad = None
        opt.step()
        np.testing.assert_array_equal(x.data, [1.0])


class TestTrainRun:
    def test_loss_decreases_over_200_steps(self, micro_corpus):
        cfg = micro_run_config()
        cfg.train.steps = 200
        cfg.train.lr = 2e-3
        result = train_run(cfg, micro_corpus.split("train"))
        first = float(result.log_rows[1].split(",")[-1])
        last = float(result.log_rows[-1].split(",")[-1])
        assert last < first

    def test_identical_seeds_reproduce_logs(self, micro_corpus):
        cfg = micro_run_config()
        cfg.train.steps = 5
        a = train_run(cfg, micro_corpus.split("train"))
        b = train_run(cfg, micro_corpus.split("train"))
        assert a.log_rows == b.log_rows

    def test_divergence_names_component(self, micro_corpus):
        import dataclasses

        cfg = micro_run_config()
        cfg.train.steps = 2
        original = micro_corpus.split("train")[0]
        bad = dataclasses.replace(original, audio=np.full_like(original.audio, np.nan))
        with pytest.raises(TrainingDivergedError) as err:
            train_run(cfg, [bad])
        assert err.value.component in ("L_frame", "L_video", "L_sim", "L_SAOC", "total")

    def test_zero_steps_writes_initial_checkpoint(self, micro_corpus):
        cfg = micro_run_config()
        cfg.train.steps = 0
        seen = []
        train_run(cfg, micro_corpus.split("train"), checkpoint_hook=lambda s, m: seen.append(s))
        assert seen == [0]
