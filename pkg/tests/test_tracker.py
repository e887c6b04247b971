"""Windowed video-query tracking and confidence-threshold inference."""

import numpy as np
import pytest

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor
from avinseg.localizer import DecoderLayer, LinearHead, MaskHead
from avinseg.tracker import EmptyVideoError, VideoQuerySet, infer, track


def _np_layernorm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def _np_attend(q, kv, wq, wk, wv, wo):
    d = q.shape[1]
    scores = (q @ wq) @ (kv @ wk).T / np.sqrt(d)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)) @ (kv @ wv) @ wo


def _np_block(block: DecoderLayer, state, kv):
    x = _np_layernorm(
        state + _np_attend(state, kv, block.cross_w_q.data, block.cross_w_k.data, block.cross_w_v.data, block.cross_w_o.data),
        block.ln_cross_gain.data,
        block.ln_cross_bias.data,
    )
    x = _np_layernorm(
        x + _np_attend(x, x, block.self_w_q.data, block.self_w_k.data, block.self_w_v.data, block.self_w_o.data),
        block.ln_self_gain.data,
        block.ln_self_bias.data,
    )
    return _np_layernorm(
        x + np.maximum(x @ block.w_ff1.data, 0.0) @ block.w_ff2.data,
        block.ln_ff_gain.data,
        block.ln_ff_bias.data,
    )


def _setup(rng, d=5, n_v=3, n_f=2, t=2, pix=4):
    block = DecoderLayer.create(d, 2 * d, rng)
    vq = Tensor(rng.uniform(-1, 1, (n_v, d)), requires_grad=True)
    frame_q = [Tensor(rng.uniform(-1, 1, (n_f, d))) for _ in range(t)]
    audio = [Tensor(rng.uniform(-1, 1, (1, d))) for _ in range(t)]
    final_maps = [Tensor(rng.uniform(-1, 1, (pix, d))) for _ in range(t)]
    m_head = MaskHead.create(d, rng)
    c_head = LinearHead.create(d, 4, rng)
    return block, vq, frame_q, audio, final_maps, m_head, c_head


class TestTrack:
    def test_empty_video_rejected(self, rng):
        block, vq, frame_q, audio, maps, mh, ch = _setup(rng)
        with pytest.raises(EmptyVideoError):
            track(block, vq, [], [], [], mh, ch)

    def test_single_frame_single_window_matches_one_block(self, rng):
        block, vq, frame_q, audio, maps, mh, ch = _setup(rng, t=1)
        out = track(block, vq, frame_q, audio, maps, mh, ch, window=6, include_audio=False)
        expected = _np_block(block, vq.data, frame_q[0].data)
        np.testing.assert_allclose(out.queries.data, expected, rtol=1e-12, atol=1e-12)

    def test_two_windows_match_step_by_step_evaluation(self, rng):
        block, vq, frame_q, audio, maps, mh, ch = _setup(rng, t=2)
        out = track(block, vq, frame_q, audio, maps, mh, ch, window=1, include_audio=True)
        state = vq.data
        for t in range(2):
            kv = np.vstack([frame_q[t].data, audio[t].data])
            state = _np_block(block, state, kv)
        np.testing.assert_allclose(out.queries.data, state, rtol=1e-12, atol=1e-12)
        # heads: class logits and per-frame mask logits from the final state
        hidden = np.maximum(state @ mh.w1.data + mh.b1.data, 0.0)
        emb = hidden @ mh.w2.data + mh.b2.data
        for t in range(2):
            np.testing.assert_allclose(out.mask_logits[t].data, emb @ maps[t].data.T, rtol=1e-12)
        np.testing.assert_allclose(out.class_logits.data, state @ ch.w.data + ch.b.data, rtol=1e-12)

    def test_zero_value_weights_sever_frame_influence(self, rng):
        block, vq, frame_q, audio, maps, mh, ch = _setup(rng, t=2)
        block.cross_w_v.data[:] = 0.0
        out1 = track(block, vq, frame_q, audio, maps, mh, ch, include_audio=True)
        other_frames = [Tensor(rng.uniform(-1, 1, f.shape)) for f in frame_q]
        other_audio = [Tensor(rng.uniform(-1, 1, a.shape)) for a in audio]
        out2 = track(block, vq, other_frames, other_audio, maps, mh, ch, include_audio=True)
        np.testing.assert_array_equal(out1.queries.data, out2.queries.data)

    def test_audio_toggle_changes_result(self, rng):
        block, vq, frame_q, audio, maps, mh, ch = _setup(rng, t=2)
        with_audio = track(block, vq, frame_q, audio, maps, mh, ch, include_audio=True)
        without = track(block, vq, frame_q, audio, maps, mh, ch, include_audio=False)
        assert np.abs(with_audio.queries.data - without.queries.data).max() > 0

    def test_gradient_flows_to_video_queries_and_frame_queries(self, rng):
        block, vq, frame_q, audio, maps, mh, ch = _setup(rng, t=2)
        for f in frame_q:
            f.requires_grad = True
        out = track(block, vq, frame_q, audio, maps, mh, ch)
        total = ad.tsum(ad.mul(out.class_logits, out.class_logits))
        for m in out.mask_logits:
            total = ad.add(total, ad.tsum(ad.mul(m, m)))
        total.backward()
        assert vq.grad is not None and np.abs(vq.grad).max() > 0
        for f in frame_q:
            assert f.grad is not None and np.abs(f.grad).max() > 0


class TestInfer:
    def _video_out(self, class_logits, mask_logits):
        t = mask_logits.shape[1]
        return VideoQuerySet(
            queries=Tensor(np.zeros((class_logits.shape[0], 2))),
            class_logits=Tensor(class_logits),
            mask_logits=[Tensor(mask_logits[:, i]) for i in range(t)],
        )

    def test_all_no_object_gives_empty(self):
        class_logits = np.full((3, 4), -20.0)
        class_logits[:, 3] = 20.0
        out = self._video_out(class_logits, np.zeros((3, 2, 4)))
        assert infer(out, 0.5, 2, 2) == []

    def test_single_survivor(self):
        class_logits = np.full((3, 4), -20.0)
        class_logits[:, 3] = 20.0
        class_logits[1] = [4.0, 0.0, 0.0, 1.0]
        out = self._video_out(class_logits, np.zeros((3, 2, 4)))
        trajs = infer(out, 0.5, 2, 2)
        assert len(trajs) == 1
        assert trajs[0].label == 1
        e = np.exp(class_logits[1] - class_logits[1].max())
        expected_conf = (e / e.sum())[0]
        assert trajs[0].confidence == pytest.approx(expected_conf)

    def test_threshold_monotonicity_nested_sets(self, rng):
        class_logits = rng.uniform(-2, 2, (5, 4))
        masks = rng.uniform(-3, 3, (5, 2, 6))
        out = self._video_out(class_logits, masks)
        kept = {}
        for thr in (0.3, 0.5, 0.7):
            kept[thr] = {t.confidence for t in infer(out, thr, 2, 3)}
        assert kept[0.7] <= kept[0.5] <= kept[0.3]

    def test_ids_ordered_by_confidence_and_stable(self, rng):
        class_logits = rng.uniform(-2, 2, (6, 4))
        masks = rng.uniform(-3, 3, (6, 2, 6))
        out = self._video_out(class_logits, masks)
        a = infer(out, 0.3, 2, 3)
        b = infer(out, 0.3, 2, 3)
        assert [t.id for t in a] == list(range(len(a)))
        confs = [t.confidence for t in a]
        assert confs == sorted(confs, reverse=True)
        assert [(t.id, t.confidence) for t in a] == [(t.id, t.confidence) for t in b]

    def test_masks_are_sigmoid_probabilities(self):
        class_logits = np.array([[5.0, 0.0, 0.0, -5.0]])
        mask_logits = np.array([[[0.0, 2.0, -2.0, 30.0]]])
        out = self._video_out(class_logits, mask_logits)
        trajs = infer(out, 0.5, 2, 2)
        expected = 1 / (1 + np.exp(-np.array([0.0, 2.0, -2.0, 30.0])))
        np.testing.assert_allclose(trajs[0].masks.reshape(-1), expected, rtol=1e-12)

    def test_invalid_threshold_rejected(self):
        out = self._video_out(np.zeros((1, 3)), np.zeros((1, 1, 4)))
        with pytest.raises(ValueError):
            infer(out, 0.0, 2, 2)
        with pytest.raises(ValueError):
            infer(out, 1.0, 2, 2)
