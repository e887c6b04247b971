"""Registered gradient-check suite.

Every differentiable piece of the pipeline gets a named finite-difference
check: primitive ops at full coordinate coverage, composite blocks and the
end-to-end objective with seeded coordinate sampling so the whole suite
stays fast. The CLI exposes the suite via the grad-check command and the
acceptance tests run it across many seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor, grad_check
from avinseg.config import RunConfig
from avinseg.counting import saoc_loss
from avinseg.fusion import CrossAttentionLayer, acqg, cross_attention
from avinseg.localizer import DecoderLayer, FrameEmbedder, MaskHead, decode, embed_frame, mask_head
from avinseg.matching import LossWeights, set_loss
from avinseg.model import Model
from avinseg.synthdata import generate
from avinseg.training import prepare_targets, video_objective


@dataclass
class CheckSpec:
    name: str
    tol: float
    build: object  # seed -> (f, inputs)
    max_coords: int | None = None


@dataclass
class CheckResult:
    name: str
    tol: float
    max_rel_err: float
    passed: bool
    seeds: int

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{self.name}: max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} seeds={self.seeds} {status}"


def _rand(rng, shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _build_matmul(seed):
    rng = np.random.default_rng([seed, 1])
    a = _rand(rng, (3, 4))
    b = _rand(rng, (4, 2))
    return (lambda a, b: ad.tsum(ad.matmul(a, b)), [a, b])


def _build_softmax(seed):
    rng = np.random.default_rng([seed, 2])
    x = _rand(rng, (3, 5))
    w = ad.constant(rng.uniform(-1, 1, (3, 5)))
    return (lambda x: ad.tsum(ad.mul(ad.softmax(x, axis=1), w)), [x])


def _build_sigmoid(seed):
    rng = np.random.default_rng([seed, 3])
    x = _rand(rng, (2, 6))
    return (lambda x: ad.tsum(ad.log(ad.sigmoid(x))), [x])


def _build_layernorm(seed):
    rng = np.random.default_rng([seed, 4])
    x = _rand(rng, (3, 6))
    gain = _rand(rng, (1, 6), 0.5, 1.5)
    bias = _rand(rng, (1, 6), -0.5, 0.5)
    w = ad.constant(rng.uniform(-1, 1, (3, 6)))
    return (
        lambda x, g, b: ad.tsum(ad.mul(ad.layernorm(x, g, b), w)),
        [x, gain, bias],
    )


def _build_saoc(seed):
    rng = np.random.default_rng([seed, 5])
    k_max = 3
    frames = 4
    logits = [_rand(rng, (1, k_max), -3.0, 3.0) for _ in range(frames)]
    counts = [int(c) for c in rng.integers(0, k_max + 2, size=frames)]
    return (lambda *ls: saoc_loss(list(ls), counts, k_max), logits)


def _build_cross_attention(seed):
    rng = np.random.default_rng([seed, 6])
    d, d_ff = 6, 12
    layer = CrossAttentionLayer.create(d, d_ff, rng)
    q = _rand(rng, (3, d), -1.0, 1.0)
    kv = _rand(rng, (2, d), -1.0, 1.0)
    params = list(layer.params("l").values())
    w = ad.constant(rng.uniform(-1, 1, (3, d)))

    def f(q, kv, *_):
        return ad.tsum(ad.mul(cross_attention(layer, q, kv), w))

    return (f, [q, kv] + params)


def _build_acqg(seed):
    rng = np.random.default_rng([seed, 7])
    d, d_ff = 6, 12
    layers = [CrossAttentionLayer.create(d, d_ff, rng) for _ in range(2)]
    stream = _rand(rng, (4, d), -1.0, 1.0)
    audio = _rand(rng, (2, d), -1.0, 1.0)
    params = [p for layer in layers for p in layer.params("l").values()]
    w = ad.constant(rng.uniform(-1, 1, (4, d)))

    def f(stream, audio, *_):
        return ad.tsum(ad.mul(acqg(layers, stream, audio), w))

    return (f, [stream, audio] + params)


def _build_decode(seed):
    rng = np.random.default_rng([seed, 8])
    d, d_ff, h, w = 6, 12, 4, 4
    layers = [DecoderLayer.create(d, d_ff, rng) for _ in range(2)]
    embedder = FrameEmbedder.create(h, w, 2, d, rng)
    frame = rng.uniform(0, 1, (h, w, 2))
    stream = _rand(rng, (3, d), -1.0, 1.0)
    params = [p for layer in layers for p in layer.params("l").values()]
    params += list(embedder.params().values())
    probe = ad.constant(rng.uniform(-1, 1, (2, d)))

    def f(stream, *_):
        feats = embed_frame(embedder, frame)
        queries, count = decode(layers, stream, feats)
        return ad.add(ad.tsum(ad.mul(queries, probe)), ad.tsum(count))

    return (f, [stream] + params)


def _build_mask_head(seed):
    rng = np.random.default_rng([seed, 9])
    d = 6
    head = MaskHead.create(d, rng)
    queries = _rand(rng, (3, d), -1.0, 1.0)
    final_map = _rand(rng, (8, d), -1.0, 1.0)
    probe = ad.constant(rng.uniform(-1, 1, (3, 8)))
    params = list(head.params("m").values())

    def f(queries, final_map, *_):
        return ad.tsum(ad.mul(mask_head(head, queries, final_map), probe))

    return (f, [queries, final_map] + params)


def _build_frame_loss(seed):
    rng = np.random.default_rng([seed, 10])
    n_pred, n_pix, k = 4, 12, 3
    mask_logits = _rand(rng, (n_pred, n_pix), -2.0, 2.0)
    class_logits = _rand(rng, (n_pred, k + 1), -2.0, 2.0)
    gt_masks = (rng.uniform(size=(2, n_pix)) < 0.4).astype(np.float64)
    gt_labels = 1 + rng.integers(0, k, size=2)
    weights = LossWeights()

    def f(ml, cl):
        return set_loss(ml, cl, gt_masks, gt_labels, weights, k)

    return (f, [mask_logits, class_logits])


def _tiny_run_config(seed: int) -> RunConfig:
    cfg = RunConfig()
    cfg.model.d_model = 6
    cfg.model.d_ff = 12
    cfg.model.n_f = 3
    cfg.model.n_v = 3
    cfg.model.k_classes = 3
    cfg.model.k_max = 2
    cfg.model.m_audio = 1
    cfg.model.h = 8
    cfg.model.w = 8
    cfg.model.channels = 2
    cfg.model.acqg_layers = 2
    cfg.model.decoder_layers = 2
    cfg.model.window = 2
    cfg.data.n_train = 1
    cfg.data.n_val = 1
    cfg.data.t = 2
    cfg.data.h = 8
    cfg.data.w = 8
    cfg.data.channels = 2
    cfg.data.k_classes = 3
    cfg.data.sprites_min = 2
    cfg.data.sprites_max = 3
    cfg.data.size_min = 1
    cfg.data.size_max = 2
    cfg.data.audio_dim = 4
    cfg.data.m_audio = 1
    cfg.data.d_model = 6
    cfg.data.seed = seed
    return cfg


def _build_total_loss(seed):
    cfg = _tiny_run_config(seed)
    corpus = generate(cfg.data, seed=seed, require_coverage=False)
    video = corpus.videos[0]
    gt = prepare_targets(video)
    model = Model(cfg.model, rng=np.random.default_rng([seed, 11]))
    params = model.parameters()
    names = sorted(params)

    def f(*_):
        fwd = model.forward_video(video.frames, video.audio)
        return video_objective(model, fwd, gt, cfg)["total"]

    return (f, [params[n] for n in names])


def registered_checks() -> list[CheckSpec]:
    return [
        CheckSpec("matmul", 1e-6, _build_matmul),
        CheckSpec("softmax", 1e-4, _build_softmax),
        CheckSpec("sigmoid_log", 1e-4, _build_sigmoid),
        CheckSpec("layernorm", 1e-5, _build_layernorm),
        CheckSpec("saoc_loss", 1e-5, _build_saoc),
        CheckSpec("cross_attention", 1e-4, _build_cross_attention),
        CheckSpec("acqg", 1e-4, _build_acqg),
        CheckSpec("decode", 1e-4, _build_decode, max_coords=6),
        CheckSpec("mask_head", 1e-4, _build_mask_head),
        CheckSpec("frame_loss", 1e-4, _build_frame_loss),
        CheckSpec("total_loss_end_to_end", 1e-3, _build_total_loss, max_coords=3),
    ]


def run_check(spec: CheckSpec, seeds: int, eps: float = 1e-5) -> CheckResult:
    worst = 0.0
    for seed in range(seeds):
        f, inputs = spec.build(seed)
        report = grad_check(
            f,
            inputs,
            eps=eps,
            tol=spec.tol,
            max_coords=spec.max_coords,
            rng=np.random.default_rng([seed, 0xC0]),
        )
        worst = max(worst, report.max_rel_err)
    return CheckResult(
        name=spec.name, tol=spec.tol, max_rel_err=float(worst), passed=bool(worst <= spec.tol), seeds=seeds
    )


def run_suite(seeds: int = 5, names: list[str] | None = None) -> list[CheckResult]:
    results = []
    for spec in registered_checks():
        if names is not None and spec.name not in names:
            continue
        results.append(run_check(spec, seeds))
    return results
