"""Full model: fusion, localizer, counting head and tracker wired together.

Parameters live in a flat name -> Tensor dictionary so the optimizer and the
checkpoint format can treat the model uniformly. Checkpoints are .npz
archives holding every parameter plus a JSON metadata entry (config
snapshot, step counter, RNG state); a save/load round-trip reproduces
forward outputs bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from avinseg import autodiff as ad
from avinseg.autodiff import Tensor
from avinseg.config import ModelConfig, RunConfig, config_from_dict
from avinseg.counting import decode_count_categorical, decode_count_from_probs
from avinseg.fusion import CrossAttentionLayer, acqg, additive_fuse, init_weight
from avinseg.localizer import (
    DecoderLayer,
    FrameEmbedder,
    LinearHead,
    LocalizerOutput,
    MaskHead,
    decode,
    embed_frame,
    mask_head,
)
from avinseg.matching import _np_sigmoid
from avinseg.tracker import VideoQuerySet, track


class CheckpointError(RuntimeError):
    """Checkpoint file missing or malformed."""


@dataclass
class VideoForward:
    frame_outputs: list[LocalizerOutput]
    video_out: VideoQuerySet
    final_maps: list[Tensor]


class Model:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        if rng is None:
            rng = np.random.default_rng(0)
        d = cfg.d_model
        bound_rng = rng
        self.queries = init_weight(bound_rng, d, (cfg.n_f, d))
        self.count_token = init_weight(bound_rng, d, (1, d))
        self.embedder = FrameEmbedder.create(cfg.h, cfg.w, cfg.channels, d, bound_rng)
        self.acqg_layers = [
            CrossAttentionLayer.create(d, cfg.d_ff, bound_rng) for _ in range(cfg.acqg_layers)
        ]
        self.decoder_layers = [
            DecoderLayer.create(d, cfg.d_ff, bound_rng) for _ in range(cfg.decoder_layers)
        ]
        self.mask_head = MaskHead.create(d, bound_rng)
        self.class_head = LinearHead.create(d, cfg.k_classes + 1, bound_rng)
        count_out = cfg.k_max + 1 if cfg.count_loss == "ce" else cfg.k_max
        self.count_head = LinearHead.create(d, count_out, bound_rng)
        self.video_queries = init_weight(bound_rng, d, (cfg.n_v, d))
        self.tracker_block = DecoderLayer.create(d, cfg.d_ff, bound_rng)
        self.video_mask_head = MaskHead.create(d, bound_rng)
        self.video_class_head = LinearHead.create(d, cfg.k_classes + 1, bound_rng)

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {"queries": self.queries, "count_token": self.count_token}
        params.update(self.embedder.params("embed"))
        for i, layer in enumerate(self.acqg_layers):
            params.update(layer.params(f"acqg.{i}"))
        for i, layer in enumerate(self.decoder_layers):
            params.update(layer.params(f"decoder.{i}"))
        params.update(self.mask_head.params("mask_head"))
        params.update(self.class_head.params("class_head"))
        params.update(self.count_head.params("count_head"))
        params["video_queries"] = self.video_queries
        params.update(self.tracker_block.params("tracker"))
        params.update(self.video_mask_head.params("video_mask_head"))
        params.update(self.video_class_head.params("video_class_head"))
        return params

    # -- forward passes ------------------------------------------------------

    def forward_frame(self, frame: np.ndarray, audio_tokens: np.ndarray) -> tuple[LocalizerOutput, Tensor]:
        cfg = self.cfg
        feats = embed_frame(self.embedder, frame)
        fa = ad.constant(audio_tokens)
        stream = ad.concat([self.queries, self.count_token], axis=0)
        if cfg.use_acqg:
            fused = acqg(self.acqg_layers, stream, fa)
        else:
            fused = additive_fuse(stream, fa)
        frame_q, count_tok = decode(self.decoder_layers, fused, feats)
        out = LocalizerOutput(
            frame_queries=frame_q,
            count_token=count_tok,
            mask_logits=mask_head(self.mask_head, frame_q, feats.final_map),
            class_logits=self.class_head.apply(frame_q),
            count_logits=self.count_head.apply(count_tok),
            h=cfg.h,
            w=cfg.w,
        )
        return out, feats.final_map

    def forward_video(self, frames: np.ndarray, audio: np.ndarray) -> VideoForward:
        frame_outputs = []
        final_maps = []
        audio_tensors = []
        for t in range(frames.shape[0]):
            out, final_map = self.forward_frame(frames[t], audio[t])
            frame_outputs.append(out)
            final_maps.append(final_map)
            audio_tensors.append(ad.constant(audio[t]))
        video_out = track(
            self.tracker_block,
            self.video_queries,
            [fo.frame_queries for fo in frame_outputs],
            audio_tensors,
            final_maps,
            self.video_mask_head,
            self.video_class_head,
            window=self.cfg.window,
            include_audio=self.cfg.audio_in_tracker,
        )
        return VideoForward(frame_outputs=frame_outputs, video_out=video_out, final_maps=final_maps)

    def decode_counts(self, frame_outputs: list[LocalizerOutput]) -> list[int]:
        """Per-frame sounding-object counts decoded from the count head."""
        counts = []
        for fo in frame_outputs:
            logits = fo.count_logits.data.reshape(-1)
            if self.cfg.count_loss == "ce":
                counts.append(decode_count_categorical(logits))
            else:
                counts.append(decode_count_from_probs(_np_sigmoid(logits)))
        return counts


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: Model,
    run_cfg: RunConfig,
    step: int,
    rng_state: dict | None = None,
) -> None:
    meta = {
        "config": run_cfg.to_dict(),
        "step": int(step),
        "rng_state": rng_state,
    }
    arrays = {name: t.data for name, t in model.parameters().items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[Model, RunConfig, int, dict | None]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        archive = np.load(path)
        meta = json.loads(bytes(archive["__meta__"]).decode())
    except Exception as exc:  # malformed archive
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    run_cfg = config_from_dict(meta["config"])
    model = Model(run_cfg.model, rng=np.random.default_rng(0))
    params = model.parameters()
    missing = [k for k in params if k not in archive]
    if missing:
        raise CheckpointError(f"checkpoint {path} missing parameters: {missing[:3]}")
    for name, tensor in params.items():
        stored = archive[name]
        if stored.shape != tensor.data.shape:
            raise CheckpointError(
                f"checkpoint {path}: parameter '{name}' has shape {stored.shape}, expected {tensor.data.shape}"
            )
        tensor.data = stored.astype(np.float64)
    return model, run_cfg, int(meta["step"]), meta.get("rng_state")
