"""Seeded synthetic audiovisual corpus.

Each video contains a handful of moving sprites (discs and rectangles with
class-coded colors) over a noise background. Some sprites emit sound during
configurable intervals; the rest are silent distractors that look exactly
like potential sounders. Ground-truth masks annotate sounding objects only,
and only on the frames where they sound, which is precisely the regime that
tempts a visually-driven model into over-detecting salient silent objects.

Audio for a frame is the sum of the active sprites' unit signatures,
linearly projected into the model's audio-token space, plus Gaussian noise.
Sounding counts are therefore recoverable from the audio alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from avinseg.config import ConfigError, DataConfig
from avinseg.formats import VideoRecord, read_corpus_arrays, save_records, load_records, write_corpus_arrays
from avinseg.tracker import InstanceTrajectory

_PALETTE = np.array(
    [
        [0.95, 0.25, 0.20],
        [0.20, 0.85, 0.30],
        [0.25, 0.40, 0.95],
        [0.95, 0.85, 0.20],
        [0.85, 0.25, 0.85],
        [0.20, 0.85, 0.85],
        [0.95, 0.55, 0.20],
        [0.60, 0.60, 0.60],
    ]
)


@dataclass
class Sprite:
    kind: str  # "disc" or "rect"
    label: int  # 1..K
    centers: np.ndarray  # [T x 2] float (row, col) after wall bounces
    size: float
    color: np.ndarray  # [C]
    signature: np.ndarray  # unit vector in R^{audio_dim}
    sounding: np.ndarray  # [T] bool

    def intervals(self) -> list[tuple[int, int]]:
        """Maximal sounding runs as half-open (start, stop) frame ranges."""
        out = []
        t = 0
        total = len(self.sounding)
        while t < total:
            if self.sounding[t]:
                start = t
                while t < total and self.sounding[t]:
                    t += 1
                out.append((start, t))
            else:
                t += 1
        return out

    def footprint(self, t: int, h: int, w: int) -> np.ndarray:
        cy, cx = self.centers[t]
        yy, xx = np.mgrid[0:h, 0:w]
        if self.kind == "disc":
            return (yy - cy) ** 2 + (xx - cx) ** 2 <= self.size**2
        return (np.abs(yy - cy) <= self.size) & (np.abs(xx - cx) <= self.size)


@dataclass
class SyntheticVideo:
    video_id: str
    split: str
    frames: np.ndarray  # [T x H x W x C]
    audio: np.ndarray  # [T x M x D]
    trajectories: list[InstanceTrajectory]
    counts: list[int]
    sprites: list[Sprite] = field(default_factory=list, repr=False)


@dataclass
class Corpus:
    videos: list[SyntheticVideo]
    meta: dict

    def split(self, name: str) -> list[SyntheticVideo]:
        return [v for v in self.videos if v.split == name]


def _bounce_path(rng: np.random.Generator, t: int, h: int, w: int, margin: float) -> np.ndarray:
    lo_y, hi_y = margin, h - 1 - margin
    lo_x, hi_x = margin, w - 1 - margin
    pos = np.array([rng.uniform(lo_y, hi_y), rng.uniform(lo_x, hi_x)])
    vel = rng.uniform(-2.5, 2.5, size=2)
    centers = np.zeros((t, 2))
    for step in range(t):
        centers[step] = pos
        pos = pos + vel
        for axis, (lo, hi) in enumerate(((lo_y, hi_y), (lo_x, hi_x))):
            if pos[axis] < lo:
                pos[axis] = 2 * lo - pos[axis]
                vel[axis] = -vel[axis]
            elif pos[axis] > hi:
                pos[axis] = 2 * hi - pos[axis]
                vel[axis] = -vel[axis]
            pos[axis] = np.clip(pos[axis], lo, hi)
    return centers


def render_frame(
    sprites: list[Sprite], t: int, h: int, w: int, background: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Paint sprites over the background; later sprites occlude earlier ones.

    Returns the frame and each sprite's visible (post-occlusion) mask.
    """
    frame = background.copy()
    footprints = [s.footprint(t, h, w) for s in sprites]
    visible = []
    for i, fp in enumerate(footprints):
        occluders = np.zeros((h, w), dtype=bool)
        for later in footprints[i + 1 :]:
            occluders |= later
        visible.append(fp & ~occluders)
    for sprite, vis in zip(sprites, visible):
        frame[vis] = sprite.color
    return frame, visible


def _class_directions(rng: np.random.Generator, k: int, dim: int) -> np.ndarray:
    """Nearly orthogonal unit vectors, one per class."""
    raw = rng.normal(size=(k, dim))
    q, _ = np.linalg.qr(raw.T)
    return q.T[:k] if k <= dim else raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _make_sounding(rng: np.random.Generator, t: int) -> np.ndarray:
    # one contiguous interval per sounder keeps position-to-sound binding learnable
    active = np.zeros(t, dtype=bool)
    start = int(rng.integers(0, max(t - 1, 1)))
    length = int(rng.integers(3, 7))
    active[start : min(start + length, t)] = True
    return active


def _build_video(
    cfg: DataConfig,
    rng: np.random.Generator,
    class_dirs: np.ndarray,
    projection: np.ndarray,
) -> tuple[list[Sprite], np.ndarray, list[np.ndarray]] | None:
    """One candidate video; None when a visibility constraint fails."""
    h, w, t = cfg.h, cfg.w, cfg.t
    n_sprites = int(rng.integers(cfg.sprites_min, cfg.sprites_max + 1))
    labels = 1 + rng.permutation(cfg.k_classes)[:n_sprites]
    sprites = []
    for label in labels:
        size = float(rng.uniform(cfg.size_min, cfg.size_max))
        base = np.resize(_PALETTE[(label - 1) % len(_PALETTE)], cfg.channels)
        sprites.append(
            Sprite(
                kind="disc" if rng.random() < 0.5 else "rect",
                label=int(label),
                centers=_bounce_path(rng, t, h, w, margin=size + 1.0),
                size=size,
                color=np.clip(base + rng.uniform(-0.08, 0.08, cfg.channels), 0.05, 1.0),
                signature=_unit(class_dirs[label - 1] + 0.15 * rng.normal(size=cfg.audio_dim)),
                sounding=np.zeros(t, dtype=bool),
            )
        )
    # sounding schedule: every sprite but one sounds somewhere, so each video
    # keeps exactly one visually identical silent distractor
    n_sounders = n_sprites - 1
    order = rng.permutation(n_sprites)
    for s in order[:n_sounders]:
        sprites[s].sounding = _make_sounding(rng, t)
    for frame_t in range(t):
        active = [i for i, s in enumerate(sprites) if s.sounding[frame_t]]
        for drop in active[cfg.count_ceiling :]:
            sprites[drop].sounding[frame_t] = False

    background = rng.uniform(0.0, cfg.noise_visual, size=(t, h, w, cfg.channels))
    frames = np.zeros((t, h, w, cfg.channels))
    visible_by_frame = []
    for frame_t in range(t):
        frame, visible = render_frame(sprites, frame_t, h, w, background[frame_t])
        for vis in visible:
            if not vis.any():
                return None  # a sprite is fully occluded; retry this video
        frames[frame_t] = frame
        visible_by_frame.append(visible)
    return sprites, frames, visible_by_frame


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate(cfg: DataConfig, seed: int | None = None, require_coverage: bool = True) -> Corpus:
    """Deterministic corpus; retries until every split covers all frame types.

    ``require_coverage=False`` skips the silent/single/multi coverage retry,
    which micro-scale corpora (gradient-check fixtures) cannot satisfy.
    """
    if seed is None:
        seed = cfg.seed
    if cfg.sprites_max > cfg.k_classes:
        raise ConfigError(
            f"sprites_max {cfg.sprites_max} exceeds k_classes {cfg.k_classes}"
        )
    margin = cfg.size_max + 1
    if 2 * margin >= min(cfg.h, cfg.w):
        raise ConfigError(f"size_max {cfg.size_max} too large for a {cfg.h}x{cfg.w} frame")

    total = cfg.n_train + cfg.n_val
    master = np.random.default_rng([seed, 0xC0DE])
    class_dirs = _class_directions(master, cfg.k_classes, cfg.audio_dim)
    projection = master.normal(size=(cfg.audio_dim, cfg.m_audio * cfg.d_model)) / np.sqrt(cfg.audio_dim)

    for attempt in range(64):
        split_rng = np.random.default_rng([seed, attempt, 0x5917])
        order = split_rng.permutation(total)
        split_of = {}
        for rank, vid in enumerate(order):
            split_of[int(vid)] = "train" if rank < cfg.n_train else "val"

        videos = []
        for idx in range(total):
            built = None
            for retry in range(100):
                rng = np.random.default_rng([seed, attempt, idx, retry])
                built = _build_video(cfg, rng, class_dirs, projection)
                if built is not None:
                    break
            if built is None:
                raise ConfigError("could not place sprites without full occlusion; relax sizes")
            sprites, frames, visible_by_frame = built
            counts = [int(sum(s.sounding[t] for s in sprites)) for t in range(cfg.t)]
            audio_rng = np.random.default_rng([seed, attempt, idx, 0xA0D10])
            audio = np.zeros((cfg.t, cfg.m_audio, cfg.d_model))
            for t in range(cfg.t):
                sig = np.zeros(cfg.audio_dim)
                for s in sprites:
                    if s.sounding[t]:
                        sig = sig + s.signature
                audio[t] = (sig @ projection).reshape(cfg.m_audio, cfg.d_model)
                audio[t] += cfg.noise_audio * audio_rng.normal(size=(cfg.m_audio, cfg.d_model))
            trajectories = []
            for si, sprite in enumerate(sprites):
                if not sprite.sounding.any():
                    continue
                masks = np.zeros((cfg.t, cfg.h, cfg.w))
                for t in range(cfg.t):
                    if sprite.sounding[t]:
                        masks[t] = visible_by_frame[t][si]
                trajectories.append(
                    InstanceTrajectory(id=si, masks=masks, label=sprite.label, confidence=1.0)
                )
            split = split_of[idx]
            videos.append(
                SyntheticVideo(
                    video_id=f"video_{idx:04d}",
                    split=split,
                    frames=frames,
                    audio=audio,
                    trajectories=trajectories,
                    counts=counts,
                    sprites=sprites,
                )
            )
        covered = _covers_all_frame_types(videos, "train") and _covers_all_frame_types(videos, "val")
        if covered or not require_coverage:
            meta = {"seed": seed, "attempt": attempt, "config": _data_cfg_dict(cfg)}
            return Corpus(videos=videos, meta=meta)
    raise ConfigError("corpus generation could not cover silent/single/multi frames; adjust config")


def _covers_all_frame_types(videos: list[SyntheticVideo], split: str) -> bool:
    counts = [c for v in videos if v.split == split for c in v.counts]
    if not counts:
        return False
    return (0 in counts) and (1 in counts) and any(c >= 2 for c in counts)


def _data_cfg_dict(cfg: DataConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


# -- persistence -------------------------------------------------------------


def write_corpus(corpus: Corpus, out_dir) -> None:
    arrays = {v.video_id: {"frames": v.frames, "audio": v.audio} for v in corpus.videos}
    write_corpus_arrays(out_dir, arrays, corpus.meta)
    records = [
        VideoRecord(
            video_id=v.video_id,
            t=v.frames.shape[0],
            h=v.frames.shape[1],
            w=v.frames.shape[2],
            trajectories=v.trajectories,
            counts=v.counts,
            split=v.split,
        )
        for v in corpus.videos
    ]
    from pathlib import Path

    save_records(Path(out_dir) / "gt.json", records)


def load_corpus(corpus_dir) -> Corpus:
    from pathlib import Path

    arrays, meta = read_corpus_arrays(corpus_dir)
    records = {r.video_id: r for r in load_records(Path(corpus_dir) / "gt.json")}
    videos = []
    for vid in sorted(arrays):
        rec = records[vid]
        videos.append(
            SyntheticVideo(
                video_id=vid,
                split=rec.split or "train",
                frames=arrays[vid]["frames"],
                audio=arrays[vid]["audio"],
                trajectories=rec.trajectories,
                counts=rec.counts or [0] * rec.t,
            )
        )
    return Corpus(videos=videos, meta=meta)
