"""On-disk formats: RLE masks, trajectory JSON, and the corpus container.

Masks are run-length encoded as counts of alternating runs over the
row-major flattened frame, starting with the zero run (which may be empty).
Trajectory files are plain JSON, one record per video; the same schema
serves predictions and ground truth, so evaluation can consume either side.
The corpus container is a flat binary file of float64 arrays plus a JSON
manifest recording shapes and byte offsets.

Round-trips are bit-exact: encode/decode of masks, and save/load of both
JSON and binary payloads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from avinseg.tracker import InstanceTrajectory


class SchemaError(ValueError):
    """A file does not conform to the documented schema."""


# -- run-length encoding -----------------------------------------------------


def rle_encode(mask: np.ndarray) -> list[int]:
    """Counts of alternating 0/1 runs over the row-major flattened mask."""
    flat = np.asarray(mask).reshape(-1).astype(bool)
    if flat.size == 0:
        return [0]
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], h: int, w: int) -> np.ndarray:
    """Inverse of :func:`rle_encode` for an h x w mask."""
    total = sum(runs)
    if total != h * w:
        raise SchemaError(f"RLE runs sum to {total}, expected {h * w}")
    if any(r < 0 for r in runs):
        raise SchemaError("RLE runs must be non-negative")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(h, w)


# -- trajectory records ------------------------------------------------------


@dataclass
class VideoRecord:
    """Serialized form of one video's trajectories (predictions or GT)."""

    video_id: str
    t: int
    h: int
    w: int
    trajectories: list[InstanceTrajectory]
    counts: list[int] | None = None  # per-frame sounding counts (GT) or decoded counts (pred)
    split: str | None = None


def _traj_to_json(traj: InstanceTrajectory, t: int, h: int, w: int) -> dict:
    if traj.masks.shape != (t, h, w):
        raise SchemaError(f"trajectory masks {traj.masks.shape} do not match video {(t, h, w)}")
    return {
        "id": int(traj.id),
        "label": int(traj.label),
        "confidence": float(traj.confidence),
        "masks": [rle_encode(traj.masks[i] >= 0.5) for i in range(t)],
    }


def _traj_from_json(obj: dict, t: int, h: int, w: int, where: str) -> InstanceTrajectory:
    for key in ("id", "label", "confidence", "masks"):
        if key not in obj:
            raise SchemaError(f"{where}: trajectory missing field '{key}'")
    if len(obj["masks"]) != t:
        raise SchemaError(f"{where}: expected {t} mask frames, got {len(obj['masks'])}")
    masks = np.zeros((t, h, w), dtype=np.float64)
    for i, runs in enumerate(obj["masks"]):
        masks[i] = rle_decode(runs, h, w)
    return InstanceTrajectory(
        id=int(obj["id"]),
        masks=masks,
        label=int(obj["label"]),
        confidence=float(obj["confidence"]),
    )


def save_records(path: str | Path, records: list[VideoRecord]) -> None:
    payload = {"videos": []}
    for rec in records:
        entry = {
            "id": rec.video_id,
            "T": rec.t,
            "H": rec.h,
            "W": rec.w,
            "trajectories": [_traj_to_json(tr, rec.t, rec.h, rec.w) for tr in rec.trajectories],
        }
        if rec.counts is not None:
            entry["counts"] = [int(c) for c in rec.counts]
        if rec.split is not None:
            entry["split"] = rec.split
        payload["videos"].append(entry)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_records(path: str | Path) -> list[VideoRecord]:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict) or "videos" not in payload:
        raise SchemaError(f"{path}: missing top-level 'videos' list")
    records = []
    for k, entry in enumerate(payload["videos"]):
        where = f"{path}: videos[{k}]"
        for key in ("id", "T", "H", "W", "trajectories"):
            if key not in entry:
                raise SchemaError(f"{where}: missing field '{key}'")
        t, h, w = int(entry["T"]), int(entry["H"]), int(entry["W"])
        trajs = [
            _traj_from_json(obj, t, h, w, f"{where}.trajectories[{i}]")
            for i, obj in enumerate(entry["trajectories"])
        ]
        counts = entry.get("counts")
        if counts is not None:
            if len(counts) != t:
                raise SchemaError(f"{where}: counts length {len(counts)} != T {t}")
            counts = [int(c) for c in counts]
        records.append(
            VideoRecord(
                video_id=str(entry["id"]),
                t=t,
                h=h,
                w=w,
                trajectories=trajs,
                counts=counts,
                split=entry.get("split"),
            )
        )
    return records


# -- corpus container --------------------------------------------------------


def write_corpus_arrays(out_dir: str | Path, arrays: dict[str, dict[str, np.ndarray]], meta: dict) -> None:
    """Write per-video float64 arrays into data.bin plus a manifest.

    ``arrays`` maps video id -> {name: array}; the manifest records dtype,
    shape and byte offset for every array so reads are exact.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"meta": meta, "dtype": "<f8", "videos": {}}
    offset = 0
    with open(out / "data.bin", "wb") as fh:
        for vid in sorted(arrays):
            entry = {}
            for name in sorted(arrays[vid]):
                arr = np.ascontiguousarray(arrays[vid][name], dtype="<f8")
                fh.write(arr.tobytes())
                entry[name] = {"offset": offset, "shape": list(arr.shape)}
                offset += arr.nbytes
            manifest["videos"][vid] = entry
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def read_corpus_arrays(corpus_dir: str | Path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    corpus = Path(corpus_dir)
    manifest_path = corpus / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"{manifest_path}: manifest not found")
    manifest = json.loads(manifest_path.read_text())
    raw = np.fromfile(corpus / "data.bin", dtype=manifest["dtype"])
    videos = {}
    item = np.dtype(manifest["dtype"]).itemsize
    for vid, entry in manifest["videos"].items():
        videos[vid] = {}
        for name, spec in entry.items():
            shape = tuple(spec["shape"])
            start = spec["offset"] // item
            count = int(np.prod(shape)) if shape else 1
            videos[vid][name] = raw[start : start + count].reshape(shape).copy()
    return videos, manifest["meta"]
