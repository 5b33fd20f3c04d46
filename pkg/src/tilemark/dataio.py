"""Frame ingestion, dataset splitting, and checkpoint persistence.

All randomness flows from explicit seeds recorded in the artifacts; there is
no ambient RNG. Checkpoint writes are atomic (write-temp-then-rename) and
every load verifies blob digests before deserializing, so a truncated or
corrupted checkpoint never half-loads.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import subprocess
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from . import nets
from .imaging import from_uint8
from .nets import DetectorConfig, EmbedderConfig, NetworkHandle

CHECKPOINT_FORMAT = 1
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
_VIDEO_SUFFIXES = {".mp4", ".avi", ".mkv", ".mov", ".webm"}


class DataError(Exception):
    """Unreadable/insufficient input data or inconsistent dataset request."""


class IntegrityError(DataError):
    """A stored blob does not match its recorded digest."""


class VersionError(DataError):
    """Checkpoint schema version not understood by this build."""


class ManifestMismatchError(DataError):
    """Checkpoint was trained against a different watermark set."""


@dataclass(frozen=True)
class FrameDataset:
    """An ordered set of frame files with a train/heldout split."""

    source: str
    kind: str  # "image-dir" | "video"
    frames: tuple[str, ...]
    resolution: tuple[int, int]  # (H, W)
    seed: int
    train_indices: tuple[int, ...] = ()
    heldout_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        overlap = set(self.train_indices) & set(self.heldout_indices)
        if overlap:
            raise DataError(f"train/heldout overlap at indices {sorted(overlap)[:5]}")

    def __len__(self) -> int:
        return len(self.frames)

    def load_frame(self, index: int) -> np.ndarray:
        """Frame as an (H, W, 3) float32 array in [-1, 1], resized if needed."""
        h, w = self.resolution
        img = Image.open(self.frames[index]).convert("RGB")
        if img.size != (w, h):
            img = img.resize((w, h), Image.BILINEAR)
        return from_uint8(np.asarray(img))

    def load_batch(self, indices) -> np.ndarray:
        return np.stack([self.load_frame(i) for i in indices])

    def to_manifest(self) -> dict:
        return {
            "source": self.source,
            "kind": self.kind,
            "frames": list(self.frames),
            "resolution": list(self.resolution),
            "seed": self.seed,
            "train_indices": list(self.train_indices),
            "heldout_indices": list(self.heldout_indices),
        }

    @classmethod
    def from_manifest(cls, d: dict) -> "FrameDataset":
        return cls(
            source=d["source"],
            kind=d["kind"],
            frames=tuple(d["frames"]),
            resolution=tuple(d["resolution"]),
            seed=d["seed"],
            train_indices=tuple(d["train_indices"]),
            heldout_indices=tuple(d["heldout_indices"]),
        )

    def save_manifest(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_manifest(), fh, indent=2)
            fh.write("\n")
        return path

    @classmethod
    def load_manifest(cls, path: str | Path) -> "FrameDataset":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_manifest(json.load(fh))


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as an (H, W, 3) float32 array in [-1, 1]."""
    try:
        img = Image.open(path).convert("RGB")
    except (OSError, ValueError) as err:
        raise DataError(f"cannot read image {path}: {err}") from err
    return from_uint8(np.asarray(img))


def save_image(image: np.ndarray, path: str | Path) -> Path:
    """Write an (H, W, 3) [-1, 1] array as an 8-bit image file."""
    from .imaging import to_uint8

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path)
    return path


def _extract_video_frames(video: Path, out_dir: Path) -> Path:
    """Decode a video into a PNG directory via the system ffmpeg, if present."""
    ffmpeg = shutil.which("ffmpeg")
    if ffmpeg is None:
        raise DataError(
            f"{video} is a video but no system decoder (ffmpeg) is available; "
            "extract frames to an image directory first"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    cmd = [ffmpeg, "-y", "-loglevel", "error", "-i", str(video),
           str(out_dir / "frame_%06d.png")]
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        raise DataError(f"frame extraction failed: {result.stderr.strip()}")
    return out_dir


def ingest(source: str | Path, count: int, resolution: tuple[int, int],
           seed: int) -> FrameDataset:
    """Sample ``count`` frames uniformly without replacement from a source.

    ``source`` is an image directory, or a video file when a system decoder
    is available. Frames are recorded as file references and resized to
    ``resolution`` (H, W) on load.
    """
    source = Path(source)
    kind = "image-dir"
    if source.is_file():
        if source.suffix.lower() not in _VIDEO_SUFFIXES:
            raise DataError(f"{source} is not an image directory or a known video format")
        kind = "video"
        source_dir = _extract_video_frames(source, source.parent / f"{source.stem}_frames")
    elif source.is_dir():
        source_dir = source
    else:
        raise DataError(f"unreadable source {source}")
    if count < 1:
        raise DataError(f"frame count must be positive, got {count}")
    files = sorted(p for p in source_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if len(files) < count:
        raise DataError(f"{source}: need {count} frames, found {len(files)}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(files), size=count, replace=False)
    frames = tuple(str(files[i]) for i in picks)
    return FrameDataset(source=str(source), kind=kind, frames=frames,
                        resolution=(int(resolution[0]), int(resolution[1])), seed=seed,
                        train_indices=tuple(range(count)), heldout_indices=())


def split(dataset: FrameDataset, heldout: int | float, seed: int) -> FrameDataset:
    """Withhold frames for evaluation; returns a dataset with disjoint indices.

    ``heldout`` is a count (int) or a fraction (float in (0, 1)).
    """
    total = len(dataset)
    if isinstance(heldout, float):
        if not 0.0 <= heldout < 1.0:
            raise DataError(f"heldout fraction must be in [0, 1), got {heldout}")
        k = int(round(heldout * total))
    else:
        k = int(heldout)
    if k >= total:
        raise DataError(f"cannot withhold {k} of {total} frames")
    if k == 0:
        warnings.warn("empty heldout split: all frames go to training", stacklevel=2)
    perm = np.random.default_rng(seed).permutation(total)
    return replace(
        dataset,
        heldout_indices=tuple(int(i) for i in sorted(perm[:k])),
        train_indices=tuple(int(i) for i in sorted(perm[k:])),
    )


@dataclass(frozen=True)
class Checkpoint:
    """A checkpoint directory: weight blob per network plus meta.json."""

    path: Path
    meta: dict = field(repr=False)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(embedder: NetworkHandle, detector: NetworkHandle,
                    extra_meta: dict, path: str | Path) -> Checkpoint:
    """Write {embedder.pt, detector.pt, meta.json} atomically under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs = {}
    for handle, name in ((embedder, "embedder.pt"), (detector, "detector.pt")):
        tmp = path / (name + ".tmp")
        torch.save(handle.module.state_dict(), tmp)
        os.replace(tmp, path / name)
        blobs[name] = _sha256(path / name)
    meta = {
        "format_version": CHECKPOINT_FORMAT,
        "embedder": embedder.meta(),
        "detector": detector.meta(),
        "blobs": blobs,
    }
    meta.update(extra_meta)
    tmp = path / "meta.json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path / "meta.json")
    return Checkpoint(path=path, meta=meta)


def load_checkpoint(path: str | Path, expected_manifest_hash: Optional[str] = None,
                    force: bool = False) -> tuple[NetworkHandle, NetworkHandle, dict]:
    """Rebuild both networks from a checkpoint directory.

    Verifies blob digests before deserializing, recomputes each network's
    receptive field from its stored layer chain, and (when given a hash)
    guards against loading a model trained on a different watermark set.
    """
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise DataError(f"no checkpoint at {path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT:
        raise VersionError(f"checkpoint format {version!r}, this build reads {CHECKPOINT_FORMAT}")
    for name, digest in meta["blobs"].items():
        actual = _sha256(path / name)
        if actual != digest:
            raise IntegrityError(
                f"{path / name}: digest mismatch (recorded {digest[:12]}..., "
                f"computed {actual[:12]}...)"
            )
    stored = meta.get("watermark_manifest_hash")
    if expected_manifest_hash is not None and stored != expected_manifest_hash:
        if not force:
            raise ManifestMismatchError(
                f"checkpoint was trained against watermark set {str(stored)[:12]}..., "
                f"caller has {expected_manifest_hash[:12]}..."
            )
        warnings.warn("loading checkpoint despite watermark-manifest mismatch", stacklevel=2)

    handles = []
    for key, builder, config_cls in (
        ("embedder", nets.build_embedder, EmbedderConfig),
        ("detector", nets.build_detector, DetectorConfig),
    ):
        info = meta[key]
        config = config_cls.from_dict(info["config"])
        handle = builder(config, seed=info["seed"])
        if handle.rf != info["rf"]:
            raise IntegrityError(
                f"{key}: stored RF {info['rf']} disagrees with recomputed {handle.rf}"
            )
        state = torch.load(path / f"{key}.pt", map_location="cpu", weights_only=True)
        handle.module.load_state_dict(state)
        handles.append(handle)
    return handles[0], handles[1], meta
