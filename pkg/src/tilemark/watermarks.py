"""Letter-glyph watermark sets, frame tiling, and the 4-channel overlay.

A watermark is a small {-1, +1} bitmap. The set used throughout is ten
English letters rendered from an embedded 5x7 bitmap font (bit-exact across
platforms, unlike system font renderers) and nearest-neighbor scaled to the
requested size. Watermark values live in {-1, +1} rather than {0, 1} so the
extra channel matches the [-1, 1] image normalization fed to the Embedder.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

MIN_SIZE = 4

# 5x7 uppercase font. '#' marks ink. B carries its waist on row 2 (small
# upper lobe) so that center-sampled downscales keep it apart from D.
_FONT: dict[str, tuple[str, ...]] = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "####.", "#...#", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
}

DEFAULT_LETTERS = "ABCDEFGHIJ"


class WatermarkError(ValueError):
    """Invalid watermark request (duplicate letters, bad size, collisions)."""


@dataclass(frozen=True)
class Watermark:
    id: int
    glyph: str
    bitmap: np.ndarray  # (wh, ww) float32 in {-1, +1}

    @property
    def size(self) -> tuple[int, int]:
        return self.bitmap.shape[0], self.bitmap.shape[1]


@dataclass(frozen=True)
class WatermarkSet:
    watermarks: tuple[Watermark, ...]
    size: tuple[int, int]
    manifest_hash: str = field(default="")

    def __len__(self) -> int:
        return len(self.watermarks)

    def __getitem__(self, wm_id: int) -> Watermark:
        return self.watermarks[wm_id]

    @property
    def letters(self) -> str:
        return "".join(wm.glyph for wm in self.watermarks)


@dataclass(frozen=True)
class WatermarkOverlay:
    """RGB image plus the tiled watermark plane destined for the Embedder."""

    rgb: np.ndarray         # (H, W, 3) float32 in [-1, 1]
    wm_channel: np.ndarray  # (H, W, 1) float32 in {-1, +1}
    label: int

    def stacked(self) -> np.ndarray:
        """The 4-channel RGBW array, shape (H, W, 4)."""
        return np.concatenate([self.rgb, self.wm_channel], axis=-1)


def _render_glyph(letter: str, size: tuple[int, int]) -> np.ndarray:
    rows = _FONT[letter]
    gh, gw = len(rows), len(rows[0])
    wh, ww = size
    ys = ((np.arange(wh) + 0.5) * gh / wh).astype(np.int64)
    xs = ((np.arange(ww) + 0.5) * gw / ww).astype(np.int64)
    ink = np.array([[c == "#" for c in row] for row in rows], dtype=bool)
    sampled = ink[np.minimum(ys, gh - 1)][:, np.minimum(xs, gw - 1)]
    return np.where(sampled, 1.0, -1.0).astype(np.float32)


def _digest(letters: Sequence[str], size: tuple[int, int], bitmaps: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"letters": list(letters), "size": list(size)}).encode())
    for bm in bitmaps:
        h.update(np.where(bm > 0, 1, 0).astype(np.uint8).tobytes())
    return h.hexdigest()


def generate_letter_set(letters: Sequence[str], size: tuple[int, int]) -> WatermarkSet:
    """Render one watermark per letter; deterministic in (letters, size).

    Raises :class:`WatermarkError` on duplicate letters, sizes below 4x4,
    unknown glyphs, or bitmaps that collide after downscaling.
    """
    letters = [str(c).upper() for c in letters]
    if len(letters) < 2:
        raise WatermarkError("need at least 2 letters")
    if len(set(letters)) != len(letters):
        raise WatermarkError(f"duplicate letters in {letters!r}")
    unknown = [c for c in letters if c not in _FONT]
    if unknown:
        raise WatermarkError(f"no glyph for {unknown!r}")
    wh, ww = int(size[0]), int(size[1])
    if wh < MIN_SIZE or ww < MIN_SIZE:
        raise WatermarkError(f"watermark size {wh}x{ww} below minimum {MIN_SIZE}x{MIN_SIZE}")

    bitmaps = [_render_glyph(c, (wh, ww)) for c in letters]
    for i, bm in enumerate(bitmaps):
        if bm.max() == bm.min():
            raise WatermarkError(f"letter {letters[i]!r} renders constant at {wh}x{ww}")
        for k in range(i):
            if np.array_equal(bm, bitmaps[k]):
                raise WatermarkError(
                    f"letters {letters[k]!r} and {letters[i]!r} collide at {wh}x{ww}"
                )
    marks = tuple(
        Watermark(id=i, glyph=c, bitmap=bm) for i, (c, bm) in enumerate(zip(letters, bitmaps))
    )
    return WatermarkSet(watermarks=marks, size=(wh, ww),
                        manifest_hash=_digest(letters, (wh, ww), bitmaps))


def tile(wm: Watermark, frame: tuple[int, int]) -> np.ndarray:
    """Tile the bitmap from the upper-left corner over an (H, W) frame.

    Returns an (H, W, 1) plane; partial tiles at the right/bottom edges are
    cropped copies.
    """
    H, W = int(frame[0]), int(frame[1])
    wh, ww = wm.size
    if H < wh or W < ww:
        raise WatermarkError(f"frame {H}x{W} smaller than watermark {wh}x{ww}")
    reps_y = -(-H // wh)
    reps_x = -(-W // ww)
    plane = np.tile(wm.bitmap, (reps_y, reps_x))[:H, :W]
    return plane[:, :, None].copy()


def overlay(image: np.ndarray, wm: Watermark) -> WatermarkOverlay:
    """Stack the tiled watermark plane onto an RGB image as a 4th channel."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise WatermarkError(f"expected an (H, W, 3) image, got shape {image.shape}")
    plane = tile(wm, (image.shape[0], image.shape[1]))
    return WatermarkOverlay(rgb=image, wm_channel=plane, label=wm.id)


def save_watermark_set(wset: WatermarkSet, out_dir: str | Path) -> Path:
    """Persist one lossless grayscale PNG per watermark plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for wm in wset.watermarks:
        name = f"wm_{wm.id:02d}_{wm.glyph}.png"
        img = np.where(wm.bitmap > 0, 255, 0).astype(np.uint8)
        Image.fromarray(img, mode="L").save(out_dir / name)
        files.append(name)
    manifest = {
        "size": list(wset.size),
        "letters": list(wset.letters),
        "ids": list(range(len(wset))),
        "files": files,
        "digest": wset.manifest_hash,
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_watermark_set(src_dir: str | Path) -> WatermarkSet:
    """Load a persisted set; verifies the manifest digest against the bitmaps."""
    src_dir = Path(src_dir)
    with open(src_dir / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    size = tuple(manifest["size"])
    letters = manifest["letters"]
    marks = []
    bitmaps = []
    for wm_id, (letter, name) in enumerate(zip(letters, manifest["files"])):
        img = np.asarray(Image.open(src_dir / name).convert("L"))
        bitmap = np.where(img > 127, 1.0, -1.0).astype(np.float32)
        bitmaps.append(bitmap)
        marks.append(Watermark(id=wm_id, glyph=letter, bitmap=bitmap))
    digest = _digest(letters, size, bitmaps)
    if digest != manifest["digest"]:
        raise WatermarkError(
            f"watermark set at {src_dir} failed digest verification "
            f"(manifest {manifest['digest'][:12]}..., computed {digest[:12]}...)"
        )
    return WatermarkSet(watermarks=tuple(marks), size=size, manifest_hash=digest)


def parse_letters(spec: str) -> list[str]:
    """Parse a letters argument: 'A-J' (range), 'A,B,C', or 'ABC'."""
    spec = spec.strip().upper()
    if "-" in spec and len(spec) == 3:
        lo, hi = spec[0], spec[2]
        if lo > hi:
            raise WatermarkError(f"bad letter range {spec!r}")
        return [chr(c) for c in range(ord(lo), ord(hi) + 1)]
    if "," in spec:
        return [tok.strip() for tok in spec.split(",") if tok.strip()]
    return list(spec)
