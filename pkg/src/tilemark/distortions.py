"""Attack suite applied between embedding and detection.

Seven kinds: cropout, dropout, jpeg, quantization, two collusion modes, and
identity. Each is deterministic given (input, config, seed) and preserves
shape and the [-1, 1] range. All functions take channel-first torch tensors
of shape (C, H, W); JPEG and quantization are non-differentiable and pass
gradients straight through so they can sit inside the fine-tuning loop.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

KINDS = (
    "cropout",
    "dropout",
    "jpeg",
    "quantization",
    "collusion_avg",
    "collusion_alt",
    "identity",
)
SOPHISTICATED_KINDS = ("jpeg", "collusion_alt")

# Fine-tuning parameter ranges (inclusive).
DEFAULT_RANGES = {
    "cropout_area": (0.5, 0.95),
    "dropout_p": (0.1, 0.5),
    "jpeg_quality": (50, 90),
    "quantization_bits": (3, 6),
}

# Fixed parameters used when reporting per-kind accuracy.
EVAL_PARAMS = {
    "cropout": {"area": 0.7},
    "dropout": {"p": 0.3},
    "jpeg": {"quality": 50},
    "quantization": {"bits": 4},
    "collusion_avg": {},
    "collusion_alt": {},
    "identity": {},
}


class DistortionError(ValueError):
    """Invalid distortion parameters or inputs."""


class CodecError(RuntimeError):
    """The underlying JPEG codec failed."""


@dataclass(frozen=True)
class DistortionConfig:
    """Discriminated attack descriptor: kind + kind-specific params + seed."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DistortionError(f"unknown distortion kind {self.kind!r}")
        p = self.params
        if self.kind == "cropout":
            area = p.get("area")
            if area is None or not 0.0 < area <= 1.0:
                raise DistortionError(f"cropout area must be in (0, 1], got {area!r}")
            if p.get("mode", "resize") not in ("resize", "patch"):
                raise DistortionError(f"cropout mode must be resize|patch, got {p['mode']!r}")
        elif self.kind == "dropout":
            prob = p.get("p")
            if prob is None or not 0.0 <= prob <= 1.0:
                raise DistortionError(f"dropout p must be in [0, 1], got {prob!r}")
        elif self.kind == "jpeg":
            q = p.get("quality")
            if q is None or not 1 <= int(q) <= 100:
                raise DistortionError(f"jpeg quality must be in [1, 100], got {q!r}")
        elif self.kind == "quantization":
            bits = p.get("bits")
            if bits is None or not 1 <= int(bits) <= 8:
                raise DistortionError(f"quantization bits must be in [1, 8], got {bits!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}


@dataclass
class DistortionContext:
    """Inputs a distortion may need beyond the augmented image itself."""

    augmented: torch.Tensor
    original: Optional[torch.Tensor] = None
    partner_augmented: Optional[torch.Tensor] = None

    def __post_init__(self) -> None:
        for name in ("original", "partner_augmented"):
            other = getattr(self, name)
            if other is not None and other.shape != self.augmented.shape:
                raise DistortionError(
                    f"{name} shape {tuple(other.shape)} != augmented {tuple(self.augmented.shape)}"
                )


def _check_image(x: torch.Tensor, who: str) -> None:
    if x.ndim != 3:
        raise DistortionError(f"{who}: expected (C, H, W), got shape {tuple(x.shape)}")


def apply_cropout(aug: torch.Tensor, area_fraction: float, seed: int,
                  mode: str = "resize", orig: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Crop a random rectangle of the given relative area, then restore resolution.

    ``resize`` (default) stretches the crop back to (H, W) bilinearly.
    ``patch`` keeps the crop in place and fills the remainder with original
    image pixels, which therefore requires ``orig``.
    """
    _check_image(aug, "cropout")
    if not 0.0 < area_fraction <= 1.0:
        raise DistortionError(f"cropout area must be in (0, 1], got {area_fraction}")
    if mode not in ("resize", "patch"):
        raise DistortionError(f"unknown cropout mode {mode!r}")
    _, H, W = aug.shape
    side = float(np.sqrt(area_fraction))
    ch = int(round(H * side))
    cw = int(round(W * side))
    if ch < 1 or cw < 1:
        raise DistortionError(
            f"cropout area {area_fraction} degenerates to {ch}x{cw} on a {H}x{W} frame"
        )
    if ch >= H and cw >= W:
        return aug.clone()
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, H - ch + 1))
    left = int(rng.integers(0, W - cw + 1))
    if mode == "patch":
        if orig is None:
            raise DistortionError("cropout mode 'patch' needs the original image")
        if orig.shape != aug.shape:
            raise DistortionError(
                f"shape mismatch {tuple(aug.shape)} vs {tuple(orig.shape)}")
        mask = torch.zeros(1, H, W, dtype=aug.dtype, device=aug.device)
        mask[:, top : top + ch, left : left + cw] = 1.0
        return mask * aug + (1.0 - mask) * orig
    crop = aug[:, top : top + ch, left : left + cw]
    out = F.interpolate(
        crop.unsqueeze(0), size=(H, W), mode="bilinear", align_corners=False
    ).squeeze(0)
    return out


def apply_dropout(aug: torch.Tensor, orig: torch.Tensor, p: float, seed: int) -> torch.Tensor:
    """Replace each pixel (all channels together) by the original with probability p."""
    _check_image(aug, "dropout")
    if aug.shape != orig.shape:
        raise DistortionError(f"shape mismatch {tuple(aug.shape)} vs {tuple(orig.shape)}")
    if not 0.0 <= p <= 1.0:
        raise DistortionError(f"dropout p must be in [0, 1], got {p}")
    _, H, W = aug.shape
    rng = np.random.default_rng(seed)
    mask = torch.from_numpy((rng.random((1, H, W)) < p).astype(np.float32)).to(aug.device)
    return mask * orig + (1.0 - mask) * aug


class _JpegRoundTrip(torch.autograd.Function):
    @staticmethod
    def forward(ctx, aug: torch.Tensor, quality: int) -> torch.Tensor:
        arr = aug.detach().cpu().numpy()
        u8 = np.clip(np.round((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
        hwc = u8.transpose(1, 2, 0)
        mode = {1: "L", 3: "RGB"}.get(hwc.shape[2])
        if mode is None:
            raise DistortionError(f"jpeg supports 1 or 3 channels, got {hwc.shape[2]}")
        try:
            buf = io.BytesIO()
            Image.fromarray(hwc.squeeze(-1) if mode == "L" else hwc, mode=mode).save(
                buf, format="JPEG", quality=int(quality)
            )
            buf.seek(0)
            decoded = np.asarray(Image.open(buf).convert(mode), dtype=np.float64)
        except (OSError, ValueError) as err:
            raise CodecError(f"JPEG codec failed at quality {quality}: {err}") from err
        if decoded.ndim == 2:
            decoded = decoded[:, :, None]
        back = (decoded / 127.5 - 1.0).transpose(2, 0, 1)
        return torch.from_numpy(back).to(dtype=aug.dtype, device=aug.device)

    @staticmethod
    def backward(ctx, grad_out):  # straight-through
        return grad_out, None


def apply_jpeg(aug: torch.Tensor, quality: int) -> torch.Tensor:
    """Round-trip through a real baseline JPEG codec; gradient is straight-through."""
    _check_image(aug, "jpeg")
    if not 1 <= int(quality) <= 100:
        raise DistortionError(f"jpeg quality must be in [1, 100], got {quality}")
    return _JpegRoundTrip.apply(aug, int(quality))


class _Quantize(torch.autograd.Function):
    @staticmethod
    def forward(ctx, aug: torch.Tensor, bits: int) -> torch.Tensor:
        levels = (1 << int(bits)) - 1
        x = aug.detach().to(torch.float64)
        idx = torch.round((x + 1.0) * (levels / 2.0))
        out = idx * (2.0 / levels) - 1.0
        return out.to(dtype=aug.dtype)

    @staticmethod
    def backward(ctx, grad_out):  # straight-through
        return grad_out, None


def apply_quantization(aug: torch.Tensor, bits: int) -> torch.Tensor:
    """Snap every value to the nearest of 2^bits levels spanning [-1, 1]."""
    _check_image(aug, "quantization")
    if not 1 <= int(bits) <= 8:
        raise DistortionError(f"quantization bits must be in [1, 8], got {bits}")
    return _Quantize.apply(aug, int(bits))


def collude(aug_a: torch.Tensor, aug_b: torch.Tensor, mode: str) -> torch.Tensor:
    """Merge two differently watermarked copies of the same frame.

    ``average`` takes the element-wise mean; ``alternate`` takes pixel (y, x)
    from ``aug_a`` when (y + x) is even and from ``aug_b`` when odd, all
    channels together (the densest alternation); ``alternate_rows``
    interleaves whole pixel rows instead. ``aug_a`` carries the label to be
    detected.
    """
    _check_image(aug_a, "collusion")
    if aug_a.shape != aug_b.shape:
        raise DistortionError(f"shape mismatch {tuple(aug_a.shape)} vs {tuple(aug_b.shape)}")
    if mode == "average":
        return (aug_a + aug_b) / 2.0
    if mode in ("alternate", "alternate_rows"):
        _, H, W = aug_a.shape
        yy, xx = torch.meshgrid(torch.arange(H), torch.arange(W), indexing="ij")
        parity = yy if mode == "alternate_rows" else yy + xx
        even = ((parity % 2) == 0).to(aug_a.dtype).unsqueeze(0).to(aug_a.device)
        return even * aug_a + (1.0 - even) * aug_b
    raise DistortionError(f"unknown collusion mode {mode!r}")


def apply_config(config: DistortionConfig, ctx: DistortionContext) -> torch.Tensor:
    """Dispatch one configured distortion on a context."""
    aug = ctx.augmented
    kind = config.kind
    if kind == "identity":
        return aug
    if kind == "cropout":
        mode = config.params.get("mode", "resize")
        return apply_cropout(aug, config.params["area"], config.seed,
                             mode=mode, orig=ctx.original)
    if kind == "dropout":
        if ctx.original is None:
            raise DistortionError("dropout needs the original image in the context")
        return apply_dropout(aug, ctx.original, config.params["p"], config.seed)
    if kind == "jpeg":
        return apply_jpeg(aug, config.params["quality"])
    if kind == "quantization":
        return apply_quantization(aug, config.params["bits"])
    if kind in ("collusion_avg", "collusion_alt"):
        if ctx.partner_augmented is None:
            raise DistortionError("collusion needs a partner-augmented image in the context")
        if kind == "collusion_avg":
            mode = "average"
        else:
            mode = "alternate_rows" if config.params.get("pattern") == "rows" else "alternate"
        return collude(aug, ctx.partner_augmented, mode)
    raise DistortionError(f"unknown distortion kind {kind!r}")


@dataclass(frozen=True)
class DistortionPool:
    """Enabled kinds plus parameter ranges for the fine-tuning sampler."""

    kinds: tuple[str, ...] = KINDS
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))

    def __post_init__(self) -> None:
        if not self.kinds:
            raise DistortionError("distortion pool must enable at least one kind")
        unknown = [k for k in self.kinds if k not in KINDS]
        if unknown:
            raise DistortionError(f"unknown distortion kinds {unknown!r}")
        if len(set(self.kinds)) != len(self.kinds):
            raise DistortionError(f"duplicate kinds in pool {self.kinds!r}")

    def to_dict(self) -> dict:
        return {"kinds": list(self.kinds), "ranges": {k: list(v) for k, v in self.ranges.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionPool":
        ranges = {k: tuple(v) for k, v in d.get("ranges", DEFAULT_RANGES).items()}
        return cls(kinds=tuple(d.get("kinds", KINDS)), ranges=ranges)


def sample_distortion(rng: np.random.Generator | int, pool: DistortionPool) -> DistortionConfig:
    """Draw a uniform kind from the pool with parameters from its ranges.

    Accepts either a live generator (for a reproducible draw sequence) or an
    integer seed. Collusion partner choice is left to the caller, which knows
    the per-image label.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    kind = pool.kinds[int(rng.integers(0, len(pool.kinds)))]
    seed = int(rng.integers(0, 2**31 - 1))
    params: dict = {}
    if kind == "cropout":
        lo, hi = pool.ranges["cropout_area"]
        params["area"] = float(rng.uniform(lo, hi))
    elif kind == "dropout":
        lo, hi = pool.ranges["dropout_p"]
        params["p"] = float(rng.uniform(lo, hi))
    elif kind == "jpeg":
        lo, hi = pool.ranges["jpeg_quality"]
        params["quality"] = int(rng.integers(int(lo), int(hi) + 1))
    elif kind == "quantization":
        lo, hi = pool.ranges["quantization_bits"]
        params["bits"] = int(rng.integers(int(lo), int(hi) + 1))
    return DistortionConfig(kind=kind, params=params, seed=seed)


def eval_configs(kinds: tuple[str, ...] = KINDS, seed: int = 0) -> list[DistortionConfig]:
    """Fixed-parameter configs used for per-kind robustness reporting."""
    return [DistortionConfig(kind=k, params=dict(EVAL_PARAMS[k]), seed=seed) for k in kinds]
