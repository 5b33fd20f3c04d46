"""Embedder and Detector network construction.

The Embedder maps a 4-channel watermark overlay to a 3-channel augmented
image of the same spatial size: a strided-conv encoder (LeakyReLU + batch
norm) followed by sub-pixel (pixel-shuffle) x2 upsampling units, which avoid
the checkerboard artifacts of strided transposed convolutions, then a final
tanh conv. The Detector is a conv/pool stack with a fully connected head
over watermark IDs.

Both builders expose their layer chain as :mod:`tilemark.rfcalc` specs; the
receptive field recorded on a handle always equals what ``chain_rf`` derives
from that chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from . import rfcalc
from .rfcalc import LayerSpec, RFReport, SizeRange
from .watermarks import WatermarkOverlay


class NetConfigError(ValueError):
    """Inconsistent network configuration."""


@dataclass(frozen=True)
class ConvStage:
    """One strided conv unit of the Embedder encoder."""

    depth: int
    kernel: int
    stride: int
    padding: int

    def to_dict(self) -> dict:
        return {"depth": self.depth, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding}


@dataclass(frozen=True)
class DetectorStage:
    """One conv (+ReLU) or max-pool unit of the Detector stack."""

    kind: str  # "conv" | "pool"
    kernel: int
    stride: int
    padding: int
    depth: int = 0  # convs only

    def __post_init__(self) -> None:
        if self.kind not in ("conv", "pool"):
            raise NetConfigError(f"unknown detector stage kind {self.kind!r}")
        if self.kind == "conv" and self.depth < 1:
            raise NetConfigError("conv stage needs a positive depth")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "kernel": self.kernel, "stride": self.stride,
                "padding": self.padding, "depth": self.depth}


@dataclass(frozen=True)
class EmbedderConfig:
    input_hw: tuple[int, int] = (720, 1280)
    in_channels: int = 4
    encoder: tuple[ConvStage, ...] = (
        ConvStage(depth=16, kernel=4, stride=4, padding=0),
        ConvStage(depth=64, kernel=4, stride=2, padding=1),
    )
    decoder_depths: tuple[int, ...] = (64, 128, 256)
    decoder_kernel: int = 3
    upscale: int = 2
    out_channels: int = 3

    def __post_init__(self) -> None:
        if not self.encoder or not self.decoder_depths:
            raise NetConfigError("embedder needs at least one encoder and one decoder stage")
        down = self.total_downscale
        up = self.upscale ** len(self.decoder_depths)
        if down != up:
            raise NetConfigError(
                f"encoder downscale x{down} does not cancel decoder upscale x{up}"
            )
        h, w = self.input_hw
        if h % down or w % down:
            raise NetConfigError(f"input {h}x{w} not divisible by total downscale {down}")

    @property
    def total_downscale(self) -> int:
        return math.prod(st.stride for st in self.encoder)

    def to_dict(self) -> dict:
        return {
            "input_hw": list(self.input_hw),
            "in_channels": self.in_channels,
            "encoder": [st.to_dict() for st in self.encoder],
            "decoder_depths": list(self.decoder_depths),
            "decoder_kernel": self.decoder_kernel,
            "upscale": self.upscale,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        return cls(
            input_hw=tuple(d["input_hw"]),
            in_channels=d["in_channels"],
            encoder=tuple(ConvStage(**st) for st in d["encoder"]),
            decoder_depths=tuple(d["decoder_depths"]),
            decoder_kernel=d["decoder_kernel"],
            upscale=d["upscale"],
            out_channels=d["out_channels"],
        )


@dataclass(frozen=True)
class DetectorConfig:
    input_hw: tuple[int, int] = (720, 1280)
    in_channels: int = 3
    stages: tuple[DetectorStage, ...] = (
        DetectorStage(kind="conv", kernel=5, stride=3, padding=1, depth=16),
        DetectorStage(kind="pool", kernel=5, stride=3, padding=0),
        DetectorStage(kind="conv", kernel=5, stride=3, padding=1, depth=32),
        DetectorStage(kind="pool", kernel=5, stride=3, padding=0),
    )
    num_classes: int = 10

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise NetConfigError(f"need at least 2 watermark classes, got {self.num_classes}")
        if not any(st.kind == "conv" for st in self.stages):
            raise NetConfigError("detector needs at least one conv stage")

    def to_dict(self) -> dict:
        return {
            "input_hw": list(self.input_hw),
            "in_channels": self.in_channels,
            "stages": [st.to_dict() for st in self.stages],
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        return cls(
            input_hw=tuple(d["input_hw"]),
            in_channels=d["in_channels"],
            stages=tuple(DetectorStage(**st) for st in d["stages"]),
            num_classes=d["num_classes"],
        )


def embedder_layer_chain(config: EmbedderConfig) -> list[LayerSpec]:
    """RF chain of the encode path (the decoder only re-expands resolution)."""
    chain: list[LayerSpec] = []
    for st in config.encoder:
        chain.append(LayerSpec("Conv", "conv", st.kernel, st.stride, st.padding))
        chain.append(LayerSpec("BatchNorm", "norm"))
        chain.append(LayerSpec("LeakyReLU", "activation"))
    return chain


def detector_layer_chain(config: DetectorConfig) -> list[LayerSpec]:
    """RF chain of the conv/pool stack, before the fully connected head."""
    chain: list[LayerSpec] = []
    for st in config.stages:
        if st.kind == "conv":
            chain.append(LayerSpec("Conv", "conv", st.kernel, st.stride, st.padding))
            chain.append(LayerSpec("ReLU", "activation"))
        else:
            chain.append(LayerSpec("MaxPool2d", "pool", st.kernel, st.stride, st.padding))
    return chain


class _EmbedderNet(nn.Module):
    def __init__(self, config: EmbedderConfig):
        super().__init__()
        layers: list[nn.Module] = []
        ch = config.in_channels
        for st in config.encoder:
            layers += [
                nn.Conv2d(ch, st.depth, st.kernel, st.stride, st.padding),
                nn.BatchNorm2d(st.depth),
                nn.LeakyReLU(),
            ]
            ch = st.depth
        for depth in config.decoder_depths:
            layers += [
                nn.Conv2d(ch, depth * config.upscale**2, config.decoder_kernel,
                          1, config.decoder_kernel // 2),
                nn.PixelShuffle(config.upscale),
                nn.LeakyReLU(),
                nn.BatchNorm2d(depth),
            ]
            ch = depth
        layers += [
            nn.Conv2d(ch, config.out_channels, config.decoder_kernel,
                      1, config.decoder_kernel // 2),
            nn.Tanh(),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class _DetectorNet(nn.Module):
    def __init__(self, config: DetectorConfig, feature_hw: tuple[int, int], feature_depth: int):
        super().__init__()
        layers: list[nn.Module] = []
        ch = config.in_channels
        for st in config.stages:
            if st.kind == "conv":
                layers += [nn.Conv2d(ch, st.depth, st.kernel, st.stride, st.padding),
                           nn.ReLU()]
                ch = st.depth
            else:
                layers.append(nn.MaxPool2d(st.kernel, st.stride, st.padding))
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(feature_hw[0] * feature_hw[1] * feature_depth, config.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.features(x)
        return self.head(feats.flatten(1))


@dataclass
class NetworkHandle:
    """A built network plus the config and RF chain it was derived from."""

    kind: str  # "embedder" | "detector"
    module: nn.Module
    config: EmbedderConfig | DetectorConfig
    layer_chain: tuple[LayerSpec, ...]
    rf: int
    seed: int

    def rf_report(self) -> RFReport:
        return rfcalc.chain_rf(self.layer_chain, self.config.input_hw)

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "rf": self.rf,
            "config": self.config.to_dict(),
            "layer_chain": [spec.to_dict() for spec in self.layer_chain],
        }


def build_embedder(config: EmbedderConfig, seed: int) -> NetworkHandle:
    """Construct an Embedder with deterministic, seeded initialization."""
    chain = embedder_layer_chain(config)
    rf = rfcalc.chain_rf(chain, config.input_hw).network_rf
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = _EmbedderNet(config)
    return NetworkHandle("embedder", module, config, tuple(chain), rf, seed)


def build_detector(config: DetectorConfig, seed: int) -> NetworkHandle:
    """Construct a Detector; the FC head is sized from the stack's output map."""
    chain = detector_layer_chain(config)
    report = rfcalc.chain_rf(chain, config.input_hw)
    feature_hw = report.rows[-1].n
    depth = [st.depth for st in config.stages if st.kind == "conv"][-1]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = _DetectorNet(config, feature_hw, depth)
    return NetworkHandle("detector", module, config, tuple(chain), report.network_rf, seed)


def _overlay_batch(overlays) -> torch.Tensor:
    if isinstance(overlays, torch.Tensor):
        return overlays
    if isinstance(overlays, WatermarkOverlay):
        overlays = [overlays]
    stacks = [np.ascontiguousarray(ov.stacked().transpose(2, 0, 1)) for ov in overlays]
    return torch.from_numpy(np.stack(stacks).astype(np.float32))


def embed(handle: NetworkHandle, overlays) -> torch.Tensor:
    """Run the Embedder on a batch of overlays; returns (B, 3, H, W) in [-1, 1].

    Accepts a (B, 4, H, W) tensor, a list of overlays, or a single overlay.
    Runs in eval mode but keeps the autograd graph, so gradients w.r.t. the
    weights remain available. The training loop drives the module directly.
    """
    if handle.kind != "embedder":
        raise NetConfigError(f"embed() needs an embedder handle, got {handle.kind!r}")
    x = _overlay_batch(overlays)
    if x.ndim != 4 or x.shape[1] != handle.config.in_channels:
        raise NetConfigError(
            f"expected (B, {handle.config.in_channels}, H, W), got {tuple(x.shape)}"
        )
    down = handle.config.total_downscale
    if x.shape[2] % down or x.shape[3] % down:
        raise NetConfigError(
            f"spatial dims {x.shape[2]}x{x.shape[3]} not divisible by downscale {down}"
        )
    handle.module.eval()
    return handle.module(x)


def detect(handle: NetworkHandle, images) -> torch.Tensor:
    """Watermark-ID probabilities for a (B, 3, H, W) batch; rows sum to 1."""
    if handle.kind != "detector":
        raise NetConfigError(f"detect() needs a detector handle, got {handle.kind!r}")
    if isinstance(images, np.ndarray):
        images = torch.from_numpy(
            np.ascontiguousarray(images.transpose(0, 3, 1, 2)).astype(np.float32)
        )
    if images.ndim != 4 or images.shape[1] != handle.config.in_channels:
        raise NetConfigError(
            f"expected (B, {handle.config.in_channels}, H, W), got {tuple(images.shape)}"
        )
    handle.module.eval()
    logits = handle.module(images)
    return torch.softmax(logits, dim=1)


def watermark_window(embedder_config: EmbedderConfig,
                     detector_config: DetectorConfig) -> SizeRange:
    """Admissible watermark sizes for an Embedder/Detector pair."""
    if tuple(embedder_config.input_hw) != tuple(detector_config.input_hw):
        raise NetConfigError("embedder and detector configs disagree on input size")
    emb = rfcalc.chain_rf(embedder_layer_chain(embedder_config), embedder_config.input_hw)
    det = rfcalc.chain_rf(detector_layer_chain(detector_config), detector_config.input_hw)
    return rfcalc.valid_watermark_range(emb, det)


def full_scale_profile(num_classes: int = 10) -> tuple[EmbedderConfig, DetectorConfig]:
    """The HD (1280x720) pair: RF window [16, 161]."""
    return (EmbedderConfig(), DetectorConfig(num_classes=num_classes))


def scaled_profile(input_hw: tuple[int, int] = (128, 128),
                   num_classes: int = 10) -> tuple[EmbedderConfig, DetectorConfig]:
    """A small-frame pair whose RF window brackets an 8x8 watermark.

    Encoder strides drop to (2, 2) and the detector stack uses 3x3 kernels,
    giving an RF window of [7, 31] at 128x128. The window is recomputed from
    the chains, not assumed.
    """
    emb = EmbedderConfig(
        input_hw=input_hw,
        encoder=(
            ConvStage(depth=16, kernel=3, stride=2, padding=1),
            ConvStage(depth=64, kernel=3, stride=2, padding=1),
        ),
        decoder_depths=(64, 128),
    )
    det = DetectorConfig(
        input_hw=input_hw,
        stages=(
            DetectorStage(kind="conv", kernel=3, stride=2, padding=1, depth=16),
            DetectorStage(kind="pool", kernel=3, stride=2, padding=0),
            DetectorStage(kind="conv", kernel=3, stride=2, padding=1, depth=32),
            DetectorStage(kind="pool", kernel=3, stride=2, padding=0),
        ),
        num_classes=num_classes,
    )
    window = watermark_window(emb, det)
    if not window.contains(8):
        raise NetConfigError(f"scaled profile window {window} does not bracket 8x8")
    return emb, det
