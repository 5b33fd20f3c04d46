"""Shared fixtures: synthetic frame corpora and small trained models.

Frames are procedurally generated (smooth low-frequency base, a soft
rectangle, mid-frequency texture) so they compress like natural images and
reconstruct easily at desk scale. Everything is seeded.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from tilemark import dataio, nets, training
from tilemark.dataio import save_image
from tilemark.nets import ConvStage, EmbedderConfig
from tilemark.watermarks import generate_letter_set


def synth_frame(rng: np.random.Generator, h: int = 128, w: int = 128) -> np.ndarray:
    base = rng.normal(0, 1, (8, 8, 3))
    t = torch.from_numpy(base.transpose(2, 0, 1)).unsqueeze(0).float()
    img = F.interpolate(t, size=(h, w), mode="bilinear",
                        align_corners=False)[0].numpy().transpose(1, 2, 0)
    y0, x0 = rng.integers(0, h // 2), rng.integers(0, w // 2)
    hh, ww = rng.integers(h // 8, h // 2), rng.integers(w // 8, w // 2)
    img[y0 : y0 + hh, x0 : x0 + ww] += rng.normal(0, 0.5, 3)
    fine = rng.normal(0, 0.25, (32, 32, 3))
    tf = torch.from_numpy(fine.transpose(2, 0, 1)).unsqueeze(0).float()
    img += F.interpolate(tf, size=(h, w), mode="bilinear",
                         align_corners=False)[0].numpy().transpose(1, 2, 0)
    return (np.tanh(img * 0.7) * 0.8).astype(np.float32)


def make_frame_dir(path, count: int, seed: int, h: int = 128, w: int = 128):
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        save_image(synth_frame(rng, h, w), path / f"frame_{i:04d}.png")
    return path


def desk_embedder_config(input_hw=(128, 128)) -> EmbedderConfig:
    """Desk-scale embedder sized for a 2-core CPU budget (RF still 7)."""
    return EmbedderConfig(
        input_hw=input_hw,
        encoder=(ConvStage(16, 3, 2, 1), ConvStage(64, 3, 2, 1)),
        decoder_depths=(24, 48),
    )


@pytest.fixture(scope="session")
def frames_dir_128(tmp_path_factory):
    return make_frame_dir(tmp_path_factory.mktemp("frames128"), 250, seed=11)


@pytest.fixture(scope="session")
def frames_dir_64(tmp_path_factory):
    return make_frame_dir(tmp_path_factory.mktemp("frames64"), 48, seed=12, h=64, w=64)


@pytest.fixture(scope="session")
def desk_dataset(frames_dir_128):
    dataset = dataio.ingest(frames_dir_128, 250, (128, 128), seed=7)
    return dataio.split(dataset, 50, seed=7)


@pytest.fixture(scope="session")
def small_dataset(frames_dir_64):
    dataset = dataio.ingest(frames_dir_64, 48, (64, 64), seed=3)
    return dataio.split(dataset, 12, seed=3)


@pytest.fixture(scope="session")
def wset8():
    return generate_letter_set("ABCDEFGHIJ", (8, 8))


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, small_dataset, wset8):
    """A 2-epoch (unconverged) model for persistence and CLI plumbing tests."""
    out = tmp_path_factory.mktemp("tiny_ckpt")
    config = training.TrainingConfig(phase="pretrain", epochs=2, seed=5)
    emb_cfg = desk_embedder_config((64, 64))
    det_cfg = nets.scaled_profile((64, 64), len(wset8))[1]
    return training.pretrain(small_dataset, wset8, config, out / "ckpt",
                             embedder_config=emb_cfg, detector_config=det_cfg)
