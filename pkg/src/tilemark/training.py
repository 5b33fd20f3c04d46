"""Two-phase training: clean pre-training, then distortion fine-tuning.

Per step, each frame in the batch gets a uniformly sampled watermark,
is overlaid and embedded, and (during fine-tuning) passes through a sampled
distortion before detection. The Detector descends its cross-entropy loss;
the Embedder descends the weighted sum

    L_E = gamma_imp * L_imp + gamma_det * L_det

so the detection loss flows through both networks while the imperceptibility
loss shapes only the Embedder. Both networks use Adam at the same learning
rate; optimizer moments are reset when a new phase starts.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import dataio, distortions, imaging, nets, rfcalc
from .dataio import Checkpoint, FrameDataset
from .distortions import DistortionConfig, DistortionContext, DistortionPool
from .nets import DetectorConfig, EmbedderConfig, NetworkHandle
from .watermarks import WatermarkSet, tile

PHASES = ("pretrain", "finetune")


class TrainingError(ValueError):
    """Invalid training configuration or inputs."""


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def imperceptibility_loss(orig: torch.Tensor, aug: torch.Tensor) -> torch.Tensor:
    """Mean squared pixel difference between original and augmented batches."""
    if orig.shape != aug.shape:
        raise TrainingError(f"shape mismatch {tuple(orig.shape)} vs {tuple(aug.shape)}")
    return torch.mean((orig - aug) ** 2)


def detection_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Multi-class cross-entropy over watermark IDs.

    ``logits`` are unnormalized scores, one row per image; the loss is the
    mean of -log softmax(logits)[label], computed in log-sum-exp form.
    """
    if not isinstance(labels, torch.Tensor):
        labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise TrainingError(
            f"expected (B, M) logits with B labels, got {tuple(logits.shape)} "
            f"and {tuple(labels.shape)}"
        )
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise TrainingError(f"label out of range [0, {logits.shape[1]})")
    return F.cross_entropy(logits, labels)


def embedder_loss(l_imp: torch.Tensor | float, l_det: torch.Tensor | float,
                  config: "TrainingConfig") -> torch.Tensor:
    """gamma_imp * L_imp + gamma_det * L_det."""
    l_imp = torch.as_tensor(l_imp, dtype=torch.float64) if not torch.is_tensor(l_imp) else l_imp
    l_det = torch.as_tensor(l_det, dtype=torch.float64) if not torch.is_tensor(l_det) else l_det
    if not (torch.isfinite(l_imp).all() and torch.isfinite(l_det).all()):
        raise TrainingError("non-finite loss input")
    return config.gamma_imp * l_imp + config.gamma_det * l_det


@dataclass(frozen=True)
class TrainingConfig:
    phase: str = "pretrain"
    batch_size: int = 6
    learning_rate: float = 1e-4
    gamma_imp: float = 0.95
    gamma_det: float = 0.05
    epochs: int = 40
    seed: int = 0
    distortion_pool: Optional[DistortionPool] = None
    checkpoint_every: Optional[int] = None  # epochs between periodic snapshots
    early_stop_accuracy: Optional[float] = None  # held-out target that ends training
    early_stop_psnr: Optional[float] = None  # extra dB floor the early stop must clear
    eval_every: int = 5  # epochs between early-stop evaluations

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise TrainingError(f"unknown phase {self.phase!r}")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.gamma_imp < 0 or self.gamma_det < 0:
            raise TrainingError("loss weights must be non-negative")
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.phase == "finetune":
            if self.distortion_pool is None:
                raise TrainingError("finetune needs a distortion pool")
            if "identity" not in self.distortion_pool.kinds:
                raise TrainingError(
                    "the fine-tuning pool must keep the identity distortion, or the "
                    "model forgets how to process clean images"
                )

    def to_dict(self) -> dict:
        d = {
            "phase": self.phase,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "gamma_imp": self.gamma_imp,
            "gamma_det": self.gamma_det,
            "epochs": self.epochs,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "early_stop_accuracy": self.early_stop_accuracy,
            "early_stop_psnr": self.early_stop_psnr,
            "eval_every": self.eval_every,
        }
        if self.distortion_pool is not None:
            d["distortion_pool"] = self.distortion_pool.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        pool = d.pop("distortion_pool", None)
        if pool is not None:
            d["distortion_pool"] = DistortionPool.from_dict(pool)
        return cls(**d)


@dataclass
class TrainingState:
    embedder: NetworkHandle
    detector: NetworkHandle
    config: TrainingConfig
    opt_embedder: torch.optim.Optimizer
    opt_detector: torch.optim.Optimizer
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    curves: list[dict] = field(default_factory=list)
    _plane_cache: dict = field(default_factory=dict, repr=False)


def init_state(embedder: NetworkHandle, detector: NetworkHandle,
               config: TrainingConfig) -> TrainingState:
    """Fresh optimizers and RNG for a phase; Adam moments start from zero."""
    return TrainingState(
        embedder=embedder,
        detector=detector,
        config=config,
        opt_embedder=torch.optim.Adam(embedder.module.parameters(), lr=config.learning_rate),
        opt_detector=torch.optim.Adam(detector.module.parameters(), lr=config.learning_rate),
        rng=np.random.default_rng(config.seed),
    )


def _tiled_plane(state: TrainingState, wset: WatermarkSet, wm_id: int,
                 hw: tuple[int, int]) -> torch.Tensor:
    key = (wm_id, hw)
    if key not in state._plane_cache:
        plane = tile(wset[wm_id], hw)[:, :, 0]
        state._plane_cache[key] = torch.from_numpy(plane).unsqueeze(0)
    return state._plane_cache[key]


def _overlay_tensor(state: TrainingState, rgb: torch.Tensor, wset: WatermarkSet,
                    labels: np.ndarray) -> torch.Tensor:
    hw = (rgb.shape[2], rgb.shape[3])
    planes = torch.stack([_tiled_plane(state, wset, int(l), hw) for l in labels])
    return torch.cat([rgb, planes], dim=1)


def _distort_batch(state: TrainingState, aug: torch.Tensor, rgb: torch.Tensor,
                   wset: WatermarkSet, labels: np.ndarray,
                   ) -> tuple[torch.Tensor, list[str], dict[int, int]]:
    """Sample and apply one distortion per image; embeds partners for collusion.

    Returns the distorted batch, the sampled kind per image, and the partner
    label for each collusion image.
    """
    pool = state.config.distortion_pool
    configs = [distortions.sample_distortion(state.rng, pool) for _ in labels]
    partner_ids: dict[int, int] = {}
    for i, cfg in enumerate(configs):
        if cfg.kind.startswith("collusion"):
            others = [m for m in range(len(wset)) if m != int(labels[i])]
            partner_ids[i] = int(others[int(state.rng.integers(0, len(others)))])
    partner_aug = {}
    if partner_ids:
        idx = sorted(partner_ids)
        p_labels = np.array([partner_ids[i] for i in idx])
        p_overlay = _overlay_tensor(state, rgb[idx], wset, p_labels)
        p_out = state.embedder.module(p_overlay)
        partner_aug = {i: p_out[k] for k, i in enumerate(idx)}
    out = []
    for i, cfg in enumerate(configs):
        ctx = DistortionContext(
            augmented=aug[i],
            original=rgb[i],
            partner_augmented=partner_aug.get(i),
        )
        out.append(distortions.apply_config(cfg, ctx))
    return torch.stack(out), [cfg.kind for cfg in configs], partner_ids


def train_step(state: TrainingState, frames: np.ndarray, wset: WatermarkSet) -> TrainingState:
    """One optimization step over a frame batch; appends one curve row."""
    config = state.config
    rgb = torch.from_numpy(np.ascontiguousarray(
        np.asarray(frames, dtype=np.float32).transpose(0, 3, 1, 2)))
    labels = state.rng.integers(0, len(wset), size=rgb.shape[0])

    state.embedder.module.train()
    state.detector.module.train()
    overlay = _overlay_tensor(state, rgb, wset, labels)
    aug = state.embedder.module(overlay)
    partner_ids: dict[int, int] = {}
    if config.phase == "finetune":
        detector_in, kinds, partner_ids = _distort_batch(state, aug, rgb, wset, labels)
    else:
        detector_in, kinds = aug, ["identity"] * len(labels)
    logits = state.detector.module(detector_in)

    label_t = torch.from_numpy(labels.astype(np.int64))
    # An averaged collusion is symmetric in the two marks, so the attainable
    # target is the colluding pair; everything else trains toward its label.
    avg_pairs = {i: partner_ids[i] for i, kind in enumerate(kinds)
                 if kind == "collusion_avg"}
    if avg_pairs:
        targets = F.one_hot(label_t, num_classes=logits.shape[1]).double()
        for i, partner in avg_pairs.items():
            targets[i, labels[i]] = 0.5
            targets[i, partner] = 0.5
        l_det = -(targets.to(logits.dtype) * F.log_softmax(logits, dim=1)).sum(dim=1).mean()
    else:
        l_det = detection_loss(logits, label_t)
    l_imp = imperceptibility_loss(rgb, aug)
    if not (torch.isfinite(l_det) and torch.isfinite(l_imp)):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}",
            snapshot={
                "step": state.step,
                "epoch": state.epoch,
                "phase": config.phase,
                "l_imp": float(l_imp.detach()),
                "l_det": float(l_det.detach()),
                "labels": labels.tolist(),
                "distortions": kinds,
            },
        )
    l_e = embedder_loss(l_imp, l_det, config)

    emb_params = list(state.embedder.module.parameters())
    det_params = list(state.detector.module.parameters())
    state.opt_embedder.zero_grad(set_to_none=True)
    state.opt_detector.zero_grad(set_to_none=True)
    l_e.backward(retain_graph=True, inputs=emb_params)
    l_det.backward(inputs=det_params)
    state.opt_embedder.step()
    state.opt_detector.step()

    acc = float((logits.detach().argmax(dim=1) == label_t).float().mean())
    state.step += 1
    state.curves.append({
        "step": state.step,
        "l_imp": float(l_imp.detach()),
        "l_det": float(l_det.detach()),
        "l_e": float(l_e.detach()),
        "accuracy": acc,
    })
    return state


def _epoch_batches(indices: Sequence[int], batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(indices))
    for start in range(0, len(order) - batch_size + 1, batch_size):
        yield [indices[i] for i in order[start : start + batch_size]]


def heldout_metrics(embedder: NetworkHandle, detector: NetworkHandle,
                    dataset: FrameDataset, wset: WatermarkSet,
                    distortion_configs: Sequence[DistortionConfig] = (),
                    eval_seed: int = 0, batch_size: int = 8) -> imaging.MetricReport:
    """Embed + (optionally distort) + detect over the held-out frames.

    Watermarks are assigned round-robin so classes stay balanced and the
    assignment is shared across distortion kinds. PSNR/SSIM are averaged
    per image over the clean augmented outputs.

    Averaged collusion scores a hit when the prediction names either
    colluder: the mean of two watermarked copies carries no information
    about which mark was the "first" one, so identifying a colluder is the
    attainable detection target. Alternate collusion keeps the strict
    own-label target (the pixel parity anchors the first copy).
    """
    indices = list(dataset.heldout_indices)
    if not indices:
        raise TrainingError("dataset has no held-out frames")
    M = len(wset)
    labels = [i % M for i in range(len(indices))]
    rng = np.random.default_rng(eval_seed)

    embedder.module.eval()
    detector.module.eval()
    psnrs, ssims = [], []
    clean_hits = 0
    kind_hits = {cfg.kind: 0 for cfg in distortion_configs}
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start : start + batch_size]
            chunk_labels = labels[start : start + len(chunk)]
            rgb = torch.from_numpy(np.ascontiguousarray(
                dataset.load_batch(chunk).transpose(0, 3, 1, 2)))
            planes = []
            for lab in chunk_labels:
                planes.append(torch.from_numpy(
                    tile(wset[lab], (rgb.shape[2], rgb.shape[3]))[:, :, 0]).unsqueeze(0))
            overlay = torch.cat([rgb, torch.stack(planes)], dim=1)
            aug = embedder.module(overlay)

            for k in range(len(chunk)):
                psnrs.append(imaging.psnr(rgb[k].numpy(), aug[k].numpy()))
                ssims.append(imaging.ssim(
                    rgb[k].numpy().transpose(1, 2, 0), aug[k].numpy().transpose(1, 2, 0)))
            preds = detector.module(aug).argmax(dim=1)
            clean_hits += int((preds == torch.as_tensor(chunk_labels)).sum())

            for cfg in distortion_configs:
                distorted = []
                partner_labels = []
                for k, lab in enumerate(chunk_labels):
                    partner = None
                    partner_id = -1
                    if cfg.kind.startswith("collusion"):
                        partner_id = int((lab + 1 + rng.integers(0, M - 1)) % M)
                        p_plane = torch.from_numpy(
                            tile(wset[partner_id], (rgb.shape[2], rgb.shape[3]))[:, :, 0]
                        ).unsqueeze(0)
                        p_overlay = torch.cat([rgb[k], p_plane], dim=0).unsqueeze(0)
                        partner = embedder.module(p_overlay)[0]
                    partner_labels.append(partner_id)
                    per_frame = DistortionConfig(
                        kind=cfg.kind, params=dict(cfg.params),
                        seed=cfg.seed + start + k)
                    ctx = DistortionContext(augmented=aug[k], original=rgb[k],
                                            partner_augmented=partner)
                    distorted.append(distortions.apply_config(per_frame, ctx))
                preds = detector.module(torch.stack(distorted)).argmax(dim=1)
                hits = preds == torch.as_tensor(chunk_labels)
                if cfg.kind == "collusion_avg":
                    hits = hits | (preds == torch.as_tensor(partner_labels))
                kind_hits[cfg.kind] += int(hits.sum())

    n = len(indices)
    finite = [p for p in psnrs if np.isfinite(p)]
    return imaging.MetricReport(
        psnr_db=float(np.mean(finite)) if finite else float("inf"),
        ssim=float(np.mean(ssims)),
        detection_accuracy=clean_hits / n,
        per_distortion={kind: hits / n for kind, hits in kind_hits.items()},
        metadata={"psnr_averaging": "per_image", "heldout_frames": n,
                  "eval_seed": eval_seed,
                  "collusion_avg_counting": "either_colluder"},
    )


def _run_phase(state: TrainingState, dataset: FrameDataset, wset: WatermarkSet,
               out_dir: Path, final_distortions: Sequence[DistortionConfig]) -> Checkpoint:
    config = state.config
    if not dataset.train_indices:
        raise TrainingError("dataset has no training frames")
    try:
        window = nets.watermark_window(state.embedder.config, state.detector.config)
    except rfcalc.RFError:
        window = None  # degenerate pair: nothing to warn against
    if window is not None and not window.contains(wset.size):
        warnings.warn(
            f"watermark size {wset.size} outside the admissible window "
            f"[{window.lower}, {window.upper}]",
            stacklevel=2,
        )

    stopped_early = False
    for _ in range(config.epochs):
        state.epoch += 1
        for batch_idx in _epoch_batches(dataset.train_indices, config.batch_size, state.rng):
            train_step(state, dataset.load_batch(batch_idx), wset)
        if config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
            _save(state, dataset, wset, out_dir / f"epoch_{state.epoch:04d}", None)
        if (config.early_stop_accuracy is not None and dataset.heldout_indices
                and state.epoch % config.eval_every == 0):
            probe = heldout_metrics(state.embedder, state.detector, dataset, wset,
                                    final_distortions if config.phase == "finetune" else ())
            score = probe.detection_accuracy
            if config.phase == "finetune" and probe.per_distortion:
                score = min(score, min(probe.per_distortion.values()))
            if score >= config.early_stop_accuracy and (
                    config.early_stop_psnr is None or probe.psnr_db >= config.early_stop_psnr):
                stopped_early = True
                break

    metrics = None
    if dataset.heldout_indices:
        metrics = heldout_metrics(state.embedder, state.detector, dataset, wset,
                                  final_distortions)
    ckpt = _save(state, dataset, wset, out_dir, metrics, stopped_early=stopped_early)
    save_curves(state.curves, out_dir / "curves.csv")
    return ckpt


def _save(state: TrainingState, dataset: FrameDataset, wset: WatermarkSet,
          path: Path, metrics: Optional[imaging.MetricReport],
          stopped_early: bool = False) -> Checkpoint:
    extra = {
        "phase": state.config.phase,
        "stopped_early": stopped_early,
        "epoch": state.epoch,
        "step": state.step,
        "training_config": state.config.to_dict(),
        "watermark_manifest_hash": wset.manifest_hash,
        "watermark_size": list(wset.size),
        "dataset": {"source": dataset.source, "resolution": list(dataset.resolution),
                    "train": len(dataset.train_indices),
                    "heldout": len(dataset.heldout_indices), "seed": dataset.seed},
        "optimizer": {"kind": "adam", "lr": state.config.learning_rate,
                      "moments_reset_at_phase_start": True},
    }
    if metrics is not None:
        extra["metrics"] = metrics.to_dict()
    return dataio.save_checkpoint(state.embedder, state.detector, extra, path)


def pretrain(dataset: FrameDataset, wset: WatermarkSet, config: TrainingConfig,
             out_dir: str | Path,
             embedder_config: Optional[EmbedderConfig] = None,
             detector_config: Optional[DetectorConfig] = None) -> Checkpoint:
    """First phase: no distortions beyond the implicit identity."""
    if config.phase != "pretrain":
        raise TrainingError(f"pretrain() got a {config.phase!r} config")
    if embedder_config is None or detector_config is None:
        emb_default, det_default = nets.scaled_profile(dataset.resolution, len(wset))
        embedder_config = embedder_config or emb_default
        detector_config = detector_config or det_default
    embedder = nets.build_embedder(embedder_config, seed=config.seed)
    detector = nets.build_detector(detector_config, seed=config.seed + 1)
    state = init_state(embedder, detector, config)
    return _run_phase(state, dataset, wset, Path(out_dir), ())


def finetune(checkpoint: str | Path | Checkpoint, dataset: FrameDataset,
             wset: WatermarkSet, config: TrainingConfig,
             out_dir: str | Path) -> Checkpoint:
    """Second phase: the distortion layer sits between embedding and detection."""
    if config.phase != "finetune":
        raise TrainingError(f"finetune() got a {config.phase!r} config")
    path = checkpoint.path if isinstance(checkpoint, Checkpoint) else checkpoint
    embedder, detector, _ = dataio.load_checkpoint(
        path, expected_manifest_hash=wset.manifest_hash)
    state = init_state(embedder, detector, config)
    final = distortions.eval_configs(config.distortion_pool.kinds)
    return _run_phase(state, dataset, wset, Path(out_dir), final)


def save_curves(curves: Sequence[dict], path: str | Path) -> Path:
    """Training curve as CSV: step, l_imp, l_det, l_e, accuracy."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "l_imp", "l_det", "l_e", "accuracy"])
        writer.writeheader()
        for row in curves:
            writer.writerow(row)
    return path
