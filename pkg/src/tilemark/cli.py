"""Command-line entry point wiring the modules into reproducible experiments.

Every stochastic subcommand takes ``--seed`` and every report embeds the
resolved configuration, so reruns with equal inputs produce equal outputs.
Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.

Geometry flags (``--input``, ``--resolution``, ``--size``) are WIDTHxHEIGHT.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import click
import numpy as np

from . import dataio, distortions, imaging, nets, rfcalc, training, watermarks
from .dataio import DataError, FrameDataset
from .distortions import DistortionConfig, DistortionPool
from .imaging import MetricReport
from .training import TrainingConfig
from .watermarks import WatermarkSet

_USAGE_ERRORS = (
    rfcalc.RFError,
    watermarks.WatermarkError,
    nets.NetConfigError,
    distortions.DistortionError,
    training.TrainingError,
    imaging.MetricError,
    ValueError,
)


def _parse_wh(text: str) -> tuple[int, int]:
    """'WxH' -> (H, W)."""
    try:
        w, h = (int(tok) for tok in text.lower().split("x"))
    except Exception as err:
        raise click.UsageError(f"expected WIDTHxHEIGHT, got {text!r}") from err
    return (h, w)


def _parse_sizes(text: str) -> list[tuple[int, int]]:
    return [_parse_wh(tok) for tok in text.split(",") if tok.strip()]


def _load_json_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _profile_for(dataset: FrameDataset, num_classes: int, profile: str):
    if profile == "full":
        return nets.full_scale_profile(num_classes)
    return nets.scaled_profile(dataset.resolution, num_classes)


# ---------------------------------------------------------------------------
# harness operations (importable; the commands below are thin wrappers)
# ---------------------------------------------------------------------------


def run_evaluate(checkpoint: str | Path, dataset: FrameDataset, wset: WatermarkSet,
                 kinds: Sequence[str] = distortions.KINDS, eval_seed: int = 0,
                 force: bool = False) -> MetricReport:
    """Per-distortion accuracy plus PSNR/SSIM of the clean augmented images."""
    embedder, detector, meta = dataio.load_checkpoint(
        checkpoint, expected_manifest_hash=wset.manifest_hash, force=force)
    configs = distortions.eval_configs(tuple(kinds), seed=eval_seed)
    report = training.heldout_metrics(embedder, detector, dataset, wset,
                                      configs, eval_seed=eval_seed)
    report.metadata["config"] = {
        "checkpoint": str(checkpoint),
        "checkpoint_phase": meta.get("phase"),
        "kinds": list(kinds),
        "distortion_params": {k: distortions.EVAL_PARAMS[k] for k in kinds},
        "eval_seed": eval_seed,
        "heldout": len(dataset.heldout_indices),
        "watermark_manifest_hash": wset.manifest_hash,
    }
    return report


def write_report_files(report: MetricReport, out_json: Optional[Path],
                       out_csv: Optional[Path]) -> None:
    if out_json:
        out_json.parent.mkdir(parents=True, exist_ok=True)
        with open(out_json, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    if out_csv:
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["distortion", "accuracy"])
            writer.writerow(["identity", report.detection_accuracy])
            for kind, acc in report.per_distortion.items():
                if kind != "identity":
                    writer.writerow([kind, acc])


def run_sweep(sizes: Sequence[tuple[int, int]], dataset: FrameDataset, letters: Sequence[str],
              config: TrainingConfig, out_dir: str | Path,
              kinds: Sequence[str] = distortions.KINDS,
              finetune_config: Optional[TrainingConfig] = None) -> dict:
    """Train one model per watermark size and tabulate per-distortion accuracy.

    Per-size failures are recorded and the sweep continues. Emits
    ``sweep.csv`` (size, distortion, accuracy), ``sweep_summary.csv`` with the
    all-kind and sophisticated-kind means, a boundary-annotated plot, and the
    resolved config.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emb_cfg, det_cfg = nets.scaled_profile(dataset.resolution, len(letters))
    window = nets.watermark_window(emb_cfg, det_cfg)
    rows: list[dict] = []
    failures: dict[str, str] = {}
    for wh, ww in sizes:
        label = f"{ww}x{wh}"
        try:
            import warnings as _warnings

            with _warnings.catch_warnings():
                _warnings.simplefilter("ignore")  # out-of-window sizes are deliberate
                wset = watermarks.generate_letter_set(letters, (wh, ww))
                ckpt = training.pretrain(dataset, wset, config,
                                         out_dir / f"model_{label}",
                                         embedder_config=emb_cfg, detector_config=det_cfg)
                if finetune_config is not None:
                    ckpt = training.finetune(ckpt, dataset, wset, finetune_config,
                                             out_dir / f"model_{label}_ft")
            report = run_evaluate(ckpt.path, dataset, wset, kinds=kinds,
                                  eval_seed=config.seed)
            for kind in kinds:
                acc = (report.detection_accuracy if kind == "identity"
                       else report.per_distortion[kind])
                rows.append({"size": label, "extent": max(wh, ww),
                             "distortion": kind, "accuracy": acc})
        except Exception as err:  # record and continue
            failures[label] = f"{type(err).__name__}: {err}"

    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "distortion", "accuracy"])
        for row in rows:
            writer.writerow([row["size"], row["distortion"], row["accuracy"]])

    summary = summarize_sweep(rows)
    with open(out_dir / "sweep_summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "extent", "mean_all", "mean_sophisticated"])
        for s in summary:
            writer.writerow([s["size"], s["extent"], s["mean_all"], s["mean_sophisticated"]])

    plot_path = out_dir / "sweep.png"
    if summary:
        plot_sweep(summary, window.lower, window.upper, plot_path)
    resolved = {
        "sizes": [f"{ww}x{wh}" for wh, ww in sizes],
        "letters": list(letters),
        "kinds": list(kinds),
        "training": config.to_dict(),
        "finetune": finetune_config.to_dict() if finetune_config else None,
        "window": {"lower": window.lower, "upper": window.upper},
        "failures": failures,
    }
    with open(out_dir / "sweep_config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2)
        fh.write("\n")
    return {"csv": csv_path, "summary": summary, "failures": failures,
            "window": window, "plot": plot_path}


def summarize_sweep(rows: Sequence[dict]) -> list[dict]:
    """Per-size means over all kinds and over the sophisticated kinds."""
    by_size: dict[str, dict] = {}
    for row in rows:
        entry = by_size.setdefault(row["size"], {"extent": row.get("extent", 0), "accs": {}})
        entry["accs"][row["distortion"]] = row["accuracy"]
        if not entry["extent"]:
            dims = [int(tok) for tok in row["size"].split("x")]
            entry["extent"] = max(dims)
    summary = []
    for size, entry in by_size.items():
        accs = entry["accs"]
        soph = [accs[k] for k in distortions.SOPHISTICATED_KINDS if k in accs]
        summary.append({
            "size": size,
            "extent": entry["extent"],
            "mean_all": float(np.mean(list(accs.values()))),
            "mean_sophisticated": float(np.mean(soph)) if soph else float("nan"),
        })
    summary.sort(key=lambda s: s["extent"])
    return summary


def plot_sweep(summary: Sequence[dict], rf_lower: int, rf_upper: int,
               out_path: str | Path) -> Path:
    """Accuracy-vs-size plot with the RF window marked by dashed lines."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [s["extent"] for s in summary]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(xs, [s["mean_all"] for s in summary], "o-", color="black",
            label="mean over all distortions")
    ax.plot(xs, [s["mean_sophisticated"] for s in summary], "s-", color="tab:blue",
            label="mean over sophisticated distortions")
    for bound, name in ((rf_lower, "embedder RF"), (rf_upper, "detector RF")):
        ax.axvline(bound, color="red", linestyle="--", linewidth=1)
        ax.text(bound, 1.02, name, color="red", ha="center", fontsize=8,
                transform=ax.get_xaxis_transform())
    ax.set_xscale("log", base=2)
    ax.set_xticks(xs)
    ax.set_xticklabels([s["size"] for s in summary], rotation=30)
    ax.set_xlabel("watermark size")
    ax.set_ylabel("detection accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower center", fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_curves(curves_csv: str | Path, out_path: str | Path) -> Path:
    """Loss and batch-accuracy curves from a training CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps, l_imp, l_det, acc = [], [], [], []
    with open(curves_csv, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            l_imp.append(float(row["l_imp"]))
            l_det.append(float(row["l_det"]))
            acc.append(float(row["accuracy"]))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(steps, l_imp, label="L_imp")
    ax1.plot(steps, l_det, label="L_det")
    ax1.set_xlabel("step")
    ax1.set_yscale("log")
    ax1.legend()
    ax2.plot(steps, acc, color="tab:green")
    ax2.set_xlabel("step")
    ax2.set_ylabel("batch detection accuracy")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


# ---------------------------------------------------------------------------
# click commands
# ---------------------------------------------------------------------------


@click.group()
def cli() -> None:
    """Blind spatial watermarking toolkit."""


@cli.command("rf")
@click.option("--chain", "chain_path", required=True, type=click.Path(exists=True),
              help="JSON array of {name, kind, kernel, stride, padding}.")
@click.option("--input", "input_wh", required=True, help="Input extent, WIDTHxHEIGHT.")
@click.option("--json", "as_json", is_flag=True, help="Emit the report as JSON.")
def rf_cmd(chain_path: str, input_wh: str, as_json: bool) -> None:
    """Propagate receptive-field state through a layer chain."""
    h, w = _parse_wh(input_wh)
    report = rfcalc.chain_rf(rfcalc.load_chain(chain_path), (w, h))
    click.echo(json.dumps(report.to_dict(), indent=2) if as_json else report.format_table())


@cli.command("gen-watermarks")
@click.option("--letters", default="A-J", show_default=True,
              help="Letter range 'A-J', list 'A,B,C', or string 'ABC'.")
@click.option("--size", required=True, help="Watermark extent, WIDTHxHEIGHT.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def gen_watermarks_cmd(letters: str, size: str, out_dir: str) -> None:
    """Generate a letter watermark set and persist it with a manifest."""
    wset = watermarks.generate_letter_set(watermarks.parse_letters(letters), _parse_wh(size))
    manifest = watermarks.save_watermark_set(wset, out_dir)
    click.echo(f"wrote {len(wset)} watermarks to {out_dir} (digest {wset.manifest_hash[:12]})")
    click.echo(str(manifest))


@cli.command("ingest")
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--count", required=True, type=int)
@click.option("--resolution", required=True, help="Target extent, WIDTHxHEIGHT.")
@click.option("--heldout", default="0", show_default=True,
              help="Frames to withhold: count or fraction.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest_cmd(source: str, count: int, resolution: str, heldout: str, seed: int,
               out_path: str) -> None:
    """Sample frames from an image directory (or video) into a dataset manifest."""
    dataset = dataio.ingest(source, count, _parse_wh(resolution), seed)
    held = float(heldout) if "." in heldout else int(heldout)
    if held:
        dataset = dataio.split(dataset, held, seed)
    dataset.save_manifest(out_path)
    click.echo(f"{len(dataset)} frames ({len(dataset.train_indices)} train / "
               f"{len(dataset.heldout_indices)} heldout) -> {out_path}")


def _training_config(config_path: Optional[str], phase: str, **overrides) -> TrainingConfig:
    base = _load_json_config(config_path)
    base["phase"] = phase
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if phase == "finetune" and "distortion_pool" not in base:
        base["distortion_pool"] = DistortionPool().to_dict()
    return TrainingConfig.from_dict(base)


@cli.command("train")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--watermarks", "wm_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON training config; flags override file values.")
@click.option("--epochs", type=int)
@click.option("--batch-size", type=int)
@click.option("--lr", "learning_rate", type=float)
@click.option("--seed", type=int)
@click.option("--early-stop", "early_stop_accuracy", type=float)
@click.option("--profile", type=click.Choice(["scaled", "full"]), default="scaled",
              show_default=True)
def train_cmd(dataset_path: str, wm_dir: str, out_dir: str, config_path: Optional[str],
              profile: str, **overrides) -> None:
    """Pre-train an Embedder/Detector pair on clean frames."""
    dataset = FrameDataset.load_manifest(dataset_path)
    wset = watermarks.load_watermark_set(wm_dir)
    config = _training_config(config_path, "pretrain", **overrides)
    emb_cfg, det_cfg = _profile_for(dataset, len(wset), profile)
    ckpt = training.pretrain(dataset, wset, config, out_dir,
                             embedder_config=emb_cfg, detector_config=det_cfg)
    metrics = ckpt.meta.get("metrics") or {}
    click.echo(f"checkpoint -> {ckpt.path}")
    if metrics:
        click.echo(f"heldout clean accuracy {metrics['detection_accuracy']:.3f}, "
                   f"psnr {metrics['psnr_db']:.2f} dB, ssim {metrics['ssim']:.3f}")


@cli.command("finetune")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--watermarks", "wm_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--epochs", type=int)
@click.option("--batch-size", type=int)
@click.option("--lr", "learning_rate", type=float)
@click.option("--seed", type=int)
@click.option("--early-stop", "early_stop_accuracy", type=float)
def finetune_cmd(checkpoint: str, dataset_path: str, wm_dir: str, out_dir: str,
                 config_path: Optional[str], **overrides) -> None:
    """Fine-tune a pre-trained pair with the distortion layer active."""
    dataset = FrameDataset.load_manifest(dataset_path)
    wset = watermarks.load_watermark_set(wm_dir)
    config = _training_config(config_path, "finetune", **overrides)
    ckpt = training.finetune(checkpoint, dataset, wset, config, out_dir)
    metrics = ckpt.meta.get("metrics") or {}
    click.echo(f"checkpoint -> {ckpt.path}")
    for kind, acc in (metrics.get("per_distortion") or {}).items():
        click.echo(f"  {kind}: {acc:.3f}")


@cli.command("embed")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--watermarks", "wm_dir", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--watermark-id", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--force", is_flag=True, help="Ignore a watermark-manifest mismatch.")
def embed_cmd(checkpoint: str, wm_dir: str, image_path: str, watermark_id: int,
              out_path: str, force: bool) -> None:
    """Embed one watermark into one image."""
    wset = watermarks.load_watermark_set(wm_dir)
    embedder, _, _ = dataio.load_checkpoint(
        checkpoint, expected_manifest_hash=wset.manifest_hash, force=force)
    image = dataio.load_image(image_path)
    ov = watermarks.overlay(image, wset[watermark_id])
    import torch

    with torch.no_grad():
        aug = nets.embed(embedder, ov)[0]
    dataio.save_image(imaging.chw_to_hwc(aug), out_path)
    click.echo(f"psnr {imaging.psnr(image, imaging.chw_to_hwc(aug)):.2f} dB -> {out_path}")


@cli.command("detect")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
def detect_cmd(checkpoint: str, image_path: str) -> None:
    """Predict the watermark ID concealed in an image."""
    _, detector, _ = dataio.load_checkpoint(checkpoint)
    image = dataio.load_image(image_path)
    import torch

    with torch.no_grad():
        probs = nets.detect(detector, image[None])[0]
    result = {"predicted_id": int(probs.argmax()),
              "probabilities": [round(float(p), 6) for p in probs]}
    click.echo(json.dumps(result, indent=2))


@cli.command("attack")
@click.option("--kind", required=True,
              type=click.Choice(list(distortions.KINDS) + ["all"]))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output image; with --kind all, a directory.")
@click.option("--partner", type=click.Path(exists=True),
              help="Second watermarked copy, required for collusion kinds.")
@click.option("--original", type=click.Path(exists=True),
              help="Original (unwatermarked) image, required for dropout.")
@click.option("--quality", type=int, help="JPEG quality [1, 100].")
@click.option("--area", type=float, help="Cropout area fraction (0, 1].")
@click.option("--p", "drop_p", type=float, help="Dropout replacement probability.")
@click.option("--bits", type=int, help="Quantization bit depth [1, 8].")
@click.option("--seed", default=0, show_default=True, type=int)
def attack_cmd(kind: str, in_path: str, out_path: str, partner: Optional[str],
               original: Optional[str], quality: Optional[int], area: Optional[float],
               drop_p: Optional[float], bits: Optional[int], seed: int) -> None:
    """Apply one distortion (or every kind) to an image."""
    from .distortions import DistortionContext, apply_config

    image = imaging.hwc_to_chw(dataio.load_image(in_path))
    ctx = DistortionContext(
        augmented=image,
        original=imaging.hwc_to_chw(dataio.load_image(original)) if original else None,
        partner_augmented=imaging.hwc_to_chw(dataio.load_image(partner)) if partner else None,
    )
    overrides = {"quality": quality, "area": area, "p": drop_p, "bits": bits}
    kinds = list(distortions.KINDS) if kind == "all" else [kind]
    out = Path(out_path)
    if kind == "all":
        out.mkdir(parents=True, exist_ok=True)
    for k in kinds:
        params = dict(distortions.EVAL_PARAMS[k])
        params.update({key: val for key, val in overrides.items()
                       if val is not None and key in params})
        needs = {"dropout": ctx.original, "collusion_avg": ctx.partner_augmented,
                 "collusion_alt": ctx.partner_augmented}
        if k in needs and needs[k] is None:
            if kind == "all":
                click.echo(f"skipping {k}: missing --original/--partner input")
                continue
            raise click.UsageError(
                f"{k} needs {'--original' if k == 'dropout' else '--partner'}")
        result = apply_config(DistortionConfig(kind=k, params=params, seed=seed), ctx)
        target = out / f"{k}.png" if kind == "all" else out
        dataio.save_image(imaging.chw_to_hwc(result), target)
        click.echo(f"{k} -> {target}")


@cli.command("evaluate")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--watermarks", "wm_dir", required=True, type=click.Path(exists=True))
@click.option("--kinds", default=",".join(distortions.KINDS), show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out-json", type=click.Path())
@click.option("--out-csv", type=click.Path())
@click.option("--force", is_flag=True, help="Ignore a watermark-manifest mismatch.")
def evaluate_cmd(checkpoint: str, dataset_path: str, wm_dir: str, kinds: str, seed: int,
                 out_json: Optional[str], out_csv: Optional[str], force: bool) -> None:
    """Embed/distort/detect over the held-out frames and report accuracy."""
    dataset = FrameDataset.load_manifest(dataset_path)
    wset = watermarks.load_watermark_set(wm_dir)
    kind_list = [k.strip() for k in kinds.split(",") if k.strip()]
    report = run_evaluate(checkpoint, dataset, wset, kind_list, seed, force=force)
    write_report_files(report,
                       Path(out_json) if out_json else None,
                       Path(out_csv) if out_csv else None)
    click.echo(json.dumps(report.to_dict(), indent=2))


@cli.command("sweep")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--letters", default="A-J", show_default=True)
@click.option("--sizes", required=True, help="Comma list of WIDTHxHEIGHT extents.")
@click.option("--epochs", default=40, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--early-stop", "early_stop_accuracy", type=float)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def sweep_cmd(dataset_path: str, letters: str, sizes: str, epochs: int, seed: int,
              early_stop_accuracy: Optional[float], config_path: Optional[str],
              out_dir: str) -> None:
    """Train one model per watermark size and chart accuracy vs the RF window."""
    dataset = FrameDataset.load_manifest(dataset_path)
    config = _training_config(config_path, "pretrain", epochs=epochs, seed=seed,
                              early_stop_accuracy=early_stop_accuracy)
    result = run_sweep(_parse_sizes(sizes), dataset, watermarks.parse_letters(letters),
                       config, out_dir)
    click.echo(f"sweep CSV -> {result['csv']}")
    click.echo(f"plot -> {result['plot']}")
    for label, err in result["failures"].items():
        click.echo(f"size {label} failed: {err}")


@cli.command("report")
@click.option("--sweep-csv", type=click.Path(exists=True))
@click.option("--rf-lower", type=int, help="Embedder RF marker for the sweep plot.")
@click.option("--rf-upper", type=int, help="Detector RF marker for the sweep plot.")
@click.option("--curves", "curves_csv", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def report_cmd(sweep_csv: Optional[str], rf_lower: Optional[int], rf_upper: Optional[int],
               curves_csv: Optional[str], out_path: str) -> None:
    """Render static plots from sweep or training-curve CSV files."""
    if sweep_csv:
        if rf_lower is None or rf_upper is None:
            raise click.UsageError("--sweep-csv needs --rf-lower and --rf-upper")
        rows = []
        with open(sweep_csv, "r", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                rows.append({"size": row["size"], "distortion": row["distortion"],
                             "accuracy": float(row["accuracy"])})
        plot_sweep(summarize_sweep(rows), rf_lower, rf_upper, out_path)
    elif curves_csv:
        plot_curves(curves_csv, out_path)
    else:
        raise click.UsageError("nothing to plot: pass --sweep-csv or --curves")
    click.echo(f"plot -> {out_path}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as err:
        click.echo(f"usage error: {err.format_message()}", err=True)
        return 1
    except click.Abort:
        return 3
    except DataError as err:
        click.echo(f"data error: {err}", err=True)
        return 2
    except OSError as err:
        click.echo(f"data error: {err}", err=True)
        return 2
    except _USAGE_ERRORS as err:
        click.echo(f"usage error: {err}", err=True)
        return 1
    except Exception as err:  # runtime failures (diverged training, codec, ...)
        click.echo(f"runtime error: {type(err).__name__}: {err}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
