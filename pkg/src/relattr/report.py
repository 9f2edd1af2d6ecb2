"""Checkpoint evaluation: reconstruction, per-attribute translation
accuracy, interpolation smoothness, and Fréchet distance, written as a
JSON report plus a per-attribute CSV and rendered figures.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ToyDataset
from .metrics import (
    classifier_embedder,
    classifier_predictions,
    classify_accuracy,
    compute_stats,
    frechet_distance,
    interpolation_frames,
    interpolation_smoothness,
    reconstruction_metrics,
    sequences_from_frames,
    train_attribute_classifier,
)
from .networks import Generator, generator_forward
from .types import ImageBatch


@dataclass
class EvalArtifacts:
    """Raw pixels kept aside for figure rendering."""

    recon_inputs: np.ndarray | None = None
    recon_outputs: np.ndarray | None = None
    strips: dict = field(default_factory=dict)  # attribute -> (m+1, H, W, 3)


def _flip_vectors(labels: np.ndarray, attribute: int) -> np.ndarray:
    """Relative vectors that flip one attribute toward its opposite value."""
    v = np.zeros_like(labels, dtype=np.float64)
    v[:, attribute] = 1.0 - 2.0 * labels[:, attribute]
    return v


def _translate(generator: Generator, images: ImageBatch, v_rows: np.ndarray,
               chunk: int = 32) -> ImageBatch:
    outs = []
    for start in range(0, images.batch_size, chunk):
        piece = ImageBatch(images.data[start:start + chunk])
        outs.append(generator_forward(generator, piece, v_rows[start:start + chunk]).data)
    return ImageBatch(np.concatenate(outs, axis=0))


def run_evaluation(generator: Generator, dataset: ToyDataset, *,
                   classifier=None, n_reconstruction: int | None = 200,
                   n_translation: int = 200, n_interpolation: int = 100,
                   m: int = 10, classifier_epochs: int = 20,
                   seed: int = 0) -> tuple[dict, EvalArtifacts]:
    """Evaluate a generator on the held-out split of a toy dataset.

    Returns the report dict and the pixel artifacts that back the figures.
    The classifier is trained on the train split unless one is supplied.
    """
    names = dataset.names
    eval_images = dataset.images["eval"]
    eval_labels = dataset.labels["eval"]
    artifacts = EvalArtifacts()

    if classifier is None:
        classifier = train_attribute_classifier(
            dataset.images["train"], dataset.labels["train"],
            epochs=classifier_epochs, seed=seed,
        )
    embedder = classifier_embedder(classifier)

    def take(n):
        n = len(eval_images) if n is None else min(n, len(eval_images))
        return ImageBatch(eval_images[:n].astype(np.float32) / 127.5 - 1.0), eval_labels[:n]

    # classifier sanity on real held-out images
    real_all, labels_all = take(None)
    classifier_acc = classify_accuracy(classifier, real_all, labels_all)

    # reconstruction: G(x, 0) against x
    recon_in, _ = take(n_reconstruction)
    recon_out = _translate(generator, recon_in, np.zeros((recon_in.batch_size, len(names))))
    l1, l2, ssim_value = reconstruction_metrics(recon_in, recon_out)
    keep = min(8, recon_in.batch_size)
    artifacts.recon_inputs = recon_in.data[:keep]
    artifacts.recon_outputs = recon_out.data[:keep]

    # per-attribute translation scored by the classifier
    trans_in, trans_labels = take(n_translation)
    per_attribute = {}
    translated_sets = []
    for k, name in enumerate(names):
        v_rows = _flip_vectors(trans_labels, k)
        translated = _translate(generator, trans_in, v_rows)
        translated_sets.append(translated.data)
        preds = classifier_predictions(classifier, translated)
        target = 1 - trans_labels[:, k]
        target_acc = float((preds[:, k] == target).mean())
        others = [j for j in range(len(names)) if j != k]
        preservation = float((preds[:, others] == trans_labels[:, others]).mean())
        per_attribute[name] = {
            "target_accuracy": target_acc,
            "preservation": preservation,
        }

    # interpolation smoothness per attribute
    interp_in, interp_labels = take(n_interpolation)
    interp_section = {"m": m, "std": "population", "per_attribute": {}}
    for k, name in enumerate(names):
        v_rows = _flip_vectors(interp_labels, k)
        frames = interpolation_frames(generator, interp_in, v_rows, m)
        sigmas = [interpolation_smoothness(s) for s in sequences_from_frames(frames)]
        interp_section["per_attribute"][name] = float(np.mean(sigmas))
        if name not in artifacts.strips:
            artifacts.strips[name] = np.stack([f[0] for f in frames])
    interp_section["average"] = float(np.mean(list(interp_section["per_attribute"].values())))

    # distribution distance between real and translated images
    fake_batch = ImageBatch(np.concatenate(translated_sets, axis=0))
    stats_real = compute_stats(real_all, embedder)
    stats_fake = compute_stats(fake_batch, embedder)
    fd = frechet_distance(stats_real, stats_fake)

    report = {
        "reconstruction": {"l1": l1, "l2": l2, "ssim": ssim_value,
                           "n_images": recon_in.batch_size},
        "interpolation": interp_section,
        "classification": {
            "per_attribute": per_attribute,
            "average": {
                "target_accuracy": float(np.mean(
                    [v["target_accuracy"] for v in per_attribute.values()])),
                "preservation": float(np.mean(
                    [v["preservation"] for v in per_attribute.values()])),
            },
            "classifier_real_accuracy": {
                name: float(acc) for name, acc in zip(names, classifier_acc)
            },
        },
        "frechet": {"embedder": embedder.name, "value": fd},
    }
    return report, artifacts


def _to_unit(img: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(img, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def montage(rows: list[np.ndarray], pad: int = 2) -> np.ndarray:
    """Tile images (each row a (N, H, W, 3) array) into one unit-range canvas."""
    n_cols = max(r.shape[0] for r in rows)
    h, w = rows[0].shape[1], rows[0].shape[2]
    canvas = np.ones((len(rows) * (h + pad) - pad, n_cols * (w + pad) - pad, 3))
    for i, row in enumerate(rows):
        for j in range(row.shape[0]):
            y, x = i * (h + pad), j * (w + pad)
            canvas[y:y + h, x:x + w] = _to_unit(row[j])
    return canvas


def render_figures(report: dict, artifacts: EvalArtifacts, out_dir: Path, stem: str) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []

    if artifacts.recon_inputs is not None:
        fig, ax = plt.subplots(figsize=(artifacts.recon_inputs.shape[0] * 1.2, 2.6))
        ax.imshow(montage([artifacts.recon_inputs, artifacts.recon_outputs]))
        ax.set_axis_off()
        ax.set_title(
            f"inputs (top) vs identity edits (bottom): "
            f"L1 {report['reconstruction']['l1']:.4f}, "
            f"SSIM {report['reconstruction']['ssim']:.3f}"
        )
        p = out_dir / f"{stem}_reconstruction.png"
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)

    if artifacts.strips:
        rows = list(artifacts.strips.values())
        fig, ax = plt.subplots(figsize=(rows[0].shape[0] * 1.1, len(rows) * 1.3))
        ax.imshow(montage(rows))
        ax.set_axis_off()
        ax.set_yticks([])
        ax.set_title("interpolation strips, one attribute per row (alpha 0 to 1)")
        p = out_dir / f"{stem}_interpolation.png"
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)

    cls = report["classification"]["per_attribute"]
    if cls:
        names = list(cls)
        x = np.arange(len(names))
        fig, ax = plt.subplots(figsize=(max(4.0, len(names) * 1.4), 3.2))
        ax.bar(x - 0.18, [cls[n]["target_accuracy"] for n in names], width=0.36,
               label="target accuracy")
        ax.bar(x + 0.18, [cls[n]["preservation"] for n in names], width=0.36,
               label="preservation")
        ax.axhline(0.9, color="gray", linestyle="--", linewidth=1)
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.legend(loc="lower right")
        ax.set_title("translation accuracy per attribute")
        p = out_dir / f"{stem}_accuracy.png"
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)

    return paths


def write_csv(report: dict, path: Path):
    cls = report["classification"]["per_attribute"]
    interp = report["interpolation"]["per_attribute"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attribute", "target_accuracy", "preservation", "interpolation_sigma"])
        for name in cls:
            writer.writerow([
                name,
                f"{cls[name]['target_accuracy']:.6f}",
                f"{cls[name]['preservation']:.6f}",
                f"{interp.get(name, float('nan')):.6f}",
            ])
        writer.writerow([
            "average",
            f"{report['classification']['average']['target_accuracy']:.6f}",
            f"{report['classification']['average']['preservation']:.6f}",
            f"{report['interpolation']['average']:.6f}",
        ])


def write_report(report: dict, artifacts: EvalArtifacts, report_path, *,
                 figures: bool = True) -> dict:
    """Write JSON, the per-attribute CSV, and figures next to the report."""
    report_path = Path(report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    stem = report_path.stem
    outputs = {"report": report_path}
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    csv_path = report_path.with_suffix(".csv")
    write_csv(report, csv_path)
    outputs["csv"] = csv_path
    if figures:
        outputs["figures"] = render_figures(report, artifacts, report_path.parent, stem)
    return outputs
