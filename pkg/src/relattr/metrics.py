"""Evaluation battery: SSIM, reconstruction errors, interpolation
smoothness, Fréchet distance over a pluggable embedder, and a small
attribute classifier used both for accuracy scoring and as the default
embedder.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from scipy.signal import convolve2d
from torch import nn

from .networks import image_to_tensor
from .types import DimensionError, ImageBatch

_SSIM_WINDOW_SIZE = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_RANGE = 2.0  # images live in [-1, 1]


def _gaussian_window() -> np.ndarray:
    half = (_SSIM_WINDOW_SIZE - 1) / 2.0
    coords = np.arange(_SSIM_WINDOW_SIZE) - half
    g = np.exp(-(coords ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _gaussian_window()


def _as_single_image(x) -> np.ndarray:
    if isinstance(x, ImageBatch):
        if x.batch_size != 1:
            raise DimensionError("ssim takes single images; use ssim_batch for batches")
        return np.asarray(x.data[0], dtype=np.float64)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError(f"expected an (H, W[, C]) image, got shape {arr.shape}")
    return arr


def ssim(x, y) -> float:
    """Single-scale structural similarity with the metric's stock constants.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 2,
    valid-mode windowing, averaged over channels and positions.
    """
    xa = _as_single_image(x)
    ya = _as_single_image(y)
    if xa.shape != ya.shape:
        raise DimensionError(f"image shapes differ: {xa.shape} vs {ya.shape}")
    if xa.shape[0] < _SSIM_WINDOW_SIZE or xa.shape[1] < _SSIM_WINDOW_SIZE:
        raise DimensionError(f"images must be at least {_SSIM_WINDOW_SIZE} pixels per side")
    c1 = (_SSIM_K1 * _SSIM_RANGE) ** 2
    c2 = (_SSIM_K2 * _SSIM_RANGE) ** 2
    channel_means = []
    for c in range(xa.shape[2]):
        xc, yc = xa[:, :, c], ya[:, :, c]
        mu_x = convolve2d(xc, _WINDOW, mode="valid")
        mu_y = convolve2d(yc, _WINDOW, mode="valid")
        var_x = convolve2d(xc * xc, _WINDOW, mode="valid") - mu_x ** 2
        var_y = convolve2d(yc * yc, _WINDOW, mode="valid") - mu_y ** 2
        cov = convolve2d(xc * yc, _WINDOW, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        channel_means.append(np.mean(num / den))
    return float(np.mean(channel_means))


def ssim_batch(x: ImageBatch, y: ImageBatch) -> np.ndarray:
    if x.data.shape != y.data.shape:
        raise DimensionError(f"batch shapes differ: {x.data.shape} vs {y.data.shape}")
    return np.array([ssim(x.data[i], y.data[i]) for i in range(x.batch_size)])


@dataclass(frozen=True)
class InterpolationSequence:
    """Frames x_0..x_m along G(x, (i/m) v); x_0 is the input's translation at 0."""

    frames: np.ndarray  # (m+1, H, W, C)

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[0] < 2:
            raise DimensionError(
                f"need at least 2 frames of identical shape, got array shape {arr.shape}"
            )
        object.__setattr__(self, "frames", arr)

    @property
    def m(self) -> int:
        return self.frames.shape[0] - 1


def interpolation_smoothness(seq: InterpolationSequence) -> float:
    """Population standard deviation of adjacent-frame SSIMs; lower is smoother.

    A two-frame sequence has a single adjacent score, so the deviation is 0
    by convention.
    """
    scores = adjacent_ssims(seq)
    if len(scores) < 2:
        return 0.0
    return float(np.std(scores))


def adjacent_ssims(seq: InterpolationSequence) -> np.ndarray:
    return np.array([
        ssim(seq.frames[i - 1], seq.frames[i]) for i in range(1, seq.frames.shape[0])
    ])


def reconstruction_metrics(x: ImageBatch, y: ImageBatch) -> tuple[float, float, float]:
    """(mean L1, mean squared error, mean SSIM) between two aligned batches."""
    if x.data.shape != y.data.shape:
        raise DimensionError(f"batch shapes differ: {x.data.shape} vs {y.data.shape}")
    diff = x.data.astype(np.float64) - y.data.astype(np.float64)
    l1 = float(np.abs(diff).mean())
    l2 = float((diff ** 2).mean())
    return l1, l2, float(ssim_batch(x, y).mean())


# --- Fréchet distance --------------------------------------------------------


@dataclass(frozen=True)
class EmbedderHandle:
    """Deterministic feature extractor with an identifying tag."""

    name: str
    dim: int
    embed: Callable[[ImageBatch], np.ndarray]


@dataclass(frozen=True)
class FrechetStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (len(mean), len(mean)):
            raise DimensionError(
                f"stats shapes inconsistent: mean {mean.shape}, cov {cov.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def compute_stats(images: ImageBatch, embedder: EmbedderHandle,
                  batch_size: int = 64) -> FrechetStats:
    feats = []
    data = images.data
    for start in range(0, len(data), batch_size):
        chunk = ImageBatch(data[start:start + batch_size])
        feats.append(np.asarray(embedder.embed(chunk), dtype=np.float64))
    features = np.concatenate(feats, axis=0)
    if len(features) < 2:
        raise ValueError("need at least 2 samples to estimate covariance")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    return FrechetStats(mean=mean, cov=cov)


def _psd_sqrt(mat: np.ndarray, label: str) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(mat)
    clamped = np.clip(eigvals, 0.0, None)
    worst = float(-(eigvals.min())) if eigvals.min() < 0 else 0.0
    if worst > 1e-6:
        warnings.warn(
            f"{label}: clamped negative eigenvalue of magnitude {worst:.3e}",
            RuntimeWarning,
        )
    return (eigvecs * np.sqrt(clamped)) @ eigvecs.T


def frechet_distance(stats_a, stats_b) -> float:
    """Squared Fréchet distance between two Gaussian feature summaries."""
    a = stats_a if isinstance(stats_a, FrechetStats) else FrechetStats(*stats_a)
    b = stats_b if isinstance(stats_b, FrechetStats) else FrechetStats(*stats_b)
    if a.mean.shape != b.mean.shape:
        raise DimensionError("stats dimensions differ")
    for label, cov in (("stats_a", a.cov), ("stats_b", b.cov)):
        if np.abs(cov - cov.T).max() > 1e-6:
            raise ValueError(f"{label} covariance is not symmetric within 1e-6")

    root_a = _psd_sqrt((a.cov + a.cov.T) / 2.0, "cov_a")
    inner = root_a @ ((b.cov + b.cov.T) / 2.0) @ root_a
    inner = (inner + inner.T) / 2.0
    eigvals = np.linalg.eigvalsh(inner)
    neg = float(-(eigvals.min())) if eigvals.min() < 0 else 0.0
    if neg > 1e-6:
        warnings.warn(
            f"cross term: clamped negative eigenvalue of magnitude {neg:.3e}",
            RuntimeWarning,
        )
    tr_sqrt = np.sqrt(np.clip(eigvals, 0.0, None)).sum()
    mean_diff = a.mean - b.mean
    value = float(mean_diff @ mean_diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt)
    return max(value, 0.0)


# --- attribute classifier ----------------------------------------------------


class AttributeClassifier(nn.Module):
    """Small conv net with independent sigmoid outputs, one per attribute."""

    def __init__(self, n_attributes: int, base_channels: int = 16):
        super().__init__()
        c = base_channels
        self.features_net = nn.Sequential(
            nn.Conv2d(3, c, 4, 2, 1), nn.LeakyReLU(0.01, inplace=True),
            nn.Conv2d(c, 2 * c, 4, 2, 1), nn.LeakyReLU(0.01, inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, 2, 1), nn.LeakyReLU(0.01, inplace=True),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.feature_dim = 4 * c
        self.head = nn.Linear(self.feature_dim, n_attributes)
        self.n_attributes = n_attributes

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.features_net(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features_net(x))


def train_attribute_classifier(images: np.ndarray, labels: np.ndarray, *,
                               epochs: int = 20, batch_size: int = 64,
                               learning_rate: float = 1e-3,
                               seed: int = 0) -> AttributeClassifier:
    """Fit the classifier on float-or-uint8 images with {0,1} labels."""
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / 127.5 - 1.0
    n = labels.shape[1]
    torch.manual_seed(seed)
    model = AttributeClassifier(n)
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()
    x_all = torch.as_tensor(np.ascontiguousarray(images.transpose(0, 3, 1, 2)), dtype=torch.float32)
    y_all = torch.tensor(np.asarray(labels), dtype=torch.float32)
    order_rng = np.random.default_rng(seed)
    model.train()
    for _ in range(epochs):
        order = order_rng.permutation(len(x_all))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad(set_to_none=True)
            loss = loss_fn(model(x_all[idx]), y_all[idx])
            loss.backward()
            opt.step()
    model.eval()
    return model


def classifier_predictions(model: AttributeClassifier, images: ImageBatch,
                           batch_size: int = 128) -> np.ndarray:
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, images.batch_size, batch_size):
            chunk = ImageBatch(images.data[start:start + batch_size])
            logits = model(image_to_tensor(chunk))
            outs.append((logits > 0).long().numpy())
    return np.concatenate(outs, axis=0)


def classify_accuracy(model: AttributeClassifier, images: ImageBatch,
                      labels: np.ndarray) -> np.ndarray:
    """Per-attribute agreement between thresholded predictions and labels."""
    preds = classifier_predictions(model, images)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise DimensionError(f"prediction/label shapes differ: {preds.shape} vs {labels.shape}")
    return (preds == labels).mean(axis=0)


def classifier_embedder(model: AttributeClassifier, tag: str = "toy-classifier-v1") -> EmbedderHandle:
    """Penultimate-feature embedder backing the default Fréchet distance."""

    def embed(images: ImageBatch) -> np.ndarray:
        model.eval()
        with torch.no_grad():
            feats = model.features(image_to_tensor(images))
        return feats.numpy().astype(np.float64)

    return EmbedderHandle(name=tag, dim=model.feature_dim, embed=embed)


def interpolation_frames(generator, x: ImageBatch, v, m: int,
                         chunk: int = 32) -> list[np.ndarray]:
    """Frames G(x, (i/m) v) for i = 0..m, batched over the input images.

    Returns a list of m+1 arrays shaped like x.data; per-image sequences are
    column slices across the list.
    """
    from .networks import generator_forward
    from .types import RelativeAttributes, scale_relative

    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if isinstance(v, RelativeAttributes):
        v_rows = np.tile(v.values, (x.batch_size, 1))
    else:
        v_rows = np.asarray(v, dtype=np.float64)
        if v_rows.ndim == 1:
            v_rows = np.tile(v_rows, (x.batch_size, 1))
    frames = []
    for i in range(m + 1):
        alpha = i / m
        outs = []
        for start in range(0, x.batch_size, chunk):
            piece = ImageBatch(x.data[start:start + chunk])
            outs.append(
                generator_forward(generator, piece, alpha * v_rows[start:start + chunk]).data
            )
        frames.append(np.concatenate(outs, axis=0))
    return frames


def sequences_from_frames(frames: list[np.ndarray]) -> list[InterpolationSequence]:
    n_images = frames[0].shape[0]
    return [
        InterpolationSequence(np.stack([f[j] for f in frames]))
        for j in range(n_images)
    ]
