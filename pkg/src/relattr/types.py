"""Shared value types for relative-attribute image editing.

Attributes are binary per image; edits are expressed as the signed
difference between a target and a source attribute vector, optionally
scaled by an interpolation coefficient. All types here are immutable
value objects and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Vectors or image batches with incompatible shapes."""


class RangeError(ValueError):
    """A value outside its documented range."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AttributeVector:
    """Binary attribute labels of one image, one entry per registered name."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        arr = _frozen_array(self.values, np.int64)
        if arr.ndim != 1:
            raise DimensionError(f"attribute values must be 1-D, got shape {arr.shape}")
        if len(arr) != len(self.names):
            raise DimensionError(
                f"{len(arr)} values for {len(self.names)} attribute names"
            )
        if not np.isin(arr, (0, 1)).all():
            raise RangeError(f"attribute values must be 0 or 1, got {arr.tolist()}")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, AttributeVector):
            return NotImplemented
        return self.names == other.names and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class RelativeAttributes:
    """Signed per-attribute change: +1 turn on, -1 turn off, 0 keep.

    Entries are fractional when scaled by an interpolation coefficient or
    set from a slider; construction from two AttributeVectors always lands
    in {-1, 0, +1}.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, np.float64)
        if arr.ndim != 1:
            raise DimensionError(f"relative values must be 1-D, got shape {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return len(self.values)

    def __neg__(self) -> "RelativeAttributes":
        return RelativeAttributes(-np.asarray(self.values))

    def __eq__(self, other):
        if not isinstance(other, RelativeAttributes):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class InterpolationCoefficient:
    """Scalar in [0, 1] scaling a relative-attribute vector.

    ``degree`` is min(alpha, 1 - alpha): 0 at either endpoint, 0.5 at the
    midpoint. It is the quantity the interpolation discriminator regresses.
    """

    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not 0.0 <= a <= 1.0:
            raise RangeError(f"interpolation coefficient must be in [0, 1], got {a}")
        object.__setattr__(self, "alpha", a)

    @property
    def degree(self) -> float:
        return min(self.alpha, 1.0 - self.alpha)


@dataclass(frozen=True, eq=False)
class ImageBatch:
    """Batch of channels-last RGB images with pixel values in [-1, 1].

    Height and width must be multiples of 4 (the generator downsamples
    twice); discriminator configs impose their own stricter divisibility.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise DimensionError(
                f"image batch must have shape (B, H, W, 3), got {arr.shape}"
            )
        if arr.shape[1] % 4 or arr.shape[2] % 4:
            raise DimensionError(
                f"image height/width must be multiples of 4, got {arr.shape[1]}x{arr.shape[2]}"
            )
        hi = float(arr.max(initial=-1.0))
        lo = float(arr.min(initial=1.0))
        if hi > 1.0 + 1e-6 or lo < -1.0 - 1e-6:
            raise RangeError(f"pixel values must lie in [-1, 1], found [{lo}, {hi}]")
        # order="C" canonicalizes layout even for transposed views
        arr = np.clip(arr.astype(np.float32, order="C", copy=True), -1.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def relative_attributes(source: AttributeVector, target: AttributeVector) -> RelativeAttributes:
    """Per-attribute change needed to move from ``source`` to ``target``."""
    if source.n != target.n:
        raise DimensionError(
            f"attribute counts differ: source has {source.n}, target has {target.n}"
        )
    return RelativeAttributes(target.values.astype(np.float64) - source.values)


def scale_relative(v: RelativeAttributes, alpha) -> RelativeAttributes:
    """Scale a relative-attribute vector by an interpolation coefficient."""
    if not isinstance(alpha, InterpolationCoefficient):
        alpha = InterpolationCoefficient(alpha)
    return RelativeAttributes(np.asarray(v.values) * alpha.alpha)
