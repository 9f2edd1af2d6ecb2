"""Relative-attribute image editing toolkit."""

from .types import (
    AttributeVector,
    DimensionError,
    ImageBatch,
    InterpolationCoefficient,
    RangeError,
    RelativeAttributes,
    relative_attributes,
    scale_relative,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeVector",
    "DimensionError",
    "ImageBatch",
    "InterpolationCoefficient",
    "RangeError",
    "RelativeAttributes",
    "relative_attributes",
    "scale_relative",
    "__version__",
]
