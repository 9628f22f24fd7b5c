"""Unit-range image tensors and the sample/dataset containers built on them.

Everything downstream (models, attacks, scoring, the wire format) moves
pixels through the `Image` type, so range and shape validation happens
exactly once, at construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Image",
    "Sample",
    "Dataset",
    "SPLIT_TAGS",
    "grey_image",
    "make_image",
]

SPLIT_TAGS = ("train", "validation", "test-round", "test-final")


class ImageError(ValueError):
    """Raised when pixel data violates the shape or [0, 1] range contract."""


def _validate_pixels(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim != 3:
        raise ImageError(f"expected HxWxC pixel array, got ndim={pixels.ndim}")
    if any(d < 1 for d in pixels.shape):
        raise ImageError(f"all dimensions must be positive, got {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise ImageError("pixels must be finite")
    lo, hi = float(pixels.min()), float(pixels.max())
    if lo < 0.0 or hi > 1.0:
        raise ImageError(f"pixels outside [0, 1]: min={lo}, max={hi}")
    return pixels


class Image:
    """Immutable HxWxC tensor with float32 pixels in [0, 1].

    Pixels are stored as float32 so that in-memory values round-trip the
    wire format bit for bit.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels) -> None:
        arr = np.asarray(pixels, dtype=np.float32)
        arr = _validate_pixels(arr)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Image is immutable")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape  # type: ignore[return-value]

    def flat(self) -> np.ndarray:
        """Row-major, channel-fastest view of the pixels as a 1-D array."""
        return self.pixels.reshape(-1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self) -> int:
        return hash((self.shape, self.pixels.tobytes()))

    def __repr__(self) -> str:
        return f"Image(shape={self.shape})"


def make_image(pixels, shape: tuple[int, int, int] | None = None) -> Image:
    """Build an Image from any array-like, optionally reshaping flat data."""
    arr = np.asarray(pixels, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    return Image(arr)


def grey_image(shape: tuple[int, int, int]) -> Image:
    """The uniform mid-grey image: every pixel exactly 0.5."""
    h, w, c = shape
    return Image(np.full((h, w, c), 0.5, dtype=np.float32))


@dataclass(frozen=True)
class Sample:
    """One evaluation unit: an image, its true class, and an optional target."""

    sample_id: str
    image: Image
    true_label: int
    target_label: int | None = None

    def __post_init__(self):
        if self.true_label < 0:
            raise ValueError(f"true_label must be >= 0, got {self.true_label}")
        if self.target_label is not None:
            if self.target_label < 0:
                raise ValueError("target_label must be >= 0 when present")
            if self.target_label == self.true_label:
                raise ValueError(
                    f"target_label must differ from true_label ({self.true_label})"
                )

    def with_target(self, target_label: int) -> "Sample":
        return Sample(self.sample_id, self.image, self.true_label, target_label)


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of same-shape samples for one split."""

    num_classes: int
    split_tag: str
    samples: tuple[Sample, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(
                f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}"
            )
        object.__setattr__(self, "samples", tuple(self.samples))
        shapes = {s.image.shape for s in self.samples}
        if len(shapes) > 1:
            raise ValueError(f"samples must share one shape, got {sorted(shapes)}")
        for s in self.samples:
            if s.true_label >= self.num_classes:
                raise ValueError(
                    f"label {s.true_label} out of range for K={self.num_classes}"
                )
            if s.target_label is not None and s.target_label >= self.num_classes:
                raise ValueError(
                    f"target {s.target_label} out of range for K={self.num_classes}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def shape(self) -> tuple[int, int, int]:
        if not self.samples:
            raise ValueError("empty dataset has no shape")
        return self.samples[0].image.shape

    def subset(self, n: int, split_tag: str | None = None) -> "Dataset":
        """First `n` samples, optionally re-tagged."""
        return Dataset(
            self.num_classes, split_tag or self.split_tag, self.samples[:n]
        )
