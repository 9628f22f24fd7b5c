"""Bit-exact tensor wire format and on-disk dataset layout.

Tensor frame (all little-endian):

    bytes 0-3   magic "AVT1"
    byte  4     dtype code, 0x01 = float32
    byte  5     ndim, always 0x03
    bytes 6-17  three u32 dims: height, width, channels
    rest        H*W*C float32 pixels, row-major, channel fastest

A dataset directory holds a `meta` file, a `labels` file with one line per
sample (`sample_id<TAB>true_label<TAB>target_label_or_minus1`), and one
tensor file per sample named `<sample_id>.avt1`.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .images import Dataset, Image, Sample

__all__ = [
    "TensorFormatError",
    "read_tensor",
    "write_tensor",
    "load_image",
    "save_image",
    "save_dataset",
    "load_dataset",
]

MAGIC = b"AVT1"
DTYPE_FLOAT32 = 0x01
NDIM = 0x03
HEADER_LEN = 4 + 1 + 1 + 3 * 4
# Hard cap on pixel count; rejects absurd headers before allocating.
MAX_PIXELS = 1 << 28


class TensorFormatError(ValueError):
    """Malformed tensor frame; `code` identifies which check failed."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


def write_tensor(image: Image) -> bytes:
    h, w, c = image.shape
    header = MAGIC + struct.pack("<BBIII", DTYPE_FLOAT32, NDIM, h, w, c)
    payload = np.ascontiguousarray(image.pixels, dtype="<f4").tobytes()
    return header + payload


def read_tensor(data: bytes) -> Image:
    if len(data) < HEADER_LEN:
        raise TensorFormatError("truncated", f"{len(data)} bytes < header {HEADER_LEN}")
    if data[:4] != MAGIC:
        raise TensorFormatError("bad_magic", f"expected {MAGIC!r}, got {data[:4]!r}")
    dtype_code, ndim, h, w, c = struct.unpack("<BBIII", data[4:HEADER_LEN])
    if dtype_code != DTYPE_FLOAT32:
        raise TensorFormatError("bad_dtype", f"dtype code {dtype_code} != 1")
    if ndim != NDIM:
        raise TensorFormatError("bad_ndim", f"ndim {ndim} != 3")
    if h < 1 or w < 1 or c < 1 or h * w * c > MAX_PIXELS:
        raise TensorFormatError("bad_dims", f"unusable dims ({h}, {w}, {c})")
    expected = HEADER_LEN + h * w * c * 4
    if len(data) != expected:
        raise TensorFormatError(
            "payload_length", f"got {len(data)} bytes, expected {expected}"
        )
    pixels = np.frombuffer(data, dtype="<f4", offset=HEADER_LEN).reshape(h, w, c)
    if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
        raise TensorFormatError("pixel_range", "pixel outside [0, 1] or non-finite")
    return Image(pixels)


def save_image(image: Image, path) -> None:
    Path(path).write_bytes(write_tensor(image))


def load_image(path) -> Image:
    return read_tensor(Path(path).read_bytes())


def save_dataset(dataset: Dataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w, c = dataset.shape
    meta = (
        f"classes\t{dataset.num_classes}\n"
        f"shape\t{h}\t{w}\t{c}\n"
        f"split\t{dataset.split_tag}\n"
        f"count\t{len(dataset)}\n"
    )
    (directory / "meta").write_text(meta)
    lines = []
    for sample in dataset:
        target = -1 if sample.target_label is None else sample.target_label
        lines.append(f"{sample.sample_id}\t{sample.true_label}\t{target}")
        save_image(sample.image, directory / f"{sample.sample_id}.avt1")
    (directory / "labels").write_text("\n".join(lines) + "\n" if lines else "")


def _parse_meta(text: str) -> dict:
    fields = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        fields[parts[0]] = parts[1:]
    return fields


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = _parse_meta((directory / "meta").read_text())
    num_classes = int(meta["classes"][0])
    split_tag = meta["split"][0]
    count = int(meta["count"][0])
    samples = []
    labels_text = (directory / "labels").read_text()
    for line in labels_text.splitlines():
        if not line.strip():
            continue
        sample_id, true_str, target_str = line.split("\t")
        target = int(target_str)
        samples.append(
            Sample(
                sample_id=sample_id,
                image=load_image(directory / f"{sample_id}.avt1"),
                true_label=int(true_str),
                target_label=None if target < 0 else target,
            )
        )
    if len(samples) != count:
        raise ValueError(
            f"dataset at {directory} lists count={count} but has {len(samples)} samples"
        )
    return Dataset(num_classes=num_classes, split_tag=split_tag, samples=samples)
