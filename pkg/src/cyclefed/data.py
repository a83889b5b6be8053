"""Dataset ingestion: MNIST in IDX format and a synthetic stand-in.

IDX files may be raw or gzip-compressed (sniffed by magic bytes). The
default search path for MNIST files is the CYCLEFED_DATA_DIR environment
variable, overridable per call.
"""

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeds

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W, 1) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str  # "train" | "test"
    source: str  # "mnist" | "synthetic"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels disagree on sample count")

    def __len__(self):
        return len(self.labels)

    @property
    def classes(self):
        return int(self.labels.max()) + 1


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _parse_idx(raw, expect_magic, path):
    kind = "images" if expect_magic == IMAGES_MAGIC else "labels"
    if len(raw) < 4:
        raise IdxFormatError(f"truncated IDX file {path}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise IdxFormatError(f"wrong magic for {kind} in {path}: 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"truncated IDX header in {path}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    body = raw[header:]
    if len(body) < expected:
        raise IdxFormatError(
            f"truncated IDX payload in {path}: {len(body)} < {expected} bytes"
        )
    return dims, np.frombuffer(body, dtype=np.uint8, count=expected)


def load_idx(images_path, labels_path, split="train"):
    """Parse an IDX image/label file pair into a LabeledDataset."""
    img_dims, img_raw = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, images_path)
    lab_dims, lab_raw = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, labels_path)
    if img_dims[0] != lab_dims[0]:
        raise IdxFormatError(
            f"image count {img_dims[0]} != label count {lab_dims[0]}"
        )
    n, h, w = img_dims
    images = (img_raw.reshape(n, h, w, 1).astype(np.float32)) / 255.0
    labels = lab_raw.astype(np.int64)
    return LabeledDataset(images, labels, split=split, source="mnist")


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(data_dir, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        path = Path(data_dir) / name
        if path.exists():
            return path
    raise FileNotFoundError(f"{stem}[.gz] not found under {data_dir}")


def load_mnist(split, data_dir=None):
    """Load an MNIST split from data_dir (default: $CYCLEFED_DATA_DIR)."""
    data_dir = data_dir or os.environ.get("CYCLEFED_DATA_DIR")
    if not data_dir:
        raise FileNotFoundError(
            "no data directory: pass data_dir or set CYCLEFED_DATA_DIR"
        )
    img_stem, lab_stem = _MNIST_FILES[split]
    return load_idx(_find(data_dir, img_stem), _find(data_dir, lab_stem), split=split)


def synth_dataset(classes, per_class, seed, split="train", image_shape=(28, 28, 1),
                  separation=0.4, noise=0.3):
    """Gaussian-blob classification set around per-class template images.

    Templates depend only on (seed, classes), so train and test splits
    generated from the same seed share class structure; noise depends on
    the split, so the splits are disjoint samples. The default
    separation/noise keep the task linearly learnable while leaving
    enough class overlap for non-IID training effects to register.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    template_rng = seeds.rng(seed, "synth-templates", classes)
    templates = 0.5 + separation * (
        template_rng.uniform(0.0, 1.0, size=(classes,) + image_shape) - 0.5
    )
    noise_rng = seeds.rng(seed, "synth-noise", classes, split)
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    images = templates[labels] + noise_rng.normal(0.0, noise, size=(n,) + image_shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return LabeledDataset(images, labels.astype(np.int64), split=split, source="synthetic")


def get_datasets(dataset, *, data_dir=None, synth_classes=10, synth_train_per_class=200,
                 synth_test_per_class=100, synth_seed=0):
    """Resolve (train, test) for a dataset tag ("mnist" or "synthetic")."""
    if dataset == "mnist":
        return load_mnist("train", data_dir), load_mnist("test", data_dir)
    if dataset == "synthetic":
        train = synth_dataset(synth_classes, synth_train_per_class, synth_seed, "train")
        test = synth_dataset(synth_classes, synth_test_per_class, synth_seed, "test")
        return train, test
    raise ValueError(f"unknown dataset {dataset!r}")
