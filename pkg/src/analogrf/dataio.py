"""Dataset ingestion in the IDX format plus a synthetic digit generator.

Images and labels use the standard IDX encoding (big-endian magic 0x00000803
for uint8 image tensors, 0x00000801 for uint8 label vectors).  When no real
handwritten-digit corpus is present, ``ensure_dataset`` synthesizes an
MNIST-format stand-in from the bundled scikit-learn digits (8x8 scans
upsampled to 28x28 with mild random warps) and writes it through the same
IDX files, so the ingestion path is identical either way.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import scipy.ndimage

from .cnn import DataMissingError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

FILE_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "calib": ("calib-images-idx3-ubyte", "calib-labels-idx1-ubyte"),
    "eval": ("eval-images-idx3-ubyte", "eval-labels-idx1-ubyte"),
}
_POOL_SPLIT_SEED = 0x5EED  # fixed: the train/eval base pools never mix


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def read_idx(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataMissingError(f"IDX file {path} not found")
    blob = path.read_bytes()
    magic = struct.unpack(">I", blob[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        n, rows, cols = struct.unpack(">III", blob[4:16])
        arr = np.frombuffer(blob, dtype=np.uint8, count=n * rows * cols,
                            offset=16)
        return arr.reshape(n, rows, cols).copy()
    if magic == IDX_LABELS_MAGIC:
        n = struct.unpack(">I", blob[4:8])[0]
        return np.frombuffer(blob, dtype=np.uint8, count=n, offset=8).copy()
    raise ValueError(f"unknown IDX magic 0x{magic:08x} in {path}")


def _base_digit_pools():
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = digits.images / 16.0  # (1797, 8, 8) in [0, 1]
    labels = digits.target.astype(np.uint8)
    order = np.random.default_rng(_POOL_SPLIT_SEED).permutation(len(images))
    cut = int(0.72 * len(images))
    train_idx, eval_idx = order[:cut], order[cut:]
    return (images[train_idx], labels[train_idx],
            images[eval_idx], labels[eval_idx])


def _render_sample(base: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    img = scipy.ndimage.zoom(base, 28.0 / 8.0, order=3)
    angle = rng.uniform(-8.0, 8.0)
    img = scipy.ndimage.rotate(img, angle, reshape=False, order=1)
    shift = rng.uniform(-1.5, 1.5, size=2)
    img = scipy.ndimage.shift(img, shift, order=1)
    img *= rng.uniform(0.85, 1.0)
    img += rng.normal(0.0, 0.02, img.shape)
    return (np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def synthesize_digits(n: int, rng: np.random.Generator,
                      pool: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """n augmented 28x28 uint8 digit images drawn from one base pool."""
    tr_i, tr_l, ev_i, ev_l = _base_digit_pools()
    base_images, base_labels = (tr_i, tr_l) if pool == "train" else (ev_i, ev_l)
    picks = rng.integers(0, len(base_images), size=n)
    images = np.stack([_render_sample(base_images[i], rng) for i in picks])
    return images, base_labels[picks]


def ensure_dataset(data_dir, seed: int = 0, n_train: int = 9000,
                   n_calib: int = 1000, n_eval: int = 3000) -> dict:
    """Load the IDX dataset from data_dir, synthesizing it first if absent.

    Returns float images in [0, 1] zero-padded to 32x32, ready for the CNN:
    keys train/calib/eval_images and *_labels.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    sizes = {"train": n_train, "calib": n_calib, "eval": n_eval}
    missing = [split for split, names in FILE_NAMES.items()
               if not all((data_dir / f).exists() for f in names)]
    if missing:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
        for split in ("train", "calib", "eval"):
            pool = "train" if split in ("train", "calib") else "eval"
            images, labels = synthesize_digits(sizes[split], rng, pool=pool)
            img_name, lab_name = FILE_NAMES[split]
            write_idx_images(data_dir / img_name, images)
            write_idx_labels(data_dir / lab_name, labels)
    return load_dataset(data_dir)


def load_dataset(data_dir) -> dict:
    """Strict IDX load (raises DataMissingError when a file is absent)."""
    data_dir = Path(data_dir)
    out = {}
    for split, (img_name, lab_name) in FILE_NAMES.items():
        images = read_idx(data_dir / img_name)
        labels = read_idx(data_dir / lab_name)
        if len(images) != len(labels):
            raise ValueError(f"{split}: {len(images)} images vs "
                             f"{len(labels)} labels")
        out[f"{split}_images"] = pad_to_32(images.astype(np.float64) / 255.0)
        out[f"{split}_labels"] = labels.astype(np.int64)
    return out


def pad_to_32(images: np.ndarray) -> np.ndarray:
    """Zero-pad (N, 28, 28) images to the (N, 32, 32) network input."""
    if images.shape[1:] == (32, 32):
        return images
    if images.shape[1:] != (28, 28):
        raise ValueError(f"expected 28x28 images, got {images.shape[1:]}")
    out = np.zeros((len(images), 32, 32), dtype=images.dtype)
    out[:, 2:30, 2:30] = images
    return out
