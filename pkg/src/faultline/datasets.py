"""Dataset loaders and deterministic synthetic data.

Supported sources: MNIST-format IDX files, CIFAR-10 binary batches, seeded
Gaussian blob clusters, and a procedurally rendered handwritten-digit set
("synthdigits") that is written to disk in IDX format and read back through
the same IDX loader, for fully offline runs. Pixel data is scaled to [0, 1]
float32; labels are int64.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import DataError, FormatError
from .rng import SeededRng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DIGIT_NAMES = ["zero", "one", "two", "three", "four",
               "five", "six", "seven", "eight", "nine"]

CIFAR10_NAMES = ["airplane", "automobile", "bird", "cat", "deer",
                 "dog", "frog", "horse", "ship", "truck"]


@dataclass
class Dataset:
    images: np.ndarray  # float32 (N, *sample_shape)
    labels: np.ndarray  # int64 (N,)
    class_names: list[str]

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= len(self.class_names)):
            raise DataError("labels out of range for class list")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.class_names)


def _open_maybe_gz(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"{path}: truncated (wanted {n} bytes, got {len(buf)})")
    return buf


def read_idx_images(path) -> np.ndarray:
    """Big-endian IDX image file: magic 0x803, N, rows, cols, raw bytes."""
    with _open_maybe_gz(path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{path}: magic 0x{magic:08x} != 0x{IDX_IMAGES_MAGIC:08x}")
        data = _read_exact(fh, n * rows * cols, path)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {n} images")
    return np.frombuffer(data, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gz(path) as fh:
        magic, n = struct.unpack(">II", _read_exact(fh, 8, path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{path}: magic 0x{magic:08x} != 0x{IDX_LABELS_MAGIC:08x}")
        data = _read_exact(fh, n, path)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {n} labels")
    return np.frombuffer(data, dtype=np.uint8).copy()


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


def load_idx_dataset(images_path, labels_path, class_names=None) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{images_path} has {len(images)} images but "
                          f"{labels_path} has {len(labels)} labels")
    names = class_names or DIGIT_NAMES
    return Dataset(images[:, None, :, :].astype(np.float32) / 255.0,
                   labels.astype(np.int64), list(names))


def load_cifar10(batch_paths) -> Dataset:
    """CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes."""
    images, labels = [], []
    for path in batch_paths:
        with _open_maybe_gz(path) as fh:
            raw = fh.read()
        if len(raw) == 0 or len(raw) % 3073 != 0:
            raise FormatError(f"{path}: size {len(raw)} is not a multiple of 3073")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3073)
        if rec[:, 0].max() > 9:
            raise DataError(f"{path}: label byte > 9")
        labels.append(rec[:, 0])
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    return Dataset(np.concatenate(images).astype(np.float32) / 255.0,
                   np.concatenate(labels).astype(np.int64), list(CIFAR10_NAMES))


def write_cifar10_binary(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), 3072)
    rec = np.concatenate([np.asarray(labels, np.uint8)[:, None], images], axis=1)
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def make_blobs(classes: int, samples: int, dim: int, std: float, seed: int,
               shape=None, class_names=None) -> Dataset:
    """Seeded Gaussian clusters in flattened pixel space.

    Cluster centers are standard-normal draws; at typical dims their mutual
    distance (~sqrt(2*dim)) dwarfs the given std, so classes are separable.
    """
    rng = SeededRng(seed, stream=0)
    centers = rng.standard_normal((classes, dim)).astype(np.float32)
    labels = np.arange(samples, dtype=np.int64) % classes
    points = centers[labels] + np.float32(std) * rng.standard_normal((samples, dim)).astype(np.float32)
    if shape is not None:
        if int(np.prod(shape)) != dim:
            raise DataError(f"cannot reshape dim {dim} to {shape}")
        points = points.reshape(samples, *shape)
    names = class_names or [f"class_{i}" for i in range(classes)]
    return Dataset(points, labels, names)


# ---------------------------------------------------------------------------
# Procedural handwritten digits (offline MNIST stand-in, IDX on disk)
# ---------------------------------------------------------------------------

def _ellipse(cx, cy, rx, ry, n=12, start=0.0, sweep=2 * np.pi):
    t = start + sweep * np.arange(n + 1) / n
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _digit_strokes() -> dict[int, list[np.ndarray]]:
    L = lambda *pts: np.array(pts, dtype=np.float64)
    return {
        0: [_ellipse(0.50, 0.50, 0.23, 0.32)],
        1: [L((0.42, 0.28), (0.56, 0.15)), L((0.56, 0.15), (0.56, 0.85))],
        2: [_ellipse(0.50, 0.34, 0.22, 0.18, n=8, start=np.pi, sweep=np.pi),
            L((0.72, 0.34), (0.64, 0.55), (0.30, 0.82)),
            L((0.30, 0.82), (0.76, 0.82))],
        3: [_ellipse(0.48, 0.32, 0.20, 0.16, n=8, start=-0.75 * np.pi, sweep=1.5 * np.pi),
            _ellipse(0.48, 0.66, 0.22, 0.18, n=8, start=-0.75 * np.pi, sweep=1.5 * np.pi)],
        4: [L((0.60, 0.15), (0.24, 0.62)), L((0.24, 0.62), (0.80, 0.62)),
            L((0.62, 0.15), (0.62, 0.85))],
        5: [L((0.72, 0.16), (0.32, 0.16), (0.30, 0.46)),
            _ellipse(0.48, 0.63, 0.22, 0.19, n=10, start=-0.6 * np.pi, sweep=1.6 * np.pi)],
        6: [L((0.64, 0.14), (0.42, 0.34), (0.32, 0.58)),
            _ellipse(0.49, 0.64, 0.18, 0.18, n=10)],
        7: [L((0.26, 0.18), (0.76, 0.18)), L((0.76, 0.18), (0.42, 0.85))],
        8: [_ellipse(0.50, 0.32, 0.17, 0.15, n=10),
            _ellipse(0.50, 0.67, 0.21, 0.17, n=10)],
        9: [_ellipse(0.52, 0.33, 0.17, 0.16, n=10),
            L((0.69, 0.36), (0.66, 0.60), (0.55, 0.85))],
    }


_STROKES = _digit_strokes()


@njit(cache=True, nogil=True)
def _render_segments(seg, radius, aa, size):
    img = np.zeros((size, size), dtype=np.float32)
    for y in range(size):
        py = y + 0.5
        for x in range(size):
            px = x + 0.5
            best = 1.0e9
            for s in range(seg.shape[0]):
                ax, ay, bx, by = seg[s, 0], seg[s, 1], seg[s, 2], seg[s, 3]
                dx = bx - ax
                dy = by - ay
                denom = dx * dx + dy * dy
                if denom > 0.0:
                    t = ((px - ax) * dx + (py - ay) * dy) / denom
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                else:
                    t = 0.0
                ex = ax + t * dx - px
                ey = ay + t * dy - py
                d = (ex * ex + ey * ey) ** 0.5 - radius[s]
                if d < best:
                    best = d
            v = (aa - best) / aa
            if v < 0.0:
                v = 0.0
            elif v > 1.0:
                v = 1.0
            img[y, x] = v
    return img


def _render_digit(digit: int, gen: np.random.Generator, size: int = 28) -> np.ndarray:
    strokes = _STROKES[digit]
    theta = gen.uniform(-0.26, 0.26)
    sx = gen.uniform(0.72, 1.05)
    sy = gen.uniform(0.72, 1.05)
    shear = gen.uniform(-0.18, 0.18)
    tx = gen.uniform(-0.07, 0.07)
    ty = gen.uniform(-0.07, 0.07)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    aff = rot @ np.array([[sx, shear * sx], [0.0, sy]])
    segs = []
    for pts in strokes:
        p = pts + gen.normal(0.0, 0.022, size=pts.shape)
        p = (p - 0.5) @ aff.T + 0.5 + np.array([tx, ty])
        p = 2.0 + p * (size - 4)  # unit box -> pixels with a 2 px margin
        segs.append(np.concatenate([p[:-1], p[1:]], axis=1))
    seg = np.ascontiguousarray(np.concatenate(segs, axis=0))
    radius = gen.uniform(0.55, 1.25) * np.ones(len(seg))
    img = _render_segments(seg, radius, 0.9, size)
    img *= gen.uniform(0.72, 1.0)
    img += gen.normal(0.0, 0.025, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def synth_digits(n: int, seed: int, size: int = 28):
    """Render n procedurally drawn digits. Returns (uint8 images, uint8 labels)."""
    gen = SeededRng(seed, stream=7).generator
    labels = gen.integers(0, 10, size=n).astype(np.uint8)
    images = np.empty((n, size, size), dtype=np.uint8)
    for i in range(n):
        img = _render_digit(int(labels[i]), gen, size)
        images[i] = np.round(img * 255.0).astype(np.uint8)
    return images, labels


def ensure_synth_digits_idx(root, train_n: int = 60000, test_n: int = 10000,
                            seed: int = 2024) -> dict[str, Path]:
    """Write the synthetic digit corpus as IDX files under root (once)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": root / "train-images-idx3-ubyte",
        "train_labels": root / "train-labels-idx1-ubyte",
        "test_images": root / "t10k-images-idx3-ubyte",
        "test_labels": root / "t10k-labels-idx1-ubyte",
    }
    if not all(p.exists() for p in paths.values()):
        tr_img, tr_lab = synth_digits(train_n, seed)
        te_img, te_lab = synth_digits(test_n, seed + 1)
        write_idx_images(paths["train_images"], tr_img)
        write_idx_labels(paths["train_labels"], tr_lab)
        write_idx_images(paths["test_images"], te_img)
        write_idx_labels(paths["test_labels"], te_lab)
    return paths


def _mnist_file(root: Path, stem: str):
    for name in (stem, stem + ".gz"):
        p = root / name
        if p.exists():
            return p
    return None


def resolve_digits(root, split: str, synth_fallback: bool = True,
                   synth_train_n: int = 60000, synth_test_n: int = 10000) -> tuple[Dataset, str]:
    """Load MNIST IDX files from root if present, else the synthetic corpus.

    Returns (dataset, source) where source is "mnist" or "synthdigits".
    Real files are looked up under root/mnist (or root itself); the synthetic
    corpus is cached under root/synthdigits.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be train or test, got {split!r}")
    stems = {"train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
             "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")}[split]
    root = Path(root if root is not None else os.environ.get("FAULTLINE_DATA", ".data"))
    for base in (root / "mnist", root):
        img, lab = _mnist_file(base, stems[0]), _mnist_file(base, stems[1])
        if img is not None and lab is not None:
            return load_idx_dataset(img, lab, DIGIT_NAMES), "mnist"
    if not synth_fallback:
        raise FormatError(f"no MNIST IDX files under {root}")
    paths = ensure_synth_digits_idx(root / "synthdigits", synth_train_n, synth_test_n)
    key = "train" if split == "train" else "test"
    return load_idx_dataset(paths[f"{key}_images"], paths[f"{key}_labels"],
                            DIGIT_NAMES), "synthdigits"
