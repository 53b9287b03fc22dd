"""Class text embeddings and projection-layer initialization.

Embeddings arrive as a classes x descriptions x width tensor, either loaded
from a file produced offline by a text encoder or synthesized
deterministically for self-contained runs. Averaging the descriptions per
class and L2-normalizing gives one unit direction per class, which seeds the
rows of the split head's projection layer; the layer stays trainable.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateClassError, FormatError, ShapeError
from .model import ModelGraph
from .rng import SeededRng, kaiming_uniform

EMBED_MAGIC = b"FLEM1\n"

INIT_MODES = ("random", "single-prompt", "multi-description")


@dataclass
class EmbeddingTable:
    class_names: list[str]
    embeddings: np.ndarray  # (C, D, E) float32

    def __post_init__(self):
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 3:
            raise ShapeError(f"embeddings must be C x D x E, got {self.embeddings.shape}")
        C, D, E = self.embeddings.shape
        if C < 2 or D < 1 or E < 1:
            raise ShapeError(f"need C >= 2, D >= 1, E >= 1, got {(C, D, E)}")
        if len(self.class_names) != C:
            raise ShapeError(f"{len(self.class_names)} names for {C} classes")
        if len(set(self.class_names)) != C:
            raise ValueError("duplicate class names")
        if not np.isfinite(self.embeddings).all():
            raise DataError("embeddings contain NaN or Inf")

    @property
    def num_classes(self) -> int:
        return self.embeddings.shape[0]

    @property
    def descriptions_per_class(self) -> int:
        return self.embeddings.shape[1]

    @property
    def width(self) -> int:
        return self.embeddings.shape[2]

    def slice_first_description(self) -> "EmbeddingTable":
        return EmbeddingTable(list(self.class_names), self.embeddings[:, :1, :].copy())


def average_embeddings(table: EmbeddingTable) -> np.ndarray:
    """Mean over the description axis, then L2-normalize each class row."""
    mean = table.embeddings.mean(axis=1, dtype=np.float64)
    norms = np.linalg.norm(mean, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise DegenerateClassError(
            f"class rows {zero.tolist()} averaged to the zero vector")
    return (mean / norms[:, None]).astype(np.float32)


def init_projection(m: ModelGraph, mode: str, table: EmbeddingTable | None,
                    rng: SeededRng | None = None) -> ModelGraph:
    """Return a copy of a split-head model with its projection layer re-initialized.

    random: Kaiming-uniform rows. single-prompt: first description only.
    multi-description: average over all descriptions. Text modes copy the
    normalized class directions into the projection weight rows and zero the
    bias; the layer remains trainable.
    """
    if m.head_kind != "split":
        raise ShapeError("init_projection requires a split-head model")
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    out = copy.deepcopy(m)
    proj = out.layers[-1]
    C, E = proj.weight.shape
    if mode == "random":
        if rng is None:
            raise ValueError("random init needs an rng")
        proj.weight[...] = kaiming_uniform(rng, (C, E), E)
        proj.bias[...] = 0.0
        return out
    if table is None:
        raise ValueError(f"{mode} init needs an embedding table")
    if table.width != E:
        raise ShapeError(f"embedding width {table.width} != projection width {E}")
    if table.num_classes != C:
        raise ShapeError(f"{table.num_classes} embedding classes != {C} model classes")
    if mode == "single-prompt":
        table = table.slice_first_description()
    proj.weight[...] = average_embeddings(table)
    proj.bias[...] = 0.0
    return out


def _class_stream(seed: int, name: str, description: int) -> SeededRng:
    digest = hashlib.sha256(
        b"faultline-embed\x00" + name.encode("utf-8") + b"\x00" + str(description).encode()
    ).digest()
    stream = int.from_bytes(digest[:8], "little")
    return SeededRng(seed, stream)


def synth_embeddings(class_names: list[str], descriptions: int, width: int,
                     seed: int = 0) -> EmbeddingTable:
    """Deterministic stand-in for an offline text encoder.

    Each (class, description) vector is a unit-norm Gaussian direction keyed
    by a hash of the class name and description index, so tables are
    identical across platforms and runs. Distinct classes land nearly
    orthogonal for reasonable widths (expected |cos| ~ sqrt(2/(pi*E))).
    """
    if width < 8:
        raise ValueError(f"embedding width must be >= 8, got {width}")
    if len(set(class_names)) != len(class_names):
        raise ValueError("duplicate class names")
    if descriptions < 1:
        raise ValueError("need at least one description per class")
    emb = np.empty((len(class_names), descriptions, width), dtype=np.float32)
    for c, name in enumerate(class_names):
        for d in range(descriptions):
            v = _class_stream(seed, name, d).standard_normal(width)
            emb[c, d] = (v / np.linalg.norm(v)).astype(np.float32)
    return EmbeddingTable(list(class_names), emb)


def save_embeddings(table: EmbeddingTable, path) -> None:
    header = json.dumps({
        "C": table.num_classes,
        "D": table.descriptions_per_class,
        "E": table.width,
        "class_names": table.class_names,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(table.embeddings, dtype="<f4").tobytes())


def load_embeddings(path) -> EmbeddingTable:
    """Parse the FLEM1 file format: magic, length-prefixed JSON header, then
    C*D*E little-endian float32 values in (class, description, dim) order."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(EMBED_MAGIC):
        raise FormatError(f"{path}: bad magic")
    off = len(EMBED_MAGIC)
    if len(raw) < off + 8:
        raise FormatError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    if len(raw) < off + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
        C, D, E = int(header["C"]), int(header["D"]), int(header["E"])
        names = list(header["class_names"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid header: {exc}") from exc
    off += hlen
    body = raw[off:]
    expected = C * D * E * 4
    if len(body) != expected:
        raise FormatError(f"{path}: payload is {len(body)} bytes, expected {expected}")
    values = np.frombuffer(body, dtype="<f4").reshape(C, D, E)
    if not np.isfinite(values).all():
        raise DataError(f"{path}: embeddings contain NaN or Inf")
    return EmbeddingTable(names, values.astype(np.float32))
