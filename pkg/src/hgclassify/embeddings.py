"""Embedding tables, per-image feature records, prototypes, and binary I/O.

File format (little-endian): magic ``HGEB``, u32 version=1, u32 kind,
u32 count, u32 dim. Kind 0 is a count x dim float32 text table. Kind 1 is a
stream of ``count`` image records, each ``{u32 M, h x u32 label_path,
M x dim float32 spatial rows}``; parsing a record stream therefore needs the
taxonomy depth ``h``. Values are stored raw; L2 normalization happens at use
sites. Global features are always recomputed from spatial rows, never stored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    EmptyClassError,
    EmptyInputError,
    FormatError,
    NormalizationError,
    ShapeError,
)
from .hierarchy import Taxonomy

MAGIC = b"HGEB"
VERSION = 1
KIND_TEXT = 0
KIND_IMAGES = 1

_HEADER = struct.Struct("<4sIIII")


def pool(spatial: np.ndarray) -> np.ndarray:
    """Arithmetic mean over rows (the global feature of a spatial map)."""
    spatial = np.asarray(spatial, dtype=np.float64)
    if spatial.ndim != 2 or spatial.shape[0] == 0:
        raise EmptyInputError("pooling requires at least one spatial row")
    return spatial.mean(axis=0)


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Unit-norm rows in float64; zero rows raise NormalizationError."""
    x = np.asarray(x, dtype=np.float64)
    arr = x if x.ndim == 2 else x.reshape(1, -1)
    norms = np.sqrt(np.sum(arr * arr, axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise NormalizationError("cannot L2-normalize a zero row")
    out = arr / norms
    return out if x.ndim == 2 else out[0]


@dataclass
class TextTable:
    """Frozen per-node text embeddings plus a learnable additive offset table."""

    base: np.ndarray
    prompt_offsets: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.float32)
        if self.base.ndim != 2:
            raise ShapeError(f"text table must be 2-D, got shape {self.base.shape}")
        if self.prompt_offsets is None:
            self.prompt_offsets = np.zeros_like(self.base)
        self.prompt_offsets = np.asarray(self.prompt_offsets, dtype=np.float32)
        if self.prompt_offsets.shape != self.base.shape:
            raise ShapeError("prompt offsets must match the base table shape")

    @property
    def dim(self) -> int:
        return self.base.shape[1]

    @property
    def count(self) -> int:
        return self.base.shape[0]

    def prompted(self) -> np.ndarray:
        """L2-normalized (base + offsets); the prompted text features."""
        return l2_normalize_rows(self.base.astype(np.float64) + self.prompt_offsets.astype(np.float64))


@dataclass
class ImageRecord:
    """Spatial feature rows of one image plus its per-level label path."""

    spatial: np.ndarray
    label_path: np.ndarray

    def __post_init__(self):
        self.spatial = np.asarray(self.spatial, dtype=np.float32)
        if self.spatial.ndim != 2 or self.spatial.shape[0] == 0:
            raise ShapeError("spatial map must be a nonempty 2-D array")
        self.label_path = np.asarray(self.label_path, dtype=np.int64)
        if self.label_path.ndim != 1:
            raise ShapeError("label path must be 1-D")

    @property
    def global_feature(self) -> np.ndarray:
        return pool(self.spatial)

    def validate_labels(self, taxonomy: Taxonomy) -> None:
        """Check ranges and hierarchy consistency of the label path."""
        if len(self.label_path) != taxonomy.levels:
            raise DataError(
                f"label path length {len(self.label_path)} != taxonomy depth {taxonomy.levels}"
            )
        for i, idx in enumerate(self.label_path):
            if not 0 <= idx < taxonomy.level_sizes[i]:
                raise DataError(f"label {idx} outside level {i + 1} range")
        for i in range(1, taxonomy.levels):
            if taxonomy.parent_of[i - 1][self.label_path[i]] != self.label_path[i - 1]:
                raise DataError("label path is not an ancestor chain of the taxonomy")


@dataclass
class PrototypeTable:
    """Per-node prototype features and the image counts that produced them."""

    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.values.ndim != 2 or self.counts.shape != (self.values.shape[0],):
            raise ShapeError("prototype table and counts disagree")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("prototype table contains non-finite values")


def compute_prototypes(images, taxonomy: Taxonomy) -> PrototypeTable:
    """Mean global feature per leaf class; internal nodes average their children.

    Only training-split images should be passed in. Every leaf class must
    contribute at least one image.
    """
    sizes = taxonomy.level_sizes
    dim = None
    sums = None
    counts = np.zeros(sizes[-1], dtype=np.int64)
    for rec in images:
        if dim is None:
            dim = rec.spatial.shape[1]
            sums = np.zeros((sizes[-1], dim), dtype=np.float64)
        leaf = int(rec.label_path[-1])
        if not 0 <= leaf < sizes[-1]:
            raise DataError(f"leaf label {leaf} outside range 0..{sizes[-1] - 1}")
        sums[leaf] += rec.global_feature
        counts[leaf] += 1
    if dim is None:
        raise EmptyClassError(taxonomy.names[-1])
    empty = counts == 0
    if np.any(empty):
        raise EmptyClassError([taxonomy.names[-1][i] for i in np.nonzero(empty)[0]])

    per_level = [None] * taxonomy.levels
    level_counts = [None] * taxonomy.levels
    per_level[-1] = sums / counts[:, None]
    level_counts[-1] = counts
    for lv in range(taxonomy.levels - 1, 0, -1):
        links = taxonomy.parent_of[lv - 1]
        child_protos = per_level[lv]
        parents = np.zeros((sizes[lv - 1], dim), dtype=np.float64)
        nchildren = np.zeros(sizes[lv - 1], dtype=np.int64)
        nimages = np.zeros(sizes[lv - 1], dtype=np.int64)
        for j, p in enumerate(links):
            parents[p] += child_protos[j]
            nchildren[p] += 1
            nimages[p] += level_counts[lv][j]
        per_level[lv - 1] = parents / nchildren[:, None]
        level_counts[lv - 1] = nimages
    return PrototypeTable(
        values=np.concatenate(per_level, axis=0),
        counts=np.concatenate(level_counts),
    )


def apply_visual_prompts(record: ImageRecord, prompt_rows: np.ndarray) -> ImageRecord:
    """Append learnable prompt rows to a spatial map (global is recomputed)."""
    prompt_rows = np.asarray(prompt_rows, dtype=np.float32)
    if prompt_rows.size == 0:
        return record
    if prompt_rows.ndim != 2 or prompt_rows.shape[1] != record.spatial.shape[1]:
        raise ShapeError("prompt rows must match the spatial feature width")
    return ImageRecord(
        spatial=np.concatenate([record.spatial, prompt_rows], axis=0),
        label_path=record.label_path,
    )


def apply_text_prompts(table: TextTable) -> np.ndarray:
    """The prompted text features (normalized base + offsets)."""
    return table.prompted()


def save_text_table(path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ShapeError("text table must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, KIND_TEXT, values.shape[0], values.shape[1]))
        fh.write(values.astype("<f4").tobytes())


def save_image_records(path, records: list[ImageRecord]) -> None:
    if not records:
        raise EmptyInputError("cannot write an empty image record stream")
    dim = records[0].spatial.shape[1]
    levels = len(records[0].label_path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, KIND_IMAGES, len(records), dim))
        for rec in records:
            if rec.spatial.shape[1] != dim or len(rec.label_path) != levels:
                raise ShapeError("all records in one stream must share dim and depth")
            fh.write(struct.pack("<I", rec.spatial.shape[0]))
            fh.write(np.asarray(rec.label_path, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(rec.spatial, dtype="<f4").tobytes())


def load_embeddings(path, levels: int | None = None):
    """Read an embedding file; returns an ndarray (kind 0) or list[ImageRecord].

    ``levels`` is required for image record streams because label paths have
    one entry per taxonomy level.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError("file shorter than header")
    magic, version, kind, count, dim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    payload = data[_HEADER.size :]

    if kind == KIND_TEXT:
        expected = count * dim * 4
        if len(payload) != expected:
            raise ShapeError(f"payload is {len(payload)} bytes, expected {expected} for {count}x{dim}")
        return np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()

    if kind == KIND_IMAGES:
        if levels is None:
            raise FormatError("image record streams need the taxonomy depth to parse label paths")
        records = []
        off = 0
        for _ in range(count):
            if off + 4 > len(payload):
                raise ShapeError("truncated record header")
            (rows,) = struct.unpack_from("<I", payload, off)
            off += 4
            need = levels * 4 + rows * dim * 4
            if off + need > len(payload):
                raise ShapeError("truncated record payload")
            label_path = np.frombuffer(payload, dtype="<u4", count=levels, offset=off).astype(np.int64)
            off += levels * 4
            spatial = (
                np.frombuffer(payload, dtype="<f4", count=rows * dim, offset=off)
                .reshape(rows, dim)
                .copy()
            )
            off += rows * dim * 4
            records.append(ImageRecord(spatial=spatial, label_path=label_path))
        if off != len(payload):
            raise ShapeError(f"{len(payload) - off} trailing bytes after {count} records")
        return records

    raise FormatError(f"unknown kind {kind}")
