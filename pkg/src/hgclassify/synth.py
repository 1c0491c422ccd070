"""Seeded synthetic benchmark data aligned with a generated taxonomy.

Class means form the hierarchy: level-1 means are random unit vectors and
each child mean is its parent plus a fixed-length random offset, so siblings
stay close together while coarse groups stay apart. Per-image spatial rows
are the leaf mean plus isotropic noise. Text embeddings are noisy proxies of
the class means, exact at the top level and noisiest at the leaves, which is
the regime where hierarchy information pays off. Difficulty is controlled by
the two noise levels, the offset scale, and the number of spatial rows an
image averages over.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import ImageRecord, save_image_records, save_text_table
from .errors import ValidationError
from .hierarchy import Taxonomy, serialize_taxonomy


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings; the defaults are the repo's standard benchmark."""

    levels: int = 2
    branching: tuple[int, ...] = (4, 3)
    dim: int = 16
    train_per_leaf: int = 40
    test_per_leaf: int = 20
    noise_sigma: float = 0.35
    offset_scale: float = 0.5
    spatial_rows: int = 9
    text_noise: float = 1.4

    def __post_init__(self):
        if self.levels < 2:
            raise ValidationError("synthetic taxonomies need at least 2 levels")
        if len(self.branching) != self.levels:
            raise ValidationError("branching must give one factor per level")
        if any(b < 2 for b in self.branching):
            raise ValidationError("every branching factor must be >= 2")
        if self.dim < 1 or self.spatial_rows < 1:
            raise ValidationError("dim and spatial_rows must be >= 1")
        if self.train_per_leaf < 1 or self.test_per_leaf < 0:
            raise ValidationError("need at least one training sample per leaf")
        if self.noise_sigma < 0 or self.offset_scale < 0 or self.text_noise < 0:
            raise ValidationError("noise and offset scales must be nonnegative")


@dataclass
class SynthData:
    taxonomy: Taxonomy
    text: np.ndarray
    train: list[ImageRecord]
    test: list[ImageRecord]


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def generate(spec: SynthSpec, seed: int) -> SynthData:
    rng = np.random.default_rng(seed)

    names: list[list[str]] = []
    parent_of: list[list[int]] = []
    means: list[np.ndarray] = []
    level_means = np.stack([_unit(rng, spec.dim) for _ in range(spec.branching[0])])
    names.append([f"g{j}" for j in range(spec.branching[0])])
    means.append(level_means)
    for lv in range(1, spec.levels):
        prev_names = names[-1]
        prev_means = means[-1]
        level_names, links, rows = [], [], []
        for p, pname in enumerate(prev_names):
            for c in range(spec.branching[lv]):
                level_names.append(f"{pname}.{c}")
                links.append(p)
                rows.append(prev_means[p] + spec.offset_scale * _unit(rng, spec.dim))
        names.append(level_names)
        parent_of.append(links)
        means.append(np.stack(rows))

    taxonomy = Taxonomy(
        levels=spec.levels,
        names=tuple(tuple(n) for n in names),
        parent_of=tuple(tuple(p) for p in parent_of),
    )

    # Text embeddings are noisy proxies of the class means; coarse names are
    # reliable, fine-grained names progressively less so.
    text_rows = []
    for lv, level_means in enumerate(means):
        scale = spec.text_noise * lv / (spec.levels - 1)
        for mean in level_means:
            row = mean if scale == 0 else mean + scale * _unit(rng, spec.dim)
            text_rows.append(row)
    text = np.stack(text_rows).astype(np.float32)

    def draw_images(per_leaf: int) -> list[ImageRecord]:
        records = []
        for leaf in range(taxonomy.level_sizes[-1]):
            path = taxonomy.ancestor_path(leaf)
            for _ in range(per_leaf):
                spatial = means[-1][leaf] + spec.noise_sigma * rng.standard_normal(
                    (spec.spatial_rows, spec.dim)
                )
                records.append(ImageRecord(spatial=spatial.astype(np.float32), label_path=np.array(path)))
        return records

    train = draw_images(spec.train_per_leaf)
    test = draw_images(spec.test_per_leaf)
    return SynthData(taxonomy=taxonomy, text=text, train=train, test=test)


def write_dataset(data: SynthData, out_dir) -> dict[str, str]:
    """Write taxonomy + embedding files; returns the path of each artifact."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "taxonomy": str(out / "taxonomy.txt"),
        "text": str(out / "text.hgeb"),
        "train": str(out / "train.hgeb"),
        "test": str(out / "test.hgeb"),
    }
    (out / "taxonomy.txt").write_text(serialize_taxonomy(data.taxonomy), encoding="utf-8")
    save_text_table(paths["text"], data.text)
    save_image_records(paths["train"], data.train)
    if data.test:
        save_image_records(paths["test"], data.test)
    return paths
