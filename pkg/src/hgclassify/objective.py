"""Per-level partitioning, logit strategies, and the weighted multi-level loss.

Two strategies are implemented. ``multi_label`` applies an independent
softmax within each level. ``marginalization`` distributes a softmax over
the leaf level and scores an ancestor by the total mass of its descendant
leaves; coarse-level scores are ignored under this strategy. The per-level
linear-classifier strategy is out of scope: it needs per-level trained heads
and does not apply to similarity-based classifiers like this one.

Cross-entropies use natural log via stabilized log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ProbError, ShapeError, ValidationError
from .fusion import MULTI_LABEL, STRATEGIES, LogitsBundle
from .hierarchy import Taxonomy
from .tape import Tensor


@dataclass(frozen=True)
class LossConfig:
    """Per-level weights and the strategy the loss consumes scores under."""

    level_weights: tuple[float, ...]
    strategy: str = MULTI_LABEL

    def __post_init__(self):
        if not self.level_weights or any(w <= 0 for w in self.level_weights):
            raise ValidationError("level weights must be positive")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")


def default_level_weights(levels: int) -> tuple[float, ...]:
    """Unit weights except the finest level, which gets weight 2."""
    if levels < 1:
        raise ValidationError("levels must be >= 1")
    return tuple([1.0] * (levels - 1) + [2.0]) if levels > 1 else (2.0,)


def partition(bundle: LogitsBundle) -> list[np.ndarray]:
    """Per-level score slices; concatenating them reproduces the bundle."""
    return [bundle.scores[s:e] for s, e in bundle.level_ranges]


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - np.max(scores))
    return e / e.sum()


def multi_label_probs(level_scores: list[np.ndarray]) -> list[np.ndarray]:
    """Independent softmax within each level."""
    return [_softmax(np.asarray(s, dtype=np.float64)) for s in level_scores]


def marginalize(leaf_probs: np.ndarray, taxonomy: Taxonomy) -> list[np.ndarray]:
    """Roll a leaf-level distribution up the tree by summing over children."""
    leaf_probs = np.asarray(leaf_probs, dtype=np.float64)
    sizes = taxonomy.level_sizes
    if leaf_probs.shape != (sizes[-1],):
        raise ShapeError(f"expected {sizes[-1]} leaf probabilities, got shape {leaf_probs.shape}")
    if np.any(leaf_probs < 0) or not np.all(np.isfinite(leaf_probs)):
        raise ProbError("leaf probabilities must be finite and nonnegative")
    if abs(leaf_probs.sum() - 1.0) > 1e-8:
        raise ProbError(f"leaf probabilities sum to {leaf_probs.sum()}, not 1")
    levels = [None] * taxonomy.levels
    levels[-1] = leaf_probs
    for lv in range(taxonomy.levels - 1, 0, -1):
        parents = np.zeros(sizes[lv - 1], dtype=np.float64)
        np.add.at(parents, np.asarray(taxonomy.parent_of[lv - 1]), levels[lv])
        levels[lv - 1] = parents
    return levels


def batch_loss_t(
    scores: Tensor,
    label_paths: np.ndarray,
    taxonomy: Taxonomy,
    level_ranges,
    cfg: LossConfig,
) -> Tensor:
    """Tape expression of the summed weighted multi-level cross-entropy.

    ``scores`` is (batch x K); ``label_paths`` is (batch x levels). Batch
    losses reduce by summation.
    """
    label_paths = np.asarray(label_paths, dtype=np.intp)
    terms = None
    if cfg.strategy == MULTI_LABEL:
        for i, (s, e) in enumerate(level_ranges):
            level = tape.gather_cols(scores, np.arange(s, e))
            lse = tape.logsumexp_cols(level)
            gt = tape.take_per_row(level, label_paths[:, i])
            term = tape.scale(tape.sum_all(tape.sub(lse, gt)), cfg.level_weights[i])
            terms = term if terms is None else tape.add(terms, term)
    else:
        s, e = level_ranges[-1]
        leaves = tape.gather_cols(scores, np.arange(s, e))
        lse_all = tape.logsumexp_cols(leaves)
        for i in range(taxonomy.levels):
            # Group rows sharing a ground-truth node so each descendant set
            # is gathered once.
            lse_desc_rows = np.empty(label_paths.shape[0])
            pieces = []
            for node in np.unique(label_paths[:, i]):
                rows = np.nonzero(label_paths[:, i] == node)[0]
                desc = np.asarray(taxonomy.leaf_descendants(i + 1, int(node)))
                lse_desc = tape.logsumexp_cols(tape.gather_cols(tape.gather_rows(leaves, rows), desc))
                lse_desc_rows[rows] = lse_desc.value[:, 0]
                diff = tape.sub(tape.gather_rows(lse_all, rows), lse_desc)
                pieces.append(tape.sum_all(diff))
            if np.any(np.exp(lse_desc_rows - lse_all.value[:, 0]) == 0.0):
                raise ProbError(f"marginalized probability underflows to zero at level {i + 1}")
            level_term = pieces[0]
            for p in pieces[1:]:
                level_term = tape.add(level_term, p)
            term = tape.scale(level_term, cfg.level_weights[i])
            terms = term if terms is None else tape.add(terms, term)
    return terms


def hier_loss(bundle: LogitsBundle, label_path, taxonomy: Taxonomy, cfg: LossConfig):
    """Weighted multi-level cross-entropy and its gradient w.r.t. the raw scores."""
    if len(cfg.level_weights) != taxonomy.levels:
        raise ShapeError(
            f"{len(cfg.level_weights)} level weights for a {taxonomy.levels}-level taxonomy"
        )
    if len(label_path) != taxonomy.levels:
        raise ShapeError("label path length must equal the taxonomy depth")
    for i, idx in enumerate(label_path):
        if not 0 <= int(idx) < taxonomy.level_sizes[i]:
            raise ShapeError(f"label {idx} outside level {i + 1}")
    scores = Tensor(bundle.scores.reshape(1, -1))
    loss = batch_loss_t(
        scores, np.asarray(label_path).reshape(1, -1), taxonomy, bundle.level_ranges, cfg
    )
    tape.backward(loss)
    return float(loss.value), scores.grad.reshape(-1)
