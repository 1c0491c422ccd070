"""Prototype-attention fusion and weighted logit combination.

The attention map is a plain inner-product similarity between spatial rows
and prototype rows; callers normalize both beforehand so it is a cosine map.
Fused rows are convex combinations of prototype rows under a row-wise
temperature softmax. The final scores mix the prompted-feature similarity
branch and the fusion branch with two nonnegative weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ShapeError, ValidationError
from .hierarchy import HierGraph
from .tape import Tensor

MULTI_LABEL = "multi_label"
MARGINALIZATION = "marginalization"
STRATEGIES = (MULTI_LABEL, MARGINALIZATION)


@dataclass(frozen=True)
class FusionConfig:
    """Attention temperature and branch weights; ``alpha=None`` means 1/sqrt(D)."""

    alpha: float | None = None
    lambda1: float = 1.0
    lambda2: float = 0.2

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ValidationError("attention temperature must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("branch weights must be nonnegative")

    def resolve_alpha(self, dim: int) -> float:
        return self.alpha if self.alpha is not None else 1.0 / float(np.sqrt(dim))


@dataclass
class LogitsBundle:
    """Flat per-node scores with the level partition they slice under."""

    scores: np.ndarray
    level_ranges: tuple[tuple[int, int], ...]
    strategy: str = MULTI_LABEL

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.level_ranges[-1][1] != self.scores.shape[0]:
            raise ShapeError("level ranges do not cover the score vector")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown logit strategy {self.strategy!r}")
        if not np.all(np.isfinite(self.scores)):
            raise ShapeError("scores contain non-finite entries")

    @property
    def num_levels(self) -> int:
        return len(self.level_ranges)


def attention_map_t(spatial: Tensor, protos: Tensor) -> Tensor:
    return tape.matmul_nt(spatial, protos)


def attend_t(psi: Tensor, protos: Tensor, alpha: float) -> Tensor:
    weights = tape.softmax_rows(tape.scale(psi, 1.0 / alpha))
    return tape.matmul(weights, protos)


def combine_logits_t(
    global_prompted: Tensor,
    global_fused: Tensor | None,
    text_hat: Tensor,
    lambda1: float,
    lambda2: float,
) -> Tensor:
    scores = tape.scale(tape.matmul_nt(global_prompted, text_hat), lambda1)
    if global_fused is not None and lambda2 != 0.0:
        scores = tape.add(scores, tape.scale(tape.matmul_nt(global_fused, text_hat), lambda2))
    return scores


def attention_map(spatial, protos) -> np.ndarray:
    """Similarity map between spatial rows and prototype rows (rows x K)."""
    spatial = np.asarray(spatial, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    if spatial.ndim != 2 or protos.ndim != 2 or spatial.shape[1] != protos.shape[1]:
        raise ShapeError(f"widths disagree: spatial {spatial.shape}, prototypes {protos.shape}")
    return attention_map_t(Tensor(spatial), Tensor(protos)).value


def attend(psi, protos, alpha: float) -> np.ndarray:
    """Temperature-softmax convex combination of prototype rows, per spatial row."""
    psi = np.asarray(psi, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    if psi.ndim != 2 or protos.ndim != 2 or psi.shape[1] != protos.shape[0]:
        raise ShapeError(f"psi {psi.shape} does not match {protos.shape[0]} prototypes")
    if not alpha > 0:
        raise ValidationError("attention temperature must be positive")
    return attend_t(Tensor(psi), Tensor(protos), alpha).value


def combine_logits(
    global_prompted,
    global_fused,
    text_hat,
    cfg: FusionConfig,
    graph: HierGraph,
    strategy: str = MULTI_LABEL,
) -> LogitsBundle:
    """Weighted sum of the two similarity branches; inputs are pre-normalized."""
    gp = np.asarray(global_prompted, dtype=np.float64).reshape(1, -1)
    text_hat = np.asarray(text_hat, dtype=np.float64)
    if text_hat.ndim != 2 or text_hat.shape[1] != gp.shape[1]:
        raise ShapeError(f"text table {text_hat.shape} does not match width {gp.shape[1]}")
    gf_t = None
    if global_fused is not None:
        gf = np.asarray(global_fused, dtype=np.float64).reshape(1, -1)
        if gf.shape != gp.shape:
            raise ShapeError("fused and prompted global features must have equal width")
        gf_t = Tensor(gf)
    scores = combine_logits_t(Tensor(gp), gf_t, Tensor(text_hat), cfg.lambda1, cfg.lambda2)
    return LogitsBundle(scores=scores.value[0], level_ranges=graph.level_ranges, strategy=strategy)
