"""Per-level accuracy, cross-level consistency, and configuration sweeps."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .embeddings import ImageRecord, TextTable
from .errors import ShapeError, ValidationError
from .fusion import MARGINALIZATION
from .hierarchy import HierGraph, Taxonomy
from .objective import marginalize
from .trainer import ModelState, TrainConfig, Toggles, fit, forward_batch

SWEEP_AXES = ("depth", "variant", "toggles")

# Stage combinations of the component ablation grid, coarsest to fullest.
ABLATION_GRID = (
    (False, False, False, False),
    (True, False, False, False),
    (False, False, True, False),
    (True, True, False, False),
    (False, False, True, True),
    (True, False, True, False),
    (True, False, True, True),
    (True, True, True, False),
    (True, True, True, True),
)


@dataclass
class EvalResult:
    per_level_top1: np.ndarray
    consistency_rate: float
    n_samples: int

    def __post_init__(self):
        self.per_level_top1 = np.asarray(self.per_level_top1, dtype=np.float64)
        if self.n_samples <= 0:
            raise ValidationError("evaluation needs at least one sample")
        if np.any(self.per_level_top1 < 0) or np.any(self.per_level_top1 > 1):
            raise ValidationError("accuracies must lie in [0, 1]")
        if not 0 <= self.consistency_rate <= 1:
            raise ValidationError("consistency rate must lie in [0, 1]")


def predict_levels(bundle_scores: np.ndarray, graph: HierGraph, strategy: str) -> np.ndarray:
    """Per-level argmax indices for one score vector under a logit strategy."""
    ranges = graph.level_ranges
    if strategy == MARGINALIZATION:
        s, e = ranges[-1]
        leaf = bundle_scores[s:e]
        probs = marginalize(_softmax(leaf), graph.taxonomy)
        return np.array([int(np.argmax(p)) for p in probs], dtype=np.int64)
    return np.array([int(np.argmax(bundle_scores[s:e])) for s, e in ranges], dtype=np.int64)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def top1_per_level(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean per-level agreement between predictions and label paths (n x h each)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 2:
        raise ShapeError(f"predictions {predictions.shape} and labels {labels.shape} must match")
    return (predictions == labels).mean(axis=0)


def consistency(predictions: np.ndarray, taxonomy: Taxonomy) -> float:
    """Fraction of samples whose per-level predictions form one ancestor chain."""
    predictions = np.asarray(predictions)
    good = 0
    for row in predictions:
        ok = all(
            taxonomy.parent_of[i - 1][int(row[i])] == int(row[i - 1])
            for i in range(1, taxonomy.levels)
        )
        good += ok
    return good / len(predictions) if len(predictions) else 1.0


def evaluate(
    state: ModelState,
    records: list[ImageRecord],
    table: TextTable,
    graph: HierGraph,
    cfg: TrainConfig,
    strategy: str | None = None,
) -> EvalResult:
    """Forward every record and score per-level accuracy plus consistency."""
    if not records:
        raise ShapeError("evaluation set is empty")
    strategy = strategy or cfg.strategy

    chunks = [records[lo : lo + 256] for lo in range(0, len(records), 256)]

    def scores_of(chunk: list[ImageRecord]) -> np.ndarray:
        return forward_batch(state, chunk, table, graph, cfg)

    workers = cfg.threads or 1
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_scores = np.concatenate(list(pool.map(scores_of, chunks)), axis=0)
    else:
        all_scores = np.concatenate([scores_of(c) for c in chunks], axis=0)

    preds = np.vstack([predict_levels(s, graph, strategy) for s in all_scores])
    labels = np.vstack([rec.label_path for rec in records])
    return EvalResult(
        per_level_top1=top1_per_level(preds, labels),
        consistency_rate=consistency(preds, graph.taxonomy),
        n_samples=len(records),
    )


@dataclass
class SweepRow:
    setting: str
    result: EvalResult
    seed: int
    wall_time_s: float


def sweep(
    axis: str,
    base_cfg: TrainConfig,
    train_records: list[ImageRecord],
    test_records: list[ImageRecord],
    table: TextTable,
    graph: HierGraph,
) -> list[SweepRow]:
    """Train one model per setting along an axis, all under the shared seed."""
    if axis == "depth":
        settings = [("depth=%d" % d, replace(base_cfg, depth=d)) for d in range(1, 6)]
    elif axis == "variant":
        settings = [("variant=%s" % v, replace(base_cfg, variant=v)) for v in ("gcn", "gat", "sage")]
    elif axis == "toggles":
        settings = []
        for combo in ABLATION_GRID:
            joined = ",".join(n for n, on in zip(("TP", "TG", "VP", "VG"), combo) if on)
            settings.append(("toggles=" + (joined or "none"), replace(base_cfg, toggles=Toggles(*combo))))
    else:
        raise ValidationError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")

    rows = []
    for name, cfg in settings:
        started = time.perf_counter()
        state, _ = fit(train_records, table, graph, cfg)
        result = evaluate(state, test_records, table, graph, cfg)
        rows.append(
            SweepRow(
                setting=name,
                result=result,
                seed=cfg.seed,
                wall_time_s=time.perf_counter() - started,
            )
        )
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    """One line per (setting, level); wall time is the trailing column."""
    lines = ["setting,level,top1,consistency,n,seed,wall_time_s"]
    for row in rows:
        for i, acc in enumerate(row.result.per_level_top1):
            lines.append(
                f"{row.setting},{i + 1},{acc:.6f},{row.result.consistency_rate:.6f},"
                f"{row.result.n_samples},{row.seed},{row.wall_time_s:.3f}"
            )
    return "\n".join(lines) + "\n"
