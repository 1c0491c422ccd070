"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SynthRequest(BaseModel):
    out_dir: str
    seed: int = 0
    levels: int = 2
    branching: list[int] = Field(default_factory=lambda: [4, 3])
    dim: int = 16
    train_per_leaf: int = 40
    test_per_leaf: int = 20
    noise_sigma: float = 0.35
    offset_scale: float = 0.5
    spatial_rows: int = 9
    text_noise: float = 1.4


class SynthResponse(BaseModel):
    taxonomy_path: str
    text_path: str
    train_path: str
    test_path: str
    level_sizes: list[int]
    n_train: int
    n_test: int


class ModelOptions(BaseModel):
    """Training knobs shared by the train, sweep, and gradcheck endpoints."""

    seed: int = 0
    lr: float = 3e-4
    lr_min: float = 0.0
    epochs: int = 50
    batch: int = 64
    lambda1: float = 1.0
    lambda2: float = 0.2
    alpha: float | None = None
    depth: int = 3
    variant: str = "gat"
    strategy: str = "multi_label"
    toggles: list[str] = Field(default_factory=lambda: ["TP", "TG", "VP", "VG"])
    level_weights: list[float] | None = None
    visual_prompt_rows: int = 4
    share_encoders: bool = False
    threads: int | None = None


class TrainRequest(ModelOptions):
    taxonomy_path: str
    text_path: str
    train_path: str
    out_dir: str


class EpochMetrics(BaseModel):
    epoch: int
    lr: float
    mean_loss: float
    top1: list[float]


class TrainResponse(BaseModel):
    checkpoint_path: str
    metrics_csv_path: str
    epochs: int
    final: EpochMetrics


class EvalRequest(BaseModel):
    taxonomy_path: str
    text_path: str
    test_path: str
    checkpoint_path: str
    out_dir: str | None = None
    strategy: str | None = None
    threads: int | None = None


class EvalResponse(BaseModel):
    per_level_top1: list[float]
    consistency_rate: float
    n_samples: int
    csv_path: str | None


class SweepRequest(ModelOptions):
    taxonomy_path: str
    text_path: str
    train_path: str
    test_path: str
    out_dir: str
    axis: str


class SweepRowModel(BaseModel):
    setting: str
    per_level_top1: list[float]
    consistency_rate: float
    n_samples: int
    seed: int
    wall_time_s: float


class SweepResponse(BaseModel):
    csv_path: str
    rows: list[SweepRowModel]


class GradcheckRequest(ModelOptions):
    """Runs on an internally generated small instance (node count <= 12)."""

    levels: int = 2
    branching: list[int] = Field(default_factory=lambda: [2, 2])
    dim: int = 6
    epochs: int = 1


class GradcheckBlock(BaseModel):
    name: str
    max_rel_err: float
    flagged: bool


class GradcheckResponse(BaseModel):
    blocks: list[GradcheckBlock]
    threshold: float
    passed: bool


class HealthResponse(BaseModel):
    status: str
    version: str
