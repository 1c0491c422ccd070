"""FastAPI service wrapping the core package.

Endpoints operate on files reachable from the server process (the CLI runs
the app in-process by default, so paths are plain local paths). Package
errors map to structured 400 responses.
"""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..embeddings import TextTable, load_embeddings
from ..errors import HgcError, ShapeError
from ..evaluation import evaluate, sweep, sweep_csv
from ..fusion import FusionConfig
from ..hierarchy import build_graph, parse_taxonomy
from ..synth import SynthSpec, generate, write_dataset
from ..trainer import (
    Toggles,
    TrainConfig,
    fit,
    gradcheck,
    init_state,
    load_checkpoint,
    refresh_prototypes,
    save_checkpoint,
)
from . import schemas

app = FastAPI(title="hgclassify", version=__version__)

TOGGLE_NAMES = ("TP", "TG", "VP", "VG")


@app.exception_handler(HgcError)
async def _package_error(request: Request, exc: HgcError):
    return JSONResponse(status_code=400, content={"error": type(exc).__name__, "message": str(exc)})


@app.exception_handler(FileNotFoundError)
async def _missing_file(request: Request, exc: FileNotFoundError):
    return JSONResponse(status_code=400, content={"error": "FileNotFoundError", "message": str(exc)})


def parse_toggles(names: list[str]) -> Toggles:
    cleaned = [n.strip().upper() for n in names if n.strip() and n.strip().lower() != "none"]
    unknown = [n for n in cleaned if n not in TOGGLE_NAMES]
    if unknown:
        raise HgcError(f"unknown toggles: {', '.join(unknown)} (expected subset of TP,TG,VP,VG)")
    return Toggles(*(n in cleaned for n in TOGGLE_NAMES))


def build_train_config(opts: schemas.ModelOptions) -> TrainConfig:
    return TrainConfig(
        lr0=opts.lr,
        epochs=opts.epochs,
        batch_size=opts.batch,
        seed=opts.seed,
        toggles=parse_toggles(opts.toggles),
        variant=opts.variant,
        depth=opts.depth,
        share_encoders=opts.share_encoders,
        visual_prompt_rows=opts.visual_prompt_rows,
        fusion=FusionConfig(alpha=opts.alpha, lambda1=opts.lambda1, lambda2=opts.lambda2),
        level_weights=tuple(opts.level_weights) if opts.level_weights else None,
        strategy=opts.strategy,
        lr_min=opts.lr_min,
        threads=opts.threads,
    )


def _load_corpus(taxonomy_path: str, text_path: str, records_path: str):
    taxonomy = parse_taxonomy(Path(taxonomy_path).read_text(encoding="utf-8"))
    graph = build_graph(taxonomy)
    table = TextTable(base=load_embeddings(text_path))
    records = load_embeddings(records_path, levels=taxonomy.levels)
    return taxonomy, graph, table, records


def _metrics_csv(metrics: list[dict], levels: int) -> str:
    header = ["epoch", "lr", "mean_loss"] + [f"top1_l{i + 1}" for i in range(levels)]
    lines = [",".join(header)]
    for row in metrics:
        cells = [str(row["epoch"]), f"{row['lr']:.17g}", f"{row['mean_loss']:.17g}"]
        cells += [f"{row[f'top1_l{i + 1}']:.17g}" for i in range(levels)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


@app.get("/v1/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/v1/synth", response_model=schemas.SynthResponse)
def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
    spec = SynthSpec(
        levels=req.levels,
        branching=tuple(req.branching),
        dim=req.dim,
        train_per_leaf=req.train_per_leaf,
        test_per_leaf=req.test_per_leaf,
        noise_sigma=req.noise_sigma,
        offset_scale=req.offset_scale,
        spatial_rows=req.spatial_rows,
        text_noise=req.text_noise,
    )
    data = generate(spec, seed=req.seed)
    paths = write_dataset(data, req.out_dir)
    return schemas.SynthResponse(
        taxonomy_path=paths["taxonomy"],
        text_path=paths["text"],
        train_path=paths["train"],
        test_path=paths["test"],
        level_sizes=list(data.taxonomy.level_sizes),
        n_train=len(data.train),
        n_test=len(data.test),
    )


@app.post("/v1/train", response_model=schemas.TrainResponse)
def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    taxonomy, graph, table, records = _load_corpus(req.taxonomy_path, req.text_path, req.train_path)
    cfg = build_train_config(req)
    state, metrics = fit(records, table, graph, cfg)
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.hgck"
    csv_path = out / "train_metrics.csv"
    save_checkpoint(ckpt, state, cfg, graph)
    csv_path.write_text(_metrics_csv(metrics, taxonomy.levels), encoding="utf-8")
    last = metrics[-1]
    return schemas.TrainResponse(
        checkpoint_path=str(ckpt),
        metrics_csv_path=str(csv_path),
        epochs=cfg.epochs,
        final=schemas.EpochMetrics(
            epoch=last["epoch"],
            lr=last["lr"],
            mean_loss=last["mean_loss"],
            top1=[last[f"top1_l{i + 1}"] for i in range(taxonomy.levels)],
        ),
    )


@app.post("/v1/eval", response_model=schemas.EvalResponse)
def eval_endpoint(req: schemas.EvalRequest) -> schemas.EvalResponse:
    started = time.perf_counter()
    taxonomy, graph, table, records = _load_corpus(req.taxonomy_path, req.text_path, req.test_path)
    state, cfg = load_checkpoint(req.checkpoint_path)
    if state.text_offsets.shape != (graph.node_count, table.dim):
        raise ShapeError(
            f"checkpoint is for {state.text_offsets.shape} nodes x dims, "
            f"dataset has {(graph.node_count, table.dim)}"
        )
    if req.threads is not None:
        cfg = replace(cfg, threads=req.threads)
    result = evaluate(state, records, table, graph, cfg, strategy=req.strategy)
    csv_out = None
    if req.out_dir:
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        wall = time.perf_counter() - started
        lines = ["setting,level,top1,consistency,n,seed,wall_time_s"]
        for i, acc in enumerate(result.per_level_top1):
            lines.append(
                f"eval,{i + 1},{acc:.6f},{result.consistency_rate:.6f},"
                f"{result.n_samples},{cfg.seed},{wall:.3f}"
            )
        csv_out = str(out / "eval.csv")
        Path(csv_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return schemas.EvalResponse(
        per_level_top1=[float(a) for a in result.per_level_top1],
        consistency_rate=result.consistency_rate,
        n_samples=result.n_samples,
        csv_path=csv_out,
    )


@app.post("/v1/sweep", response_model=schemas.SweepResponse)
def sweep_endpoint(req: schemas.SweepRequest) -> schemas.SweepResponse:
    taxonomy, graph, table, train_records = _load_corpus(
        req.taxonomy_path, req.text_path, req.train_path
    )
    test_records = load_embeddings(req.test_path, levels=taxonomy.levels)
    cfg = build_train_config(req)
    rows = sweep(req.axis, cfg, train_records, test_records, table, graph)
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    csv_path.write_text(sweep_csv(rows), encoding="utf-8")
    return schemas.SweepResponse(
        csv_path=str(csv_path),
        rows=[
            schemas.SweepRowModel(
                setting=r.setting,
                per_level_top1=[float(a) for a in r.result.per_level_top1],
                consistency_rate=r.result.consistency_rate,
                n_samples=r.result.n_samples,
                seed=r.seed,
                wall_time_s=r.wall_time_s,
            )
            for r in rows
        ],
    )


@app.post("/v1/gradcheck", response_model=schemas.GradcheckResponse)
def gradcheck_endpoint(req: schemas.GradcheckRequest) -> schemas.GradcheckResponse:
    spec = SynthSpec(
        levels=req.levels,
        branching=tuple(req.branching),
        dim=req.dim,
        train_per_leaf=2,
        test_per_leaf=0,
        spatial_rows=3,
    )
    data = generate(spec, seed=req.seed)
    graph = build_graph(data.taxonomy)
    table = TextTable(base=data.text)
    cfg = build_train_config(req)
    rng = np.random.default_rng(req.seed)
    state = init_state(table, cfg, rng)
    # Perturb to a generic parameter point: near the init, attention scores
    # sit close to the leaky-ReLU kink where finite differences mislead.
    for arr in state.param_blocks(cfg.toggles, cfg.share_encoders, cfg.fusion.lambda2 != 0.0).values():
        arr += rng.normal(scale=0.4, size=arr.shape).astype(np.float32)
    if cfg.fusion.lambda2 != 0.0:
        state.prototypes = refresh_prototypes(state, data.train, graph, cfg)
    report = gradcheck(state, data.train[0], table, graph, cfg)
    return schemas.GradcheckResponse(
        blocks=[
            schemas.GradcheckBlock(name=b.name, max_rel_err=b.max_rel_err, flagged=b.flagged)
            for b in report.blocks
        ],
        threshold=report.threshold,
        passed=report.passed,
    )
