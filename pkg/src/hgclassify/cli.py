"""Thin command-line client for the service.

Every subcommand assembles a request, posts it to the service, and renders
the response. Without ``--server`` the FastAPI app runs in-process, so no
daemon is needed for local work; with ``--server URL`` the same requests go
to a remote instance. Option precedence is CLI flag > config file > default;
the config file is line-oriented ``key = value`` using the long flag names.
"""

from __future__ import annotations

import asyncio
from pathlib import Path

import click
import httpx

DATASET_FILES = {"text": "text.hgeb", "train": "train.hgeb", "test": "test.hgeb", "taxonomy": "taxonomy.txt"}


def _post(server: str | None, path: str, payload: dict) -> dict:
    if server:
        resp = httpx.post(server.rstrip("/") + path, json=payload, timeout=None)
    else:
        from .service.app import app

        async def call():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(transport=transport, base_url="http://hgc") as client:
                return await client.post(path, json=payload, timeout=None)

        resp = asyncio.run(call())
    if resp.status_code != 200:
        try:
            detail = resp.json()
        except ValueError:
            detail = {"error": "HTTPError", "message": resp.text}
        click.echo(f"error ({detail.get('error', resp.status_code)}): {detail.get('message', '')}", err=True)
        raise SystemExit(1)
    return resp.json()


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            click.echo(f"error (ParseError): config line {lineno} is not 'key = value'", err=True)
            raise SystemExit(1)
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_config(ctx: click.Context, config: str | None, values: dict) -> dict:
    """Apply config-file values wherever the CLI flag was left at its default."""
    file_values = _read_config(config)
    if not file_values:
        return values
    params = {p.name: p for p in ctx.command.params}
    merged = dict(values)
    for key, raw in file_values.items():
        if key in ("config", "server") or key not in params:
            continue
        if ctx.get_parameter_source(key) == click.core.ParameterSource.COMMANDLINE:
            continue
        merged[key] = params[key].type.convert(raw, params[key], ctx)
    return merged


def _split_ints(_ctx, _param, value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v.strip()]


def _split_floats(_ctx, _param, value: str | None):
    if value is None:
        return None
    return [float(v) for v in value.split(",") if v.strip()]


def _split_names(_ctx, _param, value: str) -> list[str]:
    return [v for v in value.split(",") if v.strip()]


def _dataset_paths(embeddings: str, taxonomy: str | None, *needed: str) -> dict[str, str]:
    root = Path(embeddings)
    paths = {"taxonomy_path": taxonomy or str(root / DATASET_FILES["taxonomy"])}
    for key in needed:
        paths[f"{key}_path"] = str(root / DATASET_FILES[key])
    return paths


server_option = click.option("--server", default=None, help="Remote service URL (default: run in-process).")
config_option = click.option("--config", default=None, type=click.Path(exists=True), help="Config file with 'key = value' lines.")
seed_option = click.option("--seed", default=0, show_default=True, type=int, help="Master RNG seed.")
threads_option = click.option(
    "--threads", default=None, type=int, envvar="HGT_THREADS", show_default="available cores",
    help="Worker threads for evaluation.",
)


def model_options(fn):
    """Training knobs shared by train/sweep/gradcheck, defaults per the method."""
    opts = [
        click.option("--lr", default=3e-4, show_default=True, type=float, help="Initial learning rate."),
        click.option("--lr-min", default=0.0, show_default=True, type=float, help="Final cosine-annealed learning rate."),
        click.option("--epochs", default=50, show_default=True, type=int, help="Training epochs."),
        click.option("--batch", default=64, show_default=True, type=int, help="Batch size."),
        click.option("--lambda1", default=1.0, show_default=True, type=float, help="Weight of the prompted-similarity logits."),
        click.option("--lambda2", default=0.2, show_default=True, type=float, help="Weight of the prototype-fusion logits."),
        click.option("--alpha", default=None, type=float, show_default="1/sqrt(D)", help="Attention temperature."),
        click.option("--depth", default=3, show_default=True, type=int, help="Graph encoder layer count."),
        click.option("--variant", default="gat", show_default=True, type=click.Choice(["gcn", "gat", "sage"]), help="Graph encoder variant."),
        click.option("--strategy", default="multi_label", show_default=True, type=click.Choice(["multi_label", "marginalization"]), help="Per-level probability strategy."),
        click.option("--toggles", default="TP,TG,VP,VG", show_default=True, callback=_split_names, help="Enabled stages (comma list; 'none' disables all)."),
        click.option("--level-weights", default=None, show_default="1,...,1,2", callback=_split_floats, help="Comma list of per-level loss weights."),
        click.option("--prompt-rows", default=4, show_default=True, type=int, help="Learnable visual prompt rows."),
        click.option("--share-encoders", is_flag=True, default=False, show_default=True, help="Share one graph encoder across modalities."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _model_payload(v: dict) -> dict:
    return {
        "seed": v["seed"],
        "lr": v["lr"],
        "lr_min": v["lr_min"],
        "epochs": v["epochs"],
        "batch": v["batch"],
        "lambda1": v["lambda1"],
        "lambda2": v["lambda2"],
        "alpha": v["alpha"],
        "depth": v["depth"],
        "variant": v["variant"],
        "strategy": v["strategy"],
        "toggles": v["toggles"],
        "level_weights": v["level_weights"],
        "visual_prompt_rows": v["prompt_rows"],
        "share_encoders": v["share_encoders"],
        "threads": v.get("threads"),
    }


@click.group()
def main():
    """Hierarchy-graph classification: synthesize data, train, evaluate, sweep."""


@main.command()
@server_option
@config_option
@seed_option
@click.option("--out", required=True, type=click.Path(), help="Output directory for the dataset.")
@click.option("--levels", default=2, show_default=True, type=int, help="Taxonomy depth.")
@click.option("--branching", default="4,3", show_default=True, callback=_split_ints, help="Comma list: level-1 count, then children per node.")
@click.option("--dim", default=16, show_default=True, type=int, help="Embedding width.")
@click.option("--train-per-leaf", default=40, show_default=True, type=int, help="Training images per leaf class.")
@click.option("--test-per-leaf", default=20, show_default=True, type=int, help="Test images per leaf class.")
@click.option("--sigma", default=0.35, show_default=True, type=float, help="Per-row feature noise.")
@click.option("--offset", default=0.5, show_default=True, type=float, help="Child-mean offset length.")
@click.option("--spatial-rows", default=9, show_default=True, type=int, help="Feature rows per image.")
@click.option("--text-noise", default=1.4, show_default=True, type=float, help="Leaf-level text embedding noise.")
@click.pass_context
def synth(ctx, server, config, **values):
    """Generate a hierarchy-aligned synthetic dataset."""
    v = _merge_config(ctx, config, values)
    out = _post(server, "/v1/synth", {
        "out_dir": v["out"],
        "seed": v["seed"],
        "levels": v["levels"],
        "branching": v["branching"],
        "dim": v["dim"],
        "train_per_leaf": v["train_per_leaf"],
        "test_per_leaf": v["test_per_leaf"],
        "noise_sigma": v["sigma"],
        "offset_scale": v["offset"],
        "spatial_rows": v["spatial_rows"],
        "text_noise": v["text_noise"],
    })
    click.echo(
        f"wrote {out['n_train']} train / {out['n_test']} test samples, "
        f"levels {out['level_sizes']} -> {Path(out['taxonomy_path']).parent}"
    )


@main.command()
@server_option
@config_option
@seed_option
@threads_option
@click.option("--embeddings", required=True, type=click.Path(), help="Dataset directory (text/train/test .hgeb files).")
@click.option("--taxonomy", default=None, type=click.Path(), show_default="embeddings dir", help="Taxonomy file.")
@click.option("--out", required=True, type=click.Path(), help="Output directory for checkpoint and metrics.")
@model_options
@click.pass_context
def train(ctx, server, config, **values):
    """Train a model and write checkpoint + per-epoch metrics."""
    v = _merge_config(ctx, config, values)
    payload = _model_payload(v)
    payload.update(_dataset_paths(v["embeddings"], v["taxonomy"], "text", "train"))
    payload["out_dir"] = v["out"]
    out = _post(server, "/v1/train", payload)
    final = out["final"]
    top1 = ", ".join(f"l{i + 1}={a:.3f}" for i, a in enumerate(final["top1"]))
    click.echo(f"trained {out['epochs']} epochs; final mean loss {final['mean_loss']:.4f}; train top-1 {top1}")
    click.echo(f"checkpoint: {out['checkpoint_path']}")
    click.echo(f"metrics:    {out['metrics_csv_path']}")


@main.command("eval")
@server_option
@config_option
@threads_option
@click.option("--embeddings", required=True, type=click.Path(), help="Dataset directory.")
@click.option("--taxonomy", default=None, type=click.Path(), show_default="embeddings dir", help="Taxonomy file.")
@click.option("--checkpoint", required=True, type=click.Path(), help="Trained checkpoint file.")
@click.option("--out", default=None, type=click.Path(), help="Directory for the eval CSV.")
@click.option("--strategy", default=None, type=click.Choice(["multi_label", "marginalization"]), show_default="from checkpoint", help="Per-level probability strategy.")
@click.pass_context
def eval_cmd(ctx, server, config, **values):
    """Evaluate a checkpoint: per-level top-1 and consistency."""
    v = _merge_config(ctx, config, values)
    payload = _dataset_paths(v["embeddings"], v["taxonomy"], "text", "test")
    payload.update({
        "checkpoint_path": v["checkpoint"],
        "out_dir": v["out"],
        "strategy": v["strategy"],
        "threads": v["threads"],
    })
    out = _post(server, "/v1/eval", payload)
    top1 = ", ".join(f"l{i + 1}={a:.4f}" for i, a in enumerate(out["per_level_top1"]))
    click.echo(f"top-1 {top1}; consistency {out['consistency_rate']:.4f} over {out['n_samples']} samples")
    if out.get("csv_path"):
        click.echo(f"csv: {out['csv_path']}")


@main.command()
@server_option
@config_option
@seed_option
@threads_option
@click.option("--embeddings", required=True, type=click.Path(), help="Dataset directory.")
@click.option("--taxonomy", default=None, type=click.Path(), show_default="embeddings dir", help="Taxonomy file.")
@click.option("--out", required=True, type=click.Path(), help="Output directory for the sweep CSV.")
@click.option("--axis", required=True, type=click.Choice(["depth", "variant", "toggles"]), help="Sweep axis.")
@model_options
@click.pass_context
def sweep(ctx, server, config, **values):
    """Train/evaluate one model per setting along an axis."""
    v = _merge_config(ctx, config, values)
    payload = _model_payload(v)
    payload.update(_dataset_paths(v["embeddings"], v["taxonomy"], "text", "train", "test"))
    payload.update({"out_dir": v["out"], "axis": v["axis"]})
    out = _post(server, "/v1/sweep", payload)
    width = max(len(r["setting"]) for r in out["rows"])
    click.echo(f"{'setting'.ljust(width)}  consistency  " + "  ".join(
        f"top1_l{i + 1}" for i in range(len(out["rows"][0]["per_level_top1"]))
    ))
    for r in out["rows"]:
        accs = "  ".join(f"{a:7.4f}" for a in r["per_level_top1"])
        click.echo(f"{r['setting'].ljust(width)}  {r['consistency_rate']:11.4f}  {accs}")
    click.echo(f"csv: {out['csv_path']}")


@main.command()
@server_option
@config_option
@seed_option
@click.option("--dim", default=6, show_default=True, type=int, help="Embedding width of the check instance.")
@click.option("--levels", default=2, show_default=True, type=int, help="Taxonomy depth of the check instance.")
@click.option("--branching", default="2,2", show_default=True, callback=_split_ints, help="Branching of the check instance.")
@model_options
@click.pass_context
def gradcheck(ctx, server, config, **values):
    """Compare analytic pipeline gradients against finite differences."""
    v = _merge_config(ctx, config, values)
    payload = _model_payload(v)
    payload.update({"dim": v["dim"], "levels": v["levels"], "branching": v["branching"], "epochs": 1})
    out = _post(server, "/v1/gradcheck", payload)
    width = max(len(b["name"]) for b in out["blocks"])
    for b in out["blocks"]:
        mark = "FLAGGED" if b["flagged"] else "ok"
        click.echo(f"{b['name'].ljust(width)}  max rel err {b['max_rel_err']:.3e}  {mark}")
    click.echo(f"gradcheck {'passed' if out['passed'] else 'FAILED'} (threshold {out['threshold']:g})")
    if not out["passed"]:
        raise SystemExit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option("--port", default=8321, show_default=True, type=int, help="Bind port.")
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
