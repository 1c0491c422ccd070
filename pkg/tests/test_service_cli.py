"""Service endpoints and the thin-client CLI."""

import asyncio
from pathlib import Path

import httpx
import pytest
from click.testing import CliRunner

from hgclassify.cli import main
from hgclassify.service.app import app, parse_toggles
from hgclassify.trainer import Toggles


class AsgiClient:
    """Requests against the app over the same in-process transport the CLI uses."""

    def _call(self, method, path, **kwargs):
        async def go():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(transport=transport, base_url="http://svc") as c:
                return await c.request(method, path, **kwargs)

        return asyncio.run(go())

    def get(self, path):
        return self._call("GET", path)

    def post(self, path, json=None):
        return self._call("POST", path, json=json)


@pytest.fixture()
def client():
    return AsgiClient()


def run_cli(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


def make_dataset(tmp_path, **flags):
    args = ["synth", "--out", tmp_path / "ds", "--seed", 0,
            "--train-per-leaf", 6, "--test-per-leaf", 3, "--dim", 8, "--spatial-rows", 3]
    for key, value in flags.items():
        args += [f"--{key}", value]
    res = run_cli(*args)
    assert res.exit_code == 0, res.output
    return tmp_path / "ds"


class TestService:
    def test_health(self, client):
        body = client.get("/v1/health").json()
        assert body["status"] == "ok"

    def test_synth_endpoint_reports_sizes(self, client, tmp_path):
        resp = client.post("/v1/synth", json={"out_dir": str(tmp_path / "d"), "seed": 1})
        assert resp.status_code == 200
        body = resp.json()
        assert body["level_sizes"] == [4, 12]
        assert body["n_train"] == 480 and body["n_test"] == 240
        assert Path(body["taxonomy_path"]).exists()

    def test_package_errors_map_to_400(self, client, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("#levels 2\n1\ta\t-\n2\tb\tmissing\n", encoding="utf-8")
        resp = client.post("/v1/train", json={
            "taxonomy_path": str(bad), "text_path": str(bad), "train_path": str(bad),
            "out_dir": str(tmp_path), "epochs": 1,
        })
        assert resp.status_code == 400
        assert resp.json()["error"] == "ValidationError"

    def test_missing_file_maps_to_400(self, client, tmp_path):
        resp = client.post("/v1/train", json={
            "taxonomy_path": str(tmp_path / "nope.txt"),
            "text_path": str(tmp_path / "nope.hgeb"),
            "train_path": str(tmp_path / "nope.hgeb"),
            "out_dir": str(tmp_path),
        })
        assert resp.status_code == 400
        assert resp.json()["error"] == "FileNotFoundError"

    def test_gradcheck_endpoint_passes(self, client):
        resp = client.post("/v1/gradcheck", json={"seed": 0, "dim": 6})
        assert resp.status_code == 200
        body = resp.json()
        assert body["passed"] is True
        assert {b["name"] for b in body["blocks"]} >= {"text_offsets", "visual_prompts"}

    def test_parse_toggles(self):
        assert parse_toggles(["TP", "VP"]) == Toggles(True, False, True, False)
        assert parse_toggles(["none"]) == Toggles(False, False, False, False)
        from hgclassify.errors import HgcError

        with pytest.raises(HgcError):
            parse_toggles(["XX"])


class TestCli:
    def test_synth_train_eval_smoke(self, tmp_path):
        ds = make_dataset(tmp_path)
        out = tmp_path / "run"
        res = run_cli("train", "--embeddings", ds, "--out", out, "--epochs", 2, "--seed", 0)
        assert res.exit_code == 0, res.output
        assert (out / "checkpoint.hgck").exists()
        assert (out / "train_metrics.csv").exists()
        res = run_cli("eval", "--embeddings", ds, "--checkpoint", out / "checkpoint.hgck",
                      "--out", out)
        assert res.exit_code == 0, res.output
        assert "top-1" in res.output and (out / "eval.csv").exists()

    def test_train_rerun_is_bit_identical(self, tmp_path):
        ds = make_dataset(tmp_path)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            res = run_cli("train", "--embeddings", ds, "--out", out, "--epochs", 3, "--seed", 7)
            assert res.exit_code == 0, res.output
            outs.append(out)
        assert (outs[0] / "checkpoint.hgck").read_bytes() == (outs[1] / "checkpoint.hgck").read_bytes()
        assert (outs[0] / "train_metrics.csv").read_text() == (outs[1] / "train_metrics.csv").read_text()

    def test_eval_with_mismatched_width_fails(self, tmp_path):
        ds = make_dataset(tmp_path)
        out = tmp_path / "run"
        res = run_cli("train", "--embeddings", ds, "--out", out, "--epochs", 1, "--seed", 0)
        assert res.exit_code == 0
        other = tmp_path / "other"
        res = run_cli("synth", "--out", other, "--seed", 0, "--dim", 4,
                      "--train-per-leaf", 2, "--test-per-leaf", 1)
        assert res.exit_code == 0
        res = CliRunner().invoke(main, [
            "eval", "--embeddings", str(other), "--checkpoint", str(out / "checkpoint.hgck"),
        ])
        assert res.exit_code == 1
        assert "ShapeError" in res.output

    def test_sweep_depth_emits_five_settings(self, tmp_path):
        ds = make_dataset(tmp_path)
        out = tmp_path / "sweep"
        res = run_cli("sweep", "--embeddings", ds, "--out", out, "--axis", "depth",
                      "--epochs", 1, "--seed", 0)
        assert res.exit_code == 0, res.output
        lines = (out / "sweep.csv").read_text().splitlines()
        settings = {line.split(",")[0] for line in lines[1:]}
        assert settings == {f"depth={d}" for d in range(1, 6)}

    def test_gradcheck_command(self):
        res = run_cli("gradcheck", "--seed", 0, "--dim", 5, "--epochs", 1)
        assert res.exit_code == 0, res.output
        assert "gradcheck passed" in res.output

    def test_help_lists_flags_with_method_defaults(self):
        res = run_cli("train", "--help")
        for token in ("--lr", "--epochs", "--batch", "--lambda1", "--lambda2",
                      "--alpha", "--depth", "--variant", "--strategy", "--toggles",
                      "--level-weights", "--seed", "--threads", "--taxonomy",
                      "--embeddings", "--out"):
            assert token in res.output, token
        for default in ("0.0003", "50", "64", "1.0", "0.2", "3", "gat", "multi_label"):
            assert default in res.output, default
        res = run_cli("eval", "--help")
        assert "--checkpoint" in res.output

    def test_config_file_between_cli_and_defaults(self, tmp_path):
        ds = make_dataset(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 2\nseed = 5\nlambda2 = 0.0\n", encoding="utf-8")
        out = tmp_path / "cfgrun"
        res = run_cli("train", "--embeddings", ds, "--out", out, "--config", cfg,
                      "--seed", 9)
        assert res.exit_code == 0, res.output
        assert "trained 2 epochs" in res.output  # config beat the default of 50
        from hgclassify.trainer import load_checkpoint

        state, loaded = load_checkpoint(out / "checkpoint.hgck")
        assert loaded.seed == 9  # explicit flag beat the config file
        assert loaded.epochs == 2
        assert loaded.fusion.lambda2 == 0.0

    def test_threads_env_fallback(self, tmp_path):
        ds = make_dataset(tmp_path)
        out = tmp_path / "envrun"
        res = run_cli("train", "--embeddings", ds, "--out", out, "--epochs", 1,
                      env={"HGT_THREADS": "2"})
        assert res.exit_code == 0, res.output

    def test_bad_config_line_fails(self, tmp_path):
        ds = make_dataset(tmp_path)
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs 2\n", encoding="utf-8")
        res = CliRunner().invoke(main, [
            "train", "--embeddings", str(ds), "--out", str(tmp_path / "x"),
            "--config", str(cfg),
        ])
        assert res.exit_code == 1
        assert "ParseError" in res.output
