import hashlib
import json

import numpy as np
import pytest

from vedocr.checkpoint import save_checkpoint
from vedocr.cli import main
from vedocr.config import ModelConfig
from vedocr.models import init_params
from vedocr.tokenizer import Tokenizer


def write_json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_json(root / "synth.json", {"count": 6, "seed": 3, "max_len": 3, "height": 16})
    assert main(["synth", "--config", str(root / "synth.json"), "--out", str(root / "corpus")]) == 0
    write_json(root / "global.json", {"variant": "global", "H": 16, "W": 64, "P": 8, "D": 8, "heads": 2,
                                      "enc_layers": 1, "dec_layers": 1, "lmax": 12})
    write_json(root / "ctc.json", {"variant": "ctc", "H": 16, "W": 64, "P": 8, "D": 8, "ctc_channels": [4]})
    write_json(root / "hp.json", {"lr": 1e-3, "train_batch": 2, "grad_accum_steps": 2, "epochs": 1})
    return root


def digest(folder):
    h = hashlib.sha256()
    for p in sorted(folder.rglob("*")):
        if p.is_file():
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synth_is_reproducible(workspace, tmp_path, capsys):
    assert main(["synth", "--config", str(workspace / "synth.json"), "--out", str(tmp_path / "c")]) == 0
    assert digest(tmp_path / "c") == digest(workspace / "corpus")
    lines = (tmp_path / "c" / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 6 and len(list((tmp_path / "c" / "images").glob("*.pgm"))) == 6


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_usage_error_exits_2(capsys):
    assert main(["train"]) == 2


def test_invalid_config_exits_2(workspace, tmp_path):
    bad = write_json(tmp_path / "bad.json", {"variant": "global", "H": 15, "W": 64, "P": 8})
    manifest = workspace / "corpus" / "manifest.jsonl"
    code = main(["train", "--model", str(bad), "--train", str(manifest), "--out", str(tmp_path / "o")])
    assert code == 2


def test_train_eval_recognize_bench(workspace, tmp_path, capsys):
    manifest = str(workspace / "corpus" / "manifest.jsonl")
    for variant in ("global", "ctc"):
        args = ["train", "--model", str(workspace / f"{variant}.json"), "--train", manifest, "--dev", manifest,
                "--hp", str(workspace / "hp.json"), "--out", str(tmp_path / variant), "--json"]
        assert main(args) == 0
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert out["sha256"] == hashlib.sha256((tmp_path / variant / "model.ckpt").read_bytes()).hexdigest()
        assert (tmp_path / variant / "metrics.jsonl").exists()

    ved = str(tmp_path / "global" / "model.ckpt")
    ctc = str(tmp_path / "ctc" / "model.ckpt")
    assert main(["eval", "--model", ved, "--manifest", manifest, "--metric", "cer", "--json"]) == 0
    res = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert res["metric"] == "cer" and res["samples"] == 6

    img = str(workspace / "corpus" / "images" / "000000.pgm")
    assert main(["recognize", "--model", ved, "--image", img]) == 0
    first = capsys.readouterr().out
    assert main(["recognize", "--model", ved, "--image", img]) == 0
    assert capsys.readouterr().out == first

    assert main(["recognize", "--model", ved, "--variant", "ctc", "--image", img]) == 2
    assert "ctc" in capsys.readouterr().err
    assert main(["recognize", "--model", ved, "--image", str(tmp_path / "missing.pgm")]) == 3

    report = tmp_path / "bench.json"
    assert main(["bench", "--model", ved, "--model", ctc, "--manifests", manifest, "--out", str(report), "--json"]) == 0
    text = capsys.readouterr().out
    assert "MIDAD" in text
    rows = json.loads(report.read_text(encoding="utf-8"))["models"]
    assert [r["variant"] for r in rows] == ["global", "ctc"]
    for r in rows:
        rep = r["report"]
        assert rep["midad_score"] == pytest.approx(np.mean([d["wer"] for d in rep["datasets"]]))


def test_pretrain_writes_log_and_checkpoint(workspace, tmp_path, capsys):
    manifest = str(workspace / "corpus" / "manifest.jsonl")
    for objective in ("mim", "mlm"):
        out = tmp_path / objective
        args = ["pretrain", "--objective", objective, "--model", str(workspace / "global.json"), "--manifest",
                manifest, "--hp", str(workspace / "hp.json"), "--steps", "3", "--out", str(out)]
        assert main(args) == 0
        log = [json.loads(x) for x in (out / "metrics.jsonl").read_text().splitlines()]
        assert len(log) == 4 and "eval_loss_final" in log[-1]
        assert (out / "model.ckpt").exists()
    capsys.readouterr()
    code = main(["pretrain", "--objective", "mim", "--model", str(workspace / "ctc.json"), "--manifest", manifest,
                 "--out", str(tmp_path / "x")])
    assert code == 2


def test_empty_manifest_exits_4(workspace, tmp_path):
    cfg = ModelConfig(variant="ctc", H=16, W=64, P=8, D=8, ctc_channels=(4,))
    tok = Tokenizer.default()
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, cfg, tok, init_params(cfg, tok, 0))
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    assert main(["eval", "--model", str(ckpt), "--manifest", str(empty)]) == 4
    assert main(["bench", "--model", str(ckpt), "--manifests", str(empty)]) == 4


def test_perfect_recognizer_scores_zero(workspace, tmp_path, monkeypatch, capsys):
    from vedocr import cli

    cfg = ModelConfig(variant="ctc", H=16, W=64, P=8, D=8, ctc_channels=(4,))
    tok = Tokenizer.default()
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, cfg, tok, init_params(cfg, tok, 0))
    monkeypatch.setattr(cli, "evaluate_samples", lambda model, samples, batch=8: [s.text for s in samples])
    manifest = str(workspace / "corpus" / "manifest.jsonl")
    assert main(["bench", "--model", str(ckpt), "--manifests", manifest, "--json"]) == 0
    rep = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["models"][0]["report"]
    assert rep["midad_score"] == 0.0 and all(d["wer"] == 0.0 for d in rep["datasets"])


def test_config_paths_resolve_relative_to_config(workspace, tmp_path):
    sub = tmp_path / "conf"
    sub.mkdir()
    Tokenizer.default().save(sub / "vocab.txt")
    write_json(sub / "m.json", {"variant": "ctc", "H": 16, "W": 64, "P": 8, "D": 8, "ctc_channels": [4],
                                "vocab": "vocab.txt"})
    manifest = str(workspace / "corpus" / "manifest.jsonl")
    args = ["train", "--model", str(sub / "m.json"), "--train", manifest, "--hp", str(workspace / "hp.json"),
            "--out", str(tmp_path / "o")]
    assert main(args) == 0
