"""Command-line entry point: ``python -m vedocr <command> ...``.

Exit codes: 0 success, 2 config/usage error, 3 I/O error, 4 data or
invariant violation.  Data goes to stdout, logs to stderr; ``--json`` ends
the output with one machine-readable JSON line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, restore_params, save_checkpoint
from .config import ConfigError, HyperParams, ModelConfig, load_hyperparams, load_model_config, load_synth_config
from .data.images import ImageError, preprocess, read_image
from .data.manifest import ManifestError, Sample, load_images, load_manifest
from .data.synth import generate_corpus
from .decoder import warm_start
from .metrics import DatasetResult, MetricError, aggregate, cer, format_table, wer
from .models import Recognizer, build_model, init_params
from .tokenizer import Tokenizer
from .train import TrainError, pretrain_mim, pretrain_mlm, train

log = logging.getLogger("vedocr")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(args, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload, ensure_ascii=False, sort_keys=True))


def _tokenizer_for(cfg: ModelConfig) -> Tokenizer:
    if not cfg.vocab:
        return Tokenizer.default()
    try:
        return Tokenizer.load(cfg.vocab)
    except OSError as exc:
        raise CliError(f"cannot read vocabulary {cfg.vocab}: {exc}", EXIT_IO) from exc


def _manifest(path: str, allow_empty: bool = False) -> list[Sample]:
    try:
        samples = load_manifest(path)
    except OSError as exc:
        raise CliError(f"cannot read manifest {path}: {exc}", EXIT_IO) from exc
    if not samples and not allow_empty:
        raise CliError(f"manifest {path} is empty", EXIT_DATA)
    return samples


def _hyperparams(args) -> HyperParams:
    hp = load_hyperparams(args.hp) if args.hp else HyperParams()
    if args.seed is not None:
        hp = replace(hp, seed=args.seed)
    return hp


def load_model(path: str, variant: str | None = None) -> Recognizer:
    """Rebuild a recognizer from a checkpoint, optionally checking its variant."""
    ckpt = load_checkpoint(path)
    if variant is not None and ckpt.config.variant != variant:
        raise CliError(
            f"checkpoint {path} holds a {ckpt.config.variant!r} model but --variant {variant!r} was requested",
            EXIT_CONFIG,
        )
    tok = Tokenizer(ckpt.vocab)
    params = restore_params(init_params(ckpt.config, tok, 0), ckpt.tensors)
    return build_model(ckpt.config, tok, params=params)


def _check_vocab(tok: Tokenizer, samples: list[Sample]) -> None:
    for s in samples:
        bad = sorted({c for c in s.text if c not in tok})
        if bad:
            raise CliError(f"{s.image_path}: text uses symbols outside the vocabulary: {bad}", EXIT_DATA)


# ------------------------------------------------------------------ commands
def cmd_synth(args) -> int:
    cfg = load_synth_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    try:
        manifest = generate_corpus(cfg, args.out)
    except OSError as exc:
        raise CliError(f"cannot write corpus to {args.out}: {exc}", EXIT_IO) from exc
    print(f"{manifest}\t{cfg.count}")
    _emit(args, {"manifest": str(manifest), "count": cfg.count})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_model_config(args.model)
    hp = _hyperparams(args)
    tok = _tokenizer_for(cfg)
    train_samples = _manifest(args.train)
    dev_samples = _manifest(args.dev, allow_empty=True) if args.dev else []
    _check_vocab(tok, train_samples + dev_samples)
    model = build_model(cfg, tok, seed=hp.seed)
    if args.init:
        pre = load_model(args.init)
        if pre.cfg.to_dict() != cfg.to_dict():
            raise CliError(f"--init checkpoint config does not match {args.model}", EXIT_CONFIG)
        loaded = warm_start(model.params, {k: p.data for k, p in pre.params.items()}, np.random.default_rng(hp.seed))
        log.info("warm start from %s; loaded %d tensors", args.init, len(loaded))
    result = train(model, train_samples, dev_samples, hp, args.out, eval_every=args.eval_every)
    last = result.history[-1] if result.history else {}
    print(f"checkpoint\t{result.checkpoint}")
    print(f"best_epoch\t{result.best_epoch}")
    print(f"best_dev_wer\t{result.best_dev_wer}")
    _emit(args, {
        "checkpoint": str(result.checkpoint),
        "metrics_log": str(result.metrics_log),
        "best_epoch": result.best_epoch,
        "best_dev_wer": result.best_dev_wer,
        "final_train_loss": last.get("train_loss"),
        "sha256": result.checkpoint_sha256,
    })
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = load_model_config(args.model)
    if cfg.variant == "ctc":
        raise CliError("pretraining applies to encoder-decoder variants, not ctc", EXIT_CONFIG)
    hp = _hyperparams(args)
    tok = _tokenizer_for(cfg)
    samples = _manifest(args.manifest)
    model = build_model(cfg, tok, seed=hp.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_IO) from exc
    log_path = out / "metrics.jsonl"
    if args.objective == "mim":
        images = load_images(samples, cfg.H, cfg.W, cfg.P, model.dtype)
        res = pretrain_mim(model, images, args.steps, hp, args.mask_ratio, log_path)
    else:
        _check_vocab(tok, samples)
        res = pretrain_mlm(model, [s.text for s in samples], args.steps, hp, args.mask_prob, log_path)
    params = {k: v for k, v in model.params.items() if not k.startswith("mim.")}
    extra = {"objective": args.objective, "steps": args.steps, "initial_loss": res.initial_loss,
             "final_loss": res.final_loss, "hyperparams": hp.to_dict()}
    sha = save_checkpoint(out / "model.ckpt", cfg, tok, params, extra)
    print(f"initial_loss\t{res.initial_loss:.6f}")
    print(f"final_loss\t{res.final_loss:.6f}")
    _emit(args, {"checkpoint": str(out / "model.ckpt"), "metrics_log": str(log_path), "sha256": sha,
                 "initial_loss": res.initial_loss, "final_loss": res.final_loss})
    return EXIT_OK


def _score_fn(metric: str):
    return wer if metric == "wer" else cer


def evaluate_samples(model: Recognizer, samples: list[Sample], batch: int = 8) -> list[str]:
    cfg = model.cfg
    return model.predict(load_images(samples, cfg.H, cfg.W, cfg.P, model.dtype), batch=batch)


def cmd_eval(args) -> int:
    model = load_model(args.model, args.variant)
    samples = _manifest(args.manifest)
    hyps = evaluate_samples(model, samples, args.batch)
    score = _score_fn(args.metric)
    per = [100.0 * score(s.text, h) for s, h in zip(samples, hyps)]
    for s, h, v in zip(samples, hyps, per):
        print(f"{s.image_path}\t{v:.2f}\t{s.text}\t{h}")
    mean = float(np.mean(per))
    print(f"{args.metric.upper()}\t{mean:.2f}")
    _emit(args, {"metric": args.metric, "score": mean, "samples": len(samples)})
    return EXIT_OK


def bench_report(model: Recognizer, manifests: list[str], batch: int = 8):
    """Per-dataset WER/CER (percent) over every dataset named in the manifests."""
    groups: dict[str, list[Sample]] = {}
    for m in manifests:
        for s in _manifest(m):
            groups.setdefault(s.dataset, []).append(s)
    results = []
    for name, samples in groups.items():
        clusters = {s.cluster for s in samples}
        if len(clusters) != 1:
            raise CliError(f"dataset {name!r} spans clusters {sorted(clusters)}", EXIT_DATA)
        hyps = evaluate_samples(model, samples, batch)
        w = 100.0 * float(np.mean([wer(s.text, h) for s, h in zip(samples, hyps)]))
        c = 100.0 * float(np.mean([cer(s.text, h) for s, h in zip(samples, hyps)]))
        results.append(DatasetResult(name, clusters.pop(), w, c, len(samples)))
    return aggregate(results)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def cmd_bench(args) -> int:
    rows = []
    for path in args.model:
        model = load_model(path, args.variant)
        report = bench_report(model, args.manifests, args.batch)
        rows.append({"model": path, "variant": model.cfg.variant, "report": report.to_dict()})
        if len(args.model) == 1:
            print(report.to_text())
    if len(rows) > 1:
        names = [d["name"] for d in rows[0]["report"]["datasets"]]
        table = [("model", "variant", *names, "HWR", "OCR", "MIDAD")]
        for r in rows:
            rep = r["report"]
            cells = [_fmt(d["wer"]) for d in rep["datasets"]]
            table.append((r["model"], r["variant"], *cells,
                          _fmt(rep["hwr_score"]), _fmt(rep["ocr_score"]), _fmt(rep["midad_score"])))
        print(format_table(table))
    if args.out:
        try:
            Path(args.out).write_text(json.dumps({"models": rows}, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from exc
    _emit(args, {"models": rows})
    return EXIT_OK


def recognize(model: Recognizer, image_path: str | Path) -> str:
    cfg = model.cfg
    img = preprocess(read_image(image_path), cfg.H, cfg.W, cfg.P)
    return model.predict(img[None].astype(model.dtype), batch=1)[0]


def cmd_recognize(args) -> int:
    model = load_model(args.model, args.variant)
    texts = []
    for path in args.image:
        texts.append(recognize(model, path))
        print(texts[-1])
    _emit(args, {"images": args.image, "texts": texts})
    return EXIT_OK


# ------------------------------------------------------------------- parsing
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override every configured seed")
    common.add_argument("--json", action="store_true", help="end output with one JSON line")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vedocr", description="Transformer OCR for Arabic script at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic corpus")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="supervised training")
    s.add_argument("--model", required=True, help="model config JSON")
    s.add_argument("--train", required=True, help="training manifest")
    s.add_argument("--dev", help="dev manifest")
    s.add_argument("--hp", help="hyperparameter JSON")
    s.add_argument("--init", help="pretrained checkpoint to warm-start from")
    s.add_argument("--eval-every", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("pretrain", parents=[common], help="MIM or MLM pretraining")
    s.add_argument("--objective", choices=("mim", "mlm"), required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--hp", help="hyperparameter JSON")
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--mask-ratio", type=float, default=0.5)
    s.add_argument("--mask-prob", type=float, default=0.15)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    for name, fn in (("eval", cmd_eval), ("bench", cmd_bench), ("recognize", cmd_recognize)):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--variant", choices=("global", "windowed", "ctc"), help="fail unless the checkpoint matches")
        s.set_defaults(func=fn)
        if name == "eval":
            s.add_argument("--model", required=True)
            s.add_argument("--manifest", required=True)
            s.add_argument("--metric", choices=("wer", "cer"), default="wer")
            s.add_argument("--batch", type=int, default=8)
        elif name == "bench":
            s.add_argument("--model", required=True, action="append", help="repeat to compare models")
            s.add_argument("--manifests", required=True, nargs="+")
            s.add_argument("--batch", type=int, default=8)
            s.add_argument("--out", help="also write the report JSON here")
        else:
            s.add_argument("--model", required=True)
            s.add_argument("--image", required=True, nargs="+")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        msg, code = str(exc), exc.code
    except ConfigError as exc:
        msg, code = f"config error: {exc}", EXIT_CONFIG
    except (ImageError, OSError) as exc:
        msg, code = f"I/O error: {exc}", EXIT_IO
    except CheckpointError as exc:
        msg = f"checkpoint error: {exc}"
        code = EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_DATA
    except (ManifestError, MetricError, TrainError, ValueError) as exc:
        msg, code = f"data error: {exc}", EXIT_DATA
    print(f"vedocr: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
