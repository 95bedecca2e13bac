"""Command-line entry point: ``chartnet {gen,train,eval,ask}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shlex
import subprocess
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from .config import ConfigError, describe, load_config
from .dataset import DatasetConfig, DatasetManifest, Vocab, build_dataset, image_hashes, load_image
from .errors import ChartNetError
from .qa import CHART_SPECIFIC, GENERIC, question_kind
from .train import Checkpoint, Hyperparameters, OracleModel, evaluate, model_config_from, train

log = logging.getLogger("chartnet")

OCR_ENV = "CHARTNET_OCR_CMD"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chartnet", description="Chart question answering: data, training and queries.",
                     epilog=describe(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="{gen,train,eval,ask}", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, epilog=describe(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        return p

    add("gen", "generate charts, images and question-answer pairs")
    p = add("train", "train a model on a generated dataset")
    p.add_argument("--out", help="run directory (default: train.out_dir)")
    p = add("eval", "evaluate a checkpoint and print metrics as JSON")
    p.add_argument("--checkpoint", help="checkpoint file (default: eval.checkpoint)")
    p.add_argument("--out", help="also write the metrics JSON here")
    p = add("ask", "answer one question about one chart image")
    p.add_argument("--checkpoint", help="checkpoint file, or a manifest.jsonl for the ground-truth oracle")
    p.add_argument("--image", required=True, help="chart PNG")
    p.add_argument("--question", required=True, help="question text")
    p.add_argument("--out", help="where to write the answer-region crop (default: answer_crop.png)")
    p.add_argument("--trace", help="write per-step word and spatial attention as JSON here")
    return parser


def dataset_config_from(cfg: dict) -> DatasetConfig:
    d = cfg["data"]
    return DatasetConfig(root=d["root"], chart_type=d["chart_type"], n_train=d["n_train"], n_val=d["n_val"],
                         n_test=d["n_test"], seed=d["seed"], render_resolution=d["render_resolution"],
                         min_elements=d["min_elements"], max_elements=d["max_elements"])


def _manifest_path(cfg: dict) -> Path:
    return Path(cfg["data"]["root"]) / cfg["data"]["chart_type"] / "manifest.jsonl"


def images_digest(manifest: DatasetManifest) -> str:
    """One hash over every image hash, in chart id order."""
    h = hashlib.sha256()
    for cid, digest in sorted(image_hashes(manifest).items()):
        h.update(f"{cid}:{digest}\n".encode())
    return h.hexdigest()


def cmd_gen(cfg, args, out) -> int:
    manifest = build_dataset(dataset_config_from(cfg))
    summary = {
        "manifest": str(_manifest_path(cfg)),
        "manifest_hash": manifest.content_hash(),
        "images_hash": images_digest(manifest),
        "charts": {s: len(manifest.records(s)) for s in manifest.splits},
        "qa_pairs": {s: manifest.qa_count(s) for s in manifest.splits},
    }
    print(json.dumps(summary, indent=1), file=out)
    return 0


def cmd_train(cfg, args, out) -> int:
    path = _manifest_path(cfg)
    manifest = DatasetManifest.load(path)
    vocab = Vocab.load(path.parent / "vocab.json")
    out_dir = Path(args.out or cfg["train"]["out_dir"])
    ckpt, history = train(cfg["model"]["kind"], manifest, vocab, Hyperparameters.from_config(cfg),
                          model_config_from(cfg), out_dir, cfg["data"]["max_question_length"])
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=1))
    print(json.dumps({"checkpoint": str(out_dir / "checkpoint.pt"), "best_epoch": ckpt.epoch,
                      "val_metrics": ckpt.val_metrics, "epochs": len(history)}, indent=1), file=out)
    return 0


def cmd_eval(cfg, args, out) -> int:
    ckpt = Checkpoint.load(args.checkpoint or cfg["eval"]["checkpoint"])
    manifest = DatasetManifest.load(_manifest_path(cfg))
    metrics = evaluate(ckpt, manifest, cfg["eval"]["split"], cfg["eval"]["threshold"],
                       cfg["train"]["eval_batch_size"])
    report = {"chart_type": manifest.chart_type, "split": cfg["eval"]["split"], "model": ckpt.kind,
              **metrics.to_dict()}
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text, file=out)
    return 0


def run_ocr(crop_path: Path) -> Optional[str]:
    """Run the configured OCR command on a crop; None when no hook is set."""
    cmd = os.environ.get(OCR_ENV)
    if not cmd:
        return None
    proc = subprocess.run(shlex.split(cmd) + [str(crop_path)], capture_output=True, text=True, check=False)
    if proc.returncode != 0:
        raise ChartNetError(f"OCR hook exited with {proc.returncode}: {proc.stderr.strip()}")
    return proc.stdout.strip()


def _crop(image_path: Path, box, out_path: Path) -> Path:
    with Image.open(image_path) as im:
        im = im.convert("RGB")
        w, h = im.size
        x0, y0, x1, y1 = box
        px = (int(np.floor(x0 * w)), int(np.floor(y0 * h)), int(np.ceil(x1 * w)), int(np.ceil(y1 * h)))
        px = (max(0, px[0]), max(0, px[1]), min(w, max(px[2], px[0] + 1)), min(h, max(px[3], px[1] + 1)))
        im.crop(px).save(out_path)
    return out_path


def _model_answer(ckpt: Checkpoint, image_path: Path, question: str, kind: str):
    model = ckpt.model()
    tokens = torch.from_numpy(ckpt.vocab.encode(question, ckpt.max_question_length)).unsqueeze(0)
    image = torch.from_numpy(load_image(image_path, ckpt.input_resolution)).float().unsqueeze(0) / 255.0
    with torch.no_grad():
        output = model(image if model.needs_image else None, tokens)
    trace = {
        "word_attention": [a[0].tolist() for a in output.word_attention],
        "spatial_attention": [a[0].tolist() for a in output.spatial_attention],
    }
    if kind == CHART_SPECIFIC and output.boxes is not None:
        return CHART_SPECIFIC, output.boxes[0].double().tolist(), trace
    return GENERIC, ckpt.vocab.answers[int(output.logits[0].argmax())], trace


def cmd_ask(cfg, args, out) -> int:
    image_path = Path(args.image)
    kind = question_kind(args.question)
    source = args.checkpoint or cfg["eval"]["checkpoint"]
    if str(source).endswith(".jsonl"):
        manifest = DatasetManifest.load(source)
        oracle = OracleModel(manifest, Vocab.load(Path(source).parent / "vocab.json"))
        answer = oracle.answer(image_path.read_bytes(), args.question)
        kind = answer.kind
        value = answer.generic_token if kind == GENERIC else list(answer.target_box.as_tuple())
        trace = {"word_attention": [], "spatial_attention": []}
    else:
        kind, value, trace = _model_answer(Checkpoint.load(source), image_path, args.question, kind)

    if args.trace:
        Path(args.trace).write_text(json.dumps({"question": args.question, **trace}))
    if kind == GENERIC:
        print(value, file=out)
        return 0
    crop = _crop(image_path, value, Path(args.out or "answer_crop.png"))
    print("box: " + " ".join(f"{v:.4f}" for v in value), file=out)
    print(f"crop: {crop}", file=out)
    text = run_ocr(crop)
    if text is not None:
        print(f"text: {text}", file=out)
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ask": cmd_ask}


def run_cli(argv: Optional[Sequence[str]] = None, out=None) -> int:
    """Parse ``argv`` and run one command; returns the process exit code."""
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("chartnet: a command is required (gen, train, eval, ask)")
        cfg = load_config(args.config, args.overrides)
    except (UsageError, ConfigError) as exc:
        print(f"{exc}\n\n{parser.format_usage()}", file=sys.stderr, end="")
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except OSError as exc:
        print(f"chartnet: cannot read config: {exc}", file=sys.stderr)
        return 2

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](cfg, args, out)
    except (ChartNetError, OSError, ValueError, RuntimeError) as exc:
        print(f"chartnet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
