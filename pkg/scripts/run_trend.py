"""Train ChartNet and two baselines on the reduced pie set and record test accuracy.

    python scripts/run_trend.py [--config configs/trend-pie.yaml] [--out results/trend-pie.json]
"""

import argparse
import json
import logging
import time
from pathlib import Path

from chartnet.cli import dataset_config_from
from chartnet.config import load_config
from chartnet.dataset import DatasetManifest, build_dataset, build_vocab
from chartnet.train import Hyperparameters, evaluate, model_config_from, train

MODELS = ("lstm", "cnn_lstm_sa", "chartnet")
REPO = Path(__file__).resolve().parent.parent

log = logging.getLogger("trend")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(REPO / "configs" / "trend-pie.yaml"))
    parser.add_argument("--out", default=str(REPO / "results" / "trend-pie.json"))
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    t0, c0 = time.perf_counter(), time.process_time()
    cfg = load_config(args.config, args.overrides)
    path = Path(cfg["data"]["root"]) / cfg["data"]["chart_type"] / "manifest.jsonl"
    manifest = DatasetManifest.load(path) if path.exists() else build_dataset(dataset_config_from(cfg))
    vocab = build_vocab(manifest)

    record = {"config": cfg, "n_train_charts": len(manifest.records("train")),
              "manifest_hash": manifest.content_hash(), "models": {}}
    for kind in MODELS:
        cfg["model"]["kind"] = kind
        start = time.perf_counter()
        ckpt, history = train(kind, manifest, vocab, Hyperparameters.from_config(cfg), model_config_from(cfg),
                              Path(cfg["train"]["out_dir"]) / kind, cfg["data"]["max_question_length"],
                              on_epoch=lambda row, k=kind: log.info("%s %s", k, row))
        test = evaluate(ckpt, manifest, "test", cfg["eval"]["threshold"], cfg["train"]["eval_batch_size"])
        record["models"][kind] = {"best_epoch": ckpt.epoch, "val": ckpt.val_metrics, "test": test.to_dict(),
                                  "seconds": time.perf_counter() - start}
        log.info("%s test generic accuracy %.4f", kind, test.generic_accuracy)

    record["wall_seconds"] = time.perf_counter() - t0
    record["cpu_seconds"] = time.process_time() - c0
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(record, indent=1) + "\n")
    print(json.dumps({k: v["test"]["generic_accuracy"] for k, v in record["models"].items()}))


if __name__ == "__main__":
    main()
