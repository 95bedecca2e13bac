"""Training loop, checkpoints and evaluation for ChartNet and the baselines."""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .baselines import BaselineConfig, BaselineKind, make_baseline
from .dataset import DatasetManifest, SplitArrays, Vocab, build_vocab, load_split_arrays
from .errors import CorruptManifest, DegenerateBox, IoFailure, NonFiniteLoss, VocabMismatch
from .mac import ChartNet, ChartNetConfig, ModelOutput
from .metrics import Metrics, iou, repair_box, summarize
from .qa import GENERIC, oracle_answer, parse_question

log = logging.getLogger(__name__)

MODEL_KINDS = ("chartnet",) + tuple(k.value for k in BaselineKind)
HEAD_MODES = ("joint", "generic", "regression")


@dataclass
class Hyperparameters:
    batch_size: int = 128
    learning_rate: float = 1e-5
    epochs: int = 25
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: Optional[float] = None
    head_mode: str = "joint"
    eval_batch_size: int = 256
    threshold: float = 0.8

    def __post_init__(self):
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs nonnegative")

    @classmethod
    def from_config(cls, cfg: dict) -> "Hyperparameters":
        t = cfg["train"]
        return cls(t["batch_size"], t["learning_rate"], t["epochs"], t["seed"], t["beta1"], t["beta2"],
                   t["adam_eps"], t["grad_clip"], t["head_mode"], t["eval_batch_size"], cfg["eval"]["threshold"])


def model_config_from(cfg: dict) -> dict:
    """The architecture-relevant part of a run config."""
    m, d = cfg["model"], cfg["data"]
    out = {k: m[k] for k in ("embed_dim", "hidden", "kb_dim", "p", "share_cell_weights", "head_hidden",
                             "backbone", "backbone_channels", "pretrained_weights", "baseline_hidden",
                             "lstm_mlp_hidden", "attention_dim")}
    out["input_resolution"] = d["input_resolution"]
    return out


def build_model(kind: str, vocab: Vocab, model_cfg: Optional[dict] = None) -> nn.Module:
    model_cfg = dict(model_cfg or {})
    common = dict(vocab_size=len(vocab.question_tokens), n_answers=len(vocab.answer_tokens))
    if kind == "chartnet":
        keys = set(ChartNetConfig.__dataclass_fields__)
        cfg = ChartNetConfig(**common, **{k: v for k, v in model_cfg.items() if k in keys})
        cfg.backbone_channels = tuple(cfg.backbone_channels)
        return ChartNet(cfg)
    if kind in (k.value for k in BaselineKind):
        if "baseline_hidden" in model_cfg:
            model_cfg["mlp_hidden"] = model_cfg["baseline_hidden"]
        keys = set(BaselineConfig.__dataclass_fields__)
        cfg = BaselineConfig(**common, **{k: v for k, v in model_cfg.items() if k in keys})
        cfg.backbone_channels = tuple(cfg.backbone_channels)
        return make_baseline(kind, cfg)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


@dataclass
class Checkpoint:
    kind: str
    model_config: dict
    state_dict: dict
    vocab: Vocab
    epoch: int = 0
    hyper: dict = field(default_factory=dict)
    val_metrics: dict = field(default_factory=dict)
    chart_type: str = ""
    max_question_length: int = 24

    @property
    def vocab_hash(self) -> str:
        return self.vocab.hash()

    @property
    def input_resolution(self) -> int:
        return int(self.model_config.get("input_resolution", 224))

    def model(self) -> nn.Module:
        m = build_model(self.kind, self.vocab, self.model_config)
        m.load_state_dict(self.state_dict)
        m.eval()
        return m

    def save(self, path) -> None:
        blob = {
            "kind": self.kind,
            "model_config": self.model_config,
            "state_dict": self.state_dict,
            "vocab": self.vocab.to_dict(),
            "vocab_hash": self.vocab_hash,
            "epoch": self.epoch,
            "hyper": self.hyper,
            "val_metrics": self.val_metrics,
            "chart_type": self.chart_type,
            "max_question_length": self.max_question_length,
        }
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            torch.save(blob, path)
        except OSError as exc:
            raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except FileNotFoundError as exc:
            raise IoFailure(f"no checkpoint at {path}") from exc
        vocab = Vocab(dict(blob["vocab"]["question_tokens"]), dict(blob["vocab"]["answer_tokens"]))
        if vocab.hash() != blob["vocab_hash"]:
            raise VocabMismatch("checkpoint vocabulary does not match its recorded hash")
        return cls(blob["kind"], blob["model_config"], blob["state_dict"], vocab, blob["epoch"], blob["hyper"],
                   blob["val_metrics"], blob["chart_type"], blob["max_question_length"])


# ---------------------------------------------------------------- batching

def _images(arrays: SplitArrays, idx: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    pixels = arrays.images[arrays.image_index[idx]]
    return torch.from_numpy(pixels).to(dtype) / 255.0


def _forward(model: nn.Module, arrays: SplitArrays, idx: np.ndarray) -> ModelOutput:
    images = None
    if getattr(model, "needs_image", True):
        dtype = next(model.parameters()).dtype
        images = _images(arrays, idx, dtype)
    tokens = torch.from_numpy(arrays.token_ids[idx])
    meta = {"chart_ids": [arrays.chart_ids[i] for i in idx], "qa_index": arrays.qa_index[idx]}
    return model(images, tokens, meta)


def batch_loss(out: ModelOutput, arrays: SplitArrays, idx: np.ndarray, head_mode: str = "joint"):
    """Cross-entropy over generic rows plus MSE over chart-specific rows.

    Generic rows whose answer is outside the vocabulary carry no class
    target and are skipped.
    """
    generic = torch.from_numpy(arrays.is_generic[idx])
    classes = torch.from_numpy(arrays.class_ids[idx])
    cls_rows = generic & (classes >= 0)
    box_rows = ~generic
    loss = out.logits.new_zeros(())
    if head_mode in ("joint", "generic") and bool(cls_rows.any()):
        loss = loss + F.cross_entropy(out.logits[cls_rows], classes[cls_rows])
    if head_mode in ("joint", "regression") and out.boxes is not None and bool(box_rows.any()):
        target = torch.from_numpy(arrays.boxes[idx]).to(out.boxes.dtype)
        loss = loss + F.mse_loss(out.boxes[box_rows], target[box_rows])
    return loss


def _box_ious(pred: np.ndarray, target: np.ndarray) -> tuple[list[float], int]:
    ious, repaired = [], 0
    for p, t in zip(pred, target):
        box, fixed = repair_box(p)
        repaired += int(fixed)
        try:
            ious.append(iou(box, t))
        except DegenerateBox:
            ious.append(0.0)
    return ious, repaired


@torch.no_grad()
def predict_arrays(model: nn.Module, arrays: SplitArrays, batch_size: int = 256):
    """Predicted class ids, boxes (or None) and mean loss over ``arrays``."""
    model.eval()
    classes, boxes, losses, weights = [], [], [], []
    for start in range(0, len(arrays), batch_size):
        idx = np.arange(start, min(start + batch_size, len(arrays)))
        out = _forward(model, arrays, idx)
        classes.append(out.logits.argmax(dim=-1).numpy())
        if out.boxes is not None:
            boxes.append(out.boxes.double().numpy())
        losses.append(batch_loss(out, arrays, idx).item())
        weights.append(len(idx))
    pred = np.concatenate(classes) if classes else np.zeros(0, np.int64)
    pred_boxes = np.concatenate(boxes) if boxes else None
    mean_loss = float(np.average(losses, weights=weights)) if losses else float("nan")
    return pred, pred_boxes, mean_loss


def score(arrays: SplitArrays, pred: np.ndarray, pred_boxes: Optional[np.ndarray], threshold: float = 0.8,
          with_boxes: bool = True) -> Metrics:
    g = arrays.is_generic
    correct = (pred[g] == arrays.class_ids[g]) & (arrays.class_ids[g] >= 0)
    gen_templates = [t for t, k in zip(arrays.template_ids, g) if k]
    if not with_boxes or pred_boxes is None:
        return summarize(correct, gen_templates, threshold=threshold)
    s = ~g
    ious, repaired = _box_ious(pred_boxes[s], arrays.boxes[s])
    box_templates = [t for t, k in zip(arrays.template_ids, s) if k]
    return summarize(correct, gen_templates, ious, threshold, repaired, box_templates)


def evaluate_arrays(model: nn.Module, arrays: SplitArrays, threshold: float = 0.8,
                    batch_size: int = 256) -> tuple[Metrics, float]:
    if not getattr(model, "has_regression", False):
        arrays = arrays.subset(arrays.is_generic)
    pred, pred_boxes, loss = predict_arrays(model, arrays, batch_size)
    return score(arrays, pred, pred_boxes, threshold, getattr(model, "has_regression", False)), loss


# ---------------------------------------------------------------- training

def _better(candidate: Metrics, best: Optional[Metrics]) -> bool:
    if best is None:
        return True
    if candidate.generic_accuracy != best.generic_accuracy:
        return candidate.generic_accuracy > best.generic_accuracy
    return (candidate.mean_iou or 0.0) > (best.mean_iou or 0.0)


@dataclass
class FitResult:
    history: list[dict]
    best_epoch: int
    best_state: dict
    best_metrics: Optional[Metrics]


def fit(model: nn.Module, train_arrays: SplitArrays, hyper: Hyperparameters,
        val_arrays: Optional[SplitArrays] = None,
        on_epoch: Optional[Callable[[dict], Optional[bool]]] = None) -> FitResult:
    """Adam over shuffled minibatches; keeps the parameters of the best
    validation epoch (the last epoch when there is no validation split).

    ``on_epoch`` receives each history row and may return True to stop early.
    """
    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    if not getattr(model, "has_regression", False):
        train_arrays = train_arrays.subset(train_arrays.is_generic)
        if val_arrays is not None:
            val_arrays = val_arrays.subset(val_arrays.is_generic)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=hyper.learning_rate, betas=(hyper.beta1, hyper.beta2), eps=hyper.adam_eps)

    history: list[dict] = []
    best_metrics, best_epoch, best_state = None, 0, _copy_state(model)
    n = len(train_arrays)
    for epoch in range(1, hyper.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, hyper.batch_size)):
            idx = np.sort(order[start:start + hyper.batch_size])
            out = _forward(model, train_arrays, idx)
            loss = batch_loss(out, train_arrays, idx, hyper.head_mode)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss {loss.item()} in epoch {epoch}", batch_id=b)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if hyper.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, hyper.grad_clip)
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "train_loss": total / max(seen, 1)}
        if val_arrays is not None and len(val_arrays):
            metrics, val_loss = evaluate_arrays(model, val_arrays, hyper.threshold, hyper.eval_batch_size)
            row.update(val_loss=val_loss, val_accuracy=metrics.generic_accuracy, val_mean_iou=metrics.mean_iou)
            if _better(metrics, best_metrics):
                best_metrics, best_epoch, best_state = metrics, epoch, _copy_state(model)
        else:
            row.update(val_loss=None, val_accuracy=None, val_mean_iou=None)
            best_epoch, best_state = epoch, _copy_state(model)
        row["seconds"] = time.perf_counter() - t0
        history.append(row)
        log.info("epoch %d %s", epoch, {k: v for k, v in row.items() if k != "epoch"})
        if on_epoch and on_epoch(row):
            break
    return FitResult(history, best_epoch, best_state, best_metrics)


def _copy_state(model: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_accuracy", "val_mean_iou", "seconds")


def write_history(history: list[dict], path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
            w.writeheader()
            for row in history:
                w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in HISTORY_FIELDS})
    except OSError as exc:
        raise IoFailure(f"cannot write history {path}: {exc}") from exc


def train(model_kind: str, manifest: DatasetManifest, vocab: Vocab, hyper: Hyperparameters,
          model_cfg: Optional[dict] = None, out_dir=None, max_question_length: int = 24,
          on_epoch=None) -> tuple[Checkpoint, list[dict]]:
    """Train on the manifest's train split, select on val, and optionally
    write ``checkpoint.pt`` and ``history.csv`` to ``out_dir``."""
    if build_vocab(manifest).hash() != vocab.hash():
        raise VocabMismatch("vocabulary was not built from this manifest's train split")
    model_cfg = dict(model_cfg or {})
    torch.manual_seed(hyper.seed)
    model = build_model(model_kind, vocab, model_cfg)
    res = int(model_cfg.get("input_resolution", 224))
    train_arrays = load_split_arrays(manifest, vocab, "train", res, max_question_length)
    val_arrays = load_split_arrays(manifest, vocab, "val", res, max_question_length) \
        if manifest.records("val") else None
    result = fit(model, train_arrays, hyper, val_arrays, on_epoch)
    ckpt = Checkpoint(model_kind, model_cfg, result.best_state, vocab, result.best_epoch, asdict(hyper),
                      result.best_metrics.to_dict() if result.best_metrics else {}, manifest.chart_type,
                      max_question_length)
    if out_dir is not None:
        out = Path(out_dir)
        ckpt.save(out / "checkpoint.pt")
        write_history(result.history, out / "history.csv")
    return ckpt, result.history


def evaluate(checkpoint: Checkpoint, manifest: DatasetManifest, split: str = "test",
             threshold: float = 0.8, batch_size: int = 256) -> Metrics:
    if build_vocab(manifest).hash() != checkpoint.vocab_hash:
        raise VocabMismatch("checkpoint vocabulary differs from the dataset's vocabulary")
    model = checkpoint.model()
    arrays = load_split_arrays(manifest, checkpoint.vocab, split, checkpoint.input_resolution,
                               checkpoint.max_question_length)
    metrics, _ = evaluate_arrays(model, arrays, threshold, batch_size)
    return metrics


# ---------------------------------------------------------------- oracle

class OracleModel(nn.Module):
    """Emits ground truth looked up from a manifest; an upper bound for
    evaluation and a known-truth stand-in for ``ask``."""

    kind = "oracle"
    has_regression = True
    needs_image = False

    def __init__(self, manifest: DatasetManifest, vocab: Vocab):
        super().__init__()
        self.manifest = manifest
        self.vocab = vocab
        self._by_png = {r.image_sha256: r for r in manifest.records()}

    def forward(self, images, token_ids, meta=None) -> ModelOutput:
        if meta is None:
            raise ValueError("the oracle needs chart ids and question indices")
        n = len(meta["chart_ids"])
        logits = torch.full((n, len(self.vocab.answer_tokens)), -1e9)
        boxes = torch.full((n, 4), 0.5, dtype=torch.float64)
        for row, (cid, k) in enumerate(zip(meta["chart_ids"], meta["qa_index"])):
            ans = self.manifest.record(cid).qa_pairs[int(k)].answer
            if ans.kind == GENERIC:
                cls = self.vocab.answer_tokens.get(ans.generic_token)
                if cls is not None:
                    logits[row, cls] = 0.0
            else:
                boxes[row] = torch.tensor(ans.target_box.as_tuple(), dtype=torch.float64)
        return ModelOutput(logits, boxes)

    def record_for_png(self, png: bytes):
        rec = self._by_png.get(hashlib.sha256(png).hexdigest())
        if rec is None:
            raise CorruptManifest("image is not part of the oracle's manifest")
        return rec

    def answer(self, png: bytes, question_text: str):
        rec = self.record_for_png(png)
        q = parse_question(question_text, rec.spec.chart_type)
        return oracle_answer(rec.spec, q, rec.annotations)
