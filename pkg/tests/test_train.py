import csv

import numpy as np
import pytest
import torch

from chartnet.dataset import Vocab, load_split_arrays
from chartnet.errors import NonFiniteLoss, VocabMismatch
from chartnet.mac import ModelOutput
from chartnet.train import (Checkpoint, Hyperparameters, OracleModel, build_model, evaluate, evaluate_arrays, fit,
                            score, train)

SMALL = {"input_resolution": 64, "backbone_channels": [8, 16, 16], "embed_dim": 16, "hidden": 16, "kb_dim": 16,
         "p": 2, "head_hidden": 32, "baseline_hidden": 32, "lstm_mlp_hidden": 32, "attention_dim": 16}
HYPER = Hyperparameters(batch_size=16, learning_rate=1e-3, epochs=2, seed=7)


def test_seeded_training_is_reproducible(tmp_path, bar_dataset):
    manifest, vocab = bar_dataset
    a, hist_a = train("chartnet", manifest, vocab, HYPER, SMALL, tmp_path / "a")
    b, hist_b = train("chartnet", manifest, vocab, HYPER, SMALL, tmp_path / "b")
    assert [r["train_loss"] for r in hist_a] == [r["train_loss"] for r in hist_b]
    assert [r["val_loss"] for r in hist_a] == [r["val_loss"] for r in hist_b]
    for k in a.state_dict:
        assert torch.equal(a.state_dict[k], b.state_dict[k])
    with open(tmp_path / "a" / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert {"epoch", "train_loss", "val_loss", "val_accuracy", "val_mean_iou"} <= set(rows[0])


def test_checkpoint_round_trip_and_evaluation(tmp_path, bar_dataset):
    manifest, vocab = bar_dataset
    ckpt, hist = train("cnn_lstm_sa", manifest, vocab, HYPER, SMALL, tmp_path)
    loaded = Checkpoint.load(tmp_path / "checkpoint.pt")
    assert loaded.kind == "cnn_lstm_sa" and loaded.vocab == vocab and 1 <= loaded.epoch <= 2
    m1 = evaluate(ckpt, manifest, "test")
    m2 = evaluate(loaded, manifest, "test")
    assert m1 == m2
    assert m1.n_generic == 32 and m1.n_chart_specific == 0 and m1.mean_iou is None


def test_best_epoch_is_selected_on_validation(bar_dataset):
    manifest, vocab = bar_dataset
    model = build_model("lstm", vocab, SMALL)
    tr = load_split_arrays(manifest, vocab, "train", 64)
    va = load_split_arrays(manifest, vocab, "val", 64)
    res = fit(model, tr, Hyperparameters(batch_size=8, learning_rate=3e-3, epochs=4, seed=1), va)
    best = max(r["val_accuracy"] for r in res.history)
    assert res.history[res.best_epoch - 1]["val_accuracy"] == best
    assert res.best_epoch == min(r["epoch"] for r in res.history if r["val_accuracy"] == best)


def test_vocab_mismatch(tmp_path, bar_dataset, pie_dataset):
    manifest, vocab = bar_dataset
    ckpt, _ = train("lstm", manifest, vocab, Hyperparameters(epochs=1), SMALL)
    with pytest.raises(VocabMismatch):
        evaluate(ckpt, pie_dataset[0], "test")
    other = Vocab(dict(vocab.question_tokens, extra=len(vocab.question_tokens)), vocab.answer_tokens)
    with pytest.raises(VocabMismatch):
        train("lstm", manifest, other, Hyperparameters(epochs=1), SMALL)


class _NaNModel(torch.nn.Module):
    has_regression = True
    needs_image = False

    def __init__(self, n_answers):
        super().__init__()
        self.n_answers = n_answers
        self.w = torch.nn.Parameter(torch.zeros(1))
        self.calls = 0

    def forward(self, images, tokens, meta=None):
        self.calls += 1
        n = len(tokens)
        scale = float("nan") if self.calls == 3 else 1.0
        return ModelOutput(self.w * scale + torch.zeros(n, self.n_answers), torch.sigmoid(self.w + torch.zeros(n, 4)))


def test_non_finite_loss_names_the_batch(bar_dataset):
    manifest, vocab = bar_dataset
    tr = load_split_arrays(manifest, vocab, "train", 64)
    with pytest.raises(NonFiniteLoss) as info:
        fit(_NaNModel(len(vocab.answer_tokens)), tr, Hyperparameters(batch_size=32, epochs=1))
    assert info.value.batch_id == 2


def test_oracle_is_an_upper_bound(pie_dataset):
    manifest, vocab = pie_dataset
    arrays = load_split_arrays(manifest, vocab, "test", 32)
    metrics, _ = evaluate_arrays(OracleModel(manifest, vocab), arrays)
    # test answers outside the training vocabulary can never be produced
    reachable = arrays.class_ids[arrays.is_generic] >= 0
    assert metrics.generic_accuracy == pytest.approx(reachable.mean())
    assert metrics.mean_iou == 1.0 and metrics.acc_at_iou == 1.0
    train_arrays = load_split_arrays(manifest, vocab, "train", 32)
    metrics, _ = evaluate_arrays(OracleModel(manifest, vocab), train_arrays)
    assert metrics.generic_accuracy == 1.0 and metrics.mean_iou == 1.0


def test_uniform_random_classifier_scores_one_over_v(bar_dataset):
    manifest, vocab = bar_dataset
    arrays = load_split_arrays(manifest, vocab, "train", 32)
    n_rep = 400
    big = arrays.subset(arrays.is_generic)
    v = len(vocab.answer_tokens)
    rng = np.random.default_rng(0)
    accs = [score(big, rng.integers(0, v, len(big)), None, with_boxes=False).generic_accuracy
            for _ in range(n_rep)]
    n = len(big)
    sigma = np.sqrt((1 / v) * (1 - 1 / v) / (n * n_rep))
    assert abs(np.mean(accs) - 1 / v) < 3 * sigma


def test_evaluation_ignores_example_order(bar_dataset):
    manifest, vocab = bar_dataset
    torch.manual_seed(0)
    model = build_model("chartnet", vocab, SMALL)
    arrays = load_split_arrays(manifest, vocab, "val", 64)
    perm = np.random.default_rng(3).permutation(len(arrays))
    shuffled = arrays.subset(np.ones(len(arrays), bool))
    for name in ("image_index", "token_ids", "is_generic", "class_ids", "boxes", "qa_index"):
        setattr(shuffled, name, getattr(arrays, name)[perm])
    shuffled.chart_ids = [arrays.chart_ids[i] for i in perm]
    shuffled.template_ids = [arrays.template_ids[i] for i in perm]
    a, _ = evaluate_arrays(model, arrays)
    b, _ = evaluate_arrays(model, shuffled)
    assert a.generic_accuracy == b.generic_accuracy
    assert a.mean_iou == pytest.approx(b.mean_iou, abs=1e-9)


def test_unknown_model_kind(bar_dataset):
    with pytest.raises(ValueError):
        build_model("resnet", bar_dataset[1])
    with pytest.raises(ValueError):
        Hyperparameters(head_mode="both")
