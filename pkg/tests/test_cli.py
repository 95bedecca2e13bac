import json
import sys

import pytest

from chartnet.charts import COLOR_NAMES
from chartnet.cli import run_cli

GEN = ["--set", "data.n_train=4", "--set", "data.n_val=2", "--set", "data.n_test=2", "--set",
       "data.render_resolution=224"]
SMALL = ["--set", "data.input_resolution=64", "--set", "model.backbone_channels=[8,16,16]", "--set",
         "model.p=2", "--set", "model.hidden=16", "--set", "model.kb_dim=16", "--set", "model.head_hidden=16",
         "--set", "train.epochs=1", "--set", "train.batch_size=16", "--set", "train.learning_rate=1e-3"]


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    return root, ["--set", f"data.root={root}"] + GEN


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_gen_is_deterministic(generated, capsys):
    root, args = generated
    assert run_cli(["gen"] + args) == 0
    first = _json(capsys)
    assert run_cli(["gen"] + args) == 0
    second = _json(capsys)
    assert first["manifest_hash"] == second["manifest_hash"]
    assert first["images_hash"] == second["images_hash"]
    assert first["qa_pairs"] == {"train": 40, "val": 20, "test": 20}


def test_ask_with_the_oracle(generated, capsys):
    root, args = generated
    from chartnet.dataset import DatasetManifest
    manifest = DatasetManifest.load(root / "bar" / "manifest.jsonl")
    rec = manifest.records("test")[0]
    heights = rec.spec.values()
    expected = rec.spec.bars[heights.index(max(heights))].color
    image = str(manifest.image_file(rec))
    code = run_cli(["ask", "--checkpoint", str(root / "bar" / "manifest.jsonl"), "--image", image,
                    "--question", "What is the color of the highest bar?"])
    assert code == 0
    assert capsys.readouterr().out.strip() == expected


def test_ask_chart_specific_writes_crop_and_calls_ocr(generated, tmp_path, capsys, monkeypatch):
    root, args = generated
    from chartnet.dataset import DatasetManifest
    manifest = DatasetManifest.load(root / "bar" / "manifest.jsonl")
    rec = manifest.records("val")[1]
    color = rec.spec.bars[0].color
    hook = tmp_path / "ocr.py"
    hook.write_text("import sys\nfrom PIL import Image\nprint('read', Image.open(sys.argv[1]).size)\n")
    monkeypatch.setenv("CHARTNET_OCR_CMD", f"{sys.executable} {hook}")
    crop = tmp_path / "crop.png"
    code = run_cli(["ask", "--checkpoint", str(root / "bar" / "manifest.jsonl"), "--image",
                    str(manifest.image_file(rec)), "--question", f"What is the label of the {color} color bar?",
                    "--out", str(crop)])
    assert code == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("box: ") and out[1] == f"crop: {crop}"
    assert out[2].startswith("text: read (")
    assert crop.exists()


def test_train_eval_and_ask_with_a_model(generated, tmp_path, capsys):
    root, args = generated
    run = tmp_path / "run"
    assert run_cli(["train"] + args + SMALL + ["--out", str(run)]) == 0
    summary = _json(capsys)
    assert (run / "checkpoint.pt").exists() and (run / "history.csv").exists()
    assert summary["epochs"] == 1
    report_path = tmp_path / "metrics.json"
    assert run_cli(["eval"] + args + SMALL + ["--checkpoint", str(run / "checkpoint.pt"), "--out",
                                              str(report_path)]) == 0
    report = _json(capsys)
    assert report == json.loads(report_path.read_text())
    assert report["n_generic"] == 16 and report["n_chart_specific"] == 4
    image = next((root / "bar" / "images").glob("*.png"))
    trace = tmp_path / "trace.json"
    assert run_cli(["ask", "--checkpoint", str(run / "checkpoint.pt"), "--image", str(image), "--question",
                    "What is the color of the lowest bar?", "--trace", str(trace)]) == 0
    assert capsys.readouterr().out.strip() in COLOR_NAMES + ("yes", "no")
    dumped = json.loads(trace.read_text())
    assert len(dumped["word_attention"]) == 2 and len(dumped["spatial_attention"]) == 2
    assert len(dumped["spatial_attention"][0]) == (64 // 8) ** 2


def test_usage_errors_exit_2(capsys):
    assert run_cli(["frobnicate"]) == 2
    assert run_cli([]) == 2
    assert run_cli(["gen", "--set", "data.bogus=1"]) == 2
    assert run_cli(["ask", "--image", "x.png"]) == 2  # --question missing
    assert "usage" in capsys.readouterr().err


def test_runtime_failures_exit_1(tmp_path, capsys):
    assert run_cli(["eval", "--checkpoint", str(tmp_path / "missing.pt"), "--set",
                    f"data.root={tmp_path}"]) == 1
    assert "IoFailure" in capsys.readouterr().err


def test_help_lists_every_config_key(capsys):
    assert run_cli(["--help"]) == 0
    out = capsys.readouterr().out
    from chartnet.config import flat_keys
    assert all(k in out for k in flat_keys())
