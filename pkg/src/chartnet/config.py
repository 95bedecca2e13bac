"""Run configuration: documented dotted keys, YAML/JSON files and overrides.

Every key has a default here; a config file or ``--set key=value`` may only
touch keys that exist in ``DEFAULTS``.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

DEFAULTS: dict[str, dict[str, Any]] = {
    "data": {
        "root": "data",
        "chart_type": "bar",
        "n_train": 2000,
        "n_val": 500,
        "n_test": 500,
        "seed": 0,
        "render_resolution": 448,
        "min_elements": 2,
        "max_elements": 8,
        "input_resolution": 224,
        "max_question_length": 24,
    },
    "model": {
        "kind": "chartnet",
        "embed_dim": 64,
        "hidden": 128,
        "kb_dim": 64,
        "p": 6,
        "share_cell_weights": True,
        "head_hidden": 512,
        "backbone": "desk",
        "backbone_channels": [16, 32, 64, 64],
        "pretrained_weights": None,
        "baseline_hidden": 512,
        "lstm_mlp_hidden": 1024,
        "attention_dim": 256,
    },
    "train": {
        "batch_size": 128,
        "learning_rate": 1e-5,
        "epochs": 25,
        "seed": 0,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "grad_clip": None,
        "head_mode": "joint",
        "out_dir": "runs/chartnet",
        "eval_batch_size": 256,
    },
    "eval": {
        "split": "test",
        "threshold": 0.8,
        "checkpoint": "runs/chartnet/checkpoint.pt",
    },
}

DESCRIPTIONS = {
    "data.root": "dataset root directory",
    "data.chart_type": "bar | pie",
    "data.n_train": "training charts (10 questions each)",
    "data.n_val": "validation charts",
    "data.n_test": "test charts",
    "data.seed": "generation seed",
    "data.render_resolution": "canvas size of rendered PNGs",
    "data.min_elements": "fewest bars/sectors per chart",
    "data.max_elements": "most bars/sectors per chart",
    "data.input_resolution": "image size fed to the model",
    "data.max_question_length": "question token budget (padded/truncated)",
    "model.kind": "chartnet | lstm | cnn_lstm | cnn_lstm_sa",
    "model.embed_dim": "word embedding size",
    "model.hidden": "question LSTM hidden size h (MAC width is 2h)",
    "model.kb_dim": "knowledge-base depth d",
    "model.p": "MAC reasoning steps",
    "model.share_cell_weights": "one MAC cell reused at every step",
    "model.head_hidden": "hidden units of each output head",
    "model.backbone": "desk | pretrained-adapter",
    "model.backbone_channels": "desk backbone block widths (one stride-2 block each)",
    "model.pretrained_weights": "state dict for the pretrained adapter",
    "model.baseline_hidden": "MLP width of the CNN baselines",
    "model.lstm_mlp_hidden": "MLP width of the question-only baseline",
    "model.attention_dim": "stacked-attention width",
    "train.batch_size": "minibatch size",
    "train.learning_rate": "Adam learning rate",
    "train.epochs": "training epochs",
    "train.seed": "training seed",
    "train.beta1": "Adam first-moment decay",
    "train.beta2": "Adam second-moment decay",
    "train.adam_eps": "Adam epsilon",
    "train.grad_clip": "max gradient norm (null disables clipping)",
    "train.head_mode": "joint | generic | regression (which loss terms train)",
    "train.out_dir": "checkpoint / history directory",
    "train.eval_batch_size": "batch size for evaluation passes",
    "eval.split": "train | val | test",
    "eval.threshold": "IoU threshold for box accuracy",
    "eval.checkpoint": "checkpoint evaluated by eval/ask",
}


class ConfigError(ValueError):
    pass


def flat_keys() -> list[str]:
    return [f"{section}.{key}" for section, values in DEFAULTS.items() for key in values]


def _coerce(key: str, raw: Any, default: Any) -> Any:
    if isinstance(raw, str):
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for {key}: {raw!r}") from exc
    else:
        value = raw
    if isinstance(value, str) and isinstance(default, (int, float)) and not isinstance(default, bool):
        try:  # YAML 1.1 reads "1e-5" as a string
            value = float(value)
        except ValueError:
            pass
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {raw!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} expects an integer, got {raw!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {raw!r}")
        return float(value)
    if isinstance(default, list):
        if isinstance(value, (int, float)):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{key} expects a list, got {raw!r}")
        return value
    if isinstance(default, str):
        return str(value)
    return value


def set_key(cfg: dict, key: str, raw: Any) -> None:
    section, _, name = key.partition(".")
    if section not in DEFAULTS or name not in DEFAULTS[section]:
        raise ConfigError(f"unknown config key {key!r}")
    cfg[section][name] = _coerce(key, raw, DEFAULTS[section][name])


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        text = Path(path).read_text()
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        for section, values in (data or {}).items():
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            for name, value in values.items():
                set_key(cfg, f"{section}.{name}", value)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        set_key(cfg, key.strip(), value)
    return cfg


def format_value(value: Any) -> str:
    """Render a value so that ``--set key=<text>`` reproduces it."""
    return json.dumps(value)


def describe() -> str:
    lines = ["config keys (override with --set key=value):"]
    for key in flat_keys():
        section, name = key.split(".")
        lines.append(f"  {key}={format_value(DEFAULTS[section][name])}    {DESCRIPTIONS.get(key, '')}")
    return "\n".join(lines)
