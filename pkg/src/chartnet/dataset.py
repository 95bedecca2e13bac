"""Dataset generation, on-disk manifest, vocabulary and example loading.

Layout under a dataset root::

    <root>/<chart_type>/images/<chart_id>.png
    <root>/<chart_type>/manifest.jsonl
    <root>/<chart_type>/vocab.json

The manifest's first line is a header (format version, config echo, answer
counts); every following line is one chart record. Paths inside records are
relative to ``<root>``.
"""

from __future__ import annotations

import collections
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .charts import GenerationConstraints, content_hash, sample_spec, spec_from_dict
from .errors import CorruptManifest, InfeasibleConstraints, IoFailure, MissingImage, TemplateInapplicable
from .qa import CHART_SPECIFIC, GENERIC, QAPair, instantiate_questions, tokenize
from .render import TextAnnotation, render

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
PAD, UNK = 0, 1
MAX_ATTEMPTS_PER_CHART = 200


@dataclass
class DatasetConfig:
    root: str = "data"
    chart_type: str = "bar"
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0
    render_resolution: int = 448
    min_elements: int = 2
    max_elements: int = 8

    def sizes(self) -> dict[str, int]:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}

    def constraints(self) -> GenerationConstraints:
        return GenerationConstraints(min_elements=self.min_elements, max_elements=self.max_elements)


@dataclass
class ChartRecord:
    chart_id: str
    split: str
    image_path: str
    spec: object
    annotations: list[TextAnnotation]
    qa_pairs: list[QAPair]
    image_sha256: str = ""

    def to_dict(self) -> dict:
        return {
            "chart_id": self.chart_id,
            "split": self.split,
            "image_path": self.image_path,
            "image_sha256": self.image_sha256,
            "spec": self.spec.to_dict(),
            "annotations": [a.to_dict() for a in self.annotations],
            "qa_pairs": [p.to_dict() for p in self.qa_pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChartRecord":
        cid = d["chart_id"]
        return cls(
            chart_id=cid,
            split=d["split"],
            image_path=d["image_path"],
            spec=spec_from_dict(d["spec"]),
            annotations=[TextAnnotation.from_dict(a) for a in d["annotations"]],
            qa_pairs=[QAPair.from_dict(p, cid) for p in d["qa_pairs"]],
            image_sha256=d.get("image_sha256", ""),
        )


@dataclass
class DatasetManifest:
    chart_type: str
    splits: dict[str, list[ChartRecord]]
    generation_seed: int
    format_version: int = FORMAT_VERSION
    root: Optional[Path] = None
    header: dict = field(default_factory=dict)

    def records(self, split: Optional[str] = None) -> list[ChartRecord]:
        if split is not None:
            return self.splits[split]
        return [r for s in SPLITS for r in self.splits.get(s, [])]

    def qa_count(self, split: str) -> int:
        return sum(len(r.qa_pairs) for r in self.splits[split])

    def record(self, chart_id: str) -> ChartRecord:
        index = self.__dict__.setdefault("_index", {})
        if not index:
            index.update({r.chart_id: r for r in self.records()})
        try:
            return index[chart_id]
        except KeyError:
            raise KeyError(f"unknown chart id {chart_id!r}") from None

    def image_file(self, record: ChartRecord) -> Path:
        if self.root is None:
            raise MissingImage("manifest has no root directory")
        return self.root / record.image_path

    def lines(self) -> list[str]:
        head = dict(self.header)
        head.update({"format_version": self.format_version, "chart_type": self.chart_type,
                     "generation_seed": self.generation_seed})
        out = [json.dumps({"header": head}, sort_keys=True)]
        out += [json.dumps(r.to_dict(), sort_keys=True) for r in self.records()]
        return out

    def serialize(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()

    def write(self, path) -> None:
        try:
            Path(path).write_text(self.serialize())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    @classmethod
    def parse(cls, text: str, root: Optional[Path] = None) -> "DatasetManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise CorruptManifest("empty manifest")
        try:
            head = json.loads(lines[0])["header"]
            splits: dict[str, list[ChartRecord]] = {s: [] for s in SPLITS}
            for ln in lines[1:]:
                rec = ChartRecord.from_dict(json.loads(ln))
                splits[rec.split].append(rec)
            return cls(head["chart_type"], splits, head["generation_seed"], head["format_version"], root, head)
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptManifest(f"cannot parse manifest: {exc}") from exc

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        """Load ``<root>/<chart_type>/manifest.jsonl``; the root is inferred."""
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        try:
            text = path.read_text()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        return cls.parse(text, root=path.parent.parent)


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:6], "big")


def png_bytes_from_pixels(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def generate_records(config: DatasetConfig) -> list[tuple[ChartRecord, bytes]]:
    """Sample, render and annotate every chart; pure in ``config``."""
    constraints = config.constraints()
    constraints.check(config.chart_type)
    seen: set[str] = set()
    out = []
    for split in SPLITS:
        for i in range(config.sizes()[split]):
            chart_id = f"{config.chart_type}-{split}-{i:05d}"
            for attempt in range(MAX_ATTEMPTS_PER_CHART):
                spec_seed = _derive_seed(config.seed, config.chart_type, split, i, attempt)
                spec = sample_spec(config.chart_type, spec_seed, constraints)
                key = content_hash(spec)
                if key in seen:
                    continue
                image, annotations = render(spec, config.render_resolution)
                try:
                    pairs = instantiate_questions(spec, spec_seed, annotations, chart_id)
                except TemplateInapplicable:
                    continue
                break
            else:
                raise InfeasibleConstraints(
                    f"no chart supports all question templates after {MAX_ATTEMPTS_PER_CHART} attempts")
            seen.add(key)
            png = png_bytes_from_pixels(image.pixels)
            rec = ChartRecord(chart_id, split, f"{config.chart_type}/images/{chart_id}.png",
                              spec, annotations, pairs, hashlib.sha256(png).hexdigest())
            out.append((rec, png))
    return out


def answer_counts(records) -> dict[str, int]:
    counts = collections.Counter(p.answer.generic_token for r in records for p in r.qa_pairs
                                 if p.answer.kind == GENERIC)
    return dict(sorted(counts.items()))


def build_dataset(config: DatasetConfig) -> DatasetManifest:
    """Generate charts, images and QA pairs and write them under ``config.root``."""
    for split, n in config.sizes().items():
        if n < 1:
            raise ValueError(f"split {split} must contain at least one chart")
    root = Path(config.root)
    base = root / config.chart_type
    try:
        (base / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    generated = generate_records(config)
    splits: dict[str, list[ChartRecord]] = {s: [] for s in SPLITS}
    for rec, png in generated:
        try:
            (root / rec.image_path).write_bytes(png)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        splits[rec.split].append(rec)

    counts = answer_counts(splits["train"])
    header = {
        "config": asdict(config),
        "chart_counts": {s: len(v) for s, v in splits.items()},
        "qa_counts": {s: sum(len(r.qa_pairs) for r in v) for s, v in splits.items()},
        "train_answer_counts": counts,
        "min_train_answer_count": min(counts.values()) if counts else 0,
    }
    header["config"]["root"] = "."  # keep the manifest independent of where it was built
    manifest = DatasetManifest(config.chart_type, splits, config.seed, FORMAT_VERSION, root, header)
    manifest.write(base / "manifest.jsonl")
    vocab = build_vocab(manifest)
    vocab.save(base / "vocab.json")
    log.info("wrote %d charts to %s", len(generated), base)
    return manifest


def image_hashes(manifest: DatasetManifest) -> dict[str, str]:
    """sha256 of every PNG as stored on disk, keyed by chart id."""
    out = {}
    for rec in manifest.records():
        path = manifest.image_file(rec)
        try:
            out[rec.chart_id] = hashlib.sha256(path.read_bytes()).hexdigest()
        except OSError as exc:
            raise MissingImage(str(path)) from exc
    return out


@dataclass
class Vocab:
    question_tokens: dict[str, int]
    answer_tokens: dict[str, int]

    @property
    def answers(self) -> list[str]:
        return sorted(self.answer_tokens, key=self.answer_tokens.__getitem__)

    def encode(self, text: str, max_length: int = 24) -> np.ndarray:
        ids = [self.question_tokens.get(t, UNK) for t in tokenize(text)][:max_length]
        out = np.full(max_length, PAD, dtype=np.int64)
        out[:len(ids)] = ids
        return out

    def to_dict(self) -> dict:
        return {"question_tokens": self.question_tokens, "answer_tokens": self.answer_tokens}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Vocab":
        d = json.loads(Path(path).read_text())
        return cls(dict(d["question_tokens"]), dict(d["answer_tokens"]))


def build_vocab(manifest: DatasetManifest) -> Vocab:
    train = manifest.records("train")
    if not train:
        raise ValueError("manifest has an empty train split")
    words = sorted({t for r in train for p in r.qa_pairs for t in p.question.tokens})
    question_tokens = {"<pad>": PAD, "<unk>": UNK}
    for w in words:
        question_tokens[w] = len(question_tokens)
    answers = sorted({p.answer.generic_token for r in train for p in r.qa_pairs if p.answer.kind == GENERIC})
    return Vocab(question_tokens, {a: i for i, a in enumerate(answers)})


@dataclass
class ModelExample:
    image: np.ndarray  # (r, r, 3) float32 in [0, 1]
    token_ids: np.ndarray  # (max_question_length,) int64
    target: object  # class id (generic) or float32 4-vector (chart-specific)
    kind: str
    chart_id: str = ""
    qa_index: int = 0
    template_id: str = ""


def load_image(path, input_resolution: int = 224) -> np.ndarray:
    """Decode a chart PNG, box-downscale it and return uint8 (r, r, 3)."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (input_resolution, input_resolution):
                im = im.resize((input_resolution, input_resolution), Image.BOX)
            return np.asarray(im, dtype=np.uint8).copy()
    except FileNotFoundError as exc:
        raise MissingImage(str(path)) from exc
    except OSError as exc:
        raise MissingImage(f"{path}: {exc}") from exc


def encode_target(pair: QAPair, vocab: Vocab):
    a = pair.answer
    if a.kind == GENERIC:
        return vocab.answer_tokens.get(a.generic_token, -1)
    return np.asarray(a.target_box.as_tuple(), dtype=np.float64)


def load_example(manifest: DatasetManifest, vocab: Vocab, chart_id: str, qa_index: int,
                 input_resolution: int = 224, max_question_length: int = 24) -> ModelExample:
    try:
        rec = manifest.record(chart_id)
        pair = rec.qa_pairs[qa_index]
    except (KeyError, IndexError) as exc:
        raise CorruptManifest(f"no question {qa_index} for chart {chart_id!r}") from exc
    pixels = load_image(manifest.image_file(rec), input_resolution)
    return ModelExample(
        image=pixels.astype(np.float32) / 255.0,
        token_ids=vocab.encode(pair.question.text, max_question_length),
        target=encode_target(pair, vocab),
        kind=pair.answer.kind,
        chart_id=chart_id,
        qa_index=qa_index,
        template_id=pair.question.template_id,
    )


@dataclass
class SplitArrays:
    """A whole split in model-ready arrays; images are stored once per chart."""

    images: np.ndarray  # (n_charts, r, r, 3) uint8
    image_index: np.ndarray  # (n_qa,) row into ``images``
    token_ids: np.ndarray  # (n_qa, L) int64
    is_generic: np.ndarray  # (n_qa,) bool
    class_ids: np.ndarray  # (n_qa,) int64, -1 where not generic or unknown answer
    boxes: np.ndarray  # (n_qa, 4) float64, zeros where generic
    chart_ids: list[str]
    qa_index: np.ndarray
    template_ids: list[str]

    def __len__(self) -> int:
        return len(self.token_ids)

    def subset(self, mask) -> "SplitArrays":
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        return SplitArrays(self.images, self.image_index[idx], self.token_ids[idx], self.is_generic[idx],
                           self.class_ids[idx], self.boxes[idx], [self.chart_ids[i] for i in idx],
                           self.qa_index[idx], [self.template_ids[i] for i in idx])


def load_split_arrays(manifest: DatasetManifest, vocab: Vocab, split: str, input_resolution: int = 224,
                      max_question_length: int = 24, records: Optional[list[ChartRecord]] = None) -> SplitArrays:
    records = manifest.records(split) if records is None else records
    images = np.stack([load_image(manifest.image_file(r), input_resolution) for r in records]) if records else \
        np.zeros((0, input_resolution, input_resolution, 3), np.uint8)
    image_index, tokens, generic, classes, boxes, cids, qidx, tids = [], [], [], [], [], [], [], []
    for row, rec in enumerate(records):
        for k, pair in enumerate(rec.qa_pairs):
            image_index.append(row)
            tokens.append(vocab.encode(pair.question.text, max_question_length))
            is_gen = pair.answer.kind == GENERIC
            generic.append(is_gen)
            target = encode_target(pair, vocab)
            classes.append(target if is_gen else -1)
            boxes.append(np.zeros(4) if is_gen else target)
            cids.append(rec.chart_id)
            qidx.append(k)
            tids.append(pair.question.template_id)
    return SplitArrays(
        images=images,
        image_index=np.asarray(image_index, dtype=np.int64),
        token_ids=np.stack(tokens) if tokens else np.zeros((0, max_question_length), np.int64),
        is_generic=np.asarray(generic, dtype=bool),
        class_ids=np.asarray(classes, dtype=np.int64),
        boxes=np.stack(boxes) if boxes else np.zeros((0, 4)),
        chart_ids=cids,
        qa_index=np.asarray(qidx, dtype=np.int64),
        template_ids=tids,
    )


__all__ = [
    "CHART_SPECIFIC", "GENERIC", "ChartRecord", "DatasetConfig", "DatasetManifest", "ModelExample",
    "SplitArrays", "Vocab", "build_dataset", "build_vocab", "image_hashes", "load_example",
    "load_image", "load_split_arrays",
]
