"""Question templates and the symbolic answer oracle.

Answers are computed from the chart spec alone. The only pixel-space
quantity involved is the layout box of a label, which chart-specific
answers take from the renderer's annotations.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Optional

from .charts import COLOR_NAMES, BarChartSpec, PieChartSpec
from .errors import TemplateInapplicable, UnansweredComposite
from .render import NormBBox, TextAnnotation, element_annotation, render

GENERIC = "generic"
CHART_SPECIFIC = "chart_specific"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and around punctuation."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Template:
    template_id: str
    chart_type: str
    kind: str
    family: str  # extremum | neighbor | existence | composite | label
    surface: str
    slots: tuple[str, ...] = ()

    def format(self, params: dict) -> str:
        return self.surface.format(**params)


_T = Template
TEMPLATES: dict[str, Template] = {t.template_id: t for t in [
    _T("bar_highest", "bar", GENERIC, "extremum", "What is the color of the highest bar ?"),
    _T("bar_lowest", "bar", GENERIC, "extremum", "What is the color of the lowest bar ?"),
    _T("bar_left_of_largest", "bar", GENERIC, "neighbor", "What is the color of the bar ; left to the largest bar ?"),
    _T("bar_right_of_color", "bar", GENERIC, "neighbor",
       "What is the color of the bar ; just right to the {x} color bar ?", ("x",)),
    _T("bar_exists", "bar", GENERIC, "existence", "Does there exist a {x} color bar ?", ("x",)),
    _T("bar_rightmost_larger", "bar", GENERIC, "composite",
       "What is the color of the bar ; rightmost to the {x} color bar and larger than the {y} color bar ?", ("x", "y")),
    _T("bar_leftmost_smaller", "bar", GENERIC, "composite",
       "What is the color of the bar ; leftmost to the {x} color bar and smaller than the {y} color bar ?", ("x", "y")),
    _T("bar_label_highest", "bar", CHART_SPECIFIC, "label", "What is the label of the highest bar ?"),
    _T("bar_label_color", "bar", CHART_SPECIFIC, "label", "What is the label of the {x} color bar ?", ("x",)),

    _T("pie_largest", "pie", GENERIC, "extremum", "What is the color of the largest region in pie chart ?"),
    _T("pie_smallest", "pie", GENERIC, "extremum", "What is the color of the smallest region in pie chart ?"),
    _T("pie_anticlockwise_of_largest", "pie", GENERIC, "neighbor",
       "What is the color of the region ; next to the largest region if you move anti-clockwise ?"),
    _T("pie_clockwise_of_color", "pie", GENERIC, "neighbor",
       "What is the color of the region ; next to the {x} color region if you move clockwise ?", ("x",)),
    _T("pie_exists", "pie", GENERIC, "existence", "Does there exist a {x} color region ?", ("x",)),
    _T("pie_between", "pie", GENERIC, "composite",
       "What is the color of the region ; larger than the {x} color region and smaller than the {y} color region ?",
       ("x", "y")),
    _T("pie_clockwise_larger", "pie", GENERIC, "composite",
       "What is the color of the first region clockwise from the {x} color region that is larger than the {y} color region ?",
       ("x", "y")),
    _T("pie_label_smallest", "pie", CHART_SPECIFIC, "label", "What is the label of the smallest region ?"),
    _T("pie_label_color", "pie", CHART_SPECIFIC, "label", "What is the label of the {x} color region ?", ("x",)),
]}

# Ten question slots per chart. Existence appears twice: once asked about a
# present color, once about an absent one.
SLOTS: dict[str, tuple[tuple[str, Optional[bool]], ...]] = {
    "bar": (
        ("bar_highest", None), ("bar_lowest", None), ("bar_left_of_largest", None), ("bar_right_of_color", None),
        ("bar_exists", True), ("bar_exists", False),
        ("bar_rightmost_larger", None), ("bar_leftmost_smaller", None),
        ("bar_label_highest", None), ("bar_label_color", None),
    ),
    "pie": (
        ("pie_largest", None), ("pie_smallest", None), ("pie_anticlockwise_of_largest", None),
        ("pie_clockwise_of_color", None),
        ("pie_exists", True), ("pie_exists", False),
        ("pie_between", None), ("pie_clockwise_larger", None),
        ("pie_label_smallest", None), ("pie_label_color", None),
    ),
}


@dataclass(frozen=True)
class Question:
    template_id: str
    text: str
    params: tuple[tuple[str, str], ...] = ()

    @property
    def kind(self) -> str:
        return TEMPLATES[self.template_id].kind

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    def param(self, name: str) -> str:
        return dict(self.params)[name]

    def to_dict(self) -> dict:
        return {"template_id": self.template_id, "text": self.text, "tokens": self.tokens,
                "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        return cls(d["template_id"], d["text"], tuple(sorted(d.get("params", {}).items())))


def make_question(template_id: str, **params: str) -> Question:
    t = TEMPLATES.get(template_id)
    if t is None:
        raise TemplateInapplicable(f"unknown template {template_id!r}")
    if set(params) != set(t.slots):
        raise ValueError(f"{template_id} takes slots {t.slots}, got {sorted(params)}")
    return Question(template_id, t.format(params), tuple(sorted(params.items())))


@dataclass(frozen=True)
class Answer:
    kind: str
    generic_token: Optional[str] = None
    target_text: Optional[str] = None
    target_box: Optional[NormBBox] = None
    element_index: Optional[int] = None

    def __post_init__(self):
        if self.kind == GENERIC:
            if self.generic_token is None or self.target_box is not None:
                raise ValueError("generic answers carry exactly a vocabulary token")
        elif self.kind == CHART_SPECIFIC:
            if self.target_box is None or self.target_text is None or self.generic_token is not None:
                raise ValueError("chart-specific answers carry exactly a text box")
        else:
            raise ValueError(f"unknown answer kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "element_index": self.element_index}
        if self.kind == GENERIC:
            d["generic_token"] = self.generic_token
        else:
            d["target_text"] = self.target_text
            d["target_box"] = list(self.target_box.as_tuple())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Answer":
        box = d.get("target_box")
        return cls(d["kind"], d.get("generic_token"), d.get("target_text"),
                   NormBBox.from_sequence(box) if box is not None else None, d.get("element_index"))


@dataclass(frozen=True)
class QAPair:
    question: Question
    answer: Answer
    chart_id: str = ""

    def to_dict(self) -> dict:
        return {"question": self.question.to_dict(), "answer": self.answer.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, chart_id: str = "") -> "QAPair":
        return cls(Question.from_dict(d["question"]), Answer.from_dict(d["answer"]), chart_id)


# --- selection rules -------------------------------------------------------

def _index_of(spec, color: str) -> int:
    for i, e in enumerate(spec.elements):
        if e.color == color:
            return i
    raise TemplateInapplicable(f"no {color} element in the chart")


def _argmax(values) -> int:
    return max(range(len(values)), key=values.__getitem__)


def _argmin(values) -> int:
    return min(range(len(values)), key=values.__getitem__)


def _select_bar(spec: BarChartSpec, q: Question):
    h = spec.values()
    n = len(h)
    tid = q.template_id
    if tid in ("bar_highest", "bar_label_highest"):
        return _argmax(h)
    if tid == "bar_lowest":
        return _argmin(h)
    if tid == "bar_left_of_largest":
        i = _argmax(h)
        if i == 0:
            raise TemplateInapplicable("the largest bar is leftmost")
        return i - 1
    if tid == "bar_right_of_color":
        i = _index_of(spec, q.param("x"))
        if i == n - 1:
            raise TemplateInapplicable(f"the {q.param('x')} bar is rightmost")
        return i + 1
    if tid == "bar_label_color":
        return _index_of(spec, q.param("x"))
    if tid == "bar_rightmost_larger":
        ix, iy = _index_of(spec, q.param("x")), _index_of(spec, q.param("y"))
        hits = [j for j in range(ix + 1, n) if h[j] > h[iy]]
        if not hits:
            raise UnansweredComposite("no bar right of x is larger than y")
        return hits[-1]
    if tid == "bar_leftmost_smaller":
        ix, iy = _index_of(spec, q.param("x")), _index_of(spec, q.param("y"))
        hits = [j for j in range(0, ix) if h[j] < h[iy]]
        if not hits:
            raise UnansweredComposite("no bar left of x is smaller than y")
        return hits[0]
    raise TemplateInapplicable(f"{tid} is not a bar template")


def _select_pie(spec: PieChartSpec, q: Question):
    a = spec.values()
    n = len(a)
    tid = q.template_id
    if tid == "pie_largest":
        return _argmax(a)
    if tid in ("pie_smallest", "pie_label_smallest"):
        return _argmin(a)
    if tid == "pie_anticlockwise_of_largest":
        # storage order is clockwise, so anti-clockwise is the previous index
        return (_argmax(a) - 1) % n
    if tid == "pie_clockwise_of_color":
        return (_index_of(spec, q.param("x")) + 1) % n
    if tid == "pie_label_color":
        return _index_of(spec, q.param("x"))
    if tid == "pie_between":
        ix, iy = _index_of(spec, q.param("x")), _index_of(spec, q.param("y"))
        hits = [j for j in range(n) if a[ix] < a[j] < a[iy]]
        if not hits:
            raise UnansweredComposite("no region between x and y")
        if len(hits) > 1:
            raise TemplateInapplicable("several regions lie between x and y")
        return hits[0]
    if tid == "pie_clockwise_larger":
        ix, iy = _index_of(spec, q.param("x")), _index_of(spec, q.param("y"))
        for step in range(1, n):
            j = (ix + step) % n
            if a[j] > a[iy]:
                return j
        raise UnansweredComposite("no region larger than y clockwise from x")
    raise TemplateInapplicable(f"{tid} is not a pie template")


def oracle_answer(spec, question: Question, annotations: Optional[list[TextAnnotation]] = None) -> Answer:
    """Ground-truth answer to ``question`` computed from ``spec``.

    ``annotations`` supply label boxes for chart-specific questions; when
    omitted the spec is rendered at the default resolution to obtain them.
    """
    t = TEMPLATES.get(question.template_id)
    if t is None:
        raise TemplateInapplicable(f"unknown template {question.template_id!r}")
    if t.chart_type != spec.chart_type:
        raise TemplateInapplicable(f"{t.template_id} does not apply to {spec.chart_type} charts")
    for slot in t.slots:
        if question.param(slot) not in COLOR_NAMES:
            raise TemplateInapplicable(f"unknown color {question.param(slot)!r}")

    if t.family == "existence":
        present = question.param("x") in {e.color for e in spec.elements}
        return Answer(GENERIC, generic_token="yes" if present else "no")

    select = _select_bar if spec.chart_type == "bar" else _select_pie
    idx = select(spec, question)
    element = spec.elements[idx]
    if t.kind == GENERIC:
        return Answer(GENERIC, generic_token=element.color, element_index=idx)
    if annotations is None:
        _, annotations = render(spec)
    ann = element_annotation(annotations, idx, spec.chart_type)
    return Answer(CHART_SPECIFIC, target_text=ann.text, target_box=ann.bbox, element_index=idx)


def _candidate_params(spec, template: Template, present: Optional[bool]) -> list[dict]:
    colors = [e.color for e in spec.elements]
    if template.family == "existence":
        pool = colors if present else [c for c in COLOR_NAMES if c not in colors]
        return [{"x": c} for c in pool]
    if not template.slots:
        return [{}]
    if template.slots == ("x",):
        return [{"x": c} for c in colors]
    return [{"x": x, "y": y} for x in colors for y in colors if x != y]


def instantiate_questions(spec, rng_seed: int, annotations: Optional[list[TextAnnotation]] = None,
                          chart_id: str = "") -> list[QAPair]:
    """Fill the ten question slots for ``spec``; raises TemplateInapplicable
    when some slot has no answerable instantiation."""
    rng = random.Random(f"qa:{spec.chart_type}:{rng_seed}")
    if annotations is None:
        _, annotations = render(spec)
    pairs = []
    for template_id, present in SLOTS[spec.chart_type]:
        template = TEMPLATES[template_id]
        options = []
        for params in _candidate_params(spec, template, present):
            q = make_question(template_id, **params)
            try:
                options.append((q, oracle_answer(spec, q, annotations)))
            except TemplateInapplicable:
                continue
        if not options:
            raise TemplateInapplicable(f"{template_id} cannot be instantiated for this chart")
        q, a = options[rng.randrange(len(options))]
        pairs.append(QAPair(q, a, chart_id))
    return pairs


def _surface_regex(template: Template) -> re.Pattern:
    sentinels = {slot: f"qqslot{slot}qq" for slot in template.slots}
    pattern = re.escape(" ".join(tokenize(template.format(sentinels))))
    for slot, word in sentinels.items():
        pattern = pattern.replace(word, f"(?P<{slot}>[a-z]+)")
    return re.compile("^" + pattern + "$")


_PARSERS: list[tuple[Template, re.Pattern]] = [(t, _surface_regex(t)) for t in TEMPLATES.values()]


def parse_question(text: str, chart_type: Optional[str] = None) -> Question:
    """Map free question text back onto its template; TemplateInapplicable if none matches."""
    norm = " ".join(tokenize(text))
    for template, rx in _PARSERS:
        if chart_type is not None and template.chart_type != chart_type:
            continue
        m = rx.match(norm)
        if m:
            return make_question(template.template_id, **m.groupdict())
    raise TemplateInapplicable(f"question does not match any template: {text!r}")


def question_kind(text: str) -> str:
    """Which output head a free-form question routes to."""
    try:
        return parse_question(text).kind
    except TemplateInapplicable:
        return CHART_SPECIFIC if "label" in tokenize(text) else GENERIC
