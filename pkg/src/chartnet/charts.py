"""Symbolic chart specifications: palette, sampling and validation.

A spec is the single source of truth for a chart. The renderer draws it and
the QA oracle answers questions about it; neither ever looks at pixels.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from typing import Union

from .errors import InfeasibleConstraints


@dataclass(frozen=True)
class ColorName:
    name: str
    rgb: tuple[int, int, int]


PALETTE: tuple[ColorName, ...] = (
    ColorName("red", (255, 0, 0)),
    ColorName("green", (0, 128, 0)),
    ColorName("blue", (0, 0, 255)),
    ColorName("black", (0, 0, 0)),
    ColorName("yellow", (255, 255, 0)),
    ColorName("yellowgreen", (154, 205, 50)),
    ColorName("orange", (255, 165, 0)),
    ColorName("purple", (128, 0, 128)),
    ColorName("cyan", (0, 255, 255)),
    ColorName("magenta", (255, 0, 255)),
    ColorName("brown", (165, 42, 42)),
    ColorName("gray", (128, 128, 128)),
)
COLOR_NAMES: tuple[str, ...] = tuple(c.name for c in PALETTE)
COLOR_RGB: dict[str, tuple[int, int, int]] = {c.name: c.rgb for c in PALETTE}

# At most four characters each so that labels fit their layout slot.
LABEL_LEXICON: tuple[str, ...] = (
    "C++", "C#", "F#", "D", "R", "Go", "Io", "Ada", "Awk", "Elm",
    "Lua", "Nim", "PHP", "Sed", "Tcl", "Zig", "Joy", "Bash", "Dart", "Hack",
    "Haxe", "Java", "Lisp", "Mojo", "Perl", "Pony", "Raku", "Ruby", "Rust", "Vala",
)


@dataclass(frozen=True)
class Bar:
    color: str
    height: float
    label: str


@dataclass(frozen=True)
class Sector:
    color: str
    angle: float
    label: str


@dataclass(frozen=True)
class BarChartSpec:
    bars: tuple[Bar, ...]
    seed: int = 0

    chart_type = "bar"

    @property
    def elements(self) -> tuple[Bar, ...]:
        return self.bars

    def values(self) -> list[float]:
        return [b.height for b in self.bars]

    def to_dict(self) -> dict:
        return {
            "chart_type": "bar",
            "bars": [{"color": b.color, "height": b.height, "label": b.label} for b in self.bars],
            "seed": self.seed,
        }


@dataclass(frozen=True)
class PieChartSpec:
    """Sectors are ordered clockwise starting at 12 o'clock."""

    sectors: tuple[Sector, ...]
    seed: int = 0

    chart_type = "pie"

    @property
    def elements(self) -> tuple[Sector, ...]:
        return self.sectors

    def values(self) -> list[float]:
        return [s.angle for s in self.sectors]

    def to_dict(self) -> dict:
        return {
            "chart_type": "pie",
            "sectors": [{"color": s.color, "angle": s.angle, "label": s.label} for s in self.sectors],
            "seed": self.seed,
        }


ChartSpec = Union[BarChartSpec, PieChartSpec]


def spec_from_dict(data: dict) -> ChartSpec:
    if "bars" in data:
        bars = tuple(Bar(b["color"], float(b["height"]), b["label"]) for b in data["bars"])
        return BarChartSpec(bars, int(data.get("seed", 0)))
    if "sectors" in data:
        sectors = tuple(Sector(s["color"], float(s["angle"]), s["label"]) for s in data["sectors"])
        return PieChartSpec(sectors, int(data.get("seed", 0)))
    raise ValueError("spec dict has neither 'bars' nor 'sectors'")


def spec_to_json(spec: ChartSpec) -> str:
    return json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))


def content_hash(spec: ChartSpec) -> str:
    """Hash of the drawn content; the sampling seed is excluded."""
    data = spec.to_dict()
    data.pop("seed")
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class GenerationConstraints:
    min_elements: int = 2
    max_elements: int = 8
    height_epsilon: float = 0.05
    min_height: float = 0.1
    max_height: float = 1.0
    angle_epsilon: float = 10.0
    min_angle: float = 4.0
    palette: tuple[str, ...] = COLOR_NAMES
    labels: tuple[str, ...] = LABEL_LEXICON

    def check(self, chart_type: str) -> None:
        if self.min_elements < 2:
            raise InfeasibleConstraints("charts need at least two elements")
        if self.min_elements > self.max_elements:
            raise InfeasibleConstraints(
                f"min_elements={self.min_elements} > max_elements={self.max_elements}")
        if self.max_elements > len(self.palette):
            raise InfeasibleConstraints(
                f"{self.max_elements} elements need distinct colors but the palette has {len(self.palette)}")
        if self.max_elements > len(self.labels):
            raise InfeasibleConstraints("not enough distinct labels in the lexicon")
        if chart_type == "bar":
            if not 0 < self.min_height <= self.max_height <= 1:
                raise InfeasibleConstraints("height range must lie in (0, 1]")
            if (self.max_elements - 1) * self.height_epsilon > self.max_height - self.min_height:
                raise InfeasibleConstraints("height range too narrow for the tie epsilon")
        else:
            n = self.max_elements
            if self.min_angle <= 0:
                raise InfeasibleConstraints("min_angle must be positive")
            if n * self.min_angle + self.angle_epsilon * n * (n - 1) / 2 > 360:
                raise InfeasibleConstraints(
                    f"{n} sectors cannot have pairwise angle gaps of {self.angle_epsilon} degrees")


DEFAULT_CONSTRAINTS = GenerationConstraints()


def sample_bar_spec(rng_seed: int, constraints: GenerationConstraints = DEFAULT_CONSTRAINTS) -> BarChartSpec:
    constraints.check("bar")
    rng = random.Random(f"bar:{rng_seed}")
    c = constraints
    n = rng.randint(c.min_elements, c.max_elements)
    colors = rng.sample(list(c.palette), n)
    labels = rng.sample(list(c.labels), n)
    for _ in range(1000):
        # Uniform over gap-respecting configurations: draw in the shrunken
        # range, sort, then re-insert the mandatory gaps.
        slack = (c.max_height - c.min_height) - (n - 1) * c.height_epsilon
        raw = sorted(rng.uniform(0.0, slack) for _ in range(n))
        heights = [round(c.min_height + v + k * c.height_epsilon, 3) for k, v in enumerate(raw)]
        heights = [min(max(h, c.min_height), c.max_height) for h in heights]
        if all(b - a >= c.height_epsilon - 1e-12 for a, b in zip(heights, heights[1:])):
            break
    else:  # pragma: no cover - rounding never fails this often
        raise InfeasibleConstraints("could not place bar heights")
    rng.shuffle(heights)
    bars = tuple(Bar(col, h, lab) for col, h, lab in zip(colors, heights, labels))
    return BarChartSpec(bars, rng_seed)


def sample_pie_spec(rng_seed: int, constraints: GenerationConstraints = DEFAULT_CONSTRAINTS) -> PieChartSpec:
    constraints.check("pie")
    rng = random.Random(f"pie:{rng_seed}")
    c = constraints
    n = rng.randint(c.min_elements, c.max_elements)
    colors = rng.sample(list(c.palette), n)
    labels = rng.sample(list(c.labels), n)
    base = [c.min_angle + k * c.angle_epsilon for k in range(n)]
    free = 360.0 - sum(base)
    for _ in range(1000):
        # Nondecreasing increments keep the sorted order and the gaps.
        cum = []
        acc = 0.0
        for _k in range(n):
            acc += rng.expovariate(1.0)
            cum.append(acc)
        scale = free / sum(cum)
        angles = [round(b + t * scale, 2) for b, t in zip(base, cum)]
        angles[-1] = round(360.0 - sum(angles[:-1]), 2)
        if all(b - a >= c.angle_epsilon - 1e-9 for a, b in zip(angles, angles[1:])) and angles[0] >= c.min_angle:
            break
    else:  # pragma: no cover
        raise InfeasibleConstraints("could not place sector angles")
    rng.shuffle(angles)
    sectors = tuple(Sector(col, a, lab) for col, a, lab in zip(colors, angles, labels))
    return PieChartSpec(sectors, rng_seed)


def sample_spec(chart_type: str, rng_seed: int, constraints: GenerationConstraints = DEFAULT_CONSTRAINTS) -> ChartSpec:
    if chart_type == "bar":
        return sample_bar_spec(rng_seed, constraints)
    if chart_type == "pie":
        return sample_pie_spec(rng_seed, constraints)
    raise ValueError(f"unknown chart type {chart_type!r}")


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_spec(spec, constraints: GenerationConstraints = DEFAULT_CONSTRAINTS) -> ValidationReport:
    """Check every invariant of a spec and list the violated ones. Never raises."""
    report = ValidationReport()
    out = report.violations
    try:
        if isinstance(spec, BarChartSpec):
            elements = list(spec.bars)
            values = [b.height for b in elements]
            kind = "bar"
        elif isinstance(spec, PieChartSpec):
            elements = list(spec.sectors)
            values = [s.angle for s in elements]
            kind = "pie"
        else:
            out.append(f"unknown-type: {type(spec).__name__}")
            return report

        n = len(elements)
        if not 2 <= n <= constraints.max_elements:
            out.append(f"element-count: {n} not in [2, {constraints.max_elements}]")
        colors = [e.color for e in elements]
        for name in colors:
            if name not in COLOR_RGB:
                out.append(f"unknown-color: {name!r}")
        if len(set(colors)) != len(colors):
            dup = sorted({x for x in colors if colors.count(x) > 1})
            out.append(f"duplicate-color: {', '.join(dup)}")
        labels = [e.label for e in elements]
        if len(set(labels)) != len(labels):
            out.append("duplicate-label")
        for lab in labels:
            if lab not in constraints.labels:
                out.append(f"unknown-label: {lab!r}")

        for v in values:
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                out.append(f"non-finite-value: {v!r}")
                return report
        ordered = sorted(values)
        gaps = [b - a for a, b in zip(ordered, ordered[1:])]
        if kind == "bar":
            for v in values:
                if not 0 < v <= 1:
                    out.append(f"height-range: {v} not in (0, 1]")
            if gaps and min(gaps) < constraints.height_epsilon - 1e-9:
                out.append(f"height-tie: gap {min(gaps):.4f} < {constraints.height_epsilon}")
        else:
            for v in values:
                if v <= 0:
                    out.append(f"angle-nonpositive: {v}")
            total = sum(values)
            if abs(total - 360.0) > 1e-9:
                out.append(f"angle-sum: {total} != 360")
            if gaps and min(gaps) < constraints.angle_epsilon - 1e-9:
                out.append(f"angle-tie: gap {min(gaps):.4f} < {constraints.angle_epsilon}")
    except Exception as exc:  # validation must never throw
        out.append(f"malformed: {exc}")
    return report
