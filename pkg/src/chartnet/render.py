"""Deterministic rasterizer for chart specs.

Everything is drawn with flat fills on a numpy canvas: no anti-aliasing and
no system fonts, so the same spec always yields the same bytes and every
text annotation box is known exactly.
"""

from __future__ import annotations

import functools
import hashlib
import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import render_constants as K
from .charts import COLOR_RGB, BarChartSpec, PieChartSpec, validate_spec
from .errors import InvalidSpec
from .font import text_mask, text_size


@dataclass(frozen=True)
class NormBBox:
    """Box in unit-normalized canvas coordinates, origin top-left."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def is_valid(self) -> bool:
        return 0 <= self.x_min < self.x_max <= 1 and 0 <= self.y_min < self.y_max <= 1

    def to_pixels(self, width: int, height: int) -> tuple[int, int, int, int]:
        return (round(self.x_min * width), round(self.y_min * height),
                round(self.x_max * width), round(self.y_max * height))

    @classmethod
    def from_sequence(cls, seq) -> "NormBBox":
        x0, y0, x1, y1 = (float(v) for v in seq)
        return cls(x0, y0, x1, y1)


@dataclass(frozen=True)
class TextAnnotation:
    element_id: str
    text: str
    bbox: NormBBox

    def to_dict(self) -> dict:
        return {"element_id": self.element_id, "text": self.text, "bbox": list(self.bbox.as_tuple())}

    @classmethod
    def from_dict(cls, d: dict) -> "TextAnnotation":
        return cls(d["element_id"], d["text"], NormBBox.from_sequence(d["bbox"]))


@dataclass
class RasterImage:
    pixels: np.ndarray  # (height, width, 3) uint8, row-major

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_pil(self) -> Image.Image:
        return Image.fromarray(self.pixels, mode="RGB")

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.to_pil().save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.png_bytes())

    def sha256(self) -> str:
        return hashlib.sha256(self.pixels.tobytes()).hexdigest()


def _scale(resolution: int) -> int:
    return max(1, resolution // 224)


class _Canvas:
    def __init__(self, resolution: int):
        self.res = resolution
        self.px = np.empty((resolution, resolution, 3), dtype=np.uint8)
        self.px[:] = K.BACKGROUND
        self.annotations: list[TextAnnotation] = []

    def rect(self, x0, y0, x1, y1, rgb):
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(self.res, x1), min(self.res, y1)
        if x1 > x0 and y1 > y0:
            self.px[y0:y1, x0:x1] = rgb

    def text(self, element_id, text, left, top, scale):
        mask = text_mask(text, scale)
        h, w = mask.shape
        if left < 0 or top < 0 or left + w > self.res or top + h > self.res:
            raise InvalidSpec(f"text {text!r} does not fit the canvas at resolution {self.res}")
        region = self.px[top:top + h, left:left + w]
        region[mask] = K.INK
        bbox = NormBBox(left / self.res, top / self.res, (left + w) / self.res, (top + h) / self.res)
        self.annotations.append(TextAnnotation(element_id, text, bbox))


def bar_geometry(spec: BarChartSpec, resolution: int) -> dict:
    """Pixel layout of a bar chart, shared by the renderer and tests."""
    s = _scale(resolution)
    left = K.PLOT_LEFT * s
    right = resolution - K.PLOT_RIGHT_MARGIN * s
    top = K.PLOT_TOP * s
    bottom = resolution - K.PLOT_BOTTOM_MARGIN * s  # row of the x axis
    plot_h = bottom - top
    n = len(spec.bars)
    slot = (right - left) / n
    bars = []
    for i, bar in enumerate(spec.bars):
        x0 = round(left + i * slot) + K.BAR_GAP_PX // 2
        x1 = round(left + (i + 1) * slot) - (K.BAR_GAP_PX - K.BAR_GAP_PX // 2)
        ph = round(bar.height * plot_h)
        bars.append((x0, bottom - ph, x1, bottom))
    return {"scale": s, "left": left, "right": right, "top": top, "bottom": bottom,
            "plot_h": plot_h, "slot": slot, "bars": bars}


def _render_bar(spec: BarChartSpec, canvas: _Canvas) -> None:
    g = bar_geometry(spec, canvas.res)
    s, left, bottom, top = g["scale"], g["left"], g["bottom"], g["top"]
    for (x0, y0, x1, y1), bar in zip(g["bars"], spec.bars):
        canvas.rect(x0, y0, x1, y1, COLOR_RGB[bar.color])

    aw = K.AXIS_WIDTH * s
    canvas.rect(left - aw, top, left, bottom + aw, K.INK)
    canvas.rect(left - aw, bottom, g["right"], bottom + aw, K.INK)

    for k, frac in enumerate(K.Y_TICKS):
        y = bottom - round(frac * g["plot_h"])
        canvas.rect(left - aw - K.TICK_LENGTH * s, y, left - aw, y + aw, K.INK)
        text = str(round(frac * 100))
        tw, th = text_size(text, s)
        tx = left - aw - K.TICK_LENGTH * s - K.TICK_LABEL_GAP * s - tw
        canvas.text(f"ytick:{k}", text, tx, y - th // 2, s)

    labels = [b.label for b in spec.bars]
    widths = [text_size(t, s)[0] for t in labels]
    slot = g["slot"]
    stagger = max(widths) > slot - 2 * s
    _, th = text_size("X", s)
    row0 = bottom + aw + K.LABEL_TOP_GAP * s
    for i, (text, tw) in enumerate(zip(labels, widths)):
        cx = left + (i + 0.5) * slot
        tx = min(max(0, round(cx - tw / 2)), canvas.res - tw)
        ty = row0 + (th + K.LABEL_ROW_GAP * s) * (i % 2 if stagger else 0)
        canvas.text(f"bar:{i}", text, tx, ty, s)


def pie_geometry(spec: PieChartSpec, resolution: int) -> dict:
    c = resolution / 2
    radius = round(K.PIE_RADIUS * resolution)
    bounds = np.cumsum([0.0] + [sec.angle for sec in spec.sectors])
    return {"scale": _scale(resolution), "cx": c, "cy": c, "radius": radius, "bounds": bounds}


@functools.lru_cache(maxsize=8)
def pie_pixel_angles(resolution: int, cx: float, cy: float):
    """Clockwise angle from 12 o'clock (degrees) and radius of each pixel centre.

    Cached and returned read-only; callers must not mutate the arrays.
    """
    ys, xs = np.mgrid[0:resolution, 0:resolution]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    theta = np.degrees(np.arctan2(dx, -dy)) % 360.0
    dist = np.hypot(dx, dy)
    theta.flags.writeable = False
    dist.flags.writeable = False
    return theta, dist


def _boxes_overlap(a, b, margin):
    return not (a[2] + margin <= b[0] or b[2] + margin <= a[0] or
                a[3] + margin <= b[1] or b[3] + margin <= a[1])


def _render_pie(spec: PieChartSpec, canvas: _Canvas) -> None:
    g = pie_geometry(spec, canvas.res)
    s, cx, cy, radius, bounds = g["scale"], g["cx"], g["cy"], g["radius"], g["bounds"]
    theta, dist = pie_pixel_angles(canvas.res, cx, cy)
    index = np.clip(np.searchsorted(bounds, theta, side="right") - 1, 0, len(spec.sectors) - 1)
    inside = dist <= radius
    lut = np.array([COLOR_RGB[sec.color] for sec in spec.sectors], dtype=np.uint8)
    canvas.px[inside] = lut[index[inside]]

    placed = []
    margin = K.PIE_LABEL_MARGIN * s
    for i, sec in enumerate(spec.sectors):
        mid = math.radians((bounds[i] + bounds[i + 1]) / 2)
        ux, uy = math.sin(mid), -math.cos(mid)
        tw, th = text_size(sec.label, s)
        rho = radius + K.PIE_LABEL_OFFSET * s
        while True:
            # the box is pushed outward so that its inner edge sits at rho
            bx = cx + ux * rho + ux * tw / 2
            by = cy + uy * rho + uy * th / 2
            x0 = min(max(0, round(bx - tw / 2)), canvas.res - tw)
            y0 = min(max(0, round(by - th / 2)), canvas.res - th)
            box = (x0, y0, x0 + tw, y0 + th)
            if not any(_boxes_overlap(box, other, margin) for other in placed):
                break
            if rho > canvas.res:
                raise InvalidSpec(f"no room for label {sec.label!r} at resolution {canvas.res}")
            rho += s
        placed.append(box)
        canvas.text(f"sector:{i}", sec.label, box[0], box[1], s)


def render(spec, resolution: int = K.RENDER_RESOLUTION):
    """Rasterize ``spec``; returns the image and one annotation per drawn text."""
    if resolution < 64:
        raise ValueError("resolution must be at least 64 pixels")
    report = validate_spec(spec)
    if not report.ok:
        raise InvalidSpec("; ".join(report.violations))
    canvas = _Canvas(resolution)
    if isinstance(spec, BarChartSpec):
        _render_bar(spec, canvas)
    elif isinstance(spec, PieChartSpec):
        _render_pie(spec, canvas)
    else:
        raise InvalidSpec(f"cannot render {type(spec).__name__}")
    return RasterImage(canvas.px), canvas.annotations


def element_annotation(annotations, index: int, chart_type: str) -> TextAnnotation:
    key = f"{'bar' if chart_type == 'bar' else 'sector'}:{index}"
    for ann in annotations:
        if ann.element_id == key:
            return ann
    raise KeyError(key)
