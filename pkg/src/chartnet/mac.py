"""The recurrent MAC cell, the dual-head output unit and the full ChartNet model.

Shapes are batch-first throughout: contextual words (B, S, dc), knowledge
base cells (B, N, d), control and memory (B, dc).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoders import ImageEncoder, KnowledgeBase, QuestionEncoder, QuestionEncoding
from .errors import ShapeMismatch
from .qa import CHART_SPECIFIC, GENERIC


@dataclass
class MACConfig:
    p: int = 6
    d_ctrl: int = 256
    share_cell_weights: bool = True

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if self.d_ctrl <= 0:
            raise ValueError("d_ctrl must be positive")


@dataclass
class MACState:
    c: torch.Tensor
    m: torch.Tensor
    i: int = 0


@dataclass
class ReadOutput:
    r: torch.Tensor  # (B, dc)
    rv: torch.Tensor  # (B, N)


@dataclass
class MACTraces:
    word_attention: list[torch.Tensor] = field(default_factory=list)  # p x (B, S)
    spatial_attention: list[torch.Tensor] = field(default_factory=list)  # p x (B, N)


def _check_last(t: torch.Tensor, dim: int, what: str):
    if t.shape[-1] != dim:
        raise ShapeMismatch(f"{what} has trailing size {t.shape[-1]}, expected {dim}")


class MACUnits(nn.Module):
    """Weights of one control/read/write cell."""

    def __init__(self, dc: int, kb_dim: int):
        super().__init__()
        self.dc = dc
        self.kb_dim = kb_dim
        # control
        self.control_in = nn.Linear(2 * dc, dc)
        self.control_attn = nn.Linear(dc, 1, bias=False)  # softmax is shift-invariant
        # read
        self.kb_proj = nn.Linear(kb_dim, dc)
        self.mem_proj = nn.Linear(dc, dc)
        self.read_combine = nn.Linear(2 * dc, dc)
        self.read_attn = nn.Linear(dc, 1, bias=False)
        # write
        self.write = nn.Linear(2 * dc, dc)

    def control(self, c_prev, q_i, cw, mask=None):
        _check_last(c_prev, self.dc, "control state")
        _check_last(q_i, self.dc, "position-aware question")
        _check_last(cw, self.dc, "contextual words")
        cq = self.control_in(torch.cat([c_prev, q_i], dim=-1))
        logits = self.control_attn(cq.unsqueeze(1) * cw).squeeze(-1)
        if mask is not None:
            logits = logits.masked_fill(~mask, float("-inf"))
        attn = torch.softmax(logits, dim=-1)
        c = torch.einsum("bs,bsd->bd", attn, cw)
        return c, attn

    def prepare(self, cells):
        """Step-invariant part of the read unit: projected cells and their
        direct contribution to the interaction layer."""
        _check_last(cells, self.kb_dim, "knowledge base")
        kp = self.kb_proj(cells)
        w = self.read_combine.weight
        direct = F.linear(kp, w[:, self.dc:], self.read_combine.bias)
        return kp, direct

    def read(self, m_prev, c_i, cells, prepared=None):
        _check_last(m_prev, self.dc, "memory state")
        _check_last(c_i, self.dc, "control state")
        kp, direct = prepared if prepared is not None else self.prepare(cells)
        # read_combine([mem * kp; kp]) split into its two column blocks
        inter = self.mem_proj(m_prev).unsqueeze(1) * kp
        inter = F.linear(inter, self.read_combine.weight[:, :self.dc]) + direct
        logits = self.read_attn(F.elu(c_i.unsqueeze(1) * inter)).squeeze(-1)
        rv = torch.softmax(logits, dim=-1)
        r = torch.einsum("bn,bnd->bd", rv, kp)
        return ReadOutput(r, rv)

    def write_memory(self, m_prev, r_i, c_i=None):
        _check_last(m_prev, self.dc, "memory state")
        _check_last(r_i, self.dc, "retrieved information")
        return self.write(torch.cat([r_i, m_prev], dim=-1))


class MACNetwork(nn.Module):
    """p recurrent MAC steps over a knowledge base and question encoding."""

    def __init__(self, config: MACConfig, kb_dim: int):
        super().__init__()
        self.config = config
        dc = config.d_ctrl
        n_cells = 1 if config.share_cell_weights else config.p
        self.cells = nn.ModuleList([MACUnits(dc, kb_dim) for _ in range(n_cells)])
        # position-aware question transforms are never shared
        self.q_step = nn.ModuleList([nn.Linear(dc, dc) for _ in range(config.p)])
        self.c0 = nn.Parameter(torch.randn(dc) * 0.1)
        self.m0 = nn.Parameter(torch.randn(dc) * 0.1)

    def cell(self, i: int) -> MACUnits:
        return self.cells[0 if len(self.cells) == 1 else i]

    def initial_state(self, batch: int) -> MACState:
        return MACState(self.c0.expand(batch, -1), self.m0.expand(batch, -1), 0)

    def forward(self, kb: KnowledgeBase, qenc: QuestionEncoding):
        cells = kb.cells()
        state = self.initial_state(cells.shape[0])
        traces = MACTraces()
        prepared = {}
        for i in range(self.config.p):
            c, m, wa, rv = self.step(state, i, qenc, cells, prepared)
            traces.word_attention.append(wa)
            traces.spatial_attention.append(rv)
            state = MACState(c, m, i + 1)
        return state.m, traces

    def step(self, state: MACState, i: int, qenc: QuestionEncoding, cells, prepared=None):
        unit = self.cell(i)
        q_i = self.q_step[i](qenc.q)
        c, wa = unit.control(state.c, q_i, qenc.contextual_words, qenc.mask)
        cache = None
        if prepared is not None:
            key = id(unit)
            if key not in prepared:
                prepared[key] = unit.prepare(cells)
            cache = prepared[key]
        read = unit.read(state.m, c, cells, cache)
        m = unit.write_memory(state.m, read.r, c)
        return c, m, wa, read.rv


def control_step(c_prev, q, contextual_words, step_index: int, params: MACNetwork, mask=None):
    """One control update; returns (c_i, word_attention)."""
    if step_index >= params.config.p:
        raise ShapeMismatch(f"step {step_index} >= p={params.config.p}")
    q_i = params.q_step[step_index](q)
    return params.cell(step_index).control(c_prev, q_i, contextual_words, mask)


def read_step(m_prev, c_i, kb, params: MACUnits) -> ReadOutput:
    cells = kb.cells() if isinstance(kb, KnowledgeBase) else kb
    return params.read(m_prev, c_i, cells)


def write_step(m_prev, r_i, c_i, params: MACUnits):
    return params.write_memory(m_prev, r_i, c_i)


def run_mac(kb: KnowledgeBase, question_encoding: QuestionEncoding, config: MACConfig, params: MACNetwork):
    if config.p != params.config.p:
        raise ShapeMismatch(f"config p={config.p} but parameters were built for p={params.config.p}")
    return params(kb, question_encoding)


class OutputUnit(nn.Module):
    """Classifier and box regressor heads over ``[m_p; q]``."""

    def __init__(self, in_dim: int, n_answers: int, hidden: int = 512):
        super().__init__()
        self.in_dim = in_dim
        self.classifier = nn.Sequential(nn.Linear(in_dim, hidden), nn.ELU(), nn.Linear(hidden, n_answers))
        self.regressor = nn.Sequential(nn.Linear(in_dim, hidden), nn.ELU(), nn.Linear(hidden, 4))

    def forward(self, m_p, q):
        feats = torch.cat([m_p, q], dim=-1)
        _check_last(feats, self.in_dim, "output features")
        return self.classifier(feats), torch.sigmoid(self.regressor(feats))


@dataclass
class Prediction:
    kind: str
    class_distribution: Optional[np.ndarray] = None
    box: Optional[np.ndarray] = None


def output_heads(m_p, q, head_params: OutputUnit, kind: str) -> Prediction:
    """Route one example through the head selected by ``kind``."""
    if m_p.dim() == 1:
        m_p, q = m_p.unsqueeze(0), q.unsqueeze(0)
    logits, box = head_params(m_p, q)
    if kind == GENERIC:
        return Prediction(GENERIC, class_distribution=torch.softmax(logits, -1)[0].detach().cpu().numpy())
    if kind == CHART_SPECIFIC:
        return Prediction(CHART_SPECIFIC, box=box[0].detach().cpu().numpy())
    raise ValueError(f"unknown kind {kind!r}")


@dataclass
class ModelOutput:
    logits: torch.Tensor  # (B, V)
    boxes: Optional[torch.Tensor] = None  # (B, 4) in (0, 1)
    word_attention: list = field(default_factory=list)
    spatial_attention: list = field(default_factory=list)


@dataclass
class ChartNetConfig:
    vocab_size: int
    n_answers: int
    embed_dim: int = 64
    hidden: int = 128
    kb_dim: int = 64
    p: int = 6
    share_cell_weights: bool = True
    head_hidden: int = 512
    backbone: str = "desk"
    backbone_channels: Sequence[int] = (16, 32, 64, 64)
    input_resolution: int = 224
    pretrained_weights: Optional[str] = None

    def mac_config(self) -> MACConfig:
        return MACConfig(self.p, 2 * self.hidden, self.share_cell_weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d


class ChartNet(nn.Module):
    has_regression = True
    needs_image = True

    def __init__(self, config: ChartNetConfig):
        super().__init__()
        self.config = config
        self.image_encoder = ImageEncoder(config.kb_dim, config.backbone, config.backbone_channels,
                                          config.input_resolution, config.pretrained_weights)
        self.question_encoder = QuestionEncoder(config.vocab_size, config.embed_dim, config.hidden)
        self.mac = MACNetwork(config.mac_config(), config.kb_dim)
        self.output = OutputUnit(4 * config.hidden, config.n_answers, config.head_hidden)

    def forward(self, images, token_ids, meta=None) -> ModelOutput:
        kb = self.image_encoder(images)
        qenc = self.question_encoder(token_ids)
        m_p, traces = self.mac(kb, qenc)
        logits, boxes = self.output(m_p, qenc.q)
        return ModelOutput(logits, boxes, traces.word_attention, traces.spatial_attention)
