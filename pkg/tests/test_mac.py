import math

import numpy as np
import pytest
import torch

from chartnet.encoders import KnowledgeBase, QuestionEncoding
from chartnet.errors import ShapeMismatch
from chartnet.gradcheck import finite_difference_report
from chartnet.mac import (ChartNet, ChartNetConfig, MACConfig, MACNetwork, MACUnits, OutputUnit, control_step,
                          output_heads, read_step, run_mac, write_step)
from chartnet.qa import CHART_SPECIFIC, GENERIC

DESK = ChartNetConfig(vocab_size=30, n_answers=14, embed_dim=16, hidden=16, kb_dim=16, p=4, head_hidden=32,
                      input_resolution=224)


def _set(linear, weight, bias=None):
    with torch.no_grad():
        linear.weight.copy_(torch.tensor(weight, dtype=linear.weight.dtype))
        if linear.bias is not None:
            linear.bias.zero_() if bias is None else linear.bias.copy_(torch.tensor(bias))


def test_control_unit_hand_case():
    units = MACUnits(2, 2).double()
    _set(units.control_in, [[1, 0, 0, 1], [0, 1, 1, 0]])
    _set(units.control_attn, [[1, 1]])
    c_prev = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    q_i = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    cw = torch.tensor([[[1.0, 2.0], [3.0, -1.0]]], dtype=torch.float64)
    # cq = [2, 0]; logits = (cq * cw) . [1, 1] = [2, 6]
    c, attn = units.control(c_prev, q_i, cw)
    a1 = 1 / (1 + math.exp(-4))
    assert attn[0].tolist() == pytest.approx([1 - a1, a1], abs=1e-12)
    assert c[0].tolist() == pytest.approx([1 + 2 * a1, 2 - 3 * a1], abs=1e-12)
    # masking the second word leaves all attention on the first
    c, attn = units.control(c_prev, q_i, cw, mask=torch.tensor([[True, False]]))
    assert attn[0].tolist() == [1.0, 0.0] and c[0].tolist() == [1.0, 2.0]


def test_read_unit_hand_case():
    units = MACUnits(2, 2).double()
    _set(units.kb_proj, [[1, 0], [0, 1]])
    _set(units.mem_proj, [[1, 0], [0, 1]])
    _set(units.read_combine, [[1, 0, 1, 0], [0, 1, 0, 1]])
    _set(units.read_attn, [[1, 0]])
    kb = KnowledgeBase(torch.tensor([[[[1.0, 0.0], [0.0, 1.0]], [[2.0, 0.0], [0.0, 0.0]]]], dtype=torch.float64))
    m = torch.ones(1, 2, dtype=torch.float64)
    c = torch.ones(1, 2, dtype=torch.float64)
    # interaction = m*kb + kb = 2*kb; logits are its first coordinate: [2, 0, 4, 0]
    out = read_step(m, c, kb, units)
    z = math.e ** 2 + math.e ** 4 + 2
    expected_rv = [math.e ** 2 / z, 1 / z, math.e ** 4 / z, 1 / z]
    assert out.rv[0].tolist() == pytest.approx(expected_rv, abs=1e-12)
    assert out.r[0].tolist() == pytest.approx([(math.e ** 2 + 2 * math.e ** 4) / z, 1 / z], abs=1e-12)


def test_write_unit_hand_case():
    units = MACUnits(2, 2).double()
    _set(units.write, [[1, 2, 0, 1], [0, 1, 1, 0]], [0.5, -0.5])
    m = write_step(torch.tensor([[3.0, 4.0]], dtype=torch.float64), torch.tensor([[1.0, 2.0]], dtype=torch.float64),
                   None, units)
    assert m[0].tolist() == [9.5, 4.5]  # W [r; m] + b with [r; m] = [1, 2, 3, 4]


def _inputs(batch=2, n_words=5, dc=8, d=6, grid=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    kb = KnowledgeBase(torch.randn(batch, grid, grid, d, generator=g))
    cw = torch.randn(batch, n_words, dc, generator=g)
    mask = torch.ones(batch, n_words, dtype=torch.bool)
    mask[1, 3:] = False
    cw = cw * mask.unsqueeze(-1)
    return kb, QuestionEncoding(cw, torch.randn(batch, dc, generator=g), mask, mask.sum(1))


def test_permuting_cells_permutes_read_attention():
    torch.manual_seed(0)
    units = MACUnits(8, 6)
    kb, _ = _inputs()
    cells = kb.cells()
    m, c = torch.randn(2, 8), torch.randn(2, 8)
    perm = torch.randperm(cells.shape[1])
    a = units.read(m, c, cells)
    b = units.read(m, c, cells[:, perm])
    assert torch.allclose(b.rv, a.rv[:, perm], atol=1e-6)
    assert torch.allclose(b.r, a.r, atol=1e-6)


def test_step_count_and_traces():
    torch.manual_seed(1)
    kb, qenc = _inputs()
    for p in (1, 4):
        net = MACNetwork(MACConfig(p=p, d_ctrl=8), 6)
        m_p, traces = run_mac(kb, qenc, net.config, net)
        assert m_p.shape == (2, 8) and torch.isfinite(m_p).all()
        assert len(traces.word_attention) == len(traces.spatial_attention) == p
        for wa in traces.word_attention:
            assert wa.shape == (2, 5) and torch.all(wa[1, 3:] == 0)
        assert all(rv.shape == (2, 9) for rv in traces.spatial_attention)


def test_run_mac_rejects_mismatched_config():
    net = MACNetwork(MACConfig(p=2, d_ctrl=8), 6)
    kb, qenc = _inputs()
    with pytest.raises(ShapeMismatch):
        run_mac(kb, qenc, MACConfig(p=3, d_ctrl=8), net)
    with pytest.raises(ShapeMismatch):
        control_step(torch.zeros(2, 8), qenc.q, qenc.contextual_words, 2, net)
    with pytest.raises(ShapeMismatch):
        net.cell(0).read(torch.zeros(2, 8), torch.zeros(2, 8), torch.zeros(2, 9, 5))
    with pytest.raises(ValueError):
        MACConfig(p=0)


def test_weight_sharing_switch():
    shared = MACNetwork(MACConfig(p=3, d_ctrl=8, share_cell_weights=True), 6)
    separate = MACNetwork(MACConfig(p=3, d_ctrl=8, share_cell_weights=False), 6)
    assert len(shared.cells) == 1 and len(separate.cells) == 3
    assert len(shared.q_step) == len(separate.q_step) == 3
    assert shared.cell(2) is shared.cell(0) and separate.cell(2) is not separate.cell(0)


def test_full_model_shapes_and_determinism():
    torch.manual_seed(2)
    model = ChartNet(DESK).eval()
    images = torch.rand(3, 224, 224, 3)
    tokens = torch.randint(2, 30, (3, 7))
    tokens[0, 5:] = 0
    a = model(images, tokens)
    b = model(images, tokens)
    assert a.logits.shape == (3, 14) and a.boxes.shape == (3, 4)
    assert torch.all((a.boxes > 0) & (a.boxes < 1))
    assert len(a.word_attention) == 4 and a.spatial_attention[0].shape == (3, 196)
    assert torch.equal(a.logits, b.logits) and torch.equal(a.boxes, b.boxes)


def test_output_heads_route_by_kind():
    torch.manual_seed(3)
    head = OutputUnit(12, 5, hidden=16)
    m_p, q = torch.randn(8), torch.randn(4)
    gen = output_heads(m_p, q, head, GENERIC)
    assert gen.box is None and gen.class_distribution.shape == (5,)
    assert abs(gen.class_distribution.sum() - 1) < 1e-6
    spec = output_heads(m_p, q, head, CHART_SPECIFIC)
    assert spec.class_distribution is None and spec.box.shape == (4,)
    with pytest.raises(ValueError):
        output_heads(m_p, q, head, "other")
    with pytest.raises(ShapeMismatch):
        head(torch.randn(1, 8), torch.randn(1, 3))


def test_mac_cell_gradients_where_measurable():
    """Autograd agrees with central differences on every coordinate whose
    gradient rises clearly above finite-difference round-off."""
    torch.manual_seed(4)
    net = MACNetwork(MACConfig(p=2, d_ctrl=4), 3).double()
    kb, qenc = _inputs(batch=2, n_words=3, dc=4, d=3, grid=2, seed=4)
    kb = KnowledgeBase(kb.grid.double())
    qenc = QuestionEncoding(qenc.contextual_words.double(), qenc.q.double(), qenc.mask, qenc.lengths)
    target = torch.randn(2, 4, dtype=torch.float64)
    report = finite_difference_report(lambda: ((net(kb, qenc)[0] - target) ** 2).sum(), list(net.parameters()))
    measurable = np.abs(report.analytic) > 1e-6
    assert measurable.mean() > 0.5
    assert report.errors[measurable].max() < 1e-4
    assert np.abs(report.analytic - report.numeric).max() < 1e-9
