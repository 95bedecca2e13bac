import pytest
import torch

from chartnet.encoders import DeskBackbone, ImageEncoder, KnowledgeBase, QuestionEncoder, encode_image
from chartnet.errors import EmptyQuestion, ShapeMismatch
from chartnet.gradcheck import gradient_check


def test_desk_knowledge_base_is_14_by_14():
    torch.manual_seed(0)
    enc = ImageEncoder(d=32, input_resolution=224)
    kb = encode_image(torch.rand(224, 224, 3), enc)
    assert isinstance(kb, KnowledgeBase)
    assert (kb.H, kb.W, kb.d) == (14, 14, 32)
    assert kb.cells().shape == (1, 196, 32)
    assert torch.equal(kb.cells()[0, 15], kb.grid[0, 1, 1])  # row-major flattening


def test_image_encoder_rejects_wrong_shapes():
    enc = ImageEncoder(8, "desk", (4, 8), 16)
    with pytest.raises(ShapeMismatch):
        enc(torch.rand(1, 3, 16, 16))
    with pytest.raises(ShapeMismatch):
        enc(torch.rand(1, 32, 32, 3))


def test_unknown_backbone():
    with pytest.raises(ValueError):
        ImageEncoder(8, "vgg", (4, 8), 16)


def test_padding_never_changes_the_encoding():
    torch.manual_seed(1)
    enc = QuestionEncoder(20, 8, 6).eval()
    short = torch.tensor([[4, 7, 9, 3]])
    padded = torch.tensor([[4, 7, 9, 3, 0, 0, 0]])
    a, b = enc(short), enc(padded)
    assert torch.allclose(a.q, b.q, atol=1e-7)
    assert torch.allclose(a.contextual_words, b.contextual_words[:, :4], atol=1e-7)
    assert torch.all(b.contextual_words[:, 4:] == 0)
    assert b.lengths.tolist() == [4] and b.mask.tolist() == [[True] * 4 + [False] * 3]


def test_question_vector_halves_follow_the_word_layout():
    torch.manual_seed(2)
    enc = QuestionEncoder(20, 8, 6).eval()
    out = enc(torch.tensor([[4, 7, 9, 0], [5, 6, 0, 0]]))
    h = 6
    for row, n in enumerate((3, 2)):
        assert torch.allclose(out.q[row, :h], out.contextual_words[row, n - 1, :h])  # forward, last token
        assert torch.allclose(out.q[row, h:], out.contextual_words[row, 0, h:])  # backward, first token


def test_batched_questions_match_single_ones():
    torch.manual_seed(3)
    enc = QuestionEncoder(20, 8, 6).eval()
    batch = enc(torch.tensor([[4, 7, 9, 3], [5, 6, 0, 0]]))
    single = enc(torch.tensor([[5, 6]]))
    assert torch.allclose(batch.q[1], single.q[0], atol=1e-7)


def test_empty_question():
    enc = QuestionEncoder(20, 8, 6)
    with pytest.raises(EmptyQuestion):
        enc(torch.tensor([[0, 0, 0]]))


def test_backbone_gradient_matches_finite_differences():
    torch.manual_seed(4)
    backbone = DeskBackbone((3, 4)).double()
    image = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    weights = torch.randn(4, 2, 2, dtype=torch.float64)

    def scalar():
        return (backbone(image) * weights).sum()

    assert gradient_check(scalar, list(backbone.parameters())) < 1e-4
