"""Input unit: image -> knowledge base, question -> contextual words + vector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import EmptyQuestion, ShapeMismatch


@dataclass
class KnowledgeBase:
    grid: torch.Tensor  # (B, H, W, d)

    @property
    def H(self) -> int:
        return self.grid.shape[1]

    @property
    def W(self) -> int:
        return self.grid.shape[2]

    @property
    def d(self) -> int:
        return self.grid.shape[3]

    def cells(self) -> torch.Tensor:
        """Flattened (B, H*W, d) view in row-major cell order."""
        b, h, w, d = self.grid.shape
        return self.grid.reshape(b, h * w, d)


@dataclass
class QuestionEncoding:
    contextual_words: torch.Tensor  # (B, L, 2h), zero at padded positions
    q: torch.Tensor  # (B, 2h)
    mask: torch.Tensor  # (B, L) bool, True at real tokens
    lengths: torch.Tensor  # (B,) the unpadded length S


class DeskBackbone(nn.Module):
    """Strided 3x3 conv blocks trained from scratch; each block halves the
    spatial size, so four blocks map 224 -> 14."""

    def __init__(self, channels: Sequence[int] = (16, 32, 64, 64), in_channels: int = 3):
        super().__init__()
        layers = []
        prev = in_channels
        for ch in channels:
            layers += [nn.Conv2d(prev, ch, 3, stride=2, padding=1), nn.ELU()]
            prev = ch
        self.body = nn.Sequential(*layers)
        self.out_channels = prev
        self.stride = 2 ** len(channels)

    def forward(self, x):
        return self.body(x)


class PretrainedAdapter(nn.Module):
    """Frozen deep residual feature extractor cut after its conv4 stage.

    Weights are read from ``weights_path`` (a torchvision ResNet-101 state
    dict) when given; nothing is downloaded.
    """

    def __init__(self, weights_path: Optional[str] = None):
        super().__init__()
        from torchvision.models import resnet101

        net = resnet101(weights=None)
        if weights_path:
            net.load_state_dict(torch.load(weights_path, map_location="cpu"))
        self.body = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool, net.layer1, net.layer2, net.layer3)
        for p in self.body.parameters():
            p.requires_grad_(False)
        self.body.eval()
        self.out_channels = 1024
        self.stride = 16
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        self.register_buffer("mean", mean)
        self.register_buffer("std", std)

    def train(self, mode: bool = True):
        super().train(mode)
        self.body.eval()  # batch-norm statistics stay frozen
        return self

    def forward(self, x):
        with torch.no_grad():
            return self.body((x + 0.5 - self.mean) / self.std)


def make_backbone(kind: str = "desk", channels: Sequence[int] = (16, 32, 64, 64),
                  weights_path: Optional[str] = None) -> nn.Module:
    if kind == "desk":
        return DeskBackbone(channels)
    if kind == "pretrained-adapter":
        return PretrainedAdapter(weights_path)
    raise ValueError(f"unknown backbone {kind!r}")


class ImageEncoder(nn.Module):
    """Backbone followed by two 3x3 ELU conv layers of depth ``d``."""

    def __init__(self, d: int = 64, backbone: str = "desk", channels: Sequence[int] = (16, 32, 64, 64),
                 input_resolution: int = 224, weights_path: Optional[str] = None):
        super().__init__()
        self.backbone = make_backbone(backbone, channels, weights_path)
        self.post = nn.Sequential(
            nn.Conv2d(self.backbone.out_channels, d, 3, padding=1), nn.ELU(),
            nn.Conv2d(d, d, 3, padding=1), nn.ELU(),
        )
        self.d = d
        self.input_resolution = input_resolution
        self.grid_size = input_resolution // self.backbone.stride

    def forward(self, images: torch.Tensor) -> KnowledgeBase:
        """``images`` is (B, r, r, 3) with values in [0, 1]."""
        if images.dim() != 4 or images.shape[-1] != 3:
            raise ShapeMismatch(f"expected (B, r, r, 3) images, got {tuple(images.shape)}")
        if images.shape[1] != self.input_resolution or images.shape[2] != self.input_resolution:
            raise ShapeMismatch(
                f"expected {self.input_resolution}x{self.input_resolution} images, got {tuple(images.shape[1:3])}")
        x = images.permute(0, 3, 1, 2) - 0.5
        feats = self.post(self.backbone(x))
        return KnowledgeBase(feats.permute(0, 2, 3, 1))


def encode_image(image: torch.Tensor, encoder: ImageEncoder) -> KnowledgeBase:
    """Encode one (r, r, 3) image or a (B, r, r, 3) batch."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    return encoder(image)


class QuestionEncoder(nn.Module):
    """Word embeddings followed by a masked bidirectional LSTM.

    ``q`` is laid out like each contextual word, forward half first:
    ``[forward state after the last token; backward state after the first]``.
    """

    def __init__(self, vocab_size: int, embed_dim: int = 64, hidden: int = 128):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=0)
        self.rnn = nn.LSTM(embed_dim, hidden, batch_first=True, bidirectional=True)
        self.hidden = hidden

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    def forward(self, token_ids: torch.Tensor) -> QuestionEncoding:
        if token_ids.dim() == 1:
            token_ids = token_ids.unsqueeze(0)
        mask = token_ids != 0
        lengths = mask.sum(dim=1)
        if bool((lengths == 0).any()):
            raise EmptyQuestion("question has no non-padding tokens")
        # PAD may only trail; pack by the count of real tokens
        emb = self.embedding(token_ids)
        packed = pack_padded_sequence(emb, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, (h_n, _) = self.rnn(packed)
        cw, _ = pad_packed_sequence(out, batch_first=True, total_length=token_ids.shape[1])
        q = torch.cat([h_n[0], h_n[1]], dim=-1)
        return QuestionEncoding(cw, q, mask, lengths)


def encode_question(token_ids: torch.Tensor, encoder: QuestionEncoder) -> QuestionEncoding:
    return encoder(token_ids)
