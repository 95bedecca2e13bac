"""Comparison models: question-only LSTM, CNN+LSTM and CNN+LSTM with two
rounds of stacked soft spatial attention. All of them only answer from the
generic vocabulary."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Sequence

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence

from .encoders import ImageEncoder
from .errors import EmptyQuestion, MissingImage
from .mac import ModelOutput


class BaselineKind(str, enum.Enum):
    LSTM_ONLY = "lstm"
    CNN_LSTM = "cnn_lstm"
    CNN_LSTM_SA = "cnn_lstm_sa"


@dataclass
class BaselineConfig:
    vocab_size: int
    n_answers: int
    embed_dim: int = 64
    hidden: int = 128
    kb_dim: int = 64
    mlp_hidden: int = 512
    lstm_mlp_hidden: int = 1024
    attention_dim: int = 256
    backbone_channels: Sequence[int] = (16, 32, 64, 64)
    input_resolution: int = 224

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d


class LastStateLSTM(nn.Module):
    """Embedding + unidirectional LSTM; returns the state after the last real token."""

    def __init__(self, vocab_size: int, embed_dim: int, hidden: int):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=0)
        self.rnn = nn.LSTM(embed_dim, hidden, batch_first=True)

    def forward(self, token_ids):
        lengths = (token_ids != 0).sum(dim=1)
        if bool((lengths == 0).any()):
            raise EmptyQuestion("question has no non-padding tokens")
        packed = pack_padded_sequence(self.embedding(token_ids), lengths.cpu(), batch_first=True,
                                      enforce_sorted=False)
        _, (h_n, _) = self.rnn(packed)
        return h_n[-1]


class LstmOnly(nn.Module):
    has_regression = False
    needs_image = False
    kind = BaselineKind.LSTM_ONLY

    def __init__(self, config: BaselineConfig):
        super().__init__()
        self.config = config
        self.encoder = LastStateLSTM(config.vocab_size, config.embed_dim, config.hidden)
        self.mlp = nn.Sequential(nn.Linear(config.hidden, config.lstm_mlp_hidden), nn.ReLU(),
                                 nn.Linear(config.lstm_mlp_hidden, config.n_answers))

    def forward(self, images, token_ids, meta=None) -> ModelOutput:
        return ModelOutput(self.mlp(self.encoder(token_ids)))


class CnnLstm(nn.Module):
    has_regression = False
    needs_image = True
    kind = BaselineKind.CNN_LSTM

    def __init__(self, config: BaselineConfig):
        super().__init__()
        self.config = config
        self.image_encoder = ImageEncoder(config.kb_dim, "desk", config.backbone_channels, config.input_resolution)
        self.encoder = LastStateLSTM(config.vocab_size, config.embed_dim, config.hidden)
        self.mlp = nn.Sequential(nn.Linear(config.kb_dim + config.hidden, config.mlp_hidden), nn.ReLU(),
                                 nn.Linear(config.mlp_hidden, config.n_answers))

    def forward(self, images, token_ids, meta=None) -> ModelOutput:
        if images is None:
            raise MissingImage("CNN+LSTM needs an image")
        pooled = self.image_encoder(images).cells().mean(dim=1)
        q = self.encoder(token_ids)
        return ModelOutput(self.mlp(torch.cat([pooled, q], dim=-1)))


class CnnLstmSa(nn.Module):
    has_regression = False
    needs_image = True
    kind = BaselineKind.CNN_LSTM_SA
    rounds = 2

    def __init__(self, config: BaselineConfig):
        super().__init__()
        self.config = config
        a = config.attention_dim
        self.image_encoder = ImageEncoder(config.kb_dim, "desk", config.backbone_channels, config.input_resolution)
        self.encoder = LastStateLSTM(config.vocab_size, config.embed_dim, config.hidden)
        self.image_proj = nn.Linear(config.kb_dim, a)
        self.question_proj = nn.Linear(config.hidden, a)
        self.att_image = nn.ModuleList([nn.Linear(a, a, bias=False) for _ in range(self.rounds)])
        self.att_query = nn.ModuleList([nn.Linear(a, a) for _ in range(self.rounds)])
        self.att_logit = nn.ModuleList([nn.Linear(a, 1, bias=False) for _ in range(self.rounds)])
        self.classifier = nn.Linear(a, config.n_answers)

    def forward(self, images, token_ids, meta=None) -> ModelOutput:
        if images is None:
            raise MissingImage("CNN+LSTM+SA needs an image")
        v = torch.tanh(self.image_proj(self.image_encoder(images).cells()))  # (B, N, a)
        u = torch.tanh(self.question_proj(self.encoder(token_ids)))  # (B, a)
        maps = []
        for k in range(self.rounds):
            h = torch.tanh(self.att_image[k](v) + self.att_query[k](u).unsqueeze(1))
            p = torch.softmax(self.att_logit[k](h).squeeze(-1), dim=-1)
            u = u + torch.einsum("bn,bna->ba", p, v)
            maps.append(p)
        return ModelOutput(self.classifier(u), spatial_attention=maps)


BASELINES = {
    BaselineKind.LSTM_ONLY: LstmOnly,
    BaselineKind.CNN_LSTM: CnnLstm,
    BaselineKind.CNN_LSTM_SA: CnnLstmSa,
}


def make_baseline(kind, config: BaselineConfig) -> nn.Module:
    return BASELINES[BaselineKind(kind)](config)


@torch.no_grad()
def baseline_forward(kind, image, token_ids, params: nn.Module):
    """Answer distribution of a baseline; returns (distribution, attention maps)."""
    kind = BaselineKind(kind)
    if kind != BaselineKind.LSTM_ONLY and image is None:
        raise MissingImage(f"{kind.value} needs an image")
    if image is not None and image.dim() == 3:
        image = image.unsqueeze(0)
    if token_ids.dim() == 1:
        token_ids = token_ids.unsqueeze(0)
    out = params(image, token_ids)
    return torch.softmax(out.logits, dim=-1), out.spatial_attention
