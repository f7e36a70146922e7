"""Shared transformer blocks, token embeddings and training utilities."""

from __future__ import annotations

import math
import random

import numpy as np
import torch
from torch import nn

POLYGON_VARIANTS = ("I", "II", "III", "IV")


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def make_encoder(d_model: int, heads: int, d_ff: int, layers: int, dropout: float) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(d_model, heads, d_ff, dropout, activation="gelu", batch_first=True, norm_first=True)
    return nn.TransformerEncoder(layer, layers, norm=nn.LayerNorm(d_model), enable_nested_tensor=False)


def make_decoder(d_model: int, heads: int, d_ff: int, layers: int, dropout: float) -> nn.TransformerDecoder:
    layer = nn.TransformerDecoderLayer(d_model, heads, d_ff, dropout, activation="gelu", batch_first=True, norm_first=True)
    return nn.TransformerDecoder(layer, layers, norm=nn.LayerNorm(d_model))


def causal_mask(n: int, device=None) -> torch.Tensor:
    return torch.triu(torch.ones(n, n, dtype=torch.bool, device=device), diagonal=1)


def warmup_cosine(step: int, warmup: int, total: int, floor: float = 0.1) -> float:
    """LR multiplier: linear warm-up, then cosine decay to ``floor``."""
    if step < warmup:
        return (step + 1) / warmup
    if total <= warmup:
        return 1.0
    t = min(1.0, (step - warmup) / max(1, total - warmup))
    return floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * t))


class TokenMLP(nn.Module):
    """Two-layer projection from concatenated field embeddings to a model token."""

    def __init__(self, d_in: int, d_model: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(d_in, d_model), nn.GELU(), nn.Linear(d_model, d_model))

    def forward(self, x):
        return self.net(x)


class EmbeddingTables(nn.Module):
    """``grid`` is shared by every spatial field; ``types`` embeds room labels.

    The type table carries two extra rows: a front-door tag and a
    boundary label, used only by the labelled polygon variants.
    """

    def __init__(self, bits: int, num_types: int, embed_dim: int, d_model: int, max_seq: int):
        super().__init__()
        self.grid = nn.Embedding(1 << bits, embed_dim)
        self.types = nn.Embedding(num_types + 2, embed_dim)
        self.gamma = nn.Embedding(max_seq, d_model)
        self.door_tag = num_types
        self.boundary_label = num_types + 1


class LayoutEmbedding(nn.Module):
    """Room tuples (x, y, w, h, c) -> content tokens (positional term added separately)."""

    n_spatial = 4

    def __init__(self, bits, num_types, embed_dim, d_model, max_seq):
        super().__init__()
        self.tables = EmbeddingTables(bits, num_types, embed_dim, d_model, max_seq)
        self.mlp = TokenMLP(5 * embed_dim, d_model)

    def content(self, fields: torch.Tensor, is_prefix: torch.Tensor | None = None) -> torch.Tensor:
        g = self.tables.grid(fields[..., :4])  # [B, T, 4, e]
        c = self.tables.types(fields[..., 4]).unsqueeze(-2)
        x = torch.cat([g, c], dim=-2).flatten(-2)
        return self.mlp(x)


class PolygonEmbedding(nn.Module):
    """Vertex rows -> content tokens for one of the four label variants.

    Rows are ``(x, y, label)``. Variant IV ignores the label; I and II feed
    it to every vertex (II callers put the door tag on door vertices); III
    turns rows flagged ``is_prefix`` into a single label token.
    """

    def __init__(self, bits, num_types, embed_dim, d_model, max_seq, variant: str = "IV"):
        super().__init__()
        if variant not in POLYGON_VARIANTS:
            raise ValueError(f"unknown polygon type encoding {variant!r}")
        self.variant = variant
        self.tables = EmbeddingTables(bits, num_types, embed_dim, d_model, max_seq)
        labelled = variant in ("I", "II")
        self.mlp = TokenMLP((3 if labelled else 2) * embed_dim, d_model)
        if variant == "III":
            self.prefix = nn.Linear(embed_dim, d_model)

    def content(self, fields: torch.Tensor, is_prefix: torch.Tensor | None = None) -> torch.Tensor:
        g = self.tables.grid(fields[..., :2]).flatten(-2)
        if self.variant in ("I", "II"):
            g = torch.cat([g, self.tables.types(fields[..., 2])], dim=-1)
        out = self.mlp(g)
        if self.variant == "III" and is_prefix is not None:
            pre = self.prefix(self.tables.types(fields[..., 2]))
            out = torch.where(is_prefix.unsqueeze(-1), pre, out)
        return out


def masked_mean(x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    w = valid.unsqueeze(-1).to(x.dtype)
    return (x * w).sum(1) / w.sum(1).clamp_min(1.0)
