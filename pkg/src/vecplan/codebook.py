"""Masked VQ-VAEs that learn the layout and polygon codebooks."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import Floorplan, RoomPolygon, rescale_coord
from .layers import (
    POLYGON_VARIANTS,
    LayoutEmbedding,
    PolygonEmbedding,
    make_decoder,
    make_encoder,
    masked_mean,
    set_seed,
    warmup_cosine,
)

log = logging.getLogger(__name__)

LEVELS = ("layout", "polygon")


class DivergenceError(RuntimeError):
    pass


@dataclass
class VQVAEConfig:
    level: str = "layout"
    d_model: int = 256
    d_ff: int = 512
    layers: int = 4
    heads: int = 8
    dropout: float = 0.1
    embed_dim: int = 32
    codebook_size: int = 6000
    beta: float = 0.25
    mask_lo: float = 0.30
    mask_hi: float = 0.70
    bits: int = 6
    grid_bits: int = 6
    num_types: int = 6
    type_encoding: str = "IV"
    max_rooms: int = 20
    max_vertices: int = 40
    decay: float = 0.99
    eps: float = 1e-5
    batch_size: int = 512
    epochs: int = 500
    warmup: int = 200
    lr: float = 1e-3
    weight_decay: float = 0.01
    dead_code_restart: bool = True

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}")
        if not 0 <= self.mask_lo <= self.mask_hi <= 1:
            raise ValueError("need 0 <= mask_lo <= mask_hi <= 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.type_encoding not in POLYGON_VARIANTS:
            raise ValueError(f"type_encoding must be one of {POLYGON_VARIANTS}")
        if self.bits not in (5, 6, 7):
            raise ValueError("bits must be 5, 6 or 7")

    @property
    def max_seq(self) -> int:
        return self.max_rooms if self.level == "layout" else self.max_vertices + 1


# --------------------------------------------------------------------------- codebook


class Codebook(nn.Module):
    """Codewords with exponential-moving-average accumulators."""

    def __init__(self, size: int, dim: int, decay: float = 0.99, eps: float = 1e-5):
        super().__init__()
        self.decay = decay
        self.eps = eps
        embed = torch.randn(size, dim) * 0.1
        self.register_buffer("embed", embed)
        self.register_buffer("ema_count", torch.ones(size))
        self.register_buffer("ema_sum", embed.clone())

    @property
    def size(self) -> int:
        return self.embed.shape[0]

    @torch.no_grad()
    def init_from(self, feats: torch.Tensor, gen: torch.Generator | None = None) -> None:
        """Seed every codeword with a (jittered) sample of encoder outputs."""
        idx = torch.randint(len(feats), (self.size,), generator=gen)
        std = feats.std(0, unbiased=False).clamp_min(1e-4)
        noise = torch.randn(self.embed.shape, generator=gen) * std * 0.1
        self.embed.copy_(feats[idx] + noise)
        self.ema_sum.copy_(self.embed)
        self.ema_count.fill_(1.0)

    def quantize(self, feats: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return vector_quantize(feats, self)

    @torch.no_grad()
    def ema_update(self, indices: torch.Tensor, feats: torch.Tensor) -> "Codebook":
        lam = self.decay
        k = self.size
        indices = indices.reshape(-1)
        feats = feats.reshape(len(indices), -1).to(self.embed.dtype)
        counts = torch.bincount(indices, minlength=k).to(self.embed.dtype)
        sums = torch.zeros_like(self.ema_sum).index_add_(0, indices, feats)
        self.ema_count.mul_(lam).add_(counts, alpha=1 - lam)
        self.ema_sum.mul_(lam).add_(sums, alpha=1 - lam)
        total = self.ema_count.sum()
        smoothed = (self.ema_count + self.eps) / (total + k * self.eps) * total
        hit = counts > 0
        self.embed[hit] = self.ema_sum[hit] / smoothed[hit].unsqueeze(-1)
        return self

    @torch.no_grad()
    def restart(self, dead: torch.Tensor, feats: torch.Tensor, gen: torch.Generator | None = None) -> int:
        """Move unused codewords onto random recent encoder outputs."""
        n = int(dead.sum())
        if n == 0 or len(feats) == 0:
            return 0
        pick = feats[torch.randint(len(feats), (n,), generator=gen)]
        std = feats.std(0, unbiased=False).clamp_min(1e-4) if len(feats) > 1 else torch.full_like(feats[0], 1e-2)
        pick = pick + torch.randn(pick.shape, generator=gen) * std * 0.05
        self.embed[dead] = pick
        self.ema_sum[dead] = pick
        self.ema_count[dead] = 1.0
        return n


def vector_quantize(feats: torch.Tensor, cb: Codebook | torch.Tensor, chunk: int = 1 << 22) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest codeword by squared Euclidean distance; ties go to the lowest index.

    ``feats`` may be a single vector or a batch ``[N, d]``.
    """
    embed = cb.embed if isinstance(cb, Codebook) else cb
    if embed.shape[0] == 0:
        raise ValueError("empty codebook")
    single = feats.dim() == 1
    f = feats.unsqueeze(0) if single else feats
    if f.shape[-1] != embed.shape[-1]:
        raise ValueError(f"feature dim {f.shape[-1]} != codeword dim {embed.shape[-1]}")
    e = embed.to(f.dtype)
    rows = max(1, chunk // (embed.shape[0] * embed.shape[1]))
    idx = []
    for s in range(0, len(f), rows):
        d = ((f[s : s + rows, None, :].detach() - e[None]) ** 2).sum(-1)
        idx.append(d.argmin(-1))  # argmin returns the first minimum
    index = torch.cat(idx)
    codes = embed[index].to(f.dtype)
    if single:
        return index[0], codes[0]
    return index, codes


def ema_update(cb: Codebook, assignments: Sequence[tuple[int, torch.Tensor]]) -> Codebook:
    if not assignments:
        return cb.ema_update(torch.zeros(0, dtype=torch.long), torch.zeros(0, cb.embed.shape[1]))
    idx = torch.tensor([a[0] for a in assignments], dtype=torch.long)
    feats = torch.stack([torch.as_tensor(a[1]) for a in assignments])
    return cb.ema_update(idx, feats)


# --------------------------------------------------------------------------- losses


def emd_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Squared earth mover's distance between distributions over ordered bins.

    ``target`` is either a distribution of the same shape or integer bin
    indices (one-hot targets). Reduces over the last axis only.
    """
    if target.dtype in (torch.int64, torch.int32):
        target = F.one_hot(target, pred.shape[-1]).to(pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = torch.cumsum(pred, -1) - torch.cumsum(target, -1)
    return (diff**2).mean(-1)


def commitment_loss(feature: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
    return ((feature - code.detach()) ** 2).sum(-1)


def vqvae_loss(probs: Sequence[torch.Tensor], targets: torch.Tensor, mask: torch.Tensor,
               feature: torch.Tensor, code: torch.Tensor, beta: float = 0.25) -> dict[str, torch.Tensor]:
    """Masked-position EMD reconstruction plus beta-weighted commitment.

    ``probs[f]`` is ``[B, T, V_f]``, ``targets`` ``[B, T, F]``, ``mask``
    ``[B, T]`` (True where the position was hidden). Per-sample sums are
    averaged over the batch.
    """
    recon = torch.zeros(targets.shape[:2], dtype=feature.dtype, device=feature.device)
    for f, p in enumerate(probs):
        recon = recon + emd_loss(p, targets[..., f])
    recon = (recon * mask.to(recon.dtype)).sum(-1).mean()
    commit = commitment_loss(feature, code).mean()
    return {"recon": recon, "commit": commit, "total": recon + beta * commit}


# --------------------------------------------------------------------------- sequence encoding


def layout_rows(fp: Floorplan, bits: int) -> np.ndarray:
    rows = []
    for r in fp.rooms:
        b = r.box
        x, y = rescale_coord(b.x, fp.grid_bits, bits), rescale_coord(b.y, fp.grid_bits, bits)
        x2, y2 = rescale_coord(b.x + b.w, fp.grid_bits, bits), rescale_coord(b.y + b.h, fp.grid_bits, bits)
        top = (1 << bits) - 1
        rows.append((x, y, min(max(x2 - x, 1), top), min(max(y2 - y, 1), top), b.c))
    return np.array(rows, dtype=np.int64).reshape(-1, 5)


def polygon_rows(poly: RoomPolygon, label: int, grid_bits: int, bits: int, variant: str = "IV",
                 door_tag: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vertex rows ``(x, y, label)`` and the prefix flags for one polygon."""
    rows = [(rescale_coord(x, grid_bits, bits), rescale_coord(y, grid_bits, bits), label) for x, y in poly.vertices]
    if variant == "II" and poly.door_encoded and door_tag is not None:
        rows[0] = rows[0][:2] + (door_tag,)
        rows[1] = rows[1][:2] + (door_tag,)
    prefix = [False] * len(rows)
    if variant == "III":
        rows = [(0, 0, label)] + rows
        prefix = [True] + prefix
    return np.array(rows, dtype=np.int64).reshape(-1, 3), np.array(prefix, dtype=bool)


@dataclass
class SeqBatch:
    fields: torch.Tensor  # [B, T, F]
    valid: torch.Tensor  # [B, T]
    prefix: torch.Tensor  # [B, T]


def collate(seqs: Sequence[tuple[np.ndarray, np.ndarray]]) -> SeqBatch:
    t = max(len(s[0]) for s in seqs)
    nf = seqs[0][0].shape[1]
    fields = np.zeros((len(seqs), t, nf), dtype=np.int64)
    valid = np.zeros((len(seqs), t), dtype=bool)
    prefix = np.zeros((len(seqs), t), dtype=bool)
    for i, (rows, pre) in enumerate(seqs):
        fields[i, : len(rows)] = rows
        valid[i, : len(rows)] = True
        prefix[i, : len(rows)] = pre
    return SeqBatch(torch.from_numpy(fields), torch.from_numpy(valid), torch.from_numpy(prefix))


def sequences_for(level: str, plans: Sequence[Floorplan], cfg: VQVAEConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Training sequences: one per plan (layout) or one per room and boundary (polygon)."""
    out = []
    boundary_label = cfg.num_types + 1
    for fp in plans:
        if level == "layout":
            rows = layout_rows(fp, cfg.bits)
            out.append((rows, np.zeros(len(rows), dtype=bool)))
        else:
            out.append(polygon_rows(fp.boundary, boundary_label, fp.grid_bits, cfg.bits, cfg.type_encoding, cfg.num_types))
            for r in fp.rooms:
                out.append(polygon_rows(r.polygon, r.type, fp.grid_bits, cfg.bits, cfg.type_encoding, cfg.num_types))
    return out


def sample_mask(valid: np.ndarray, rng: np.random.Generator, lo: float, hi: float,
                prefix: np.ndarray | None = None, ratio: float | None = None) -> np.ndarray:
    """Per-row random mask over valid (non-prefix) positions.

    Each row masks ``round(r * n)`` positions with ``r ~ U[lo, hi]``, at
    least one when ``lo > 0``.
    """
    mask = np.zeros_like(valid)
    for i in range(valid.shape[0]):
        cand = np.nonzero(valid[i] & (~prefix[i] if prefix is not None else True))[0]
        n = len(cand)
        r = rng.uniform(lo, hi) if ratio is None else ratio
        k = int(round(r * n))
        if lo > 0:
            k = max(k, 1)
        k = min(k, n)
        if k:
            mask[i, rng.choice(cand, size=k, replace=False)] = True
    return mask


def apply_mask(tokens: torch.Tensor, rng: np.random.Generator, lo: float, hi: float,
               mask_token: torch.Tensor, ratio: float | None = None) -> tuple[torch.Tensor, set[int]]:
    """Replace a random ``round(r * len)`` subset of a ``[T, d]`` token sequence."""
    valid = np.ones((1, tokens.shape[0]), dtype=bool)
    m = sample_mask(valid, rng, lo, hi, ratio=ratio)[0]
    out = torch.where(torch.from_numpy(m).unsqueeze(-1), mask_token.expand_as(tokens), tokens)
    return out, set(np.nonzero(m)[0].tolist())


# --------------------------------------------------------------------------- model


class MaskedVQVAE(nn.Module):
    def __init__(self, cfg: VQVAEConfig):
        super().__init__()
        self.cfg = cfg
        grid = 1 << cfg.bits
        if cfg.level == "layout":
            self.embed = LayoutEmbedding(cfg.bits, cfg.num_types, cfg.embed_dim, cfg.d_model, cfg.max_seq)
            self.vocab_sizes = [grid] * 4 + [cfg.num_types]
        else:
            self.embed = PolygonEmbedding(cfg.bits, cfg.num_types, cfg.embed_dim, cfg.d_model, cfg.max_seq, cfg.type_encoding)
            self.vocab_sizes = [grid, grid]
        self.encoder = make_encoder(cfg.d_model, cfg.heads, cfg.d_ff, cfg.layers, cfg.dropout)
        self.codebook = Codebook(cfg.codebook_size, cfg.d_model, cfg.decay, cfg.eps)
        self.mask_token = nn.Parameter(torch.randn(cfg.d_model) * 0.02)
        self.decoder = make_decoder(cfg.d_model, cfg.heads, cfg.d_ff, cfg.layers, cfg.dropout)
        self.heads = nn.ModuleList(nn.Linear(cfg.d_model, v) for v in self.vocab_sizes)

    def positions(self, t: int) -> torch.Tensor:
        if t > self.cfg.max_seq:
            raise ValueError(f"sequence length {t} exceeds max_seq {self.cfg.max_seq}")
        return self.embed.tables.gamma(torch.arange(t))

    def tokens(self, batch: SeqBatch) -> torch.Tensor:
        return self.embed.content(batch.fields, batch.prefix) + self.positions(batch.fields.shape[1])

    def encode_pool(self, batch: SeqBatch) -> torch.Tensor:
        if batch.fields.shape[1] == 0 or not bool(batch.valid.any(1).all()):
            raise ValueError("cannot encode an empty sequence")
        h = self.encoder(self.tokens(batch), src_key_padding_mask=~batch.valid)
        return masked_mean(h, batch.valid)

    def decode_masked(self, code: torch.Tensor, batch: SeqBatch, mask: torch.Tensor) -> list[torch.Tensor]:
        """Per-field probabilities at every position, conditioned on the code."""
        if code.shape[-1] != self.cfg.d_model:
            raise ValueError(f"code dim {code.shape[-1]} != d_model {self.cfg.d_model}")
        content = self.embed.content(batch.fields, batch.prefix)
        content = torch.where(mask.unsqueeze(-1), self.mask_token.expand_as(content), content)
        x = content + self.positions(batch.fields.shape[1])
        h = self.decoder(x, code.unsqueeze(1), tgt_key_padding_mask=~batch.valid)
        return [F.softmax(head(h), dim=-1) for head in self.heads]

    def targets(self, batch: SeqBatch) -> torch.Tensor:
        return batch.fields[..., : len(self.vocab_sizes)]

    def forward(self, batch: SeqBatch, mask: torch.Tensor):
        feat = self.encode_pool(batch)
        index, code = self.codebook.quantize(feat)
        code_st = feat + (code - feat).detach()
        probs = self.decode_masked(code_st, batch, mask)
        losses = vqvae_loss(probs, self.targets(batch), mask & batch.valid, feat, code, self.cfg.beta)
        return losses, feat, index, probs

    @torch.no_grad()
    def code_indices(self, seqs: Sequence[tuple[np.ndarray, np.ndarray]], batch_size: int = 256) -> list[int]:
        was = self.training
        self.eval()
        out = []
        for s in range(0, len(seqs), batch_size):
            feat = self.encode_pool(collate(seqs[s : s + batch_size]))
            out += self.codebook.quantize(feat)[0].tolist()
        self.train(was)
        return out


def tokenize_layout(fp: Floorplan, model: MaskedVQVAE) -> torch.Tensor:
    """``[M, d_model]`` tokens for the plan's rooms (MLP output plus positional term)."""
    rows = layout_rows(fp, model.cfg.bits)
    return model.tokens(collate([(rows, np.zeros(len(rows), dtype=bool))]))[0]


def tokenize_polygon(poly: RoomPolygon, model: MaskedVQVAE, room_type: int = 0, grid_bits: int = 6) -> torch.Tensor:
    if len(poly.vertices) > model.cfg.max_vertices:
        raise ValueError(f"{len(poly.vertices)} vertices exceed cap {model.cfg.max_vertices}")
    cfg = model.cfg
    return model.tokens(collate([polygon_rows(poly, room_type, grid_bits, cfg.bits, cfg.type_encoding, cfg.num_types)]))[0]


# --------------------------------------------------------------------------- training


@dataclass
class TrainStats:
    epochs: list[dict] = field(default_factory=list)

    def lines(self) -> list[str]:
        keys = ["epoch", "recon", "commit", "total", "utilization", "restarts"]
        rows = [",".join(keys)]
        for e in self.epochs:
            rows.append(",".join(f"{e[k]:.6f}" if isinstance(e[k], float) else str(e[k]) for k in keys))
        return rows


def train_codebook(level: str, plans: Sequence[Floorplan], cfg: VQVAEConfig, seed: int = 0,
                   epochs: int | None = None, progress=None) -> tuple[MaskedVQVAE, TrainStats]:
    if not plans:
        raise ValueError("empty training set")
    if cfg.level != level:
        cfg = VQVAEConfig(**{**asdict(cfg), "level": level})
    epochs = cfg.epochs if epochs is None else epochs
    set_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = MaskedVQVAE(cfg)
    seqs = sequences_for(level, plans, cfg)
    n = len(seqs)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    total = steps_per_epoch * epochs
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: warmup_cosine(s, cfg.warmup, total))

    with torch.no_grad():
        model.eval()
        init = torch.cat([model.encode_pool(collate(seqs[s : s + 256])) for s in range(0, n, 256)])
        model.codebook.init_from(init, gen)
    model.train()

    stats = TrainStats()
    for epoch in range(epochs):
        order = rng.permutation(n)
        used = torch.zeros(cfg.codebook_size, dtype=torch.bool)
        sums = {"recon": 0.0, "commit": 0.0, "total": 0.0}
        feats_seen = []
        for s in range(0, n, bs):
            batch = collate([seqs[i] for i in order[s : s + bs]])
            mask = torch.from_numpy(sample_mask(batch.valid.numpy(), rng, cfg.mask_lo, cfg.mask_hi, batch.prefix.numpy()))
            losses, feat, index, _ = model(batch, mask)
            if not torch.isfinite(losses["total"]):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}: {losses}")
            opt.zero_grad()
            losses["total"].backward()
            nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            opt.step()
            sched.step()
            model.codebook.ema_update(index, feat.detach())
            used[index] = True
            feats_seen.append(feat.detach())
            w = len(index) / n
            for k in sums:
                sums[k] += float(losses[k].detach()) * w
        restarts = 0
        if cfg.dead_code_restart and epoch < epochs - 1:
            restarts = model.codebook.restart(~used, torch.cat(feats_seen), gen)
        rec = {"epoch": epoch + 1, **sums, "utilization": float(used.float().mean()), "restarts": restarts}
        stats.epochs.append(rec)
        if progress:
            progress(rec)
    model.eval()
    return model, stats


def save_checkpoint(path: str | Path, model: MaskedVQVAE, seed: int, stats: TrainStats | None = None) -> None:
    torch.save(
        {
            "kind": "vqvae",
            "config": asdict(model.cfg),
            "state_dict": model.state_dict(),
            "seed": seed,
            "stats": stats.epochs if stats else [],
        },
        path,
    )


def load_checkpoint(path: str | Path) -> MaskedVQVAE:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "vqvae":
        raise ValueError(f"{path} is not a codebook checkpoint")
    model = MaskedVQVAE(VQVAEConfig(**blob["config"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
