"""Boundary-conditioned autoregressive generation of CodeTrees and room polygons."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .codebook import DivergenceError, MaskedVQVAE, VQVAEConfig, layout_rows, polygon_rows
from .core import (
    LIVING,
    Floorplan,
    RoomPolygon,
    ValidationReport,
    canonical_start,
    make_room,
    orient_clockwise,
    rescale_coord,
    validate,
)
from .geometry import GeometryError
from .layers import PolygonEmbedding, causal_mask, make_decoder, make_encoder, masked_mean, set_seed, warmup_cosine

log = logging.getLogger(__name__)

PAD, BOS, EOS, SEP_ROOM, SEP_SECTION = range(5)
SPECIAL_NAMES = ("PAD", "BOS", "EOS", "SEP_ROOM", "SEP_SECTION")

# grammar groups: each legal next-token set is a union of these
G_LAYOUT, G_POLY, G_TYPE, G_POS, G_EOS, G_SEP = (1 << i for i in range(6))


class GrammarError(ValueError):
    pass


class CodeTreeCapError(ValueError):
    pass


# --------------------------------------------------------------------------- vocabulary


@dataclass(frozen=True)
class Vocabulary:
    bits: int
    num_types: int
    layout_codes: int
    polygon_codes: int

    @property
    def pos_start(self) -> int:
        return len(SPECIAL_NAMES)

    @property
    def type_start(self) -> int:
        return self.pos_start + (1 << self.bits)

    @property
    def layout_start(self) -> int:
        return self.type_start + self.num_types

    @property
    def poly_start(self) -> int:
        return self.layout_start + self.layout_codes

    @property
    def size(self) -> int:
        return self.poly_start + self.polygon_codes

    def pos(self, b: int) -> int:
        return self.pos_start + b

    def type(self, t: int) -> int:
        return self.type_start + t

    def layout(self, k: int) -> int:
        return self.layout_start + k

    def poly(self, k: int) -> int:
        return self.poly_start + k

    def classify(self, tok: int) -> tuple[str, int]:
        """Token class (``special``/``pos``/``type``/``code``) and its local value."""
        if not 0 <= tok < self.size:
            raise ValueError(f"token {tok} outside vocabulary of size {self.size}")
        if tok < self.pos_start:
            return "special", tok
        if tok < self.type_start:
            return "pos", tok - self.pos_start
        if tok < self.layout_start:
            return "type", tok - self.type_start
        if tok < self.poly_start:
            return "code", tok - self.layout_start
        return "code", tok - self.poly_start

    def group_masks(self) -> torch.Tensor:
        """``[6, V]`` boolean table mapping each grammar group to its token ids."""
        m = torch.zeros(6, self.size, dtype=torch.bool)
        m[0, self.layout_start : self.poly_start] = True
        m[1, self.poly_start : self.size] = True
        m[2, self.type_start : self.layout_start] = True
        m[3, self.pos_start : self.type_start] = True
        m[4, EOS] = True
        m[5, SEP_ROOM] = True
        return m

    def table(self) -> list[str]:
        names = list(SPECIAL_NAMES)
        names += [f"pos:{i}" for i in range(1 << self.bits)]
        names += [f"type:{i}" for i in range(self.num_types)]
        names += [f"layout:{i}" for i in range(self.layout_codes)]
        names += [f"poly:{i}" for i in range(self.polygon_codes)]
        return names


def build_vocab(bits: int, num_types: int, layout_codes: int, polygon_codes: int) -> Vocabulary:
    if min(bits, num_types, layout_codes, polygon_codes) <= 0:
        raise ValueError("vocabulary parameters must be positive")
    return Vocabulary(bits, num_types, layout_codes, polygon_codes)


def groups_to_mask(groups: int, vocab: Vocabulary) -> np.ndarray:
    gm = _group_table(vocab)
    sel = [i for i in range(6) if groups >> i & 1]
    return gm[sel].any(0) if sel else np.zeros(vocab.size, dtype=bool)


_GROUP_CACHE: dict[Vocabulary, np.ndarray] = {}


def _group_table(vocab: Vocabulary) -> np.ndarray:
    if vocab not in _GROUP_CACHE:
        _GROUP_CACHE[vocab] = vocab.group_masks().numpy()
    return _GROUP_CACHE[vocab]


# --------------------------------------------------------------------------- CodeTree


@dataclass
class CodeTree:
    layout_code: int
    boundary_code: int
    room_entries: list[tuple[int, int]]
    truncated: bool = False

    def tokens(self, vocab: Vocabulary) -> list[int]:
        out = [BOS, vocab.layout(self.layout_code), vocab.poly(self.boundary_code)]
        for t, c in self.room_entries:
            out += [vocab.type(t), vocab.poly(c)]
        return out + [EOS]

    @classmethod
    def from_tokens(cls, toks: Sequence[int], vocab: Vocabulary, truncated: bool = False) -> "CodeTree":
        check_codetree(toks, vocab, complete=True)
        rooms = [(toks[i] - vocab.type_start, toks[i + 1] - vocab.poly_start) for i in range(3, len(toks) - 1, 2)]
        return cls(toks[1] - vocab.layout_start, toks[2] - vocab.poly_start, rooms, truncated)


def codetree_groups(prefix: Sequence[int], max_len: int) -> int:
    """Legal next-token groups after a CodeTree prefix (position = len(prefix))."""
    n = len(prefix)
    if n == 0:
        raise GrammarError("prefix must start with BOS")
    if n == 1:
        return G_LAYOUT
    if n == 2:
        return G_POLY
    pairs = n - 3
    if pairs % 2 == 1:
        return G_POLY
    # a new room needs its type, its code and the closing EOS to fit
    can_open = n + 2 <= max_len - 1
    if pairs == 0:
        return G_TYPE if can_open else 0
    return (G_TYPE if can_open else 0) | G_EOS


def check_codetree(toks: Sequence[int], vocab: Vocabulary, max_len: int = 10**9, complete: bool = False) -> None:
    if not toks or toks[0] != BOS:
        raise GrammarError("CodeTree must start with BOS")
    for i in range(1, len(toks)):
        if toks[i - 1] == EOS:
            raise GrammarError("token after EOS")
        g = codetree_groups(toks[:i], max_len)
        if not groups_to_mask(g, vocab)[toks[i]]:
            raise GrammarError(f"illegal token {toks[i]} at position {i}")
    if complete and toks[-1] != EOS:
        raise GrammarError("CodeTree not terminated by EOS")


@dataclass
class PolyState:
    """Incremental parser state of a polygon token stream."""

    rooms: int
    max_vertices: int = 40
    max_len: int = 800
    length: int = 1  # BOS already emitted
    room: int = 0
    vertices: int = 0
    half: bool = False  # x emitted, y pending
    last_x: int = -1
    prev: tuple[int, int] | None = None
    done: bool = False

    def groups(self) -> int:
        if self.done:
            return 0
        if self.half:
            return G_POS
        g = 0
        rest = self.rooms - self.room - 1
        # tokens still needed after adding one more vertex here: finish this room, later rooms, separators, EOS
        need = max(0, 3 - (self.vertices + 1)) * 2 + rest * 7 + 1
        if self.vertices < self.max_vertices and self.length + 2 + need <= self.max_len:
            g |= G_POS
        if self.vertices >= 3:
            g |= G_SEP if rest > 0 else G_EOS
        return g

    def advance(self, cls: str, value: int) -> None:
        if cls == "pos":
            if self.half:
                self.prev = (self.last_x, value)
                self.vertices += 1
            else:
                self.last_x = value
            self.half = not self.half
        elif value == SEP_ROOM:
            self.room += 1
            self.vertices = 0
            self.prev = None
        elif value == EOS:
            self.done = True
        self.length += 1


def polygon_stream_groups(toks: Sequence[int], vocab: Vocabulary, rooms: int, max_vertices: int = 40,
                          max_len: int = 800) -> list[int]:
    """Groups legal at each position 1..len(toks) of a polygon stream (validates the prefix)."""
    if not toks or toks[0] != BOS:
        raise GrammarError("polygon stream must start with BOS")
    st = PolyState(rooms, max_vertices, max_len)
    out = []
    for i in range(1, len(toks)):
        g = st.groups()
        out.append(g)
        if not groups_to_mask(g, vocab)[toks[i]]:
            raise GrammarError(f"illegal polygon token {toks[i]} at position {i}")
        st.advance(*vocab.classify(toks[i]))
    out.append(st.groups())
    return out


# --------------------------------------------------------------------------- sampling


def top_p_filter(dist: np.ndarray, p: float) -> np.ndarray:
    """Renormalized nucleus: smallest descending-probability prefix reaching mass ``p``."""
    if not 0 < p <= 1:
        raise ValueError("top_p must be in (0, 1]")
    dist = np.asarray(dist, dtype=np.float64)
    order = np.argsort(-dist, kind="stable")  # ties keep ascending token id
    cum = np.cumsum(dist[order])
    k = int(np.searchsorted(cum, p * cum[-1] - 1e-12)) + 1
    keep = order[: min(k, len(order))]
    keep = keep[dist[keep] > 0] if (dist[keep] > 0).any() else keep[:1]
    out = np.zeros_like(dist)
    out[keep] = dist[keep] / dist[keep].sum()
    return out


def top_p_sample(dist: np.ndarray, p: float, rng: np.random.Generator) -> int:
    nucleus = top_p_filter(dist, p)
    support = np.nonzero(nucleus)[0]
    if len(support) == 1:
        return int(support[0])
    u = rng.random()
    cum = np.cumsum(nucleus[support])
    return int(support[min(int(np.searchsorted(cum, u * cum[-1], side="right")), len(support) - 1)])


def masked_distribution(logits: torch.Tensor | np.ndarray, allowed: np.ndarray) -> np.ndarray:
    z = np.asarray(logits.detach() if isinstance(logits, torch.Tensor) else logits, dtype=np.float64)
    z = np.where(allowed, z, -np.inf)
    z = z - z[allowed].max()
    e = np.exp(z)
    return e / e.sum()


# --------------------------------------------------------------------------- model


@dataclass
class GenConfig:
    d_model: int = 256
    d_ff: int = 512
    layers: int = 6
    heads: int = 8
    dropout: float = 0.1
    embed_dim: int = 32
    top_p: float = 0.95
    max_codetree: int = 35
    max_polygon_tokens: int = 800
    max_vertices: int = 40
    max_rooms: int = 20
    w_code: float = 1.0
    w_pos: float = 1.0
    w_type: float = 1.0
    batch_size: int = 256
    epochs: int = 800
    warmup: int = 200
    lr: float = 1e-3
    weight_decay: float = 0.01
    bits: int = 6
    num_types: int = 6

    def __post_init__(self):
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if min(self.max_codetree, self.max_polygon_tokens, self.max_vertices) <= 0:
            raise ValueError("caps must be positive")


class FloorplanGenerator(nn.Module):
    """Boundary encoder, CodeTree decoder and polygon decoder over one shared vocabulary.

    The frozen codebook models travel with the generator: the polygon
    encoder supplies the boundary code and both codebooks supply codeword
    vectors that enrich the code-token embeddings.
    """

    def __init__(self, cfg: GenConfig, layout_vq: MaskedVQVAE, polygon_vq: MaskedVQVAE):
        super().__init__()
        self.cfg = cfg
        self.vocab = build_vocab(cfg.bits, cfg.num_types, layout_vq.cfg.codebook_size, polygon_vq.cfg.codebook_size)
        self.layout_vq = layout_vq
        self.polygon_vq = polygon_vq
        for p in list(layout_vq.parameters()) + list(polygon_vq.parameters()):
            p.requires_grad_(False)
        d = cfg.d_model
        self.boundary_embed = PolygonEmbedding(cfg.bits, cfg.num_types, cfg.embed_dim, d, cfg.max_vertices + 1, "IV")
        self.boundary_encoder = make_encoder(d, cfg.heads, cfg.d_ff, cfg.layers, cfg.dropout)
        self.tok = nn.Embedding(self.vocab.size, d)
        self.layout_proj = nn.Linear(layout_vq.cfg.d_model, d)
        self.poly_proj = nn.Linear(polygon_vq.cfg.d_model, d)
        self.ct_pos = nn.Embedding(cfg.max_codetree, d)
        self.ct_decoder = make_decoder(d, cfg.heads, cfg.d_ff, cfg.layers, cfg.dropout)
        self.ct_head = nn.Linear(d, self.vocab.size)
        self.mem_section = nn.Embedding(2, d)  # boundary features vs CodeTree tokens in polygon memory
        self.pair_embed = nn.Embedding(cfg.max_rooms + 1, d)
        self.poly_pos = nn.Embedding(cfg.max_polygon_tokens, d)
        self.slot = nn.Embedding(2 * cfg.max_vertices + 1, d)
        self.poly_decoder = make_decoder(d, cfg.heads, cfg.d_ff, cfg.layers, cfg.dropout)
        self.poly_head = nn.Linear(d, self.vocab.size)
        self.register_buffer("groups", self.vocab.group_masks(), persistent=False)

    def train(self, mode: bool = True):
        super().train(mode)
        # codebook models stay frozen in eval mode
        self.layout_vq.eval()
        self.polygon_vq.eval()
        return self

    # ---- embeddings

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        v = self.vocab
        x = self.tok(ids)
        is_l = (ids >= v.layout_start) & (ids < v.poly_start)
        is_p = ids >= v.poly_start
        cw_l = self.layout_vq.codebook.embed[(ids - v.layout_start).clamp(0, v.layout_codes - 1)]
        cw_p = self.polygon_vq.codebook.embed[(ids - v.poly_start).clamp(0, v.polygon_codes - 1)]
        x = x + is_l.unsqueeze(-1) * self.layout_proj(cw_l) + is_p.unsqueeze(-1) * self.poly_proj(cw_p)
        return x

    def encode_boundary(self, rows: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        """Per-vertex boundary memory ``[B, n, d]``."""
        t = rows.shape[1]
        if t > self.cfg.max_vertices:
            raise ValueError(f"boundary has {t} vertices, cap is {self.cfg.max_vertices}")
        x = self.boundary_embed.content(rows) + self.boundary_embed.tables.gamma(torch.arange(t))
        return self.boundary_encoder(x, src_key_padding_mask=~valid)

    def codetree_hidden(self, memory, mem_valid, ct: torch.Tensor, ct_valid: torch.Tensor) -> torch.Tensor:
        t = ct.shape[1]
        x = self.embed_tokens(ct) + self.ct_pos(torch.arange(t))
        return self.ct_decoder(x, memory, tgt_mask=causal_mask(t), tgt_key_padding_mask=~ct_valid,
                               memory_key_padding_mask=~mem_valid, tgt_is_causal=True)

    def polygon_memory(self, memory, mem_valid, ct, ct_valid):
        t = ct.shape[1]
        pair = torch.clamp((torch.arange(t) - 1) // 2, min=0).clamp(max=self.cfg.max_rooms)
        ctx = self.embed_tokens(ct) + self.ct_pos(torch.arange(t)) + self.pair_embed(pair) + self.mem_section.weight[1]
        mem = torch.cat([memory + self.mem_section.weight[0], ctx], dim=1)
        return mem, torch.cat([mem_valid, ct_valid], dim=1)

    def room_context(self, ct: torch.Tensor, room_idx: torch.Tensor) -> torch.Tensor:
        """Type + polygon-code embedding of the room each stream position belongs to."""
        tpos = (3 + 2 * room_idx).clamp(max=ct.shape[1] - 2)
        t_ids = torch.gather(ct, 1, tpos)
        c_ids = torch.gather(ct, 1, tpos + 1)
        return self.embed_tokens(t_ids) + self.embed_tokens(c_ids)

    def polygon_hidden(self, mem, mem_valid, ct, poly, room_idx, slot, poly_valid):
        t = poly.shape[1]
        if t > self.cfg.max_polygon_tokens:
            raise ValueError("polygon stream exceeds its cap")
        x = (self.embed_tokens(poly) + self.poly_pos(torch.arange(t)) + self.slot(slot)
             + self.pair_embed(room_idx.clamp(max=self.cfg.max_rooms)) + self.room_context(ct, room_idx))
        return self.poly_decoder(x, mem, tgt_mask=causal_mask(t), tgt_key_padding_mask=~poly_valid,
                                 memory_key_padding_mask=~mem_valid, tgt_is_causal=True)

    def masked_logits(self, logits: torch.Tensor, groups: torch.Tensor) -> torch.Tensor:
        """Apply per-position grammar group flags ``[B, T]`` to logits ``[B, T, V]``."""
        bits = torch.stack([(groups >> i) & 1 for i in range(6)], dim=-1).bool()  # [B, T, 6]
        allowed = (bits.unsqueeze(-1) & self.groups).any(-2)
        return logits.masked_fill(~allowed, float("-inf"))

    def forward(self, batch: "GenBatch") -> tuple[torch.Tensor, torch.Tensor]:
        memory = self.encode_boundary(batch.boundary, batch.boundary_valid)
        ct_in, ct_valid = batch.ct[:, :-1], batch.ct_valid[:, :-1]
        h = self.codetree_hidden(memory, batch.boundary_valid, ct_in, ct_valid)
        ct_logits = self.masked_logits(self.ct_head(h), batch.ct_groups)
        mem, mem_valid = self.polygon_memory(memory, batch.boundary_valid, batch.ct, batch.ct_valid)
        p_in = batch.poly[:, :-1]
        hp = self.polygon_hidden(mem, mem_valid, batch.ct, p_in, batch.room_idx[:, :-1], batch.slot[:, :-1],
                                 batch.poly_valid[:, :-1])
        poly_logits = self.masked_logits(self.poly_head(hp), batch.poly_groups)
        return ct_logits, poly_logits


# --------------------------------------------------------------------------- supervision


def boundary_rows(poly: RoomPolygon, grid_bits: int, bits: int) -> np.ndarray:
    return polygon_rows(poly, 0, grid_bits, bits, "IV")[0]


def boundary_code(fp_boundary: RoomPolygon, polygon_vq: MaskedVQVAE, grid_bits: int = 6) -> int:
    cfg = polygon_vq.cfg
    seq = polygon_rows(fp_boundary, cfg.num_types + 1, grid_bits, cfg.bits, cfg.type_encoding, cfg.num_types)
    return polygon_vq.code_indices([seq])[0]


def build_supervision_codetree(fp: Floorplan, layout_vq: MaskedVQVAE, polygon_vq: MaskedVQVAE,
                               max_len: int = 35) -> CodeTree:
    """Quantize the plan's layout, boundary and rooms into a CodeTree."""
    m = len(fp.rooms)
    if 4 + 2 * m > max_len:
        raise CodeTreeCapError(f"{m} rooms need {4 + 2 * m} CodeTree tokens, cap is {max_len}")
    lcfg, pcfg = layout_vq.cfg, polygon_vq.cfg
    rows = layout_rows(fp, lcfg.bits)
    c_l = layout_vq.code_indices([(rows, np.zeros(len(rows), dtype=bool))])[0]
    seqs = [polygon_rows(fp.boundary, pcfg.num_types + 1, fp.grid_bits, pcfg.bits, pcfg.type_encoding, pcfg.num_types)]
    seqs += [polygon_rows(r.polygon, r.type, fp.grid_bits, pcfg.bits, pcfg.type_encoding, pcfg.num_types) for r in fp.rooms]
    codes = polygon_vq.code_indices(seqs)
    return CodeTree(c_l, codes[0], [(r.type, c) for r, c in zip(fp.rooms, codes[1:])])


def polygon_stream(fp: Floorplan, vocab: Vocabulary) -> tuple[list[int], list[int], list[int]]:
    """Tokens, room index and slot index of the plan's polygon stream."""
    toks, rooms, slots = [BOS], [0], [0]
    for i, r in enumerate(fp.rooms):
        if i:
            toks.append(SEP_ROOM)
            rooms.append(i)
            slots.append(0)
        for k, (x, y) in enumerate(canonical_start(r.polygon).vertices):
            toks += [vocab.pos(rescale_coord(x, fp.grid_bits, vocab.bits)), vocab.pos(rescale_coord(y, fp.grid_bits, vocab.bits))]
            rooms += [i, i]
            slots += [1 + 2 * k, 2 + 2 * k]
    toks.append(EOS)
    rooms.append(len(fp.rooms) - 1)
    slots.append(0)
    return toks, rooms, slots


def stream_indices(toks: Sequence[int]) -> tuple[list[int], list[int]]:
    """Room and slot indices for a (partial) polygon stream."""
    rooms, slots = [], []
    r, k = 0, 0
    for t in toks:
        if t == SEP_ROOM:
            r += 1
            k = 0
            slots.append(0)
        elif t in (BOS, EOS):
            slots.append(0)
        else:
            k += 1
            slots.append(k)
        rooms.append(r)
    return rooms, slots


@dataclass
class Example:
    boundary: np.ndarray
    ct: list[int]
    ct_groups: list[int]
    ct_classes: list[str]
    poly: list[int]
    room_idx: list[int]
    slot: list[int]
    poly_groups: list[int]


def make_example(fp: Floorplan, gen: FloorplanGenerator) -> Example:
    cfg, vocab = gen.cfg, gen.vocab
    tree = build_supervision_codetree(fp, gen.layout_vq, gen.polygon_vq, cfg.max_codetree)
    ct = tree.tokens(vocab)
    ct_groups = [codetree_groups(ct[:i], cfg.max_codetree) for i in range(1, len(ct))]
    classes = []
    for i in range(1, len(ct)):
        c, _ = vocab.classify(ct[i])
        classes.append("given" if i == 2 else ("type" if c == "type" else "code"))
    poly, room_idx, slot = polygon_stream(fp, vocab)
    pg = polygon_stream_groups(poly, vocab, len(fp.rooms), cfg.max_vertices, cfg.max_polygon_tokens)[:-1]
    return Example(boundary_rows(fp.boundary, fp.grid_bits, cfg.bits), ct, ct_groups, classes, poly, room_idx, slot, pg)


@dataclass
class GenBatch:
    boundary: torch.Tensor
    boundary_valid: torch.Tensor
    ct: torch.Tensor
    ct_valid: torch.Tensor
    ct_groups: torch.Tensor
    ct_class: torch.Tensor  # 0 ignore, 1 code, 2 type
    poly: torch.Tensor
    poly_valid: torch.Tensor
    room_idx: torch.Tensor
    slot: torch.Tensor
    poly_groups: torch.Tensor


_CLASS_ID = {"given": 0, "code": 1, "type": 2}


def collate_examples(exs: Sequence[Example]) -> GenBatch:
    b = len(exs)
    tb = max(len(e.boundary) for e in exs)
    tc = max(len(e.ct) for e in exs)
    tp = max(len(e.poly) for e in exs)
    bnd = np.zeros((b, tb, 3), dtype=np.int64)
    bval = np.zeros((b, tb), dtype=bool)
    ct = np.full((b, tc), PAD, dtype=np.int64)
    cval = np.zeros((b, tc), dtype=bool)
    cg = np.zeros((b, tc - 1), dtype=np.int64)
    ccl = np.zeros((b, tc - 1), dtype=np.int64)
    poly = np.full((b, tp), PAD, dtype=np.int64)
    pval = np.zeros((b, tp), dtype=bool)
    ridx = np.zeros((b, tp), dtype=np.int64)
    slot = np.zeros((b, tp), dtype=np.int64)
    pg = np.zeros((b, tp - 1), dtype=np.int64)
    for i, e in enumerate(exs):
        bnd[i, : len(e.boundary)] = e.boundary
        bval[i, : len(e.boundary)] = True
        ct[i, : len(e.ct)] = e.ct
        cval[i, : len(e.ct)] = True
        cg[i, : len(e.ct_groups)] = e.ct_groups
        ccl[i, : len(e.ct_classes)] = [_CLASS_ID[c] for c in e.ct_classes]
        poly[i, : len(e.poly)] = e.poly
        pval[i, : len(e.poly)] = True
        ridx[i, : len(e.room_idx)] = e.room_idx
        slot[i, : len(e.slot)] = e.slot
        pg[i, : len(e.poly_groups)] = e.poly_groups
    # padded positions: let every token through so the masked softmax stays finite
    cg[~cval[:, 1:]] = 0b111111
    pg[~pval[:, 1:]] = 0b111111
    t = torch.from_numpy
    return GenBatch(t(bnd), t(bval), t(ct), t(cval), t(cg), t(ccl), t(poly), t(pval), t(ridx), t(slot), t(pg))


# --------------------------------------------------------------------------- loss


def generator_loss(ct_logits: torch.Tensor | None, ct_targets, ct_class, poly_logits: torch.Tensor | None,
                   poly_targets, poly_valid, weights=(1.0, 1.0, 1.0)) -> dict[str, torch.Tensor]:
    """Per-class mean cross-entropy and the weighted total.

    ``ct_class`` labels CodeTree targets 0 (ignored), 1 (code, incl. EOS)
    or 2 (type); every valid polygon-stream target counts as ``pos``.
    Empty classes contribute 0.
    """
    parts = {}
    zero = torch.zeros(())

    def mean_nll(logits, targets, sel):
        if logits is None or not bool(sel.any()):
            return zero
        lp = F.log_softmax(logits[sel], dim=-1)
        return -lp.gather(-1, targets[sel].unsqueeze(-1)).mean()

    parts["code"] = mean_nll(ct_logits, ct_targets, ct_class == 1) if ct_logits is not None else zero
    parts["type"] = mean_nll(ct_logits, ct_targets, ct_class == 2) if ct_logits is not None else zero
    parts["pos"] = mean_nll(poly_logits, poly_targets, poly_valid) if poly_logits is not None else zero
    w1, w2, w3 = weights
    parts["total"] = w1 * parts["code"] + w2 * parts["pos"] + w3 * parts["type"]
    return parts


def batch_loss(model: FloorplanGenerator, batch: GenBatch) -> dict[str, torch.Tensor]:
    ct_logits, poly_logits = model(batch)
    cfg = model.cfg
    return generator_loss(ct_logits, batch.ct[:, 1:], batch.ct_class, poly_logits, batch.poly[:, 1:],
                          batch.poly_valid[:, 1:], (cfg.w_code, cfg.w_pos, cfg.w_type))


# --------------------------------------------------------------------------- training


@dataclass
class GenStats:
    epochs: list[dict] = field(default_factory=list)
    rejected: int = 0

    def lines(self) -> list[str]:
        keys = ["epoch", "code", "pos", "type", "total", "val_total"]
        rows = [",".join(keys)]
        for e in self.epochs:
            rows.append(",".join("" if e.get(k) is None else (f"{e[k]:.6f}" if isinstance(e[k], float) else str(e[k])) for k in keys))
        return rows


def prepare_examples(plans: Sequence[Floorplan], model: FloorplanGenerator) -> tuple[list[Example], int]:
    out, rejected = [], 0
    for fp in plans:
        try:
            out.append(make_example(fp, model))
        except (CodeTreeCapError, GrammarError) as exc:
            log.info("rejecting plan from generator training: %s", exc)
            rejected += 1
    return out, rejected


@torch.no_grad()
def evaluate_loss(model: FloorplanGenerator, examples: Sequence[Example], batch_size: int = 64) -> dict[str, float]:
    was = model.training
    model.eval()
    sums = {"code": 0.0, "pos": 0.0, "type": 0.0, "total": 0.0}
    for s in range(0, len(examples), batch_size):
        chunk = examples[s : s + batch_size]
        parts = batch_loss(model, collate_examples(chunk))
        for k in sums:
            sums[k] += float(parts[k]) * len(chunk) / len(examples)
    model.train(was)
    return sums


def train_generator(plans: Sequence[Floorplan], layout_vq: MaskedVQVAE, polygon_vq: MaskedVQVAE, cfg: GenConfig,
                    seed: int = 0, val_plans: Sequence[Floorplan] = (), epochs: int | None = None,
                    progress: Callable[[dict], None] | None = None) -> tuple[FloorplanGenerator, GenStats]:
    epochs = cfg.epochs if epochs is None else epochs
    set_seed(seed)
    rng = np.random.default_rng(seed)
    model = FloorplanGenerator(cfg, layout_vq, polygon_vq)
    train_ex, rejected = prepare_examples(plans, model)
    if not train_ex:
        raise ValueError("no usable training plans")
    val_ex, _ = prepare_examples(val_plans, model)
    n = len(train_ex)
    bs = min(cfg.batch_size, n)
    total = math.ceil(n / bs) * epochs
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: warmup_cosine(s, cfg.warmup, total))
    stats = GenStats(rejected=rejected)
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(n)
        sums = {"code": 0.0, "pos": 0.0, "type": 0.0, "total": 0.0}
        for s in range(0, n, bs):
            idx = order[s : s + bs]
            parts = batch_loss(model, collate_examples([train_ex[i] for i in idx]))
            if not torch.isfinite(parts["total"]):
                raise DivergenceError(f"non-finite generator loss at epoch {epoch + 1}")
            opt.zero_grad()
            parts["total"].backward()
            nn.utils.clip_grad_norm_(params, 1.0)
            opt.step()
            sched.step()
            for k in sums:
                sums[k] += float(parts[k].detach()) * len(idx) / n
        rec = {"epoch": epoch + 1, **sums, "val_total": None}
        if val_ex and (epoch + 1 == epochs or (epoch + 1) % 10 == 0):
            rec["val_total"] = evaluate_loss(model, val_ex)["total"]
        stats.epochs.append(rec)
        if progress:
            progress(rec)
    model.eval()
    return model, stats


# --------------------------------------------------------------------------- inference


@dataclass
class GenerationReport:
    codetree_truncated: bool = False
    polygons_truncated: bool = False
    invalid_rooms: list[int] = field(default_factory=list)
    validation: ValidationReport = field(default_factory=ValidationReport)


def _boundary_tensor(boundary: RoomPolygon, cfg: GenConfig, grid_bits: int):
    rows = torch.from_numpy(boundary_rows(boundary, grid_bits, cfg.bits)).unsqueeze(0)
    return rows, torch.ones(rows.shape[:2], dtype=torch.bool)


@torch.no_grad()
def encode_boundary(boundary: RoomPolygon, model: FloorplanGenerator, grid_bits: int = 6):
    """(memory ``[n, d]``, pooled feature, boundary code index) for a door-encoded boundary."""
    if len(boundary.vertices) > model.cfg.max_vertices:
        raise ValueError(f"boundary has {len(boundary.vertices)} vertices, cap is {model.cfg.max_vertices}")
    rows, valid = _boundary_tensor(boundary, model.cfg, grid_bits)
    memory = model.encode_boundary(rows, valid)
    pooled = masked_mean(memory, valid)[0]
    return memory[0], pooled, boundary_code(boundary, model.polygon_vq, grid_bits)


@torch.no_grad()
def codetree_logits(model: FloorplanGenerator, memory: torch.Tensor, prefix: Sequence[int]) -> torch.Tensor:
    """Unmasked next-token logits after a CodeTree prefix."""
    ct = torch.tensor([list(prefix)])
    mem = memory.unsqueeze(0)
    h = model.codetree_hidden(mem, torch.ones(mem.shape[:2], dtype=torch.bool), ct, torch.ones_like(ct, dtype=torch.bool))
    return model.ct_head(h[0, -1])


@torch.no_grad()
def codetree_next(model: FloorplanGenerator, memory: torch.Tensor, prefix: Sequence[int]) -> np.ndarray:
    """Grammar-masked next-token distribution over the whole vocabulary."""
    cfg, vocab = model.cfg, model.vocab
    check_codetree(prefix, vocab, cfg.max_codetree)
    if prefix[-1] == EOS or len(prefix) >= cfg.max_codetree:
        raise GrammarError("prefix is already complete")
    groups = codetree_groups(prefix, cfg.max_codetree)
    return masked_distribution(codetree_logits(model, memory, prefix), groups_to_mask(groups, vocab))


def sample_codetree_tokens(vocab: Vocabulary, max_len: int, bnd_code: int, next_logits, p: float,
                           rng: np.random.Generator) -> CodeTree:
    """Grammar-masked CodeTree sampling loop over any logit source."""
    toks = [BOS]
    while len(toks) < max_len:
        if len(toks) == 2:
            toks.append(vocab.poly(bnd_code))
            continue
        allowed = groups_to_mask(codetree_groups(toks, max_len), vocab)
        tok = top_p_sample(masked_distribution(next_logits(toks), allowed), p, rng)
        toks.append(tok)
        if tok == EOS:
            return CodeTree.from_tokens(toks, vocab)
    # only reachable if the grammar budget is bypassed: keep complete pairs
    keep = 3 + 2 * ((len(toks) - 3) // 2)
    return CodeTree.from_tokens(toks[:keep] + [EOS], vocab, truncated=True)


@torch.no_grad()
def sample_codetree(model: FloorplanGenerator, memory: torch.Tensor, bnd_code: int, p: float,
                    rng: np.random.Generator) -> CodeTree:
    """Autoregressive CodeTree sampling; the boundary code is fixed context."""
    return sample_codetree_tokens(model.vocab, model.cfg.max_codetree, bnd_code,
                                  lambda prefix: codetree_logits(model, memory, prefix), p, rng)


def sample_polygon_stream(vocab: Vocabulary, rooms: int, next_logits, p: float, rng: np.random.Generator,
                          max_vertices: int = 40, max_len: int = 800):
    """Grammar-masked polygon stream sampling over any logit source.

    Returns (tokens, one vertex list per room, truncated flag).
    """
    st = PolyState(rooms, max_vertices, max_len)
    toks = [BOS]
    polys: list[list[tuple[int, int]]] = [[]]
    truncated = False
    while not st.done:
        if len(toks) >= max_len:
            truncated = True
            break
        allowed = groups_to_mask(st.groups(), vocab)
        if st.half and st.prev is not None and st.prev[0] == st.last_x:
            allowed = allowed.copy()
            allowed[vocab.pos(st.prev[1])] = False  # no repeated vertex
        tok = top_p_sample(masked_distribution(next_logits(toks), allowed), p, rng)
        cls, val = vocab.classify(tok)
        st.advance(cls, val)
        toks.append(tok)
        if cls == "pos" and not st.half:
            polys[-1].append((st.last_x, val))
        elif tok == SEP_ROOM:
            polys.append([])
    while len(polys) < rooms:
        polys.append([])
    return toks, polys, truncated


@torch.no_grad()
def polygon_logits_fn(model: FloorplanGenerator, memory: torch.Tensor, tree: CodeTree):
    """Next-token logit function of the polygon decoder conditioned on a CodeTree."""
    cfg = model.cfg
    ct = torch.tensor([tree.tokens(model.vocab)])
    mem0 = memory.unsqueeze(0)
    mem, mem_valid = model.polygon_memory(mem0, torch.ones(mem0.shape[:2], dtype=torch.bool), ct,
                                          torch.ones_like(ct, dtype=torch.bool))

    @torch.no_grad()
    def model_logits(toks):
        rooms, slots = stream_indices(toks)
        x = torch.tensor([toks])
        h = model.polygon_hidden(mem, mem_valid, ct, x, torch.tensor([rooms]),
                                 torch.tensor([slots]).clamp(max=2 * cfg.max_vertices), torch.ones_like(x, dtype=torch.bool))
        return model.poly_head(h[0, -1])

    return model_logits


@torch.no_grad()
def decode_polygons(model: FloorplanGenerator, memory: torch.Tensor, tree: CodeTree, p: float,
                    rng: np.random.Generator) -> tuple[list[list[tuple[int, int]]], bool]:
    """Sample the polygon stream; returns one vertex list per CodeTree room and a truncation flag."""
    cfg = model.cfg
    _, polys, truncated = sample_polygon_stream(model.vocab, len(tree.room_entries), polygon_logits_fn(model, memory, tree),
                                                p, rng, cfg.max_vertices, cfg.max_polygon_tokens)
    return polys, truncated


def _assemble(boundary: RoomPolygon, tree: CodeTree, polys, grid_bits: int, bits: int, room_types):
    rooms, invalid = [], []
    for i, ((t, _), verts) in enumerate(zip(tree.room_entries, polys)):
        verts = [(rescale_coord(x, bits, grid_bits), rescale_coord(y, bits, grid_bits)) for x, y in verts]
        dedup = [v for k, v in enumerate(verts) if k == 0 or v != verts[k - 1]]
        if len(dedup) > 1 and dedup[0] == dedup[-1]:
            dedup.pop()
        if len(dedup) < 3:
            invalid.append(i)
            continue
        poly = RoomPolygon(tuple(dedup))
        try:
            poly = canonical_start(orient_clockwise(poly))
        except GeometryError:
            invalid.append(i)
        rooms.append(make_room(poly.vertices, t))
    rooms.sort(key=lambda r: (r.type != LIVING, r.box.x, r.box.y))
    return Floorplan(boundary, tuple(rooms), grid_bits, tuple(room_types)), invalid


def generate(boundary: RoomPolygon, model: FloorplanGenerator, seed: int, top_p: float | None = None,
             grid_bits: int = 6, room_types=None) -> tuple[Floorplan, GenerationReport]:
    """Full pipeline: boundary -> CodeTree -> polygons -> floorplan with validation report."""
    from .core import DEFAULT_ROOM_TYPES

    p = model.cfg.top_p if top_p is None else top_p
    rng = np.random.default_rng(seed)
    model.eval()
    memory, _, bcode = encode_boundary(boundary, model, grid_bits)
    tree = sample_codetree(model, memory, bcode, p, rng)
    polys, truncated = decode_polygons(model, memory, tree, p, rng)
    fp, invalid = _assemble(boundary, tree, polys, grid_bits, model.cfg.bits, room_types or DEFAULT_ROOM_TYPES)
    report = GenerationReport(tree.truncated, truncated, invalid, validate(fp))
    return fp, report


# --------------------------------------------------------------------------- checkpoints


def save_generator(path: str | Path, model: FloorplanGenerator, seed: int, stats: GenStats | None = None) -> None:
    own = {k: v for k, v in model.state_dict().items() if not k.startswith(("layout_vq.", "polygon_vq."))}
    torch.save(
        {
            "kind": "generator",
            "config": asdict(model.cfg),
            "vocab": asdict(model.vocab),
            "vocab_table": model.vocab.table(),
            "layout_vq": {"config": asdict(model.layout_vq.cfg), "state_dict": model.layout_vq.state_dict()},
            "polygon_vq": {"config": asdict(model.polygon_vq.cfg), "state_dict": model.polygon_vq.state_dict()},
            "state_dict": own,
            "seed": seed,
            "stats": stats.epochs if stats else [],
        },
        path,
    )


def load_generator(path: str | Path) -> FloorplanGenerator:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "generator":
        raise ValueError(f"{path} is not a generator checkpoint")
    vqs = []
    for key in ("layout_vq", "polygon_vq"):
        vq = MaskedVQVAE(VQVAEConfig(**blob[key]["config"]))
        vq.load_state_dict(blob[key]["state_dict"])
        vqs.append(vq.eval())
    model = FloorplanGenerator(GenConfig(**blob["config"]), *vqs)
    model.load_state_dict(blob["state_dict"], strict=False)
    model.eval()
    return model
