"""Compact trainable encoder-decoder with substitutable prompt embeddings.

Pre-norm transformer blocks, learned positions, GELU feed-forward, and an
output projection tied to the token embedding table. Prompt slots in source
sequences (ids >= vocab_size) resolve to trainable prompt embedding rows. The
single-stack variant shares all block code and differs only in the partial
causal attention mask and in concatenating source and target.

Everything is float64: desk-scale models are cheap enough that exact
finite-difference checks beat speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autograd as ag
from . import backend as K
from .autograd import Tensor
from .templates import SourceSeq, TargetSeq

NEG = -1e30  # additive mask value; finite so masked softmax rows stay NaN-free


class ModelError(Exception):
    pass


class Architecture(str, Enum):
    ENC_DEC = "enc_dec"
    SINGLE_STACK = "single_stack"


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int = 128
    max_positions: int = 512
    architecture: Architecture = Architecture.ENC_DEC
    dropout: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        if min(self.d, self.layers, self.heads, self.ffn, self.max_positions) < 1:
            raise ModelError("all model dimensions must be >= 1")
        if self.d % self.heads != 0:
            raise ModelError(f"d={self.d} must be divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")


class ModelParams:
    """Named parameter tensors plus the config they were built for."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, n2: int, tensors: dict[str, Tensor]):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.n2 = n2
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def group_of(self, name: str) -> str:
        return "prompt" if name == "prompt_emb" else "model"

    def copy(self) -> "ModelParams":
        tensors = {
            name: Tensor(t.data.copy(), requires_grad=True) for name, t in self.items()
        }
        return ModelParams(self.cfg, self.vocab_size, self.n2, tensors)


def _attention_names(prefix: str) -> list[tuple[str, str]]:
    return [(f"{prefix}.{w}", f"{prefix}.{b}") for w, b in
            (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo"))]


def init_params(cfg: ModelConfig, n2: int, vocab_size: int, seed: int) -> ModelParams:
    """Draw all weights Normal(0, 0.02) in a fixed order; biases and LN zeros/ones."""
    if n2 < 0:
        raise ModelError("n2 must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: dict[str, Tensor] = {}

    def normal(name: str, shape: tuple[int, ...]) -> None:
        tensors[name] = Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

    def zeros(name: str, shape: tuple[int, ...]) -> None:
        tensors[name] = Tensor(np.zeros(shape), requires_grad=True)

    def ones(name: str, shape: tuple[int, ...]) -> None:
        tensors[name] = Tensor(np.ones(shape), requires_grad=True)

    def attention(prefix: str) -> None:
        for wname, bname in _attention_names(prefix):
            normal(wname, (cfg.d, cfg.d))
            zeros(bname, (cfg.d,))

    def ffn(prefix: str) -> None:
        normal(f"{prefix}.w1", (cfg.d, cfg.ffn))
        zeros(f"{prefix}.b1", (cfg.ffn,))
        normal(f"{prefix}.w2", (cfg.ffn, cfg.d))
        zeros(f"{prefix}.b2", (cfg.d,))

    def lnorm(prefix: str) -> None:
        ones(f"{prefix}.g", (cfg.d,))
        zeros(f"{prefix}.b", (cfg.d,))

    normal("tok_emb", (vocab_size, cfg.d))
    normal("pos_emb", (cfg.max_positions, cfg.d))
    normal("prompt_emb", (n2, cfg.d))
    if cfg.architecture is Architecture.ENC_DEC:
        for i in range(cfg.layers):
            lnorm(f"enc{i}.ln1")
            attention(f"enc{i}.attn")
            lnorm(f"enc{i}.ln2")
            ffn(f"enc{i}.ffn")
        lnorm("enc_final")
        for i in range(cfg.layers):
            lnorm(f"dec{i}.ln1")
            attention(f"dec{i}.self")
            lnorm(f"dec{i}.ln2")
            attention(f"dec{i}.cross")
            lnorm(f"dec{i}.ln3")
            ffn(f"dec{i}.ffn")
        lnorm("dec_final")
    else:
        for i in range(cfg.layers):
            lnorm(f"blk{i}.ln1")
            attention(f"blk{i}.attn")
            lnorm(f"blk{i}.ln2")
            ffn(f"blk{i}.ffn")
        lnorm("final")
    return ModelParams(cfg, vocab_size, n2, tensors)


# --- forward pieces ----------------------------------------------------------


@dataclass
class _Drop:
    rate: float
    rng: np.random.Generator


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, w), b)


def _attend(
    params: ModelParams,
    prefix: str,
    q_in: Tensor,
    kv_in: Tensor,
    mask: np.ndarray,
    drop: _Drop | None,
) -> Tensor:
    cfg = params.cfg
    heads, dh = cfg.heads, cfg.d // cfg.heads
    bsz, tq, _ = q_in.shape
    tk = kv_in.shape[1]

    def split(t: Tensor, length: int) -> Tensor:
        return ag.swapaxes(ag.reshape(t, (bsz, length, heads, dh)), 1, 2)

    q = split(_linear(q_in, params[f"{prefix}.wq"], params[f"{prefix}.bq"]), tq)
    k = split(_linear(kv_in, params[f"{prefix}.wk"], params[f"{prefix}.bk"]), tk)
    v = split(_linear(kv_in, params[f"{prefix}.wv"], params[f"{prefix}.bv"]), tk)
    scores = ag.scale(ag.matmul(q, ag.swapaxes(k, 2, 3)), 1.0 / np.sqrt(dh))
    probs = ag.softmax_last(ag.add(scores, mask))
    if drop is not None:
        probs = ag.dropout(probs, drop.rate, drop.rng)
    ctx = ag.reshape(ag.swapaxes(ag.matmul(probs, v), 1, 2), (bsz, tq, cfg.d))
    out = _linear(ctx, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    if drop is not None:
        out = ag.dropout(out, drop.rate, drop.rng)
    return out


def _ffn(params: ModelParams, prefix: str, x: Tensor, drop: _Drop | None) -> Tensor:
    h = ag.gelu(_linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    out = _linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])
    if drop is not None:
        out = ag.dropout(out, drop.rate, drop.rng)
    return out


def _ln(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    return ag.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _embed(params: ModelParams, ids: np.ndarray) -> Tensor:
    """Token/prompt lookup plus learned positions; ids >= vocab_size are slots."""
    length = ids.shape[-1]
    if length > params.cfg.max_positions:
        raise ModelError(
            f"sequence length {length} exceeds max_positions {params.cfg.max_positions}"
        )
    if ids.size and int(ids.max()) >= params.vocab_size + params.n2:
        raise ModelError("prompt slot index out of range")
    table = ag.concat0(params["tok_emb"], params["prompt_emb"])
    tok = ag.gather_rows(table, ids)
    pos = ag.gather_rows(params["pos_emb"], np.arange(length, dtype=np.int64))
    return ag.add(tok, pos)


def _key_mask(valid: np.ndarray) -> np.ndarray:
    # (B, S) boolean -> additive (B, 1, 1, S)
    return np.where(valid[:, None, None, :], 0.0, NEG)


def _causal_mask(t: int) -> np.ndarray:
    m = np.triu(np.full((t, t), NEG), k=1)
    return m[None, None, :, :]


def encoder_forward(
    params: ModelParams,
    src_ids: np.ndarray,
    src_valid: np.ndarray,
    drop: _Drop | None = None,
) -> Tensor:
    mask = _key_mask(src_valid)
    x = _embed(params, src_ids)
    for i in range(params.cfg.layers):
        normed = _ln(params, f"enc{i}.ln1", x)
        x = ag.add(x, _attend(params, f"enc{i}.attn", normed, normed, mask, drop))
        x = ag.add(x, _ffn(params, f"enc{i}.ffn", _ln(params, f"enc{i}.ln2", x), drop))
    return _ln(params, "enc_final", x)


def decoder_forward(
    params: ModelParams,
    tgt_in: np.ndarray,
    enc: Tensor,
    src_valid: np.ndarray,
    drop: _Drop | None = None,
) -> Tensor:
    causal = _causal_mask(tgt_in.shape[1])
    cross = _key_mask(src_valid)
    x = _embed(params, tgt_in)
    for i in range(params.cfg.layers):
        normed = _ln(params, f"dec{i}.ln1", x)
        x = ag.add(x, _attend(params, f"dec{i}.self", normed, normed, causal, drop))
        x = ag.add(x, _attend(params, f"dec{i}.cross", _ln(params, f"dec{i}.ln2", x),
                              enc, cross, drop))
        x = ag.add(x, _ffn(params, f"dec{i}.ffn", _ln(params, f"dec{i}.ln3", x), drop))
    return _ln(params, "dec_final", x)


def single_stack_forward(
    params: ModelParams,
    cat_ids: np.ndarray,
    attn_mask: np.ndarray,
    drop: _Drop | None = None,
) -> Tensor:
    x = _embed(params, cat_ids)
    for i in range(params.cfg.layers):
        normed = _ln(params, f"blk{i}.ln1", x)
        x = ag.add(x, _attend(params, f"blk{i}.attn", normed, normed, attn_mask, drop))
        x = ag.add(x, _ffn(params, f"blk{i}.ffn", _ln(params, f"blk{i}.ln2", x), drop))
    return _ln(params, "final", x)


def output_logits(params: ModelParams, states: Tensor) -> Tensor:
    """Tied projection onto the vocabulary."""
    return ag.matmul(states, ag.swapaxes(params["tok_emb"], 0, 1))


def embed_source(params: ModelParams, src: SourceSeq) -> np.ndarray:
    """Embedding sequence for one source: e(token)+pos, slot i -> prompt row i+pos."""
    with ag.no_grad():
        return _embed(params, src.ids[None, :]).data[0]


def partial_causal_mask(s: int, t: int) -> np.ndarray:
    """Binary (S+T)x(S+T) mask: full source self-attention, causal target rows.

    Row i < S attends to exactly the source columns; row i >= S attends to all
    source columns and to target columns S..i.
    """
    if s < 0 or t < 0:
        raise ModelError("mask sizes must be non-negative")
    n = s + t
    m = np.zeros((n, n), dtype=np.int8)
    m[:, :s] = 1
    if t:
        m[s:, s:] = np.tril(np.ones((t, t), dtype=np.int8))
    return m


# --- batching and loss -------------------------------------------------------


@dataclass
class Batch:
    """Padded arrays for one training step; layout depends on architecture."""

    architecture: Architecture
    size: int
    # ENC_DEC
    src_ids: np.ndarray | None = None
    src_valid: np.ndarray | None = None
    tgt_in: np.ndarray | None = None
    # SINGLE_STACK
    cat_ids: np.ndarray | None = None
    attn_mask: np.ndarray | None = None
    # shared
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None


def make_batch(
    pairs: list[tuple[SourceSeq, TargetSeq]],
    bos_id: int,
    pad_id: int,
    architecture: Architecture,
) -> Batch:
    """Pad sources and targets to the batch maximum; PAD carries zero loss weight."""
    if not pairs:
        raise ModelError("empty batch")
    bsz = len(pairs)
    s_max = max(len(src) for src, _ in pairs)
    t_max = max(len(tgt) for _, tgt in pairs)
    if architecture is Architecture.ENC_DEC:
        src_ids = np.full((bsz, s_max), pad_id, dtype=np.int64)
        src_valid = np.zeros((bsz, s_max), dtype=bool)
        tgt_in = np.full((bsz, t_max), pad_id, dtype=np.int64)
        labels = np.full((bsz, t_max), pad_id, dtype=np.int64)
        weights = np.zeros((bsz, t_max), dtype=np.float64)
        for i, (src, tgt) in enumerate(pairs):
            s, t = len(src), len(tgt)
            src_ids[i, :s] = src.ids
            src_valid[i, :s] = True
            tgt_in[i, 0] = bos_id
            tgt_in[i, 1:t] = tgt.ids[:-1]
            labels[i, :t] = tgt.ids
            weights[i, :t] = 1.0
        return Batch(
            architecture=architecture,
            size=bsz,
            src_ids=src_ids,
            src_valid=src_valid,
            tgt_in=tgt_in,
            labels=labels,
            weights=weights,
        )
    l_max = max(len(src) + len(tgt) for src, tgt in pairs)
    cat_ids = np.full((bsz, l_max), pad_id, dtype=np.int64)
    attn_mask = np.full((bsz, 1, l_max, l_max), NEG, dtype=np.float64)
    labels = np.full((bsz, l_max), pad_id, dtype=np.int64)
    weights = np.zeros((bsz, l_max), dtype=np.float64)
    for i, (src, tgt) in enumerate(pairs):
        s, t = len(src), len(tgt)
        cat_ids[i, :s] = src.ids
        cat_ids[i, s] = bos_id
        cat_ids[i, s + 1 : s + t] = tgt.ids[:-1]
        m = partial_causal_mask(s, t)
        attn_mask[i, 0, : s + t, : s + t] = np.where(m == 1, 0.0, NEG)
        labels[i, s : s + t] = tgt.ids
        weights[i, s : s + t] = 1.0
    return Batch(
        architecture=architecture,
        size=bsz,
        cat_ids=cat_ids,
        attn_mask=attn_mask,
        labels=labels,
        weights=weights,
    )


def loss_forward(params: ModelParams, batch: Batch, drop: _Drop | None = None) -> Tensor:
    """Infilling NLL: sum over target tokens, mean over batch items."""
    if batch.architecture is not params.cfg.architecture:
        raise ModelError("batch architecture does not match params")
    if batch.architecture is Architecture.ENC_DEC:
        enc = encoder_forward(params, batch.src_ids, batch.src_valid, drop)
        states = decoder_forward(params, batch.tgt_in, enc, batch.src_valid, drop)
    else:
        states = single_stack_forward(params, batch.cat_ids, batch.attn_mask, drop)
    logits = output_logits(params, states)
    flat = ag.reshape(logits, (-1, params.vocab_size))
    ce = ag.cross_entropy_sum(flat, batch.labels.reshape(-1), batch.weights.reshape(-1))
    return ag.scale(ce, 1.0 / batch.size)


def loss_value(params: ModelParams, batch: Batch) -> float:
    with ag.no_grad():
        return loss_forward(params, batch).item()


def compute_grads(params: ModelParams, batch: Batch, drop: _Drop | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Exact reverse-mode gradients of the batch loss for every parameter."""
    params.zero_grads()
    loss = loss_forward(params, batch, drop)
    loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    return loss.item(), grads


# --- inference ---------------------------------------------------------------


@dataclass
class EncoderStates:
    """Frozen per-instance encoding reused across decode steps."""

    states: np.ndarray  # (S, d) hidden representations of the source rows
    src: SourceSeq


def encode(params: ModelParams, src: SourceSeq) -> EncoderStates:
    with ag.no_grad():
        ids = src.ids[None, :]
        if params.cfg.architecture is Architecture.ENC_DEC:
            valid = np.ones((1, len(src)), dtype=bool)
            states = encoder_forward(params, ids, valid).data[0]
        else:
            mask = partial_causal_mask(len(src), 0).astype(np.float64)
            mask = np.where(mask == 1, 0.0, NEG)[None, None, :, :]
            states = single_stack_forward(params, ids, mask).data[0]
    return EncoderStates(states=states, src=src)


def decode_step(
    params: ModelParams, enc: EncoderStates, prefix_ids
) -> np.ndarray:
    """Next-token distribution after consuming `prefix_ids` (BOS first).

    ENC_DEC reuses the cached encoder states; SINGLE_STACK re-runs the stack
    over source-plus-prefix, which the partial causal mask keeps exact.
    """
    if len(prefix_ids) == 0:
        raise ModelError("decoder prefix must start with BOS")
    prefix = np.asarray(prefix_ids, dtype=np.int64)[None, :]
    with ag.no_grad():
        if params.cfg.architecture is Architecture.ENC_DEC:
            enc_t = Tensor(enc.states[None, :, :])
            valid = np.ones((1, enc.states.shape[0]), dtype=bool)
            states = decoder_forward(params, prefix, enc_t, valid)
        else:
            s, t = len(enc.src), prefix.shape[1]
            cat = np.concatenate([enc.src.ids[None, :], prefix], axis=1)
            mask = partial_causal_mask(s, t).astype(np.float64)
            mask = np.where(mask == 1, 0.0, NEG)[None, None, :, :]
            states = single_stack_forward(params, cat, mask)
        logits = output_logits(params, states).data[0, -1]
    return K.softmax_rows(np.ascontiguousarray(logits[None, :]))[0]


def decode_all_steps(
    params: ModelParams, enc: EncoderStates, token_ids
) -> np.ndarray:
    """Distributions at every position of a teacher-forced decode, in one pass.

    `token_ids` starts with BOS; row j holds the distribution over the token
    following token_ids[: j + 1]. Equivalent to, but much cheaper than,
    len(token_ids) decode_step calls.
    """
    if len(token_ids) == 0:
        raise ModelError("decoder prefix must start with BOS")
    prefix = np.asarray(token_ids, dtype=np.int64)[None, :]
    with ag.no_grad():
        if params.cfg.architecture is Architecture.ENC_DEC:
            enc_t = Tensor(enc.states[None, :, :])
            valid = np.ones((1, enc.states.shape[0]), dtype=bool)
            states = decoder_forward(params, prefix, enc_t, valid)
            logits = output_logits(params, states).data[0]
        else:
            s, t = len(enc.src), prefix.shape[1]
            cat = np.concatenate([enc.src.ids[None, :], prefix], axis=1)
            mask = partial_causal_mask(s, t).astype(np.float64)
            mask = np.where(mask == 1, 0.0, NEG)[None, None, :, :]
            states = single_stack_forward(params, cat, mask)
            logits = output_logits(params, states).data[0, s:]
    return K.softmax_rows(np.ascontiguousarray(logits))
