"""Dual-encoder architectures over a shared embedding space.

Three variants share one vision adapter (linear projection + layer norm +
dropout over frozen frame features) and differ in the language side:

  cvcl       mean of token embeddings + learned absolute positions
  cvcl_t     2-layer causal transformer decoder, utterance = hidden at <eos>
  cvcl_t_lm  same decoder plus a tied-weight next-word head

All parameters live in a flat name -> Tensor dict so the optimizer and the
checkpoint format stay trivial.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import EOS_ID, PAD_ID
from .errors import DataError, ShapeError
from .tensor import (
    Tensor, add, dropout, embedding, gelu, layer_norm, matmul, mul, reshape,
    softmax, take_per_row, transpose, tsum,
)

VARIANTS = ("cvcl", "cvcl_t", "cvcl_t_lm")

GLCK_MAGIC = b"GLCK"
GLCK_VERSION = 1


@dataclass
class ModelConfig:
    variant: str = "cvcl"
    feature_dim: int = 768
    embed_dim: int = 512
    vocab_size: int = 0
    max_len: int = 48
    n_layers: int = 2
    n_heads: int = 8
    ff_mult: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; pick one of {VARIANTS}")
        if self.uses_transformer and self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by "
                             f"{self.n_heads} heads")

    @property
    def uses_transformer(self) -> bool:
        return self.variant in ("cvcl_t", "cvcl_t_lm")

    @property
    def uses_lm_head(self) -> bool:
        return self.variant == "cvcl_t_lm"

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "variant", "feature_dim", "embed_dim", "vocab_size", "max_len",
            "n_layers", "n_heads", "ff_mult", "dropout")}


def _xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh trainable parameters: embeddings ~ N(0, 0.02^2), projections
    Xavier-uniform, layer-norm affines at (1, 0)."""
    if cfg.vocab_size < 4:
        raise ValueError("vocab_size must cover the reserved specials")
    d = cfg.embed_dim
    p: dict[str, np.ndarray] = {}

    p["vis.proj_w"] = _xavier_uniform(rng, cfg.feature_dim, d)
    p["vis.proj_b"] = np.zeros(d)
    p["vis.ln_g"] = np.ones(d)
    p["vis.ln_b"] = np.zeros(d)

    p["lang.tok_emb"] = rng.normal(0.0, 0.02, size=(cfg.vocab_size, d))
    p["lang.pos_emb"] = rng.normal(0.0, 0.02, size=(cfg.max_len, d))

    if cfg.uses_transformer:
        ff = cfg.ff_mult * d
        for i in range(cfg.n_layers):
            pre = f"lang.layer{i}."
            p[pre + "ln1_g"] = np.ones(d)
            p[pre + "ln1_b"] = np.zeros(d)
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + name] = _xavier_uniform(rng, d, d)
                p[pre + name[1] + "b"] = np.zeros(d)
            p[pre + "ln2_g"] = np.ones(d)
            p[pre + "ln2_b"] = np.zeros(d)
            p[pre + "ff1_w"] = _xavier_uniform(rng, d, ff)
            p[pre + "ff1_b"] = np.zeros(ff)
            p[pre + "ff2_w"] = _xavier_uniform(rng, ff, d)
            p[pre + "ff2_b"] = np.zeros(d)
        p["lang.lnf_g"] = np.ones(d)
        p["lang.lnf_b"] = np.zeros(d)

    return {name: Tensor(arr, requires_grad=True) for name, arr in p.items()}


@dataclass
class Model:
    """Parameter bundle plus its configuration."""

    config: ModelConfig
    params: dict[str, Tensor]

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "Model":
        return cls(config=cfg, params=init_params(cfg, rng))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def encode_frames(model: Model, features: np.ndarray, train: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Project frozen frame features into the shared space: linear -> layer
    norm -> dropout (train only). features: (N, F) -> (N, D)."""
    cfg, p = model.config, model.params
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != cfg.feature_dim:
        raise ShapeError("encode_frames", features.shape, (cfg.feature_dim,))
    x = Tensor(features)  # inputs never require grad: the backbone is frozen
    h = add(matmul(x, p["vis.proj_w"]), p["vis.proj_b"])
    h = layer_norm(h, p["vis.ln_g"], p["vis.ln_b"])
    if train:
        h = dropout(h, 1.0 - cfg.dropout, rng, train=True)
    return h


def _ids_matrix(ids_batch: list[list[int]] | np.ndarray, max_len: int) -> np.ndarray:
    ids = np.asarray(ids_batch, dtype=np.intp)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.shape[1] > max_len:
        raise ShapeError("encode_utterances", ids.shape, (max_len,))
    return ids


def encode_utterances_embedding(model: Model, ids_batch, train: bool = False,
                                rng: np.random.Generator | None = None) -> Tensor:
    """Mean of token + positional embeddings over non-pad positions."""
    cfg, p = model.config, model.params
    ids = _ids_matrix(ids_batch, cfg.max_len)
    not_pad = ids != PAD_ID
    if not not_pad.any(axis=1).all():
        raise DataError("utterance with only <pad> tokens")
    n, t = ids.shape
    tok = embedding(p["lang.tok_emb"], ids)
    pos = embedding(p["lang.pos_emb"], np.broadcast_to(np.arange(t), (n, t)))
    h = add(tok, pos)
    if train:
        h = dropout(h, 1.0 - cfg.dropout, rng, train=True)
    mask = not_pad[:, :, None].astype(np.float64)
    counts = not_pad.sum(axis=1, keepdims=True).astype(np.float64)
    summed = tsum(mul(h, Tensor(mask)), axis=1)
    return mul(summed, Tensor(1.0 / counts))


def _attention_block(cfg: ModelConfig, p: dict[str, Tensor], layer: int, h: Tensor,
                     allowed: np.ndarray, train: bool,
                     rng: np.random.Generator | None) -> Tensor:
    pre = f"lang.layer{layer}."
    n, t, d = h.shape
    heads, dh = cfg.n_heads, d // cfg.n_heads

    x = layer_norm(h, p[pre + "ln1_g"], p[pre + "ln1_b"])
    q = add(matmul(x, p[pre + "wq"]), p[pre + "qb"])
    k = add(matmul(x, p[pre + "wk"]), p[pre + "kb"])
    v = add(matmul(x, p[pre + "wv"]), p[pre + "vb"])
    # (N, T, D) -> (N, H, T, dh)
    q = transpose(reshape(q, (n, t, heads, dh)), (0, 2, 1, 3))
    k = transpose(reshape(k, (n, t, heads, dh)), (0, 2, 1, 3))
    v = transpose(reshape(v, (n, t, heads, dh)), (0, 2, 1, 3))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1, mask=allowed[:, None, :, :])
    ctx = matmul(attn, v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (n, t, d))
    out = add(matmul(ctx, p[pre + "wo"]), p[pre + "ob"])
    if train:
        out = dropout(out, 1.0 - cfg.dropout, rng, train=True)
    h = add(h, out)

    x = layer_norm(h, p[pre + "ln2_g"], p[pre + "ln2_b"])
    x = gelu(add(matmul(x, p[pre + "ff1_w"]), p[pre + "ff1_b"]))
    x = add(matmul(x, p[pre + "ff2_w"]), p[pre + "ff2_b"])
    if train:
        x = dropout(x, 1.0 - cfg.dropout, rng, train=True)
    return add(h, x)


def _transformer_hidden(model: Model, ids: np.ndarray, train: bool,
                        rng: np.random.Generator | None) -> Tensor:
    """Final-layer hidden states (N, T, D) under a causal + pad mask."""
    cfg, p = model.config, model.params
    n, t = ids.shape
    not_pad = ids != PAD_ID
    # attention from position i to j requires j <= i and j not pad
    causal = np.tril(np.ones((t, t), dtype=bool))
    allowed = causal[None, :, :] & not_pad[:, None, :]

    tok = embedding(p["lang.tok_emb"], ids)
    pos = embedding(p["lang.pos_emb"], np.broadcast_to(np.arange(t), (n, t)))
    h = add(tok, pos)
    if train:
        h = dropout(h, 1.0 - cfg.dropout, rng, train=True)
    for layer in range(cfg.n_layers):
        h = _attention_block(cfg, p, layer, h, allowed, train, rng)
    return layer_norm(h, p["lang.lnf_g"], p["lang.lnf_b"])


def _eos_positions(ids: np.ndarray) -> np.ndarray:
    positions = np.empty(ids.shape[0], dtype=np.intp)
    for i, row in enumerate(ids):
        hits = np.nonzero(row == EOS_ID)[0]
        if len(hits) == 0:
            raise DataError(f"utterance {i} has no <eos> token")
        positions[i] = hits[-1]
    return positions


def encode_utterances_transformer(model: Model, ids_batch, train: bool = False,
                                  rng: np.random.Generator | None = None) -> Tensor:
    """Utterance embedding = final hidden state at the <eos> position."""
    ids = _ids_matrix(ids_batch, model.config.max_len)
    hidden = _transformer_hidden(model, ids, train, rng)
    return take_per_row(hidden, _eos_positions(ids))


def encode_utterances(model: Model, ids_batch, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    if model.config.uses_transformer:
        return encode_utterances_transformer(model, ids_batch, train, rng)
    return encode_utterances_embedding(model, ids_batch, train, rng)


def lm_logits(model: Model, ids_batch, train: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
    """Next-word logits (N, T, V); the unembedding shares the token table."""
    if not model.config.uses_transformer:
        raise ValueError("language-model logits need a transformer variant")
    ids = _ids_matrix(ids_batch, model.config.max_len)
    _eos_positions(ids)  # same precondition as encoding
    hidden = _transformer_hidden(model, ids, train, rng)
    tok = model.params["lang.tok_emb"]
    return matmul(hidden, transpose(tok, (1, 0)))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path: str | Path) -> None:
    """Versioned binary: header {magic, version, variant, D, V, max_len,
    feature_dim, n_layers, n_heads, ff_mult} then named f64 blocks."""
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(GLCK_MAGIC)
        variant = cfg.variant.encode("utf-8")
        fh.write(struct.pack("<II", GLCK_VERSION, len(variant)))
        fh.write(variant)
        fh.write(struct.pack("<7I", cfg.embed_dim, cfg.vocab_size, cfg.max_len,
                             cfg.feature_dim, cfg.n_layers, cfg.n_heads, cfg.ff_mult))
        fh.write(struct.pack("<I", len(model.params)))
        for name in sorted(model.params):
            data = model.params[name].data
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(np.ascontiguousarray(data).tobytes())


def load_checkpoint(path: str | Path) -> Model:
    with open(path, "rb") as fh:
        if fh.read(4) != GLCK_MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic)")
        version, vlen = struct.unpack("<II", fh.read(8))
        if version != GLCK_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        variant = fh.read(vlen).decode("utf-8")
        d, v, max_len, f_dim, n_layers, n_heads, ff_mult = struct.unpack("<7I", fh.read(28))
        cfg = ModelConfig(variant=variant, feature_dim=f_dim, embed_dim=d,
                          vocab_size=v, max_len=max_len, n_layers=n_layers,
                          n_heads=n_heads, ff_mult=ff_mult)
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, Tensor] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * n_items), dtype="<f8").reshape(shape)
            params[name] = Tensor(data.copy(), requires_grad=True)
    return Model(config=cfg, params=params)
