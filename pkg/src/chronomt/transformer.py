"""Encoder-decoder transformer for character translation.

Pre-LN blocks with a final layer norm on both stacks, sinusoidal
positions, residual dropout.  One stack pair serves both translation
directions: direction="forward" embeds ancient on the encoder side and
modern on the decoder side, direction="backward" swaps the tables.
The forward output projection can be tied to the modern embedding
(share_decoder_embeddings); the backward projection is always its own
matrix.  BOS/EOS framing happens here, not in the tokenizer: sources
get EOS appended, decoder inputs are BOS-prefixed, decoder targets are
EOS-terminated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers
from .autodiff import Tensor, add, cross_entropy, dropout, embedding, matmul, scale, transpose
from .checkpoint import config_digest, load_checkpoint, save_checkpoint
from .errors import ValidationError
from .optim import ParameterStore
from .vocab import BOS, EOS, PAD

DIRECTIONS = ("forward", "backward")


@dataclass
class TransformerConfig:
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 256
    max_len: int = 64
    dropout: float = 0.1
    share_decoder_embeddings: bool = False
    ln_eps: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.num_layers < 1 or self.num_heads < 1:
            raise ValidationError("num_layers and num_heads must be positive")
        if self.model_dim < 1 or self.ffn_dim < 1 or self.max_len < 2:
            raise ValidationError("model_dim, ffn_dim, max_len must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ValidationError(
                f"model_dim {self.model_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.ln_eps <= 0:
            raise ValidationError("ln_eps must be positive")

    def to_dict(self):
        return {
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "model_dim": self.model_dim,
            "ffn_dim": self.ffn_dim,
            "max_len": self.max_len,
            "dropout": self.dropout,
            "share_decoder_embeddings": self.share_decoder_embeddings,
            "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EncoderState:
    h: Tensor
    key_mask: np.ndarray
    src: np.ndarray


def pad_batch(seqs, extra_eos=False):
    """Right-pad integer sequences to a (B, T) array of PAD-filled rows."""
    if not seqs:
        raise ValidationError("empty batch")
    width = max(len(s) for s in seqs) + (1 if extra_eos else 0)
    out = np.full((len(seqs), max(width, 1)), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        if extra_eos:
            out[i, len(s)] = EOS
    return out


class Seq2SeqTransformer:
    def __init__(self, config, src_vocab_size, tgt_vocab_size, seed=0, dtype=np.float32):
        config.validate()
        self.config = config
        self.src_vocab_size = int(src_vocab_size)
        self.tgt_vocab_size = int(tgt_vocab_size)
        self.dtype = np.dtype(dtype)
        self.store = ParameterStore(dtype=dtype, seed=seed)
        d = config.model_dim
        self.store.create("emb_a", (self.src_vocab_size, d), kind="embedding")
        self.store.create("emb_m", (self.tgt_vocab_size, d), kind="embedding")
        self.store.create("out_a", (d, self.src_vocab_size), kind="matmul")
        if not config.share_decoder_embeddings:
            self.store.create("out_m", (d, self.tgt_vocab_size), kind="matmul")
        for i in range(config.num_layers):
            layers.init_layer_norm(self.store, f"enc{i}.ln1", d)
            layers.init_attention(self.store, f"enc{i}.attn", d)
            layers.init_layer_norm(self.store, f"enc{i}.ln2", d)
            layers.init_ffn(self.store, f"enc{i}.ffn", d, config.ffn_dim)
        for i in range(config.num_layers):
            layers.init_layer_norm(self.store, f"dec{i}.ln1", d)
            layers.init_attention(self.store, f"dec{i}.self", d)
            layers.init_layer_norm(self.store, f"dec{i}.ln2", d)
            layers.init_attention(self.store, f"dec{i}.cross", d)
            layers.init_layer_norm(self.store, f"dec{i}.ln3", d)
            layers.init_ffn(self.store, f"dec{i}.ffn", d, config.ffn_dim)
        layers.init_layer_norm(self.store, "enc_final", d)
        layers.init_layer_norm(self.store, "dec_final", d)
        self.pos = layers.sinusoid_table(config.max_len, d, self.dtype)

    def _tables(self, direction):
        if direction == "forward":
            return self.store["emb_a"], self.store["emb_m"]
        if direction == "backward":
            return self.store["emb_m"], self.store["emb_a"]
        raise ValidationError(f"direction must be one of {DIRECTIONS}, got {direction!r}")

    def _output_matrix(self, direction):
        if direction == "forward":
            if self.config.share_decoder_embeddings:
                return transpose(self.store["emb_m"], (1, 0))
            return self.store["out_m"]
        return self.store["out_a"]

    def _check_len(self, t, what):
        if t > self.config.max_len:
            raise ValidationError(
                f"{what} length {t} exceeds max_len {self.config.max_len}"
            )

    def _embed(self, table, ids, train, rng):
        b, t = ids.shape
        d = self.config.model_dim
        h = scale(embedding(table, ids), math.sqrt(d))
        h = add(h, Tensor(self.pos[:t]))
        if train and self.config.dropout > 0:
            h = dropout(h, self.config.dropout, rng)
        return h

    def _run_encoder(self, enc_table, src, train, rng):
        kmask = layers.key_padding_mask(src, PAD, self.dtype.type)
        cfg = self.config
        h = self._embed(enc_table, src, train, rng)
        for i in range(cfg.num_layers):
            normed = layers.apply_layer_norm(self.store, f"enc{i}.ln1", h, cfg.ln_eps)
            a = layers.attention(
                self.store, f"enc{i}.attn", normed, normed,
                cfg.num_heads, kmask, cfg.dropout, rng, train,
            )
            h = layers.residual(h, a, cfg.dropout, rng, train)
            normed = layers.apply_layer_norm(self.store, f"enc{i}.ln2", h, cfg.ln_eps)
            f = layers.ffn(self.store, f"enc{i}.ffn", normed, cfg.dropout, rng, train)
            h = layers.residual(h, f, cfg.dropout, rng, train)
        h = layers.apply_layer_norm(self.store, "enc_final", h, cfg.ln_eps)
        return EncoderState(h=h, key_mask=kmask, src=src)

    def encode(self, src_seqs, direction="forward", train=False, rng=None):
        """src_seqs: list of raw id sequences (no EOS); returns EncoderState."""
        enc_table, _ = self._tables(direction)
        src = pad_batch(src_seqs, extra_eos=True)
        self._check_len(src.shape[1], "source")
        return self._run_encoder(enc_table, src, train, rng)

    def decode_logits(self, state, tgt_in, direction="forward", train=False, rng=None):
        """tgt_in: (B, T) BOS-prefixed decoder input; returns logits (B, T, V)."""
        _, dec_table = self._tables(direction)
        b, t = tgt_in.shape
        self._check_len(t, "target")
        cfg = self.config
        self_mask = layers.causal_mask(t, self.dtype.type) + layers.key_padding_mask(
            tgt_in, PAD, self.dtype.type
        )
        h = self._embed(dec_table, tgt_in, train, rng)
        for i in range(cfg.num_layers):
            normed = layers.apply_layer_norm(self.store, f"dec{i}.ln1", h, cfg.ln_eps)
            a = layers.attention(
                self.store, f"dec{i}.self", normed, normed,
                cfg.num_heads, self_mask, cfg.dropout, rng, train,
            )
            h = layers.residual(h, a, cfg.dropout, rng, train)
            normed = layers.apply_layer_norm(self.store, f"dec{i}.ln2", h, cfg.ln_eps)
            a = layers.attention(
                self.store, f"dec{i}.cross", normed, state.h,
                cfg.num_heads, state.key_mask, cfg.dropout, rng, train,
            )
            h = layers.residual(h, a, cfg.dropout, rng, train)
            normed = layers.apply_layer_norm(self.store, f"dec{i}.ln3", h, cfg.ln_eps)
            f = layers.ffn(self.store, f"dec{i}.ffn", normed, cfg.dropout, rng, train)
            h = layers.residual(h, f, cfg.dropout, rng, train)
        h = layers.apply_layer_norm(self.store, "dec_final", h, cfg.ln_eps)
        return matmul(h, self._output_matrix(direction))

    @staticmethod
    def frame_targets(tgt_seqs):
        """Build (decoder input, target, weight) arrays: BOS+y / y+EOS."""
        if not tgt_seqs:
            raise ValidationError("empty batch")
        width = max(len(s) for s in tgt_seqs) + 1
        b = len(tgt_seqs)
        tgt_in = np.full((b, width), PAD, dtype=np.int64)
        tgt_out = np.full((b, width), PAD, dtype=np.int64)
        weights = np.zeros((b, width), dtype=np.float64)
        tgt_in[:, 0] = BOS
        for i, s in enumerate(tgt_seqs):
            n = len(s)
            tgt_in[i, 1 : n + 1] = s
            tgt_out[i, :n] = s
            tgt_out[i, n] = EOS
            weights[i, : n + 1] = 1.0
        return tgt_in, tgt_out, weights

    def forward_loss(self, src_seqs, tgt_seqs, direction="forward", train=True, rng=None):
        """Mean per-token NLL of tgt given src (pad positions excluded)."""
        if len(src_seqs) != len(tgt_seqs):
            raise ValidationError(
                f"batch sides differ: {len(src_seqs)} sources, {len(tgt_seqs)} targets"
            )
        state = self.encode(src_seqs, direction, train=train, rng=rng)
        tgt_in, tgt_out, weights = self.frame_targets(tgt_seqs)
        logits = self.decode_logits(state, tgt_in, direction, train=train, rng=rng)
        return cross_entropy(logits, tgt_out, weights)

    def lm_loss(self, tgt_seqs, direction="forward", train=True, rng=None):
        """Monolingual objective: predict the sentence from a null context.

        The null context is a single BOS token on the encoder side, so
        the decoder trains its implicit language model while cross
        attention sees one uninformative position.
        """
        if not tgt_seqs:
            raise ValidationError("empty batch")
        enc_table, _ = self._tables(direction)
        src = np.full((len(tgt_seqs), 1), BOS, dtype=np.int64)
        state = self._run_encoder(enc_table, src, train, rng)
        tgt_in, tgt_out, weights = self.frame_targets(tgt_seqs)
        logits = self.decode_logits(state, tgt_in, direction, train=train, rng=rng)
        return cross_entropy(logits, tgt_out, weights)

    def parameter_count(self):
        return self.store.parameter_count()

    def save(self, path, extra_meta=None):
        cfg = self.config.to_dict()
        meta = {
            "kind": "seq2seq",
            "config": cfg,
            "config_digest": config_digest(cfg),
            "src_vocab_size": self.src_vocab_size,
            "tgt_vocab_size": self.tgt_vocab_size,
            "step_count": self.store.step_count,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.store.state_arrays(), meta)

    @classmethod
    def load(cls, path, dtype=np.float32):
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "seq2seq":
            raise ValidationError(
                f"checkpoint at {path} holds {meta.get('kind')!r}, expected 'seq2seq'"
            )
        model = cls(
            TransformerConfig.from_dict(meta["config"]),
            meta["src_vocab_size"],
            meta["tgt_vocab_size"],
            dtype=dtype,
        )
        model.store.load_state_arrays(arrays, meta.get("step_count", 0))
        return model, meta
