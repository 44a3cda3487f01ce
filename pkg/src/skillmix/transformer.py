"""Transformer encoder/decoder with annotated embeddings and a copy gate.

The encoder maps the concatenated history+memory tokens (word + sinusoidal
position + type + segment embeddings) to a representation H.  A decoder layer
stack, represented explicitly by its named parameter tensors so whole
parameter sets can be flattened, mixed, and swapped, maps the shifted target
and H to output states O.  The output distribution mixes a vocabulary softmax
with the encoder-decoder attention mass scattered onto source token ids,
gated by a learned scalar, so tokens that exist only in the source remain
reachable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import VecExample, Vocabulary, VocabularyError


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``head_depth`` is the per-head key/value dimension and ``filter_size`` the
    feed-forward inner width.  The desk preset keeps everything small enough
    for minute-scale runs; the full-scale preset mirrors the published
    configuration (d = d_model = 300, 2 heads of depth 40, filter 50).
    """

    d: int = 64
    d_model: int = 64
    heads: int = 2
    head_depth: int = 16
    filter_size: int = 128
    layers: int = 1
    hops: int = 1
    experts: int = 4
    max_segments: int = 32

    @property
    def attn_dim(self) -> int:
        return self.heads * self.head_depth

    def scaled(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


DESK_CONFIG = ModelConfig()
PAPER_CONFIG = ModelConfig(d=300, d_model=300, heads=2, head_depth=40,
                           filter_size=50, layers=1, hops=1, experts=13)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def glorot_init(rng: np.random.Generator, shape) -> Tensor:
    fan_out, fan_in = shape[0], shape[1] if len(shape) > 1 else 1
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def sinusoidal_positions(d: int, n: int) -> np.ndarray:
    """Fixed sin/cos position signal, one column per position."""
    pe = np.zeros((d, n))
    position = np.arange(n)
    for i in range(0, d, 2):
        div = math.exp(-(i / d) * math.log(10000.0))
        pe[i] = np.sin(position * div)
        if i + 1 < d:
            pe[i + 1] = np.cos(position * div)
    return pe


# ---------------------------------------------------------------------------
# parameter sets


class LayerStackParams:
    """Named parameter tensors of an encoder or decoder layer stack.

    The ordered name/shape signature makes a parameter set a vector: it can be
    flattened to one float64 array and rebuilt exactly, and flattening is
    linear, so mixing parameter sets commutes with flattening.
    """

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def spec(self) -> tuple:
        return tuple((n, t.data.shape) for n, t in self.tensors.items())

    def num_elements(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.tensors.values()])

    @classmethod
    def unflatten(cls, spec: Sequence, vec: np.ndarray) -> "LayerStackParams":
        expected = sum(int(np.prod(shape)) for _, shape in spec)
        if vec.size != expected:
            raise ad.ShapeError(f"flat vector length {vec.size} does not match spec ({expected})")
        tensors: dict[str, Tensor] = {}
        offset = 0
        for name, shape in spec:
            size = int(np.prod(shape))
            tensors[name] = Tensor(vec[offset : offset + size].reshape(shape).copy())
            offset += size
        return cls(tensors)

    def register(self, store: ad.ParamStore, prefix: str) -> None:
        for name, t in self.tensors.items():
            store.add(prefix + name, t)


DecoderParams = LayerStackParams
EncoderParams = LayerStackParams


def _init_attention(rng, tensors, prefix, cfg: ModelConfig) -> None:
    a, d = cfg.attn_dim, cfg.d_model
    tensors[f"{prefix}.wq"] = glorot_init(rng, (a, d))
    tensors[f"{prefix}.wk"] = glorot_init(rng, (a, d))
    tensors[f"{prefix}.wv"] = glorot_init(rng, (a, d))
    tensors[f"{prefix}.wo"] = glorot_init(rng, (d, a))


def _init_common_layer(rng, tensors, prefix, cfg: ModelConfig) -> None:
    d, f = cfg.d_model, cfg.filter_size
    tensors[f"{prefix}.ffn.w1"] = glorot_init(rng, (f, d))
    tensors[f"{prefix}.ffn.b1"] = Tensor(np.zeros((f, 1)))
    tensors[f"{prefix}.ffn.w2"] = glorot_init(rng, (d, f))
    tensors[f"{prefix}.ffn.b2"] = Tensor(np.zeros((d, 1)))


def _init_norm(tensors, name, d) -> None:
    tensors[f"{name}.g"] = Tensor(np.ones((d, 1)))
    tensors[f"{name}.b"] = Tensor(np.zeros((d, 1)))


def init_encoder_params(rng, cfg: ModelConfig) -> EncoderParams:
    tensors: dict[str, Tensor] = {}
    for i in range(cfg.layers):
        p = f"L{i}"
        _init_attention(rng, tensors, f"{p}.self", cfg)
        _init_norm(tensors, f"{p}.ln1", cfg.d_model)
        _init_common_layer(rng, tensors, p, cfg)
        _init_norm(tensors, f"{p}.ln2", cfg.d_model)
    return EncoderParams(tensors)


def init_decoder_params(rng, cfg: ModelConfig) -> DecoderParams:
    tensors: dict[str, Tensor] = {}
    for i in range(cfg.layers):
        p = f"L{i}"
        _init_attention(rng, tensors, f"{p}.self", cfg)
        _init_norm(tensors, f"{p}.ln1", cfg.d_model)
        _init_attention(rng, tensors, f"{p}.cross", cfg)
        _init_norm(tensors, f"{p}.ln2", cfg.d_model)
        _init_common_layer(rng, tensors, p, cfg)
        _init_norm(tensors, f"{p}.ln3", cfg.d_model)
    return DecoderParams(tensors)


# ---------------------------------------------------------------------------
# embeddings


class EmbeddingTables:
    """Word table plus one shared table for type tags and segment slots."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, n_types: int, rng):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.n_types = n_types
        self.word = uniform_init(rng, (cfg.d, vocab_size))
        self.tags = uniform_init(rng, (cfg.d, n_types + cfg.max_segments))

    def register(self, store: ad.ParamStore) -> None:
        store.add("emb.word", self.word)
        store.add("emb.tags", self.tags)


def embed_input(vec: VecExample, tables: EmbeddingTables) -> Tensor:
    """Sum of word, position, type, and segment embeddings per input column."""
    ids = vec.src_ids
    if ids.min() < 0 or ids.max() >= tables.vocab_size:
        raise VocabularyError(f"source id outside word table of {tables.vocab_size}")
    if vec.type_ids.min() < 0 or vec.type_ids.max() >= tables.n_types:
        raise VocabularyError(f"type id outside the {tables.n_types} declared tags")
    seg = np.minimum(vec.seg_ids, tables.cfg.max_segments - 1) + tables.n_types
    x = ad.gather_columns(tables.word, ids)
    x = ad.add(x, ad.gather_columns(tables.tags, vec.type_ids))
    x = ad.add(x, ad.gather_columns(tables.tags, seg))
    return ad.add(x, Tensor(sinusoidal_positions(tables.cfg.d, len(ids))))


def embed_target(ids: np.ndarray, tables: EmbeddingTables) -> Tensor:
    if len(ids) and (ids.min() < 0 or ids.max() >= tables.vocab_size):
        raise VocabularyError(f"target id outside word table of {tables.vocab_size}")
    x = ad.gather_columns(tables.word, ids)
    return ad.add(x, Tensor(sinusoidal_positions(tables.cfg.d, len(ids))))


# ---------------------------------------------------------------------------
# attention and layers


def causal_mask(k: int) -> Tensor:
    m = np.triu(np.full((k, k), -1e9), k=1)
    return Tensor(m)


def multi_head_attention(params: LayerStackParams, prefix: str, q_in: Tensor,
                         kv_in: Tensor, heads: int,
                         mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Returns (projected context, attention weights averaged over heads)."""
    q = ad.matmul(params[f"{prefix}.wq"], q_in)
    k = ad.matmul(params[f"{prefix}.wk"], kv_in)
    v = ad.matmul(params[f"{prefix}.wv"], kv_in)
    dh = q.shape[0] // heads
    contexts, attns = [], []
    for h in range(heads):
        qh = ad.narrow(q, 0, h * dh, dh)
        kh = ad.narrow(k, 0, h * dh, dh)
        vh = ad.narrow(v, 0, h * dh, dh)
        scores = ad.mul(ad.matmul(ad.transpose(qh), kh), 1.0 / math.sqrt(dh))
        if mask is not None:
            scores = ad.add(scores, mask)
        attn = ad.softmax(scores, axis=1)
        contexts.append(ad.matmul(vh, ad.transpose(attn)))
        attns.append(attn)
    out = ad.matmul(params[f"{prefix}.wo"], ad.concat(contexts, axis=0))
    mean_attn = attns[0]
    for a in attns[1:]:
        mean_attn = ad.add(mean_attn, a)
    mean_attn = ad.mul(mean_attn, 1.0 / heads)
    return out, mean_attn


def _ffn(params: LayerStackParams, prefix: str, x: Tensor) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(params[f"{prefix}.ffn.w1"], x), params[f"{prefix}.ffn.b1"]))
    return ad.add(ad.matmul(params[f"{prefix}.ffn.w2"], h), params[f"{prefix}.ffn.b2"])


def encode(params: EncoderParams, x: Tensor, cfg: ModelConfig) -> Tensor:
    """Encoder stack over embedded input columns; returns H (d_model, n)."""
    for i in range(cfg.layers):
        p = f"L{i}"
        attn_out, _ = multi_head_attention(params, f"{p}.self", x, x, cfg.heads)
        x = ad.layer_norm(ad.add(x, attn_out), params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        x = ad.layer_norm(ad.add(x, _ffn(params, p, x)), params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    return x


def decode(params: DecoderParams, y_emb: Tensor, h_enc: Tensor, cfg: ModelConfig,
           hops: int = 1) -> tuple[Tensor, Tensor]:
    """Decoder stack with causal self-attention; one counted decoder pass.

    ``hops`` > 1 re-applies the same layer stack, adding no parameters.
    Returns output states O (d_model, k) and the final cross-attention weights
    averaged over heads (k, n), which the copy path consumes.
    """
    if hops < 1:
        raise ValueError(f"hops must be >= 1, got {hops}")
    ad.count_decoder_invocation()
    k = y_emb.shape[1]
    mask = causal_mask(k)
    x = y_emb
    cross_attn: Tensor | None = None
    for _ in range(hops):
        for i in range(cfg.layers):
            p = f"L{i}"
            self_out, _ = multi_head_attention(params, f"{p}.self", x, x, cfg.heads, mask)
            x = ad.layer_norm(ad.add(x, self_out), params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
            cross_out, cross_attn = multi_head_attention(params, f"{p}.cross", x, h_enc, cfg.heads)
            x = ad.layer_norm(ad.add(x, cross_out), params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
            x = ad.layer_norm(ad.add(x, _ffn(params, p, x)), params[f"{p}.ln3.g"], params[f"{p}.ln3.b"])
    return x, cross_attn


def universal_decode(params: DecoderParams, y_emb: Tensor, h_enc: Tensor,
                     cfg: ModelConfig, hops: int) -> tuple[Tensor, Tensor]:
    """Weight-shared recurrent-depth decoding: the single stack applied
    ``hops`` times.  hops=1 is exactly ``decode``."""
    return decode(params, y_emb, h_enc, cfg, hops=hops)


# ---------------------------------------------------------------------------
# output distribution with copy


class CopyGate:
    """Scalar generation gate from decoder state, context, and input embedding."""

    def __init__(self, cfg: ModelConfig, rng):
        self.wo = glorot_init(rng, (1, cfg.d_model))
        self.wc = glorot_init(rng, (1, cfg.d_model))
        self.wy = glorot_init(rng, (1, cfg.d))
        self.b = Tensor(np.zeros((1, 1)))

    def register(self, store: ad.ParamStore) -> None:
        store.add("gate.wo", self.wo)
        store.add("gate.wc", self.wc)
        store.add("gate.wy", self.wy)
        store.add("gate.b", self.b)

    def __call__(self, o: Tensor, context: Tensor, y_emb: Tensor) -> Tensor:
        pre = ad.add(ad.matmul(self.wo, o), ad.matmul(self.wc, context))
        pre = ad.add(pre, ad.matmul(self.wy, y_emb))
        return ad.sigmoid(ad.add(pre, self.b))  # (1, k)


def output_distribution(o: Tensor, h_enc: Tensor, cross_attn: Tensor,
                        w_out: Tensor, gate: CopyGate, y_emb: Tensor,
                        copy_ids: np.ndarray, ext_width: int,
                        force_p_gen: float | None = None) -> Tensor:
    """Per-step distribution over the extended vocabulary; rows sum to one.

    The generation path is softmax(O^T W) padded with zero columns for the
    per-example extension ids; the copy path scatters the cross-attention mass
    onto the source token ids.  A learned gate (or a forced constant, for
    diagnostics) mixes the two.
    """
    vocab_probs = ad.softmax(ad.matmul(ad.transpose(o), w_out), axis=1)  # (k, |V|)
    if ext_width > w_out.shape[1]:
        pad = Tensor(np.zeros((o.shape[1], ext_width - w_out.shape[1])))
        vocab_probs = ad.concat([vocab_probs, pad], axis=1)
    copy_probs = ad.scatter_columns_add(cross_attn, copy_ids, ext_width)  # (k, ext)
    if force_p_gen is None:
        context = ad.matmul(h_enc, ad.transpose(cross_attn))  # (d, k)
        p_gen = ad.transpose(gate(o, context, y_emb))  # (k, 1)
    else:
        p_gen = Tensor(np.full((o.shape[1], 1), float(force_p_gen)))
    keep = ad.sub(Tensor(np.ones((1, 1))), p_gen)
    return ad.add(ad.mul(p_gen, vocab_probs), ad.mul(keep, copy_probs))


# ---------------------------------------------------------------------------
# shared model trunk


class TransformerCore:
    """Embeddings, encoder stack, output projection, and copy gate.

    Decoder parameter sets live outside the core so different decoder regimes
    (single set, expert mixtures) can share one trunk.
    """

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, type_tags: Sequence[str],
                 rng: np.random.Generator):
        if cfg.d != cfg.d_model:
            raise ValueError("embedding size must equal model width")
        self.cfg = cfg
        self.vocab = vocab
        self.type_tags = list(type_tags)
        self.tables = EmbeddingTables(cfg, len(vocab), len(type_tags), rng)
        self.encoder = init_encoder_params(rng, cfg)
        self.w_out = glorot_init(rng, (cfg.d_model, len(vocab)))
        self.gate = CopyGate(cfg, rng)

    def register(self, store: ad.ParamStore) -> None:
        self.tables.register(store)
        self.encoder.register(store, "enc.")
        store.add("out.w", self.w_out)
        self.gate.register(store)

    def encode_source(self, vec: VecExample) -> Tensor:
        return encode(self.encoder, embed_input(vec, self.tables), self.cfg)

    def embed_target_ids(self, ids: np.ndarray) -> Tensor:
        return embed_target(ids, self.tables)

    def distribution(self, o: Tensor, h_enc: Tensor, cross_attn: Tensor,
                     y_emb: Tensor, vec: VecExample,
                     force_p_gen: float | None = None) -> Tensor:
        return output_distribution(o, h_enc, cross_attn, self.w_out, self.gate,
                                   y_emb, vec.copy_ids, vec.ext_width, force_p_gen)


# ---------------------------------------------------------------------------
# greedy decoding


def greedy_decode(step_fn: Callable[[np.ndarray], np.ndarray], vocab: Vocabulary,
                  max_length: int) -> list[int]:
    """Auto-regressive argmax loop.

    ``step_fn`` maps decoder-input ids to the distribution matrix; only the
    last row is read each step.  Returns generated ids (extended space)
    without the end marker; extension ids are fed back as <UNK>.
    """
    prefix = [vocab.sos_id]
    out: list[int] = []
    with ad.no_grad():
        for _ in range(max_length):
            dist = step_fn(np.asarray(prefix, dtype=np.int64))
            nxt = int(np.argmax(dist[-1]))
            if nxt == vocab.eos_id:
                break
            out.append(nxt)
            prefix.append(nxt if nxt < len(vocab) else vocab.unk_id)
    return out
