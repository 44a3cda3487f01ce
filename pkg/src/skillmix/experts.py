"""Expert decoder banks and the four decoder regimes.

An :class:`ExpertBank` holds one decoder parameter set per skill plus a key
matrix.  A recurrent query encoder summarizes the encoded input into a query
vector; its scores against the keys produce the mixing weights.  The two
transformer mixing regimes differ in where the weights are applied:

* parameter mixing builds one decoder whose parameters are the weighted sum
  of the expert parameter sets, then decodes once;
* representation mixing runs every expert decoder and takes the weighted sum
  of their output states, one decode per expert.

Binary weight vectors can replace the learned weights (gold supervision at
evaluation time, or hand-picked skill sets for composition demos).  A
recurrent baseline with gated feed-forward experts between two recurrent
layers is included for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SkillVector, VecExample, Vocabulary
from .transformer import (
    CopyGate,
    DecoderParams,
    EmbeddingTables,
    ModelConfig,
    TransformerCore,
    decode,
    embed_input,
    embed_target,
    glorot_init,
    greedy_decode,
    init_decoder_params,
    make_rng,
    output_distribution,
)

VARIANTS = ("TRS", "TRS+U", "MoE", "AoR", "AoP", "AoP+U", "AoP-noLV", "AoP-O")

# Full-scale skill layout: the two API skills, ten task domains, and chit-chat.
DEFAULT_SKILLS = ["SQL", "BOOK", "Taxi", "Police", "Restaurant", "Hospital",
                  "Hotel", "Attraction", "Train", "Weather", "Schedule",
                  "Navigate", "Persona"]


# ---------------------------------------------------------------------------
# query encoder and attention over the expert keys


class QueryEncoder:
    """Gated recurrent unit that reduces H to a single query vector."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.weights = [glorot_init(rng, (d, d)) for _ in range(6)]
        self.biases = [Tensor(np.zeros((d, 1))) for _ in range(3)]

    def register(self, store: ad.ParamStore, prefix: str = "query.") -> None:
        for name, t in zip(("wz", "wr", "wh", "uz", "ur", "uh"), self.weights):
            store.add(prefix + name, t)
        for name, t in zip(("bz", "br", "bh"), self.biases):
            store.add(prefix + name, t)

    def __call__(self, h_enc: Tensor) -> Tensor:
        return ad.gru_scan(h_enc, *self.weights, *self.biases)


def compute_query(encoder: QueryEncoder, h_enc: Tensor) -> Tensor:
    """Final hidden state of the recurrent scan over H's columns."""
    return encoder(h_enc)


@dataclass
class AttentionOutcome:
    """Raw key scores and their softmax; both views of one routing decision."""

    logits: Tensor  # (r,)
    alpha: Tensor   # (r,) nonnegative, sums to one


def attention_scores(q: Tensor, key_matrix: Tensor) -> AttentionOutcome:
    """logits = q^T K over the expert keys; alpha is their softmax."""
    logits = ad.reshape(ad.matmul(ad.transpose(q), key_matrix), (-1,))
    return AttentionOutcome(logits=logits, alpha=ad.softmax(logits, axis=0))


# ---------------------------------------------------------------------------
# the expert bank and parameter mixing


class ExpertBank:
    """r expert decoder parameter sets, their key matrix, and skill labels."""

    def __init__(self, experts: list[DecoderParams], key_matrix: Tensor,
                 skill_names: Sequence[str]):
        if len(experts) != len(skill_names) or key_matrix.shape[1] != len(experts):
            raise ValueError(
                f"bank size mismatch: {len(experts)} experts, "
                f"{len(skill_names)} skills, {key_matrix.shape[1]} keys")
        signature = experts[0].spec()
        for e in experts[1:]:
            if e.spec() != signature:
                raise ValueError("expert parameter sets must share one shape signature")
        self.experts = list(experts)
        self.key_matrix = key_matrix
        self.skill_names = list(skill_names)

    @property
    def r(self) -> int:
        return len(self.experts)

    @classmethod
    def init(cls, cfg: ModelConfig, skill_names: Sequence[str],
             rng: np.random.Generator) -> "ExpertBank":
        experts = [init_decoder_params(rng, cfg) for _ in skill_names]
        return cls(experts, glorot_init(rng, (cfg.d_model, len(skill_names))), skill_names)

    def register(self, store: ad.ParamStore) -> None:
        store.add("bank.keys", self.key_matrix)
        for i, expert in enumerate(self.experts):
            expert.register(store, f"bank.e{i}.")

    def skill_index(self, name: str) -> int:
        if name not in self.skill_names:
            raise LookupError(f"unknown skill name: {name} (have {self.skill_names})")
        return self.skill_names.index(name)


def mix_parameters(bank: ExpertBank, alpha: Tensor) -> DecoderParams:
    """One decoder parameter set, the alpha-weighted sum of the experts.

    Mixing happens tensor-by-tensor, which equals unflattening the weighted
    sum of the flattened experts; gradients reach alpha and every expert.
    """
    alpha = ad.as_tensor(alpha)
    if alpha.size != bank.r:
        raise ValueError(f"{alpha.size} weights for {bank.r} experts")
    if not np.all(np.isfinite(alpha.data)):
        raise ValueError("mixing weights must be finite")
    mixed = {
        name: ad.weighted_sum(alpha, [e[name] for e in bank.experts])
        for name in bank.experts[0].names()
    }
    return DecoderParams(mixed)


def oracle_attention(v: SkillVector, normalize: bool = False) -> np.ndarray:
    """The gold skill bits used directly as mixing weights (no softmax).

    Kept raw by default; ``normalize`` divides by the bit count for
    experimentation.
    """
    bits = v.array()
    total = bits.sum()
    if total == 0:
        raise ValueError("oracle attention needs at least one active skill bit")
    return bits / total if normalize else bits


def manual_attention(skills: Sequence[str], bank: ExpertBank,
                     normalize: bool = False) -> np.ndarray:
    """Binary weights with ones at the named skills (composition demos)."""
    if not skills:
        raise ValueError("manual attention needs at least one skill name")
    alpha = np.zeros(bank.r)
    for name in skills:
        alpha[bank.skill_index(name)] = 1.0
    return alpha / alpha.sum() if normalize else alpha


# ---------------------------------------------------------------------------
# forward results


@dataclass
class ForwardResult:
    dist: Tensor                         # (k, ext_width) rows over tokens
    attention: AttentionOutcome | None   # None for the single-decoder model
    alpha_used: np.ndarray | None        # actual mixing weights (overrides included)


# ---------------------------------------------------------------------------
# models


class ExpertSeq2Seq:
    """Transformer trunk + expert bank, in parameter- or representation-mixing mode."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, type_tags: Sequence[str],
                 skill_names: Sequence[str], seed: int, mode: str = "aop",
                 use_skill_loss: bool = True, oracle: bool = False):
        if mode not in ("aop", "aor"):
            raise ValueError(f"unknown mixing mode: {mode}")
        rng = make_rng(seed)
        self.cfg = cfg.scaled(experts=len(skill_names))
        self.mode = mode
        self.use_skill_loss = use_skill_loss
        self.oracle = oracle
        self.core = TransformerCore(self.cfg, vocab, type_tags, rng)
        self.query_encoder = QueryEncoder(self.cfg, rng)
        self.bank = ExpertBank.init(self.cfg, skill_names, rng)
        self.store = ad.ParamStore()
        self.core.register(self.store)
        self.query_encoder.register(self.store)
        self.bank.register(self.store)

    @property
    def vocab(self) -> Vocabulary:
        return self.core.vocab

    @property
    def skill_names(self) -> list[str]:
        return self.bank.skill_names

    def parameters(self) -> ad.ParamStore:
        return self.store

    def forward(self, vec: VecExample, tgt_in: np.ndarray | None = None,
                alpha_override: np.ndarray | None = None,
                force_p_gen: float | None = None,
                mode: str | None = None) -> ForwardResult:
        mode = self.mode if mode is None else mode
        if mode not in ("aop", "aor"):
            raise ValueError(f"unknown mixing mode: {mode}")
        tgt_in = vec.tgt_in if tgt_in is None else tgt_in
        h_enc = self.core.encode_source(vec)
        q = compute_query(self.query_encoder, h_enc)
        outcome = attention_scores(q, self.bank.key_matrix)
        if alpha_override is not None:
            alpha = Tensor(np.asarray(alpha_override, dtype=np.float64))
        elif self.oracle:
            if vec.gold_bits is None:
                raise ValueError("oracle mode needs gold skill bits on the example")
            alpha = Tensor(oracle_attention(SkillVector(tuple(int(b) for b in vec.gold_bits))))
        else:
            alpha = outcome.alpha
        y_emb = self.core.embed_target_ids(tgt_in)
        if mode == "aop":
            mixed = mix_parameters(self.bank, alpha)
            o, cross = decode(mixed, y_emb, h_enc, self.cfg, hops=self.cfg.hops)
        else:
            outs, attns = [], []
            for expert in self.bank.experts:
                o_i, attn_i = decode(expert, y_emb, h_enc, self.cfg, hops=self.cfg.hops)
                outs.append(o_i)
                attns.append(attn_i)
            o = ad.weighted_sum(alpha, outs)
            cross = ad.weighted_sum(alpha, attns)
        dist = self.core.distribution(o, h_enc, cross, y_emb, vec, force_p_gen)
        return ForwardResult(dist=dist, attention=outcome, alpha_used=alpha.data.copy())

    def greedy(self, vec: VecExample, max_length: int = 40) -> list[int]:
        def step(prefix: np.ndarray) -> np.ndarray:
            return self.forward(vec, tgt_in=prefix).dist.data

        return greedy_decode(step, self.vocab, max_length)

    def meta(self) -> dict:
        return _meta(self, "AoP" if self.mode == "aop" else "AoR")


def aop_forward(model: ExpertSeq2Seq, vec: VecExample,
                alpha_override: np.ndarray | None = None) -> ForwardResult:
    """Mix the expert parameters, then run the single combined decoder."""
    return model.forward(vec, alpha_override=alpha_override, mode="aop")


def aor_forward(model: ExpertSeq2Seq, vec: VecExample,
                alpha_override: np.ndarray | None = None) -> ForwardResult:
    """Run every expert decoder and mix their output representations."""
    return model.forward(vec, alpha_override=alpha_override, mode="aor")


class SingleSeq2Seq:
    """Plain transformer sequence-to-sequence model (one decoder parameter set)."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, type_tags: Sequence[str],
                 skill_names: Sequence[str], seed: int):
        rng = make_rng(seed)
        self.cfg = cfg
        self.skill_names = list(skill_names)
        self.use_skill_loss = False
        self.oracle = False
        self.core = TransformerCore(cfg, vocab, type_tags, rng)
        self.decoder = init_decoder_params(rng, cfg)
        self.store = ad.ParamStore()
        self.core.register(self.store)
        self.decoder.register(self.store, "dec.")

    @property
    def vocab(self) -> Vocabulary:
        return self.core.vocab

    def parameters(self) -> ad.ParamStore:
        return self.store

    def forward(self, vec: VecExample, tgt_in: np.ndarray | None = None,
                force_p_gen: float | None = None) -> ForwardResult:
        tgt_in = vec.tgt_in if tgt_in is None else tgt_in
        h_enc = self.core.encode_source(vec)
        y_emb = self.core.embed_target_ids(tgt_in)
        o, cross = decode(self.decoder, y_emb, h_enc, self.cfg, hops=self.cfg.hops)
        dist = self.core.distribution(o, h_enc, cross, y_emb, vec, force_p_gen)
        return ForwardResult(dist=dist, attention=None, alpha_used=None)

    def greedy(self, vec: VecExample, max_length: int = 40) -> list[int]:
        def step(prefix: np.ndarray) -> np.ndarray:
            return self.forward(vec, tgt_in=prefix).dist.data

        return greedy_decode(step, self.vocab, max_length)

    def meta(self) -> dict:
        return _meta(self, "TRS")


class RecurrentMoE:
    """Recurrent baseline: gated feed-forward experts between two recurrent layers.

    The encoder is a recurrent scan over the annotated input embeddings; a
    gating head over its final state weights the expert feed-forward blocks
    applied between the two decoder recurrences.  The output attends over the
    encoder states and feeds the same copy machinery as the transformer models.
    """

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, type_tags: Sequence[str],
                 skill_names: Sequence[str], seed: int):
        rng = make_rng(seed)
        self.cfg = cfg
        self.skill_names = list(skill_names)
        self.type_tags = list(type_tags)
        self.use_skill_loss = False
        self.oracle = False
        self.vocab = vocab
        d, f, r = cfg.d_model, cfg.filter_size, len(skill_names)
        self.tables = EmbeddingTables(cfg, len(vocab), len(type_tags), rng)
        self.enc_rnn = QueryEncoder(cfg, rng)
        self.dec_rnn1 = QueryEncoder(cfg, rng)
        self.dec_rnn2 = QueryEncoder(cfg, rng)
        self.gate_w = glorot_init(rng, (r, d))
        self.expert_ffns = [
            {
                "w1": glorot_init(rng, (f, d)),
                "b1": Tensor(np.zeros((f, 1))),
                "w2": glorot_init(rng, (d, f)),
                "b2": Tensor(np.zeros((d, 1))),
            }
            for _ in range(r)
        ]
        self.combine = glorot_init(rng, (d, 2 * d))
        self.w_out = glorot_init(rng, (d, len(vocab)))
        self.copy_gate = CopyGate(cfg, rng)
        self.store = ad.ParamStore()
        self.tables.register(self.store)
        self.enc_rnn.register(self.store, "enc_rnn.")
        self.dec_rnn1.register(self.store, "dec_rnn1.")
        self.dec_rnn2.register(self.store, "dec_rnn2.")
        self.store.add("gate_w", self.gate_w)
        for i, ffn in enumerate(self.expert_ffns):
            for name, t in ffn.items():
                self.store.add(f"expert{i}.{name}", t)
        self.store.add("combine", self.combine)
        self.store.add("out.w", self.w_out)
        self.copy_gate.register(self.store)

    def parameters(self) -> ad.ParamStore:
        return self.store

    def forward(self, vec: VecExample, tgt_in: np.ndarray | None = None,
                gate_override: np.ndarray | None = None,
                force_p_gen: float | None = None) -> ForwardResult:
        tgt_in = vec.tgt_in if tgt_in is None else tgt_in
        x = embed_input(vec, self.tables)
        h_enc = ad.gru_scan(x, *self.enc_rnn.weights, *self.enc_rnn.biases,
                            return_sequence=True)  # (d, n)
        h_last = ad.narrow(h_enc, 1, h_enc.shape[1] - 1, 1)
        if gate_override is not None:
            gate = Tensor(np.asarray(gate_override, dtype=np.float64))
        else:
            gate = ad.reshape(ad.softmax(ad.matmul(self.gate_w, h_last), axis=0), (-1,))
        y_emb = self._embed_target(tgt_in)
        s1 = ad.gru_scan(y_emb, *self.dec_rnn1.weights, *self.dec_rnn1.biases,
                         return_sequence=True)  # (d, k)
        expert_outs = []
        for ffn in self.expert_ffns:
            h = ad.relu(ad.add(ad.matmul(ffn["w1"], s1), ffn["b1"]))
            expert_outs.append(ad.add(ad.matmul(ffn["w2"], h), ffn["b2"]))
        mixed = ad.weighted_sum(gate, expert_outs)
        s2 = ad.gru_scan(mixed, *self.dec_rnn2.weights, *self.dec_rnn2.biases,
                         return_sequence=True)  # (d, k)
        scores = ad.mul(ad.matmul(ad.transpose(s2), h_enc), 1.0 / np.sqrt(self.cfg.d_model))
        attn = ad.softmax(scores, axis=1)  # (k, n)
        context = ad.matmul(h_enc, ad.transpose(attn))  # (d, k)
        o = ad.tanh(ad.matmul(self.combine, ad.concat([s2, context], axis=0)))
        dist = output_distribution(o, h_enc, attn, self.w_out, self.copy_gate,
                                   y_emb, vec.copy_ids, vec.ext_width, force_p_gen)
        return ForwardResult(dist=dist, attention=None, alpha_used=gate.data.copy())

    def _embed_target(self, ids: np.ndarray) -> Tensor:
        return embed_target(ids, self.tables)

    def greedy(self, vec: VecExample, max_length: int = 40) -> list[int]:
        def step(prefix: np.ndarray) -> np.ndarray:
            return self.forward(vec, tgt_in=prefix).dist.data

        return greedy_decode(step, self.vocab, max_length)

    def meta(self) -> dict:
        return _meta(self, "MoE")


def moe_forward(model: RecurrentMoE, vec: VecExample,
                gate_override: np.ndarray | None = None) -> ForwardResult:
    """Gated sum of the expert feed-forward outputs between the recurrences."""
    return model.forward(vec, gate_override=gate_override)


def export_alphas(path, alphas: Sequence[np.ndarray], skill_names: Sequence[str],
                  ids: Sequence[str] | None = None) -> None:
    """Write mixing weights one row per example: id then r tab-separated floats."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("example\t" + "\t".join(skill_names) + "\n")
        for i, alpha in enumerate(alphas):
            row_id = str(i) if ids is None else str(ids[i])
            fh.write(row_id + "\t" + "\t".join(f"{a:.6f}" for a in alpha) + "\n")


# ---------------------------------------------------------------------------
# variant factory and serialization


def build_model(variant: str, cfg: ModelConfig, vocab: Vocabulary,
                type_tags: Sequence[str], skill_names: Sequence[str], seed: int):
    """Construct one of the named training variants."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant in ("TRS+U", "AoP+U") and cfg.hops == 1:
        cfg = cfg.scaled(hops=6)
    if variant in ("TRS", "TRS+U"):
        model = SingleSeq2Seq(cfg, vocab, type_tags, skill_names, seed)
    elif variant == "MoE":
        model = RecurrentMoE(cfg, vocab, type_tags, skill_names, seed)
    else:
        mode = "aor" if variant == "AoR" else "aop"
        model = ExpertSeq2Seq(
            cfg, vocab, type_tags, skill_names, seed, mode=mode,
            use_skill_loss=variant != "AoP-noLV",
            oracle=variant == "AoP-O",
        )
    model.variant = variant
    return model


def _meta(model, default_variant: str) -> dict:
    cfg = model.cfg
    type_tags = getattr(model, "type_tags", None)
    if type_tags is None:
        type_tags = model.core.type_tags
    return {
        "variant": getattr(model, "variant", default_variant),
        "config": {
            "d": cfg.d, "d_model": cfg.d_model, "heads": cfg.heads,
            "head_depth": cfg.head_depth, "filter_size": cfg.filter_size,
            "layers": cfg.layers, "hops": cfg.hops, "experts": cfg.experts,
            "max_segments": cfg.max_segments,
        },
        "vocab": model.vocab.tokens,
        "type_tags": list(type_tags),
        "skills": list(model.skill_names),
    }


def save_model(model, path, variant: str | None = None) -> None:
    meta = model.meta()
    if variant is not None:
        meta["variant"] = variant
    tensors = {name: t.data for name, t in model.parameters().items()}
    save_checkpoint(path, tensors, meta)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    tensors, meta = load_checkpoint(path)
    cfg = ModelConfig(**meta["config"])
    vocab = Vocabulary(meta["vocab"])
    variant = meta["variant"]
    model = build_model(variant, cfg, vocab, meta["type_tags"], meta["skills"], seed=0)
    store = model.parameters()
    missing = [n for n in store.names() if n not in tensors]
    if missing:
        raise ValueError(f"checkpoint {path} is missing tensors: {missing[:5]}")
    for name, t in store.items():
        arr = tensors[name]
        if arr.shape != t.data.shape:
            raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
        t.data = arr
    return model, meta
