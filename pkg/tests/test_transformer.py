"""Encoder/decoder behaviour: embeddings, causality, the copy path,
weight-shared recurrent depth, parameter flattening, and checkpoints."""

import numpy as np
import pytest

from skillmix import autodiff as ad
from skillmix import transformer as tr
from skillmix.autodiff import Tensor
from skillmix.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from skillmix.data import VecExample, VocabularyError
from skillmix.experts import build_model
from skillmix.training import TrainConfig, train, vectorize_all

from conftest import TINY


def _vec(src, types=None, segs=None, tgt=(1, 2), vocab_size=10, ext=None):
    src = np.asarray(src, dtype=np.int64)
    return VecExample(
        src_ids=np.minimum(src, vocab_size - 1),
        copy_ids=src,
        type_ids=np.asarray(types if types is not None else np.zeros_like(src)),
        seg_ids=np.asarray(segs if segs is not None else np.zeros_like(src)),
        tgt_in=np.asarray(tgt, dtype=np.int64),
        tgt_out=np.asarray(tgt, dtype=np.int64),
        gold_bits=None,
        ext_width=ext or vocab_size,
        oov_tokens=[],
    )


def _tables(vocab_size=10, n_types=3, zero=False, cfg=TINY):
    rng = np.random.default_rng(0)
    tables = tr.EmbeddingTables(cfg, vocab_size, n_types, rng)
    if zero:
        tables.word.data = np.zeros_like(tables.word.data)
        tables.tags.data = np.zeros_like(tables.tags.data)
    return tables


class TestEmbedInput:
    def test_zeroed_tables_leave_positions_only(self):
        tables = _tables(zero=True)
        vec = _vec([1, 2, 3])
        out = tr.embed_input(vec, tables)
        np.testing.assert_array_equal(out.data, tr.sinusoidal_positions(TINY.d, 3))

    def test_identical_annotations_differ_only_positionally(self):
        tables = _tables()
        vec = _vec([5, 5], types=[1, 1], segs=[2, 2])
        out = tr.embed_input(vec, tables).data
        pos = tr.sinusoidal_positions(TINY.d, 2)
        np.testing.assert_allclose(out[:, 0] - pos[:, 0], out[:, 1] - pos[:, 1],
                                   atol=1e-15)

    def test_memory_tokens_carry_data_type_ids(self):
        # record attributes get their own tag ids, distinct from speaker tags
        tables = _tables(n_types=4)
        speaker_vec = _vec([3, 3], types=[0, 1])           # Sys / Usr
        memory_vec = _vec([3, 3], types=[2, 3])            # attribute tags
        a = tr.embed_input(speaker_vec, tables).data
        b = tr.embed_input(memory_vec, tables).data
        assert not np.allclose(a, b)

    def test_out_of_bounds_id_rejected(self):
        tables = _tables(vocab_size=4)
        bad = _vec([1, 9], vocab_size=10)
        with pytest.raises(VocabularyError):
            tr.embed_input(bad, tables)

    def test_bad_type_id_rejected(self):
        tables = _tables(n_types=2)
        with pytest.raises(VocabularyError):
            tr.embed_input(_vec([1, 2], types=[0, 7]), tables)


class TestEncode:
    def test_single_position_shape(self):
        rng = np.random.default_rng(1)
        params = tr.init_encoder_params(rng, TINY)
        out = tr.encode(params, Tensor(rng.normal(size=(TINY.d_model, 1))), TINY)
        assert out.shape == (TINY.d_model, 1)

    def test_positional_sensitivity(self):
        tables = _tables()
        rng = np.random.default_rng(2)
        params = tr.init_encoder_params(rng, TINY)
        a = tr.encode(params, tr.embed_input(_vec([1, 2, 3]), tables), TINY)
        b = tr.encode(params, tr.embed_input(_vec([2, 1, 3]), tables), TINY)
        assert not np.allclose(a.data, b.data)

    def test_deterministic(self):
        tables = _tables()
        rng = np.random.default_rng(3)
        params = tr.init_encoder_params(rng, TINY)
        x = tr.embed_input(_vec([4, 5, 6]), tables)
        one = tr.encode(params, x, TINY).data.tobytes()
        two = tr.encode(params, tr.embed_input(_vec([4, 5, 6]), tables), TINY).data.tobytes()
        assert one == two


class TestDecode:
    def _setup(self, k=5, n=4, seed=4):
        rng = np.random.default_rng(seed)
        params = tr.init_decoder_params(rng, TINY)
        h = Tensor(rng.normal(size=(TINY.d_model, n)))
        y = rng.normal(size=(TINY.d_model, k))
        return params, h, y

    def test_causality(self):
        params, h, y = self._setup()
        base, _ = tr.decode(params, Tensor(y), h, TINY)
        for j in range(1, 5):
            bumped = y.copy()
            bumped[:, j] += 1.0
            out, _ = tr.decode(params, Tensor(bumped), h, TINY)
            np.testing.assert_array_equal(out.data[:, :j], base.data[:, :j])
            assert not np.allclose(out.data[:, j], base.data[:, j])

    def test_single_step_shape(self):
        params, h, _ = self._setup(k=1)
        out, attn = tr.decode(params, Tensor(np.random.default_rng(5).normal(
            size=(TINY.d_model, 1))), h, TINY)
        assert out.shape == (TINY.d_model, 1)
        assert attn.shape == (1, 4)

    def test_deterministic(self):
        params, h, y = self._setup()
        one, _ = tr.decode(params, Tensor(y), h, TINY)
        two, _ = tr.decode(params, Tensor(y.copy()), h, TINY)
        assert one.data.tobytes() == two.data.tobytes()

    def test_counts_one_invocation(self):
        params, h, y = self._setup()
        with ad.count_ops() as counter:
            tr.decode(params, Tensor(y), h, TINY)
        assert counter.decoder_invocations == 1


class TestUniversalDecode:
    def test_one_hop_is_plain_decode(self):
        rng = np.random.default_rng(6)
        params = tr.init_decoder_params(rng, TINY)
        h = Tensor(rng.normal(size=(TINY.d_model, 3)))
        y = Tensor(rng.normal(size=(TINY.d_model, 4)))
        a, _ = tr.decode(params, y, h, TINY)
        b, _ = tr.universal_decode(params, Tensor(y.data.copy()), h, TINY, hops=1)
        assert a.data.tobytes() == b.data.tobytes()

    def test_no_extra_parameters(self, small_setup):
        one = build_model("AoP", TINY, small_setup["vocab"], small_setup["tags"],
                          small_setup["skills"], seed=1)
        six = build_model("AoP+U", TINY, small_setup["vocab"], small_setup["tags"],
                          small_setup["skills"], seed=1)
        assert six.cfg.hops == 6
        assert one.parameters().num_elements() == six.parameters().num_elements()

    def test_more_hops_change_output(self):
        rng = np.random.default_rng(7)
        params = tr.init_decoder_params(rng, TINY)
        h = Tensor(rng.normal(size=(TINY.d_model, 3)))
        y = rng.normal(size=(TINY.d_model, 4))
        a, _ = tr.universal_decode(params, Tensor(y), h, TINY, hops=1)
        b, _ = tr.universal_decode(params, Tensor(y.copy()), h, TINY, hops=2)
        assert not np.allclose(a.data, b.data)

    def test_bad_hops_rejected(self):
        rng = np.random.default_rng(8)
        params = tr.init_decoder_params(rng, TINY)
        with pytest.raises(ValueError):
            tr.decode(params, Tensor(np.zeros((TINY.d_model, 1))),
                      Tensor(np.zeros((TINY.d_model, 1))), TINY, hops=0)


class TestOutputDistribution:
    def _pieces(self, k=3, n=4, vocab=7, seed=9):
        rng = np.random.default_rng(seed)
        o = Tensor(rng.normal(size=(TINY.d_model, k)))
        h = Tensor(rng.normal(size=(TINY.d_model, n)))
        raw = rng.uniform(0.1, 1.0, size=(k, n))
        attn = Tensor(raw / raw.sum(axis=1, keepdims=True))
        w = Tensor(rng.normal(size=(TINY.d_model, vocab)))
        gate = tr.CopyGate(TINY, rng)
        y = Tensor(rng.normal(size=(TINY.d, k)))
        ids = np.array([0, 2, 2, 5])
        return o, h, attn, w, gate, y, ids, vocab

    def test_pure_generation_gate(self):
        o, h, attn, w, gate, y, ids, vocab = self._pieces()
        out = tr.output_distribution(o, h, attn, w, gate, y, ids, vocab, force_p_gen=1.0)
        expected = ad.softmax(ad.matmul(ad.transpose(o), w), axis=1)
        np.testing.assert_allclose(out.data, expected.data, atol=1e-15)

    def test_pure_copy_one_hot_attention(self):
        o, h, _, w, gate, y, ids, vocab = self._pieces()
        one_hot = np.zeros((3, 4))
        one_hot[:, 1] = 1.0  # all steps point at source position 1 -> token ids[1]=2
        out = tr.output_distribution(o, h, Tensor(one_hot), w, gate, y, ids, vocab,
                                     force_p_gen=0.0)
        np.testing.assert_allclose(out.data[:, 2], 1.0, atol=1e-15)

    def test_source_only_token_reachable(self):
        # 5-token source where position 3 holds a token unknown to the tables:
        # its extended id lies beyond the vocabulary, reachable via copy only.
        o, h, attn, w, gate, y, _, vocab = self._pieces(n=5, seed=10)
        ids = np.array([0, 2, 2, vocab, 5])  # vocab == first extension id
        out = tr.output_distribution(o, h, attn, w, gate, y, ids, vocab + 1)
        assert out.shape == (3, vocab + 1)
        assert np.all(out.data[:, vocab] > 0)

    def test_rows_sum_to_one_for_any_gate(self):
        o, h, attn, w, gate, y, ids, vocab = self._pieces()
        for p in (0.0, 0.3, 0.7, 1.0, None):
            out = tr.output_distribution(o, h, attn, w, gate, y, ids, vocab,
                                         force_p_gen=p)
            np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)


class TestGreedyDecode:
    def test_immediate_end_gives_empty(self, small_setup):
        vocab = small_setup["vocab"]

        def step(prefix):
            dist = np.zeros((len(prefix), len(vocab)))
            dist[:, vocab.eos_id] = 1.0
            return dist

        assert tr.greedy_decode(step, vocab, 10) == []

    def test_length_bounded(self, small_setup):
        vocab = small_setup["vocab"]

        def step(prefix):
            dist = np.zeros((len(prefix), len(vocab)))
            dist[:, 7] = 1.0
            return dist

        assert len(tr.greedy_decode(step, vocab, 6)) == 6

    def test_single_example_memorization(self, small_setup):
        example = small_setup["corpus"].train[0]
        model = build_model("TRS", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=2)
        cfg = TrainConfig(batch_size=1, max_epochs=400, patience=400, lr=2e-3,
                          seed=3, max_steps=400)
        train(model, [example], [example], cfg)
        vec = vectorize_all(model, [example])[0]
        out = model.greedy(vec, max_length=30)
        tokens = [small_setup["vocab"].token(i) if i < len(small_setup["vocab"])
                  else vec.oov_tokens[i - len(small_setup["vocab"])] for i in out]
        assert tokens == example.target


class TestParamFlattening:
    def test_round_trip_bijection(self):
        rng = np.random.default_rng(11)
        params = tr.init_decoder_params(rng, TINY)
        flat = params.flatten()
        back = tr.DecoderParams.unflatten(params.spec(), flat)
        for name in params.names():
            np.testing.assert_array_equal(params[name].data, back[name].data)
        np.testing.assert_array_equal(back.flatten(), flat)

    def test_flatten_is_linear(self):
        rng = np.random.default_rng(12)
        p1 = tr.init_decoder_params(rng, TINY)
        p2 = tr.init_decoder_params(rng, TINY)
        a, b = 0.25, 0.75
        combined = tr.DecoderParams({
            name: Tensor(a * p1[name].data + b * p2[name].data)
            for name in p1.names()
        })
        np.testing.assert_array_equal(combined.flatten(),
                                      a * p1.flatten() + b * p2.flatten())

    def test_wrong_length_rejected(self):
        rng = np.random.default_rng(13)
        params = tr.init_decoder_params(rng, TINY)
        with pytest.raises(ad.ShapeError):
            tr.DecoderParams.unflatten(params.spec(), params.flatten()[:-1])


class TestCheckpointFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        tensors = {"a.b": rng.normal(size=(3, 4)), "c": rng.normal(size=(5,))}
        meta = {"variant": "AoP", "note": 7}
        path = tmp_path / "model.bin"
        save_checkpoint(path, tensors, meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded_meta == meta
        for name, arr in tensors.items():
            np.testing.assert_array_equal(loaded[name], arr)

    def test_deterministic_bytes(self, tmp_path):
        tensors = {"x": np.arange(6.0).reshape(2, 3), "y": np.ones(2)}
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(p1, tensors, {"k": 1})
        save_checkpoint(p2, dict(reversed(list(tensors.items()))), {"k": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_two_layer_stack_keeps_causality(small_setup):
    cfg = TINY.scaled(layers=2)
    rng = np.random.default_rng(19)
    params = tr.init_decoder_params(rng, cfg)
    assert len(params.names()) == 2 * 18
    h = Tensor(rng.normal(size=(cfg.d_model, 4)))
    y = rng.normal(size=(cfg.d_model, 5))
    base, _ = tr.decode(params, Tensor(y), h, cfg)
    bumped = y.copy()
    bumped[:, 3] += 1.0
    out, _ = tr.decode(params, Tensor(bumped), h, cfg)
    np.testing.assert_array_equal(out.data[:, :3], base.data[:, :3])


def test_gradients_reach_every_component(small_setup):
    """No dead paths at reduced width: every tensor sees gradient."""
    from skillmix.training import example_loss

    cfg = TINY.scaled(d=8, d_model=8, head_depth=4, filter_size=16)
    model = build_model("AoP", cfg, small_setup["vocab"], small_setup["tags"],
                        small_setup["skills"], seed=5)
    vecs = vectorize_all(model, small_setup["corpus"].train[:2])
    store = model.parameters()
    store.zero_grad()
    for vec in vecs:
        loss, _, _ = example_loss(model, vec, use_skill_loss=True)
        ad.backward(loss)
    for name, tensor in store.items():
        assert tensor.grad is not None, name
        assert np.any(tensor.grad != 0.0), f"dead gradient path: {name}"
