"""Loss definitions, the training loop contract, early stopping, and the
skill-selection error rate."""

import math

import numpy as np
import pytest

from skillmix.autodiff import Tensor
from skillmix.data import VocabularyError
from skillmix.experts import build_model
from skillmix.training import (
    TrainConfig,
    TrainingDiverged,
    attention_error_rate,
    corpus_token_nll,
    example_loss,
    skill_loss,
    token_loss,
    train,
    vectorize_all,
)

from conftest import TINY


class TestTokenLoss:
    def test_perfect_model_zero_loss(self):
        dist = Tensor(np.eye(3))
        assert token_loss(dist, np.array([0, 1, 2])).item() == 0.0

    def test_uniform_model_closed_form(self):
        k, v = 4, 10
        dist = Tensor(np.full((k, v), 1.0 / v))
        expected = k * math.log(v)
        assert abs(token_loss(dist, np.zeros(k, dtype=int)).item() - expected) < 1e-12

    def test_two_token_hand_value(self):
        dist = Tensor(np.array([[0.5, 0.5], [0.75, 0.25]]))
        loss = token_loss(dist, np.array([0, 1]))
        assert abs(loss.item() - (math.log(2) + math.log(4))) < 1e-12

    def test_out_of_range_target_rejected(self):
        dist = Tensor(np.full((2, 4), 0.25))
        with pytest.raises(VocabularyError):
            token_loss(dist, np.array([0, 4]))

    def test_padding_masked(self):
        dist = Tensor(np.array([[0.5, 0.25, 0.25], [0.1, 0.1, 0.8]]))
        full = token_loss(dist, np.array([0, 0]))
        masked = token_loss(dist, np.array([0, 0]), pad_id=0)
        assert masked.item() == 0.0
        assert full.item() > 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        raw = rng.uniform(0.01, 1.0, size=(5, 7))
        dist = Tensor(raw / raw.sum(axis=1, keepdims=True))
        assert token_loss(dist, rng.integers(0, 7, size=5)).item() > 0.0


class TestSkillLoss:
    def test_zero_logits_closed_form(self):
        loss = skill_loss(Tensor(np.zeros(5)), np.array([1, 0, 1, 0, 0]))
        assert abs(loss.item() - 5 * math.log(2)) < 1e-12

    def test_saturated_logits_vanish(self):
        logits = Tensor(np.array([50.0, -50.0, 50.0]))
        loss = skill_loss(logits, np.array([1, 0, 1]))
        assert loss.item() < 1e-9

    def test_hand_value(self):
        loss = skill_loss(Tensor(np.array([1.0, -1.0])), np.array([1, 0]))
        assert abs(loss.item() - 2 * math.log(1 + math.exp(-1))) < 1e-12

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            skill_loss(Tensor(np.zeros(3)), np.array([1, 0]))


class TestExampleLoss:
    def test_total_is_exact_sum(self, small_setup):
        model = build_model("AoP", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=1)
        vec = vectorize_all(model, small_setup["corpus"].train[:1])[0]
        total, tok, skill = example_loss(model, vec, use_skill_loss=True)
        assert skill is not None
        assert total.item() == tok.item() + skill.item()

    def test_ablation_drops_skill_term(self, small_setup):
        model = build_model("AoP", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=1)
        vec = vectorize_all(model, small_setup["corpus"].train[:1])[0]
        total, tok, skill = example_loss(model, vec, use_skill_loss=False)
        assert skill is None
        assert total.item() == tok.item()


class TestTrainLoop:
    def test_single_example_overfits(self, small_setup):
        model = build_model("AoP", TINY.scaled(d=32, d_model=32, head_depth=8),
                            small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=2)
        example = small_setup["corpus"].train[0]
        cfg = TrainConfig(batch_size=1, max_epochs=500, patience=500, lr=2e-3,
                          seed=4, max_steps=500)
        result = train(model, [example], [example], cfg)
        assert result.log[-1].train_token_loss < 1e-2

    def test_empty_dataset_rejected(self, small_setup):
        model = build_model("TRS", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=3)
        with pytest.raises(ValueError):
            train(model, [], [], TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(patience=0)

    def test_reproducible_trajectories(self, small_setup):
        logs = []
        for _ in range(2):
            model = build_model("AoP", TINY, small_setup["vocab"], small_setup["tags"],
                                small_setup["skills"], seed=7)
            cfg = TrainConfig(batch_size=8, max_epochs=2, patience=5, seed=9)
            result = train(model, small_setup["corpus"].train[:16],
                           small_setup["corpus"].valid[:8], cfg)
            logs.append([(r.train_token_loss, r.valid_token_loss) for r in result.log])
        assert logs[0] == logs[1]

    def test_early_stopping_keeps_best(self, small_setup):
        model = build_model("AoP", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=11)
        cfg = TrainConfig(batch_size=8, max_epochs=6, patience=2, seed=13)
        result = train(model, small_setup["corpus"].train[:24],
                       small_setup["corpus"].valid[:8], cfg)
        later = [r.valid_token_loss for r in result.log if r.epoch > result.best_epoch]
        assert all(result.best_valid_loss <= v for v in later)
        # restored model reproduces the best validation loss
        vecs = vectorize_all(model, small_setup["corpus"].valid[:8])
        nll, count = corpus_token_nll(model, vecs)
        assert abs(nll / count - result.best_valid_loss) < 1e-9

    def test_divergence_aborts_with_diagnostic(self, small_setup):
        model = build_model("TRS", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=15)
        model.parameters()["out.w"].data[:] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(TrainingDiverged):
            train(model, small_setup["corpus"].train[:4],
                  small_setup["corpus"].valid[:4],
                  TrainConfig(batch_size=2, max_epochs=1, patience=1))

    def test_writes_log_and_checkpoint(self, small_setup, tmp_path):
        model = build_model("AoP", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=17)
        log_path = tmp_path / "log.csv"
        ckpt_path = tmp_path / "model.bin"
        cfg = TrainConfig(batch_size=8, max_epochs=1, patience=1, seed=19,
                          log_path=str(log_path), checkpoint_path=str(ckpt_path))
        train(model, small_setup["corpus"].train[:8],
              small_setup["corpus"].valid[:4], cfg)
        header = log_path.read_text().splitlines()[0]
        assert header == "epoch,train_token_loss,train_skill_loss,valid_token_loss,attention_error_rate"
        assert ckpt_path.exists()


@pytest.mark.parametrize("variant", ["TRS", "TRS+U", "MoE", "AoR", "AoP",
                                     "AoP+U", "AoP-noLV", "AoP-O"])
def test_every_variant_trains_and_reloads(variant, small_setup, tmp_path):
    from skillmix.experts import load_model

    cfg = TINY.scaled(d=8, d_model=8, head_depth=4, filter_size=8)
    model = build_model(variant, cfg, small_setup["vocab"], small_setup["tags"],
                        small_setup["skills"], seed=3)
    ckpt = tmp_path / "m.bin"
    result = train(model, small_setup["corpus"].train[:8],
                   small_setup["corpus"].valid[:4],
                   TrainConfig(batch_size=4, max_epochs=1, patience=1, seed=5,
                               checkpoint_path=str(ckpt)))
    assert np.isfinite(result.log[-1].train_token_loss)
    reloaded, meta = load_model(ckpt)
    assert meta["variant"] == variant
    vec = vectorize_all(reloaded, small_setup["corpus"].valid[:1])[0]
    with_grad = reloaded.forward(vec)
    assert np.isfinite(with_grad.dist.data).all()


class TestAttentionErrorRate:
    def test_oracle_mode_is_zero(self, small_setup):
        model = build_model("AoP-O", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=21)
        vecs = vectorize_all(model, small_setup["corpus"].valid)
        assert attention_error_rate(model, vecs) == 0.0

    def test_untrained_near_chance_level(self, small_setup):
        # Monte-Carlo oracle: with r independent coin-flip bits the expected
        # exact-set match rate is the mean over examples of prod(P(bit)); for
        # near-zero logits each bit is close to a fair coin.
        rng = np.random.default_rng(23)
        r = len(small_setup["skills"])
        simulated = rng.integers(0, 2, size=(4000, r))
        gold = rng.integers(0, 2, size=(4000, r))
        chance_error = np.mean(np.any(simulated != gold, axis=1))
        observed = []
        for seed in (31, 37, 41):
            model = build_model("AoP", TINY, small_setup["vocab"], small_setup["tags"],
                                small_setup["skills"], seed=seed)
            vecs = vectorize_all(model, small_setup["corpus"].train)
            observed.append(attention_error_rate(model, vecs))
        assert abs(np.mean(observed) - chance_error) < 0.2

    def test_model_without_head_rejected(self, small_setup):
        model = build_model("TRS", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=43)
        vecs = vectorize_all(model, small_setup["corpus"].valid[:2])
        with pytest.raises(ValueError):
            attention_error_rate(model, vecs)

    def test_empty_dataset_rejected(self, small_setup):
        model = build_model("AoP", TINY, small_setup["vocab"], small_setup["tags"],
                            small_setup["skills"], seed=45)
        with pytest.raises(ValueError):
            attention_error_rate(model, [])
