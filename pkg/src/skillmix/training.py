"""Dual-objective training: token cross-entropy plus skill supervision.

The token loss is the negative log-likelihood of the gold sequence under the
per-step output distributions.  Models with a skill-attention head add a
binary cross-entropy over the sigmoid of the raw key scores against the gold
skill bits; the total is the plain sum of the two terms.  Batches are
processed by gradient accumulation (backward without resetting buffers),
with early stopping on validation token loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import DialogueExample, VecExample, VocabularyError, vectorize
from .experts import save_model


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training aborted with diagnostics."""


# ---------------------------------------------------------------------------
# losses


def token_loss(dist: Tensor, target_ids: np.ndarray, pad_id: int | None = None) -> Tensor:
    """Negative log-likelihood of the target ids, summed over positions.

    Padding positions (``pad_id``) are masked out.  Zero exactly when the
    model puts probability one on every unmasked gold token.
    """
    ids = np.asarray(target_ids, dtype=np.int64)
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= dist.shape[1]:
        raise VocabularyError(
            f"target id outside distribution width {dist.shape[1]}")
    picked = ad.pick_positions(dist, ids)
    logp = ad.log(ad.clip_min(picked, 1e-300))
    if pad_id is not None and (ids == pad_id).any():
        logp = ad.mul(logp, Tensor((ids != pad_id).astype(np.float64)))
    return ad.mul(ad.tsum(logp), -1.0)


def skill_loss(logits: Tensor, gold_bits: np.ndarray) -> Tensor:
    """Binary cross-entropy of sigmoid(logits) against the skill bits, summed."""
    bits = np.asarray(gold_bits, dtype=np.float64)
    if logits.size != bits.size:
        raise ValueError(f"{logits.size} logits for {bits.size} skill bits")
    # v*softplus(-l) + (1-v)*softplus(l), assembled without loss of precision
    flipped = ad.mul(logits, Tensor(1.0 - 2.0 * bits))
    return ad.tsum(ad.softplus(flipped))


def example_loss(model, vec: VecExample, use_skill_loss: bool,
                 lambda_token: float = 1.0, lambda_skill: float = 1.0):
    """Forward one example; returns (total, token part, skill part or None)."""
    result = model.forward(vec)
    tok = token_loss(result.dist, vec.tgt_out)
    skill = None
    if use_skill_loss and result.attention is not None and vec.gold_bits is not None:
        skill = skill_loss(result.attention.logits, vec.gold_bits)
    if skill is None:
        total = tok if lambda_token == 1.0 else ad.mul(tok, lambda_token)
    elif lambda_token == 1.0 and lambda_skill == 1.0:
        total = ad.add(tok, skill)
    else:
        total = ad.add(ad.mul(tok, lambda_token), ad.mul(skill, lambda_skill))
    return total, tok, skill


# ---------------------------------------------------------------------------
# configuration and logging


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    schedule: str = "constant"      # "constant" | "warmup"
    warmup_steps: int = 4000
    max_epochs: int = 30
    patience: int = 5
    lambda_token: float = 1.0
    lambda_skill: float = 1.0
    disable_skill_loss: bool = False
    clip_norm: float = 5.0
    seed: int = 13
    max_steps: int | None = None    # optional hard cap, for quick tests
    log_path: str | None = None
    checkpoint_path: str | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_token_loss: float
    train_skill_loss: float
    valid_token_loss: float
    attention_error_rate: float  # nan for models without a skill head


@dataclass
class TrainResult:
    model: object
    log: list[EpochStats] = field(default_factory=list)
    best_valid_loss: float = float("inf")
    best_epoch: int = 0


CSV_COLUMNS = ("epoch", "train_token_loss", "train_skill_loss",
               "valid_token_loss", "attention_error_rate")


def write_log(path, rows: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([getattr(row, c) for c in CSV_COLUMNS])


# ---------------------------------------------------------------------------
# evaluation helpers


def corpus_token_nll(model, vecs: Sequence[VecExample]) -> tuple[float, int]:
    """Total token negative log-likelihood and token count over examples."""
    total, count = 0.0, 0
    with ad.no_grad():
        for vec in vecs:
            total += token_loss(model.forward(vec).dist, vec.tgt_out).item()
            count += len(vec.tgt_out)
    return total, count


def selected_skills(model, vec: VecExample) -> np.ndarray:
    """Skill bits the model selects: sigmoid of the key scores, cut at 0.5."""
    with ad.no_grad():
        result = model.forward(vec)
    if result.attention is None:
        raise ValueError("model has no skill-attention head")
    probs = 1.0 / (1.0 + np.exp(-result.attention.logits.data))
    return (probs > 0.5).astype(np.int64)


def attention_error_rate(model, vecs: Sequence[VecExample]) -> float:
    """Fraction of examples whose thresholded skill selection misses the gold set.

    Zero by construction in oracle mode, where the gold bits replace the
    learned weights.
    """
    if not vecs:
        raise ValueError("attention_error_rate needs a non-empty dataset")
    if getattr(model, "oracle", False):
        return 0.0
    errors = 0
    for vec in vecs:
        if vec.gold_bits is None:
            raise ValueError("examples must carry gold skill bits")
        predicted = selected_skills(model, vec)
        if not np.array_equal(predicted, vec.gold_bits.astype(np.int64)):
            errors += 1
    return errors / len(vecs)


# ---------------------------------------------------------------------------
# the loop


def vectorize_all(model, examples: Sequence[DialogueExample]) -> list[VecExample]:
    type_tags = getattr(model, "type_tags", None)
    if type_tags is None:
        type_tags = model.core.type_tags
    return [vectorize(e, model.vocab, type_tags, model.skill_names) for e in examples]


def train(model, train_examples: Sequence[DialogueExample],
          valid_examples: Sequence[DialogueExample], cfg: TrainConfig) -> TrainResult:
    """Minimize token loss (plus skill loss where the model has the head).

    Uses teacher forcing, seeded shuffling, gradient accumulation over each
    batch, and early stopping on validation token loss; the returned model
    carries the best validation checkpoint seen.  Writes the per-epoch CSV
    log and the checkpoint when paths are configured.
    """
    if not train_examples:
        raise ValueError("training needs a non-empty dataset")
    rng = np.random.default_rng(cfg.seed)
    train_vecs = vectorize_all(model, train_examples)
    valid_vecs = vectorize_all(model, valid_examples)
    store = model.parameters()
    schedule = ad.make_schedule(cfg.schedule, cfg.lr, model.cfg.d_model, cfg.warmup_steps)
    use_skill = getattr(model, "use_skill_loss", False) and not cfg.disable_skill_loss

    has_attention = False
    with ad.no_grad():
        has_attention = model.forward(train_vecs[0]).attention is not None

    result = TrainResult(model=model)
    best_state: dict[str, np.ndarray] | None = None
    bad_epochs = 0
    step = 0
    stop = False

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_vecs))
        token_sum = skill_sum = 0.0
        token_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            store.zero_grad()
            for idx in batch:
                total, tok, skill = example_loss(
                    model, train_vecs[idx], use_skill,
                    cfg.lambda_token, cfg.lambda_skill)
                if not np.isfinite(total.item()):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step} "
                        f"(token={tok.item():.4g}, "
                        f"skill={'-' if skill is None else format(skill.item(), '.4g')})")
                ad.backward(total)
                token_sum += tok.item()
                if skill is not None:
                    skill_sum += skill.item()
            token_batches += len(batch)
            step += 1
            store.clip_gradients(cfg.clip_norm * len(batch))
            store.adam_step(schedule(step), scale=1.0 / len(batch))
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop = True
                break

        nll, count = corpus_token_nll(model, valid_vecs) if valid_vecs else (0.0, 1)
        valid_loss = nll / max(count, 1)
        err = float("nan")
        if has_attention or getattr(model, "oracle", False):
            try:
                err = attention_error_rate(model, valid_vecs) if valid_vecs else float("nan")
            except ValueError:
                err = float("nan")
        stats = EpochStats(
            epoch=epoch,
            train_token_loss=token_sum / max(token_batches, 1),
            train_skill_loss=skill_sum / max(token_batches, 1),
            valid_token_loss=valid_loss,
            attention_error_rate=err,
        )
        result.log.append(stats)

        if valid_loss < result.best_valid_loss:
            result.best_valid_loss = valid_loss
            result.best_epoch = epoch
            best_state = {name: t.data.copy() for name, t in store.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
        if stop or bad_epochs >= cfg.patience:
            break

    if best_state is not None:
        for name, t in store.items():
            t.data = best_state[name]

    if cfg.log_path:
        write_log(cfg.log_path, result.log)
    if cfg.checkpoint_path:
        save_model(model, cfg.checkpoint_path)
    return result
