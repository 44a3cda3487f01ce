"""Evaluation suite: corpus BLEU, entity F1, exact-match accuracy, perplexity,
and persona-consistency scoring against a pluggable entailment oracle.

BLEU follows the reference corpus-level script semantics: modified n-gram
precisions up to 4, geometric mean with no smoothing (any zero precision
zeroes the score), and a brevity penalty from the closest reference length.
Entity F1 is micro-averaged over the multiset of gold entities recovered in
the hypotheses.
"""

from __future__ import annotations

import math
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .data import (
    DialogueExample,
    PersonaProfile,
    is_query,
    normalize_whitespace,
    persona_profile,
    render_query,
    tokens_from_ids,
)
from .training import corpus_token_nll, vectorize_all


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
         max_n: int = 4, smoothed: bool = False) -> float:
    """Corpus BLEU in [0, 100].

    ``references`` holds one reference per hypothesis (a token list) or a
    list of alternatives; the brevity penalty uses the closest reference
    length, ties resolved toward the shorter one.
    """
    if not hypotheses:
        raise ValueError("bleu needs a non-empty corpus")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    clipped = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        hyp = list(hyp)
        alts = [list(r) for r in refs] if refs and isinstance(refs[0], (list, tuple)) else [list(refs)]
        hyp_len += len(hyp)
        best = min(alts, key=lambda r: (abs(len(r) - len(hyp)), len(r)))
        ref_len += len(best)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            totals[n - 1] += sum(hyp_counts.values())
            max_ref: Counter = Counter()
            for alt in alts:
                for gram, count in _ngram_counts(alt, n).items():
                    max_ref[gram] = max(max_ref[gram], count)
            clipped[n - 1] += sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for c, t in zip(clipped, totals):
        if smoothed:
            c, t = c + 1, t + 1
        if c == 0 or t == 0:
            return 0.0
        log_sum += math.log(c / t)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / max_n)


# ---------------------------------------------------------------------------
# entity F1


def entity_f1(hypotheses: Sequence[Sequence[str]], golds: Sequence[Sequence[str]],
              lexicon: Iterable[str]) -> tuple[float, float, float]:
    """Micro-averaged precision/recall/F1 of gold entities found in hypotheses.

    Entities are lexicon tokens; counts are multisets, so repeated mentions
    must be matched repeatedly.
    """
    lex = set(lexicon)
    tp = n_pred = n_gold = 0
    for hyp, gold in zip(hypotheses, golds):
        gold_entities = Counter(t for t in gold if t in lex)
        hyp_entities = Counter(t for t in hyp if t in lex)
        tp += sum((gold_entities & hyp_entities).values())
        n_pred += sum(hyp_entities.values())
        n_gold += sum(gold_entities.values())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# exact match


def exact_match(hyp_queries: Sequence[str], gold_queries: Sequence[str]) -> float:
    """Fraction of string-identical pairs after whitespace normalization."""
    if len(hyp_queries) != len(gold_queries):
        raise ValueError("exact_match needs aligned hypothesis/gold lists")
    if not gold_queries:
        return 0.0
    hits = sum(
        normalize_whitespace(h) == normalize_whitespace(g)
        for h, g in zip(hyp_queries, gold_queries)
    )
    return hits / len(gold_queries)


# ---------------------------------------------------------------------------
# perplexity


def perplexity(model, examples: Sequence[DialogueExample]) -> float:
    """exp of the mean per-token negative log-likelihood; 1 for a perfect model."""
    if not examples:
        raise ValueError("perplexity needs a non-empty dataset")
    nll, count = corpus_token_nll(model, vectorize_all(model, examples))
    return float(np.exp(nll / count))


# ---------------------------------------------------------------------------
# consistency scoring


NliJudgment = int  # +1 entails, 0 independent, -1 contradicts


@dataclass(frozen=True)
class RuleNliOracle:
    """Keyword-pair entailment stub.

    Judges +1 when the utterance and the persona sentence contain a declared
    entailing keyword pair, -1 on a declared contradicting pair, else 0.
    Entailment pairs win when both match.  Deterministic and total.
    """

    entail_pairs: frozenset[tuple[str, str]]
    contradict_pairs: frozenset[tuple[str, str]]

    def __call__(self, utterance: Sequence[str], persona_sentence: Sequence[str]) -> NliJudgment:
        u = set(utterance)
        p = set(persona_sentence)
        if any(a in u and b in p for a, b in self.entail_pairs):
            return 1
        if any(a in u and b in p for a, b in self.contradict_pairs):
            return -1
        return 0


def activity_oracle(activities: Sequence[str]) -> RuleNliOracle:
    """Oracle treating the declared activities as mutually exclusive likes."""
    entail = frozenset((a, a) for a in activities)
    contradict = frozenset((a, b) for a in activities for b in activities if a != b)
    return RuleNliOracle(entail, contradict)


class SubprocessNliOracle:
    """Judgment from an external classifier over a line protocol.

    Each request is ``utterance<TAB>persona_sentence`` on one line; the
    process answers ``+1``, ``0``, or ``-1`` per line.
    """

    def __init__(self, command: Sequence[str]):
        self._proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1)

    def __call__(self, utterance: Sequence[str], persona_sentence: Sequence[str]) -> NliJudgment:
        line = " ".join(utterance) + "\t" + " ".join(persona_sentence) + "\n"
        self._proc.stdin.write(line)
        self._proc.stdin.flush()
        answer = self._proc.stdout.readline().strip()
        if answer not in ("+1", "1", "0", "-1"):
            raise ValueError(f"oracle protocol violation: {answer!r}")
        return int(answer)

    def close(self) -> None:
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self) -> "SubprocessNliOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def consistency(utterance: Sequence[str], profile: PersonaProfile | None,
                oracle: Callable[[Sequence[str], Sequence[str]], NliJudgment]) -> int:
    """Sum of entailment judgments of the utterance against each profile sentence.

    A missing profile contributes nothing (score 0).
    """
    if profile is None:
        return 0
    return sum(oracle(utterance, sentence) for sentence in profile.sentences)


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class EvalReport:
    f1: float = 0.0
    bleu: float = 0.0
    sql_acc: float = 0.0
    sql_bleu: float = 0.0
    book_acc: float = 0.0
    book_bleu: float = 0.0
    ppl: float = 1.0
    consistency: float = 0.0
    per_domain: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "F1": self.f1, "BLEU": self.bleu,
            "SQL_Acc": self.sql_acc, "SQL_BLEU": self.sql_bleu,
            "BOOK_Acc": self.book_acc, "BOOK_BLEU": self.book_bleu,
            "Ppl": self.ppl, "C": self.consistency,
            "per_domain": self.per_domain, "counts": self.counts,
        }

    def to_table(self) -> str:
        head = ["F1", "BLEU", "SQL_Acc", "SQL_BLEU", "BOOK_Acc", "BOOK_BLEU", "Ppl", "C"]
        vals = [self.f1, self.bleu, self.sql_acc, self.sql_bleu,
                self.book_acc, self.book_bleu, self.ppl, self.consistency]
        width = max(len(h) for h in head) + 2
        lines = [
            "".join(h.rjust(width) for h in head),
            "".join(f"{v:{width}.4f}" for v in vals),
        ]
        if self.per_domain:
            lines.append("")
            lines.append("per-domain entity F1")
            for section, rows in self.per_domain.items():
                for domain, value in rows.items():
                    shown = "-" if value is None else f"{value:.4f}"
                    lines.append(f"  {section:10s} {domain:12s} {shown}")
        return "\n".join(lines)


def per_domain_f1(hypotheses: Sequence[Sequence[str]],
                  examples: Sequence[DialogueExample],
                  lexicon: Iterable[str]) -> dict:
    """Entity F1 per domain, split by target kind (plain/sql/book).

    Domains with no gold entities in a section are reported as None rather
    than zero, since precision/recall are undefined there.
    """
    lex = set(lexicon)
    sections: dict[str, dict[str, list[int]]] = {}
    for hyp, ex in zip(hypotheses, examples):
        section = {"plain": "sentence"}.get(ex.kind, ex.kind)
        domain = ex.domain or "none"
        bucket = sections.setdefault(section, {}).setdefault(domain, [])
        bucket.append((hyp, ex.target))
    table: dict[str, dict[str, float | None]] = {}
    for section, by_domain in sorted(sections.items()):
        table[section] = {}
        for domain, pairs in sorted(by_domain.items()):
            hyps = [h for h, _ in pairs]
            golds = [g for _, g in pairs]
            if not any(t in lex for g in golds for t in g):
                table[section][domain] = None
                continue
            _, _, f1 = entity_f1(hyps, golds, lex)
            table[section][domain] = f1
    return table


def evaluate(model, examples: Sequence[DialogueExample], entities: Iterable[str],
             nli_oracle=None, max_length: int = 40) -> tuple[EvalReport, dict]:
    """Greedy-decode every example and assemble the full report.

    Returns the report plus extras: per-example hypotheses and, for models
    with a skill-attention head, the mixing weights used per example.
    """
    vecs = vectorize_all(model, examples)
    hyps: list[list[str]] = []
    alphas: list[np.ndarray] = []
    for vec in vecs:
        ids = model.greedy(vec, max_length)
        hyps.append(tokens_from_ids(ids, model.vocab, vec.oov_tokens))
        with ad.no_grad():
            result = model.forward(vec)
        if result.alpha_used is not None:
            alphas.append(result.alpha_used)

    plain_idx = [i for i, e in enumerate(examples) if e.kind == "plain"]
    sql_idx = [i for i, e in enumerate(examples) if e.kind == "sql"]
    book_idx = [i for i, e in enumerate(examples) if e.kind == "book"]

    report = EvalReport()
    report.counts = {"plain": len(plain_idx), "sql": len(sql_idx), "book": len(book_idx)}
    if plain_idx:
        report.bleu = bleu([hyps[i] for i in plain_idx], [examples[i].target for i in plain_idx])
        _, _, report.f1 = entity_f1([hyps[i] for i in plain_idx],
                                    [examples[i].target for i in plain_idx], entities)
    for name, idx in (("sql", sql_idx), ("book", book_idx)):
        if not idx:
            continue
        rendered_hyp = [render_query(hyps[i]) if is_query(hyps[i]) else " ".join(hyps[i])
                        for i in idx]
        rendered_gold = [render_query(examples[i].target) for i in idx]
        acc = exact_match(rendered_hyp, rendered_gold)
        score = bleu([hyps[i] for i in idx], [examples[i].target for i in idx])
        if name == "sql":
            report.sql_acc, report.sql_bleu = acc, score
        else:
            report.book_acc, report.book_bleu = acc, score
    report.ppl = perplexity(model, examples)
    if nli_oracle is not None:
        scores = []
        for i, ex in enumerate(examples):
            profile = persona_profile(ex)
            if profile is not None:
                scores.append(consistency(hyps[i], profile, nli_oracle))
        if scores:
            report.consistency = float(np.mean(scores))
    report.per_domain = per_domain_f1(hyps, examples, entities)
    extras = {"hypotheses": hyps, "alphas": alphas}
    return report, extras
