"""Cost model comparing parameter mixing against representation mixing.

With r experts, an input of t positions, input width d and output width n,
modelling each expert as one affine map: representation mixing evaluates
every expert on the whole sequence and sums the outputs, costing
r*t*d*n + r*t*n operations, while parameter mixing first sums the parameter
sets (r*d*n) and applies the combined map once (t*d*n), costing (r+t)*d*n.
For r >= 2 and t > 1 the per-expert route is strictly more expensive
(rt >= r+t makes the main terms compare, and the r*t*n representation-sum
term forces the gap); a single expert with d > t can invert the comparison,
so those points are reported without assertion.  The affine model is the
mixing-friendly best case; the empirical comparison therefore also times the
real transformer decoders with instrumented counters.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .data import VecExample


@dataclass(frozen=True)
class CostModel:
    """Symbolic operation-count setting: experts, sequence length, widths."""

    r: int
    t: int
    d: int
    n: int

    def __post_init__(self) -> None:
        for name in ("r", "t", "d", "n"):
            if getattr(self, name) < 1:
                raise ValueError(f"CostModel.{name} must be >= 1")


def moe_cost(m: CostModel) -> int:
    """Evaluate every expert then sum representations: r*t*d*n + r*t*n."""
    return m.r * m.t * m.d * m.n + m.r * m.t * m.n


def aop_cost(m: CostModel) -> int:
    """Sum parameters then evaluate once: (r+t)*d*n."""
    return (m.r + m.t) * m.d * m.n


def default_grid(r_values: Sequence[int] = tuple(range(2, 14)),
                 t_values: Sequence[int] = (1,) + tuple(range(2, 65)),
                 dims: Sequence[int] = (8, 64, 300)) -> list[CostModel]:
    return [CostModel(r, t, d, n)
            for r in r_values for t in t_values for d in dims for n in dims]


@dataclass
class TheoremReport:
    rows: list[dict]
    violations: list[dict]
    asserted_points: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "asserted_points": self.asserted_points,
            "violations": self.violations,
            "rows": self.rows,
        }


def verify_theorem(grid: Iterable[CostModel]) -> TheoremReport:
    """Check parameter mixing is cheaper on every applicable grid point.

    Points with t >= 2 are asserted: the combined cost must not exceed the
    per-expert cost, strictly when r*t*n > 0.  t = 1 points fall outside the
    claim and are reported without assertion (as are r = 1 points, where the
    parameter-sum overhead can dominate for d > t).
    """
    rows: list[dict] = []
    violations: list[dict] = []
    asserted = 0
    for m in grid:
        a, s = aop_cost(m), moe_cost(m)
        applicable = m.t >= 2 and m.r >= 2
        row = {"r": m.r, "t": m.t, "d": m.d, "n": m.n,
               "aop": a, "moe": s, "asserted": applicable}
        rows.append(row)
        if applicable:
            asserted += 1
            strict_required = m.r * m.t * m.n > 0
            if a > s or (strict_required and a >= s):
                violations.append(row)
    return TheoremReport(rows=rows, violations=violations, asserted_points=asserted)


# ---------------------------------------------------------------------------
# empirical comparison on the real decoders


def empirical_compare(model, vecs: Sequence[VecExample], repetitions: int = 21) -> dict:
    """Time both mixing regimes on identical inputs with one expert bank.

    Each repetition runs the full forward over every input; the report holds
    median wall times, their ratio, and the instrumented counters, and checks
    the decoder-invocation contract (one pass for parameter mixing, one per
    expert for representation mixing).
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")

    def run(mode: str) -> tuple[float, ad.OpCounter]:
        times = []
        counter = None
        for _ in range(repetitions):
            with ad.count_ops() as c:
                start = time.perf_counter()
                with ad.no_grad():
                    for vec in vecs:
                        model.forward(vec, mode=mode)
                times.append(time.perf_counter() - start)
            counter = c
        return statistics.median(times), counter

    aop_time, aop_counter = run("aop")
    aor_time, aor_counter = run("aor")
    r = model.bank.r
    expected_aop = len(vecs)
    expected_aor = len(vecs) * r
    if aop_counter.decoder_invocations != expected_aop:
        raise AssertionError(
            f"parameter mixing ran {aop_counter.decoder_invocations} decoder passes, "
            f"expected {expected_aop}")
    if aor_counter.decoder_invocations != expected_aor:
        raise AssertionError(
            f"representation mixing ran {aor_counter.decoder_invocations} decoder passes, "
            f"expected {expected_aor}")
    return {
        "r": r,
        "inputs": len(vecs),
        "repetitions": repetitions,
        "aop_median_s": aop_time,
        "aor_median_s": aor_time,
        "aor_over_aop": aor_time / aop_time if aop_time > 0 else float("inf"),
        "aop_counters": aop_counter.as_dict(),
        "aor_counters": aor_counter.as_dict(),
    }


def random_inputs(vocab_size: int, n_types: int, count: int, src_len: int,
                  tgt_len: int, seed: int, skills: int) -> list[VecExample]:
    """Shape-realistic random examples for benchmarking only."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        src = rng.integers(5, vocab_size, size=src_len)
        bits = np.zeros(skills)
        bits[rng.integers(0, skills)] = 1
        out.append(VecExample(
            src_ids=src,
            copy_ids=src.copy(),
            type_ids=rng.integers(0, n_types, size=src_len),
            seg_ids=np.zeros(src_len, dtype=np.int64),
            tgt_in=rng.integers(5, vocab_size, size=tgt_len),
            tgt_out=rng.integers(5, vocab_size, size=tgt_len),
            gold_bits=bits,
            ext_width=vocab_size,
            oov_tokens=[],
        ))
    return out
