"""Symbolic cost functions, the cheaper-mixing theorem over the full grid,
and the instrumented empirical comparison."""

import time

import pytest

from skillmix.costbench import (
    CostModel,
    aop_cost,
    default_grid,
    empirical_compare,
    moe_cost,
    random_inputs,
    verify_theorem,
)
from skillmix.data import Vocabulary
from skillmix.experts import build_model

from conftest import TINY


class TestCostFormulas:
    def test_moe_example(self):
        assert moe_cost(CostModel(2, 3, 4, 5)) == 120 + 30

    def test_aop_example(self):
        assert aop_cost(CostModel(2, 3, 4, 5)) == 100

    def test_small_point_comparison(self):
        m = CostModel(2, 2, 3, 3)
        assert aop_cost(m) == 36
        assert moe_cost(m) == 48

    def test_single_expert_substitution(self):
        m = CostModel(1, 4, 5, 6)
        assert moe_cost(m) == 4 * 5 * 6 + 4 * 6

    def test_minimal_point(self):
        assert aop_cost(CostModel(1, 1, 3, 4)) == 2 * 3 * 4

    def test_zero_length_rejected(self):
        with pytest.raises(ValueError):
            CostModel(2, 0, 4, 5)
        with pytest.raises(ValueError):
            CostModel(0, 2, 4, 5)


class TestTheorem:
    def test_full_grid_no_violations(self):
        report = verify_theorem(default_grid())
        assert report.ok
        assert report.asserted_points == 12 * 63 * 9

    def test_strict_inequality_everywhere_asserted(self):
        for row in verify_theorem(default_grid()).rows:
            if row["asserted"]:
                assert row["aop"] < row["moe"]

    def test_boundary_point(self):
        # r = t = 2: the main terms tie (rt == r+t) and the representation-sum
        # term alone forces the strict gap.
        m = CostModel(2, 2, 7, 9)
        assert m.r * m.t * m.d * m.n == (m.r + m.t) * m.d * m.n
        assert moe_cost(m) - aop_cost(m) == m.r * m.t * m.n

    def test_t1_reported_but_not_asserted(self):
        report = verify_theorem(default_grid())
        t1 = [row for row in report.rows if row["t"] == 1]
        assert t1 and all(not row["asserted"] for row in t1)

    def test_r1_outside_claim_can_invert(self):
        # with one expert and d > t the parameter-sum overhead dominates
        m = CostModel(1, 2, 300, 8)
        assert aop_cost(m) > moe_cost(m)
        report = verify_theorem([m])
        assert report.ok  # reported, not asserted

    def test_grid_runtime_under_a_second(self):
        start = time.perf_counter()
        verify_theorem(default_grid())
        assert time.perf_counter() - start < 1.0


@pytest.fixture(scope="module")
def bench_model():
    vocab = Vocabulary(["<PAD>", "<SOS>", "<EOS>", "<TM>", "<UNK>"]
                       + [f"w{i}" for i in range(20)])
    skills = [f"s{i}" for i in range(5)]
    cfg = TINY.scaled(d=8, d_model=8, head_depth=4, filter_size=8)
    model = build_model("AoP", cfg, vocab, ["Sys", "Usr"], skills, seed=1)
    vecs = random_inputs(len(vocab), 2, count=2, src_len=6, tgt_len=5,
                         seed=2, skills=5)
    return model, vecs


class TestEmpiricalCompare:
    def test_counters_and_ordering_fields(self, bench_model):
        model, vecs = bench_model
        report = empirical_compare(model, vecs, repetitions=3)
        assert report["aop_counters"]["decoder_invocations"] == len(vecs)
        assert report["aor_counters"]["decoder_invocations"] == len(vecs) * 5
        assert report["aop_counters"]["param_sum_elements"] == \
            len(vecs) * 5 * model.bank.experts[0].num_elements()
        assert report["aor_over_aop"] > 0

    def test_counters_reproducible(self, bench_model):
        model, vecs = bench_model
        a = empirical_compare(model, vecs, repetitions=2)
        b = empirical_compare(model, vecs, repetitions=2)
        assert a["aop_counters"] == b["aop_counters"]
        assert a["aor_counters"] == b["aor_counters"]

    def test_bad_repetitions_rejected(self, bench_model):
        model, vecs = bench_model
        with pytest.raises(ValueError):
            empirical_compare(model, vecs, repetitions=0)


def test_cost_curves_figure(tmp_path):
    from skillmix.plots import cost_curves, timing_bars

    report = verify_theorem(default_grid(r_values=(13,), t_values=(2, 4, 8),
                                         dims=(64,)))
    out = tmp_path / "costs.png"
    cost_curves(report.rows, out, d=64, n=64, r=13)
    assert out.exists() and out.stat().st_size > 0
    timing = {"aop_median_s": 0.01, "aor_median_s": 0.05, "aor_over_aop": 5.0, "r": 13}
    out2 = tmp_path / "timing.png"
    timing_bars(timing, out2)
    assert out2.exists() and out2.stat().st_size > 0
