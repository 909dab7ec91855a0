import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from varsel.metrics import (
    LEGAL_SOFT_ACC,
    EvalRecord,
    MetricsConfig,
    accuracy,
    auc_risk_coverage,
    best_phi_threshold,
    build_curve,
    compute_metric,
    cov_low_risk,
    coverage_at_risk,
    coverage_by_category,
    ece,
    effective_reliability,
    evaluate,
    route,
    threshold_at_risk,
    threshold_generalization,
)
from varsel.model import Category
from varsel.selection import Selector


def records(conf, acc, cats=None):
    cats = cats or [Category.OTHER] * len(conf)
    return [EvalRecord(f"r{i}", float(c), float(a), 0, cat) for i, (c, a, cat) in enumerate(zip(conf, acc, cats))]


HAND = records([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1], [Category.BINARY, Category.BINARY, Category.NUMBER, Category.OTHER])


def random_records(rng, n, ties=False):
    conf = rng.uniform(0, 1, n)
    if ties:
        conf = np.round(conf, 1)
    acc = rng.choice(LEGAL_SOFT_ACC, n)
    return records(conf, acc)


class TestCurve:
    def test_hand_points(self):
        c = build_curve(HAND)
        np.testing.assert_array_equal(c.thresholds, [0.9, 0.8, 0.7, 0.6])
        np.testing.assert_allclose(c.coverage, [0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(c.risk, [0.0, 0.5, 1 / 3, 0.25])

    def test_all_correct_zero_risk(self):
        c = build_curve(records([0.3, 0.5, 0.5, 0.9], [1, 1, 1, 1]))
        np.testing.assert_array_equal(c.risk, 0.0)
        assert c.coverage[-1] == 1.0

    def test_duplicates_same_curve(self):
        a = build_curve(HAND)
        b = build_curve(HAND + HAND)
        np.testing.assert_array_equal(a.thresholds, b.thresholds)
        np.testing.assert_allclose(a.coverage, b.coverage)
        np.testing.assert_allclose(a.risk, b.risk)

    def test_ties_grouped(self):
        c = build_curve(records([0.5, 0.5, 0.4], [1, 0, 1]))
        np.testing.assert_array_equal(c.thresholds, [0.5, 0.4])
        np.testing.assert_allclose(c.coverage, [2 / 3, 1.0])

    def test_empty(self):
        with pytest.raises(ValueError):
            build_curve([])

    def test_invalid_soft_acc(self):
        with pytest.raises(ValueError):
            EvalRecord("x", 0.5, 0.5, 0)


class TestCoverageAtRisk:
    def test_hand_example(self):
        assert coverage_at_risk(build_curve(HAND), 0.01) == 0.25
        assert cov_low_risk(build_curve(HAND)) == 0.25

    def test_unconstrained(self):
        assert coverage_at_risk(build_curve(HAND), 1.0) == 1.0

    def test_all_wrong(self):
        c = build_curve(records([0.9, 0.5], [0, 0]))
        assert coverage_at_risk(c, 0.5) == 0.0
        assert cov_low_risk(c) == 0.0
        assert threshold_at_risk(c, 0.5) == math.inf

    def test_all_correct(self):
        assert cov_low_risk(build_curve(records([0.9, 0.5], [1, 1]))) == 1.0

    def test_ranked_correctness(self):
        rs = records([0.9, 0.8, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0])
        assert coverage_at_risk(build_curve(rs), 0.0) == pytest.approx(3 / 5)

    def test_monotone_in_risk(self):
        c = build_curve(random_records(np.random.default_rng(0), 300))
        values = [coverage_at_risk(c, r) for r in np.linspace(0, 1, 51)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_decimal_risk_boundary(self):
        # risk (1 - 0.9) / 10 is 0.01 in decimal, not in binary floating point
        rs = records([0.9] * 10, [0.9] + [1.0] * 9)
        assert coverage_at_risk(build_curve(rs), 0.01) == 1.0


class TestAuc:
    def test_all_correct(self):
        assert auc_risk_coverage(build_curve(records([0.2, 0.4], [1, 1]))) == 0.0

    def test_all_wrong(self):
        assert auc_risk_coverage(build_curve(records([0.2, 0.4, 0.6], [0, 0, 0]))) == pytest.approx(100.0)

    def test_hand_integration(self):
        # hold 0 on [0, .25]; trapezoids (0+.5)/2*.25 + (.5+1/3)/2*.25 + (1/3+.25)/2*.25
        by_hand = 100 * (0.0 + 0.0625 + (5 / 6) / 8 + (7 / 12) / 8)
        assert auc_risk_coverage(build_curve(HAND)) == pytest.approx(by_hand, abs=1e-12)
        assert auc_risk_coverage(build_curve(HAND)) == pytest.approx(23.958333, abs=1e-6)


class TestEffectiveReliability:
    def test_no_abstention(self):
        rs = records([0.5, 0.6, 0.7], [1.0, 0.3, 0.9])
        assert effective_reliability(rs, 10, 0.0) == pytest.approx(100 * np.mean([1.0, 0.3, 0.9]))

    def test_full_abstention(self):
        assert effective_reliability(HAND, 10, math.inf) == 0.0
        assert effective_reliability(HAND, 100, 0.95) == 0.0

    def test_hand_example(self):
        assert effective_reliability(HAND, 1, 0.75) == pytest.approx(0.0, abs=1e-12)

    def test_best_threshold_hand(self):
        assert best_phi_threshold(HAND, 100) == 0.9

    def test_best_threshold_extremes(self):
        correct = records([0.3, 0.6, 0.9], [1, 1, 1])
        assert best_phi_threshold(correct, 10) == 0.3
        wrong = records([0.3, 0.6, 0.9], [0, 0, 0])
        assert best_phi_threshold(wrong, 10) == math.inf

    def test_tie_goes_to_larger_threshold(self):
        # the 0.5 group adds 0.3 - 0.3 = 0, tying gamma = 0.9 with gamma = 0.5
        rs = records([0.9, 0.5, 0.5], [1.0, 0.3, 0.0])
        assert best_phi_threshold(rs, 0.3) == 0.9
        assert oracles.best_phi_gamma([0.9, 0.5, 0.5], [1.0, 0.3, 0.0], 0.3) == 0.9


class TestEce:
    def test_single_maximal(self):
        assert ece(records([1.0], [0.0])) == 1.0

    def test_perfect_calibration(self):
        assert ece(records([0.3, 0.3, 0.9, 1.0], [0.3, 0.3, 0.9, 1.0])) == pytest.approx(0.0, abs=1e-15)

    def test_bernoulli_small_and_oracle(self):
        rng = np.random.default_rng(0)
        conf = rng.uniform(0, 1, 1000)
        acc = (rng.uniform(size=1000) < conf).astype(float)
        value = ece(records(conf, acc))
        assert value < 0.08
        assert value == pytest.approx(oracles.ece(list(conf), list(acc), 20), abs=1e-12)

    def test_permutation_invariant(self):
        rs = random_records(np.random.default_rng(1), 200)
        perm = np.random.default_rng(2).permutation(200)
        assert ece(rs) == pytest.approx(ece([rs[i] for i in perm]), abs=1e-15)

    def test_rescale_signed(self):
        rs = records([-0.2, 0.4], [0.0, 1.0])
        with pytest.raises(ValueError, match="rescale"):
            ece(rs)
        assert ece(rs, rescale=True) == pytest.approx(oracles.ece([0.4, 0.7], [0.0, 1.0], 20))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 120), ties=st.booleans())
def test_curve_metrics_match_brute_force(seed, n, ties):
    rng = np.random.default_rng(seed)
    rs = random_records(rng, n, ties)
    conf = [r.confidence for r in rs]
    acc = [r.soft_acc for r in rs]
    curve = build_curve(rs)
    for r in (0.0, 0.01, 0.05, 0.1, 0.3):
        assert coverage_at_risk(curve, r) == pytest.approx(oracles.coverage_at_risk(conf, acc, r), abs=1e-12)
    assert auc_risk_coverage(curve) == pytest.approx(oracles.auc(conf, acc), abs=1e-12)
    for cost in (1, 10, 100):
        gamma = best_phi_threshold(rs, cost)
        assert gamma == oracles.best_phi_gamma(conf, acc, cost)
        assert effective_reliability(rs, cost, gamma) == pytest.approx(oracles.phi(conf, acc, cost, gamma), abs=1e-12)
    assert ece(rs) == pytest.approx(oracles.ece(conf, acc, 20), abs=1e-12)


class TestThresholdGeneralization:
    def test_identical_sets(self):
        rs = random_records(np.random.default_rng(3), 400)
        gamma, risk, cov = threshold_generalization(rs, rs, 0.1)
        assert risk <= 0.1 + 1e-12
        assert cov == pytest.approx(coverage_at_risk(build_curve(rs), 0.1))

    def test_realized_risk_not_clamped(self):
        val = records([0.9, 0.8, 0.7], [1, 1, 0.9])
        test = records([0.9, 0.8, 0.7], [0, 0, 0])
        gamma, risk, cov = threshold_generalization(val, test, 0.1)
        assert gamma == 0.7 and risk == 1.0 and cov == 1.0

    def test_infeasible(self):
        val = records([0.9, 0.8], [0, 0])
        gamma, risk, cov = threshold_generalization(val, HAND, 0.1)
        assert gamma == math.inf and cov == 0.0


class TestCoverageByCategory:
    def test_hand_example(self):
        cov = coverage_by_category(HAND, 0.75)
        assert cov == {"All": 0.5, "Binary": 1.0, "Number": 0.0, "Other": 0.0}

    def test_absent_category(self):
        rs = records([0.4, 0.6], [1, 1], [Category.BINARY, Category.BINARY])
        cov = coverage_by_category(rs, 0.0)
        assert cov == {"All": 1.0, "Binary": 1.0}


class TestRoutingAndEvaluate:
    def scored(self):
        rng = np.random.default_rng(4)
        base = random_records(rng, 50)
        shifted = [EvalRecord(r.id, r.confidence - 0.1, r.soft_acc, 0) for r in base]
        return {Selector.MEAN: base, Selector.MEAN_MINUS_STD: shifted}

    def test_default_routes(self):
        cfg = MetricsConfig()
        avail = [Selector.MEAN, Selector.MEAN_MINUS_STD, Selector.PROJECTION]
        assert route("C@1", avail, cfg) is Selector.MEAN_MINUS_STD
        assert route("Phi100", avail, cfg) is Selector.MEAN_MINUS_STD
        assert route("ECE", avail, cfg) is Selector.MEAN
        assert route("C@1", [Selector.MAXPROB], cfg) is Selector.MAXPROB

    def test_evaluate_uses_routed_sets(self):
        scored = self.scored()
        out = evaluate(scored)
        assert out["C@1"] == compute_metric("C@1", scored[Selector.MEAN_MINUS_STD], Selector.MEAN_MINUS_STD, MetricsConfig())
        assert out["Acc"] == pytest.approx(100 * accuracy(scored[Selector.MEAN]))
        assert list(out) == ["Acc", "ECE", "C@1", "C@5", "AUC", "Phi10", "Phi100"]

    def test_ece_mean_minus_std_needs_rescale(self):
        rs = self.scored()[Selector.MEAN_MINUS_STD]
        assert math.isnan(compute_metric("ECE", rs, Selector.MEAN_MINUS_STD, MetricsConfig()))
        value = compute_metric("ECE", rs, Selector.MEAN_MINUS_STD, MetricsConfig(ece_rescale=True))
        assert value == pytest.approx(ece(rs, rescale=True))

    def test_phi_threshold_from_validation(self):
        val = records([0.9, 0.5], [1, 0])
        test = records([0.9, 0.5], [1, 1])
        # validation picks gamma = 0.9, so the test's correct 0.5 record is not answered
        assert compute_metric("Phi10", test, Selector.MEAN, MetricsConfig(), val) == pytest.approx(50.0)
        assert compute_metric("Phi10", test, Selector.MEAN, MetricsConfig(phi_threshold="test"), val) == pytest.approx(100.0)

    def test_unknown_metric(self):
        with pytest.raises(ValueError, match="unknown"):
            MetricsConfig(metrics=("F1",))
