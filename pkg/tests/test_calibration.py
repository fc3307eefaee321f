import numpy as np
import pytest

from fairthresh.calibration import (
    FairClassifier,
    GroupStatistics,
    blind_unfairness,
    breakpoints,
    calibrate,
    calibrate_scores,
    empirical_unfairness,
    fit_theta,
    fit_theta_blind,
    group_statistics,
)
from fairthresh.data import LabeledDataset, UnlabeledDataset
from fairthresh.errors import GroupCoverageError, SchemaError
from fairthresh.estimators import KnnConfig, LogisticConfig


def brute_unfairness(theta, scores1, scores0, stats):
    """Independent oracle: literal product-form indicators, row-order sums."""
    g1 = 1.0 <= scores1 * (2.0 - theta / stats.joint[1])
    g0 = 1.0 <= scores0 * (2.0 + theta / stats.joint[0])
    t1 = (scores1 * g1).sum() / scores1.sum()
    t0 = (scores0 * g0).sum() / scores0.sum()
    return abs(t1 - t0)


def brute_blind(theta, marginal, s0, s1):
    d = s0 / s0.mean() - s1 / s1.mean()
    g = 1.0 <= 2.0 * marginal + theta * d
    t1 = (s1 * g).sum() / s1.sum()
    t0 = (s0 * g).sum() / s0.sum()
    return abs(t1 - t0)


def random_instance(rng, max_n=2000):
    n = int(rng.integers(10, max_n))
    S = rng.integers(0, 2, n)
    while S.sum() in (0, n):
        S = rng.integers(0, 2, n)
    scores = np.maximum(rng.beta(rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), n), 0.05)
    stats = group_statistics(scores, S)
    return scores[S == 1], scores[S == 0], stats


FOUR_ROW_SCORES = np.array([0.9, 0.2, 0.8, 0.4])
FOUR_ROW_S = np.array([1, 1, 0, 0])


class TestGroupStatistics:
    def test_four_row_example(self):
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        assert st.p == (0.5, 0.5)
        assert st.mean_score[1] == pytest.approx(0.55, abs=1e-12)
        assert st.joint[1] == pytest.approx(0.275, abs=1e-12)
        assert st.mean_score[0] == pytest.approx(0.6, abs=1e-12)
        assert st.joint[0] == pytest.approx(0.3, abs=1e-12)

    def test_constant_scores(self):
        st = group_statistics(np.full(10, 0.5), np.array([0] * 3 + [1] * 7))
        assert st.joint[0] == pytest.approx(0.5 * 0.3, abs=1e-12)
        assert st.joint[1] == pytest.approx(0.5 * 0.7, abs=1e-12)

    def test_single_group_rejected(self):
        with pytest.raises(GroupCoverageError):
            group_statistics(np.array([0.5, 0.6]), np.array([1, 1]))

    def test_joint_is_product_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s1, s0, st = random_instance(rng)
            for s in (0, 1):
                assert st.joint[s] == st.mean_score[s] * st.p[s]


class TestEmpiricalUnfairness:
    def test_theta_zero_example(self):
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        val = empirical_unfairness(0.0, FOUR_ROW_SCORES[:2], FOUR_ROW_SCORES[2:], st)
        assert val == pytest.approx(abs(0.9 / 1.1 - 0.8 / 1.2), rel=1e-12)

    def test_identical_multisets_give_zero(self):
        scores = np.array([0.9, 0.3, 0.6, 0.9, 0.3, 0.6])
        S = np.array([1, 1, 1, 0, 0, 0])
        st = group_statistics(scores, S)
        assert empirical_unfairness(0.0, scores[S == 1], scores[S == 0], st) == 0.0

    def test_theta_two_kills_group_one(self):
        # factor 2 - 2/0.275 < 0, so no group-1 row can activate
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        val = empirical_unfairness(2.0, FOUR_ROW_SCORES[:2], FOUR_ROW_SCORES[2:], st)
        assert val == pytest.approx(1.0, abs=1e-15)  # group 0 fully active

    def test_matches_product_form_off_breakpoints(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            s1, s0, st = random_instance(rng, max_n=300)
            for theta in rng.uniform(-2.5, 2.5, 10):
                a = empirical_unfairness(float(theta), s1, s0, st)
                b = brute_unfairness(float(theta), s1, s0, st)
                assert a == pytest.approx(b, abs=1e-12)


class TestBreakpoints:
    def test_group1_inversion(self):
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        bset = breakpoints(FOUR_ROW_SCORES[:2], FOUR_ROW_SCORES[2:], st)
        expected = 0.275 * (2.0 - 1.0 / 0.9)
        assert any(t == pytest.approx(expected, abs=1e-15) and g == 1 for t, g, _ in bset.entries)

    def test_half_score_switches_at_zero(self):
        st = GroupStatistics(p=(0.5, 0.5), mean_score=(0.6, 0.5), joint=(0.3, 0.25))
        bset = breakpoints(np.array([0.7]), np.array([0.5]), st)
        assert any(t == 0.0 and g == 0 for t, g, _ in bset.entries)

    def test_out_of_range_dropped(self):
        # score at the floor can push the switch point below -2
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        bset = breakpoints(np.array([0.1, 0.9]), FOUR_ROW_SCORES[2:], st)
        assert 0.275 * (2.0 - 1.0 / 0.1) == -2.2  # would-be entry
        assert all(-2.0 <= t <= 2.0 for t, _, _ in bset.entries)

    def test_piecewise_constancy_between_breakpoints(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            s1, s0, st = random_instance(rng, max_n=120)
            bps = breakpoints(s1, s0, st).thetas
            for k in range(len(bps) - 1):
                lo, hi = bps[k], bps[k + 1]
                pts = lo + np.array([0.25, 0.5, 0.75]) * (hi - lo)
                pts = pts[(pts > lo) & (pts < hi)]
                vals = [empirical_unfairness(float(t), s1, s0, st) for t in pts]
                assert all(v == vals[0] for v in vals)


class TestFitTheta:
    def test_identical_groups_pick_zero(self):
        scores = np.array([0.9, 0.3, 0.6, 0.9, 0.3, 0.6])
        S = np.array([1, 1, 1, 0, 0, 0])
        st = group_statistics(scores, S)
        assert fit_theta(scores[S == 1], scores[S == 0], st) == 0.0

    def test_four_row_beats_dense_grid(self):
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        s1, s0 = FOUR_ROW_SCORES[:2], FOUR_ROW_SCORES[2:]
        th = fit_theta(s1, s0, st)
        grid = np.linspace(-2.0, 2.0, 100_001)
        grid_best = min(brute_unfairness(t, s1, s0, st) for t in grid)
        assert empirical_unfairness(th, s1, s0, st) <= grid_best + 1e-12

    def test_never_worse_than_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            s1, s0, st = random_instance(rng, max_n=500)
            th = fit_theta(s1, s0, st)
            assert abs(th) <= 2.0
            assert empirical_unfairness(th, s1, s0, st) <= empirical_unfairness(0.0, s1, s0, st)

    def test_monotone_group_terms(self):
        from fairthresh.calibration import _AwareObjective

        rng = np.random.default_rng(4)
        s1, s0, st = random_instance(rng, max_n=500)
        obj = _AwareObjective(s1, s0, st)
        thetas = np.sort(rng.uniform(-2, 2, 50))
        t1, t0 = obj.tpr_pair(thetas)
        assert np.all(np.diff(t1) <= 1e-15)
        assert np.all(np.diff(t0) >= -1e-15)


class TestPredict:
    def test_theta_zero_is_bayes_rule(self):
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        clf = FairClassifier(model=None, theta_hat=0.0, stats=st, mode="aware")
        pred = clf.predict_from_scores(
            scores_s0=np.array([0.4, 0.5, 0.6]),
            scores_s1=np.array([0.4, 0.5, 0.6]),
            sensitive=np.array([1, 1, 1]),
        )
        np.testing.assert_array_equal(pred, [0, 1, 1])  # boundary 0.5 predicts 1

    def test_boundary_breakpoint_is_active(self):
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        theta = st.joint[1] * (2.0 - 1.0 / 0.9)  # = 0.2444..., product form gives exactly 1.0
        clf = FairClassifier(model=None, theta_hat=float(theta), stats=st, mode="aware")
        pred = clf.predict_from_scores(
            scores_s0=np.array([0.9]), scores_s1=np.array([0.9]), sensitive=np.array([1])
        )
        assert pred[0] == 1

    def test_bayes_thresholds(self):
        st = group_statistics(FOUR_ROW_SCORES, FOUR_ROW_S)
        clf = FairClassifier(model=None, theta_hat=0.0, stats=st, mode="aware")
        pred = clf.predict_from_scores(
            scores_s0=np.array([0.6, 0.4]), scores_s1=np.array([0.6, 0.4]), sensitive=np.array([1, 0])
        )
        np.testing.assert_array_equal(pred, [1, 0])


class TestBlind:
    def test_all_zero_direction_picks_zero(self):
        m = np.array([0.7, 0.4, 0.6])
        s = np.array([0.5, 0.3, 0.8])
        assert fit_theta_blind(m, s, s) == 0.0

    def test_breakpoint_inversion(self):
        from fairthresh.calibration import _BlindObjective

        # engineered so row 0 has direction exactly +0.5
        s0 = np.array([0.6, 0.2])  # ratios 1.5, 0.5
        s1 = np.array([0.5, 0.5])  # ratios 1.0, 1.0
        m = np.array([0.4, 0.9])
        obj = _BlindObjective(m, s0, s1)
        expected = (1.0 - 2.0 * 0.4) / 0.5
        assert any(bp == pytest.approx(expected, abs=1e-15) for bp in obj.breakpoints)

    def test_beats_dense_grid(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n = int(rng.integers(20, 400))
            s0 = np.maximum(rng.random(n), 0.05)
            s1 = np.maximum(rng.random(n), 0.05)
            m = np.maximum(rng.random(n), 0.05)
            th = fit_theta_blind(m, s0, s1)
            val = blind_unfairness(th, m, s0, s1)
            grid = np.linspace(-50.0, 50.0, 20_001)
            grid_best = min(blind_unfairness(float(t), m, s0, s1) for t in grid)
            assert val <= grid_best + 1e-12

    def test_matches_product_form(self):
        rng = np.random.default_rng(6)
        n = 100
        s0 = np.maximum(rng.random(n), 0.05)
        s1 = np.maximum(rng.random(n), 0.05)
        m = np.maximum(rng.random(n), 0.05)
        for theta in rng.uniform(-5, 5, 20):
            assert blind_unfairness(float(theta), m, s0, s1) == pytest.approx(
                brute_blind(float(theta), m, s0, s1), abs=1e-12
            )


class TestCalibrate:
    @pytest.fixture
    def train(self):
        rng = np.random.default_rng(7)
        n = 400
        x = rng.normal(size=n)
        s = rng.integers(0, 2, n)
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(1.5 * x + 0.5 * s)))).astype(int)
        return LabeledDataset(x[:, None], s, y)

    def test_reuse_train_equals_explicit_unlabeled(self, train):
        cfg = LogisticConfig(l2_lambda=1e-3)
        a = calibrate(train, estimator=cfg)
        b = calibrate(train, UnlabeledDataset(train.features, train.sensitive), estimator=cfg)
        assert a.theta_hat == b.theta_hat
        assert a.stats == b.stats

    def test_group_aware_needs_sensitive_on_unlabeled(self, train):
        with pytest.raises(SchemaError):
            calibrate(train, UnlabeledDataset(train.features), mode="aware")

    def test_blind_works_without_sensitive(self, train):
        clf = calibrate(train, UnlabeledDataset(train.features), estimator=LogisticConfig(1e-3), mode="blind")
        assert clf.stats is None and clf.blind_means is not None
        pred = clf.predict(train.features)
        assert set(np.unique(pred)) <= {0, 1}

    def test_theta_bound_holds(self, train):
        clf = calibrate(train, estimator=LogisticConfig(l2_lambda=1e-3))
        assert abs(clf.theta_hat) <= 2.0

    def test_knn_predictions_invariant_to_feature_rescaling(self, train):
        cfg = KnnConfig(k=7)
        a = calibrate(train, estimator=cfg)
        scaled = LabeledDataset(train.features * 3.7, train.sensitive, train.labels)
        b = calibrate(scaled, estimator=cfg)
        np.testing.assert_array_equal(
            a.predict(train.features, train.sensitive), b.predict(scaled.features, train.sensitive)
        )

    def test_external_scores_match_fitted_path(self, train):
        cfg = LogisticConfig(l2_lambda=1e-3)
        fitted = calibrate(train, estimator=cfg)
        # feed the model's own raw scores through the external-scores path
        model = fitted.model
        ext = calibrate_scores(
            model.score_group(train.features, 0),
            model.score_group(train.features, 1),
            sensitive=train.sensitive,
            n_labeled=train.n,
        )
        assert ext.theta_hat == fitted.theta_hat

    def test_serialization_round_trip(self, train):
        clf = calibrate(train, estimator=LogisticConfig(l2_lambda=1e-3))
        back = FairClassifier.from_json(clf.to_json())
        np.testing.assert_array_equal(
            back.predict(train.features, train.sensitive), clf.predict(train.features, train.sensitive)
        )
