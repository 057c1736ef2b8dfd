import numpy as np
import pytest

from cyclexplain.metrics import (
    ConfusionCounts,
    DegenerateInputError,
    MetricError,
    auc_score,
    compute_metrics,
    confusion_metrics,
    evaluate_transfer,
    paired_t_test,
)


class TestConfusionMetrics:
    def test_hand_computed_example(self):
        m = confusion_metrics(ConfusionCounts(tp=2, fp=1, tn=3, fn=0))
        assert m["sensitivity"] == pytest.approx(1.0)
        assert m["specificity"] == pytest.approx(0.75)
        assert m["ppv"] == pytest.approx(2 / 3)
        assert m["npv"] == pytest.approx(1.0)
        assert m["informedness"] == pytest.approx(0.75)
        assert m["markedness"] == pytest.approx(2 / 3)
        assert m["mcc"] == pytest.approx(np.sqrt(0.5), abs=1e-4)

    def test_mcc_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            c = ConfusionCounts(*(int(v) for v in rng.integers(1, 50, 4)))
            m = confusion_metrics(c)
            assert m["mcc"] ** 2 == pytest.approx(
                m["informedness"] * m["markedness"], abs=1e-9)


class TestComputeMetrics:
    def test_perfect_classifier(self):
        labels = np.array([0, 0, 1, 1, 0, 1])
        probs = labels * 0.8 + 0.1
        report = compute_metrics(labels, probs, n_boot=50, seed=0)
        for name in ("accuracy", "f1", "sensitivity", "specificity", "auc"):
            assert report.metrics[name][0] == pytest.approx(1.0)

    def test_ci_contains_estimate(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 2, 100)
        probs = np.clip(labels * 0.4 + rng.random(100) * 0.6, 0, 1)
        report = compute_metrics(labels, probs, n_boot=200, seed=0)
        for est, lo, hi in report.metrics.values():
            assert lo <= est + 1e-9
            assert est <= hi + 1e-9

    def test_ci_tightens_with_sample_size(self):
        rng = np.random.default_rng(2)

        def width(n):
            labels = np.tile([0, 1], n // 2)
            probs = np.clip(labels * 0.5 + rng.normal(0.25, 0.2, n), 0, 1)
            report = compute_metrics(labels, probs, n_boot=200, seed=0)
            _, lo, hi = report.metrics["accuracy"]
            return hi - lo

        assert width(400) < width(40)

    def test_auc_monotone_invariance(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, 60)
        probs = rng.random(60)
        base = auc_score(labels, probs)
        assert auc_score(labels, probs ** 3) == pytest.approx(base)
        assert auc_score(labels, 1 / (1 + np.exp(-5 * probs))) == \
            pytest.approx(base)

    def test_single_class_error(self):
        with pytest.raises(MetricError):
            compute_metrics([1, 1, 1], [0.2, 0.5, 0.9], n_boot=10)


class TestPairedTTest:
    def test_equal_inputs(self):
        t, p = paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert t == 0.0
        assert p == 1.0

    def test_constant_nonzero_difference_degenerate(self):
        with pytest.raises(DegenerateInputError):
            paired_t_test([2, 3, 4, 5], [1, 2, 3, 4])

    def test_hand_computed(self):
        t, p = paired_t_test([1, 2, 3, 4], [0, 0, 0, 0])
        assert t == pytest.approx(3.873, abs=1e-3)
        assert p == pytest.approx(0.0305, abs=1e-3)

    def test_df_override(self):
        t_default, p_default = paired_t_test([1, 2, 3, 4, 5], [0, 1, 1, 2, 2])
        t_override, p_override = paired_t_test([1, 2, 3, 4, 5], [0, 1, 1, 2, 2],
                                               df_override=2)
        assert t_default == t_override
        assert p_override > p_default

    def test_too_short(self):
        with pytest.raises(MetricError):
            paired_t_test([1.0], [2.0])


class _IdentityGen:
    input_size = 32

    def __call__(self, x):
        return x

    def eval(self):
        return self


class TestEvaluateTransfer:
    def test_identity_generators(self, tiny_classifier, tiny_dataset):
        clf, _ = tiny_classifier
        from cyclexplain.models import ExplainerBundle
        bundle = ExplainerBundle.__new__(ExplainerBundle)
        bundle.classifier = clf
        bundle.g_plus = _IdentityGen()
        bundle.g_minus = _IdentityGen()
        bundle.trained = True
        report = evaluate_transfer(bundle, tiny_dataset[:10], n_boot=20, seed=0)
        assert report.mean_prob_plus[0] == report.mean_prob_original[0]
        assert report.mean_prob_minus[0] == report.mean_prob_original[0]
        assert report.t_plus == 0.0
        assert report.p_plus == 1.0

    def test_trained_bundle_ordering(self, desk_bundle, desk_dataset):
        bundle, _ = desk_bundle
        test = [s for s in desk_dataset if s.split == "test"]
        report = evaluate_transfer(bundle, test, n_boot=100, seed=0)
        assert report.mean_prob_plus[0] > report.mean_prob_original[0] \
            > report.mean_prob_minus[0]
        assert report.p_plus < 0.001
        assert report.p_minus < 0.001

    def test_empty_samples(self, desk_bundle):
        bundle, _ = desk_bundle
        with pytest.raises(MetricError):
            evaluate_transfer(bundle, [], n_boot=10)
