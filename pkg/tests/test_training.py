import numpy as np
import pytest
import torch

from cyclexplain.data import generate_synthetic_dataset, stratified_split
from cyclexplain.losses import LossWeights, SsimParams, ms_dssim
from cyclexplain.models import (
    build_bundle, build_classifier, parameter_checksum,
)
from cyclexplain.training import (
    DivergenceError,
    TrainConfig,
    TrainingError,
    class_weights,
    train_classifier,
    train_explainer,
)

from conftest import TINY_CLF, TINY_DISC, TINY_GEN

SSIM2 = SsimParams(n_scales=2)


def small_dataset(n=40, seed=5):
    samples = generate_synthetic_dataset(n, seed=seed, size=32)
    return stratified_split(samples, 0.7, seed=0)


class TestTrainClassifier:
    def test_class_weights_inverse_frequency(self):
        w_neg, w_pos = class_weights(348, 424)
        assert w_pos == pytest.approx(424 / 772)
        assert w_neg == pytest.approx(348 / 772)

    def test_loss_decreases(self, tiny_classifier):
        _, metrics = tiny_classifier
        losses = metrics["epoch_losses"]
        assert losses[-1] < losses[0]

    def test_synthetic_accuracy(self, desk_classifier):
        _, metrics = desk_classifier
        assert metrics["test_accuracy"] >= 0.95

    def test_single_class_error(self):
        samples = [s for s in small_dataset() if s.label == 1]
        clf = build_classifier(TINY_CLF, 32, seed=0)
        with pytest.raises(TrainingError):
            train_classifier(clf, samples,
                             TrainConfig(batch_size=4, max_epochs=1))

    def test_batch_size_invariant(self):
        with pytest.raises(TrainingError):
            TrainConfig(batch_size=1)


class TestTrainExplainer:
    def _bundle(self, clf_seed=0):
        samples = small_dataset()
        clf = build_classifier(TINY_CLF, 32, seed=clf_seed)
        clf, _ = train_classifier(
            clf, samples, TrainConfig(batch_size=8, max_epochs=5, seed=0))
        return samples, build_bundle(clf, TINY_GEN, TINY_DISC, seed=0)

    def test_classifier_untouched(self):
        samples, bundle = self._bundle()
        before = parameter_checksum(bundle.classifier)
        config = TrainConfig(batch_size=8, max_epochs=1, seed=0, ssim=SSIM2)
        bundle, _ = train_explainer(bundle, samples, config)
        assert parameter_checksum(bundle.classifier) == before

    def test_reconstruction_only_converges_to_identity(self):
        samples, bundle = self._bundle()
        config = TrainConfig(
            batch_size=8, max_epochs=8, seed=0, ssim=SSIM2,
            weights=LossWeights(w_adv=0.0, w_am=0.0))
        bundle, _ = train_explainer(bundle, samples, config)
        imgs = torch.as_tensor(
            np.stack([s.image for s in samples if s.split == "test"])
        ).unsqueeze(1)
        with torch.no_grad():
            for gen in (bundle.g_plus, bundle.g_minus):
                assert float(ms_dssim(imgs, gen(imgs), SSIM2)) < 0.05

    def test_deterministic_trainlog(self):
        logs = []
        for _ in range(2):
            samples, bundle = self._bundle()
            config = TrainConfig(batch_size=8, max_epochs=1, seed=3, ssim=SSIM2)
            _, log = train_explainer(bundle, samples, config)
            logs.append(log.records)
        assert logs[0] == logs[1]

    def test_one_record_per_step_monotone(self):
        samples, bundle = self._bundle()
        config = TrainConfig(batch_size=8, max_epochs=2, seed=0, ssim=SSIM2)
        _, log = train_explainer(bundle, samples, config)
        steps = [r["step"] for r in log.records]
        assert steps == sorted(steps)
        assert all("g_plus" in r and "d_plus" in r for r in log.records)

    def test_divergence_detected(self):
        samples, bundle = self._bundle()
        with torch.no_grad():
            next(bundle.g_plus.parameters()).fill_(float("nan"))
        config = TrainConfig(batch_size=8, max_epochs=1, seed=0, ssim=SSIM2)
        with pytest.raises(DivergenceError):
            train_explainer(bundle, samples, config)

    def test_marks_trained(self):
        samples, bundle = self._bundle()
        assert not bundle.trained
        config = TrainConfig(batch_size=8, max_epochs=1, seed=0, ssim=SSIM2)
        bundle, _ = train_explainer(bundle, samples, config)
        assert bundle.trained


class TestDeskScaleTransfer:
    def test_probability_ordering(self, desk_bundle, desk_dataset):
        bundle, _ = desk_bundle
        test = [s for s in desk_dataset if s.split == "test"]
        imgs = torch.as_tensor(np.stack([s.image for s in test])).unsqueeze(1)
        with torch.no_grad():
            p0 = bundle.classifier.prob_positive(imgs).numpy()
            pp = bundle.classifier.prob_positive(bundle.g_plus(imgs)).numpy()
            pm = bundle.classifier.prob_positive(bundle.g_minus(imgs)).numpy()
        assert pp.mean() > p0.mean() > pm.mean()
        # paired difference positive for >= 90% of held-out samples
        assert np.mean((pp - pm) > 0) >= 0.9
