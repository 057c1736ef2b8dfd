import numpy as np
import pandas as pd
import pytest
import torch

from cyclexplain.data import generate_synthetic_dataset, stratified_split
from cyclexplain.losses import SsimParams, LossWeights
from cyclexplain.models import (
    ClassifierSpec, DiscriminatorSpec, GeneratorSpec,
    build_bundle, build_classifier,
)
from cyclexplain.training import TrainConfig, train_classifier, train_explainer

torch.set_num_threads(1)

# small architectures keep CPU runtimes reasonable; the synthetic task does
# not need the full-size networks
TINY_CLF = ClassifierSpec(blocks=[(8, 1), (16, 2), (32, 2), (32, 2)])
TINY_GEN = GeneratorSpec(depth=2, convs_per_stage=2, stage_kernels=[12, 24, 48])
TINY_DISC = DiscriminatorSpec(backbone=TINY_GEN, tap_stages=(1, 2))


def ssim_reference(x, y, window=7, c1=0.01, c2=0.03):
    """Scalar sliding-window SSIM, written independently of the loss module."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = x.shape
    vals = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            px = x[i:i + window, j:j + window]
            py = y[i:i + window, j:j + window]
            mx, my = px.mean(), py.mean()
            vx = (px * px).mean() - mx * mx
            vy = (py * py).mean() - my * my
            cov = (px * py).mean() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def make_study_responses(n_raters=8, n_items=24, seed=11):
    """Paper-shaped synthetic user-study table: 4 methods, 3 criteria, 2 variants."""
    methods = {"ours": 2.0, "deepshap": -1.5, "deeptaylor": -1.0, "lrp": -2.5}
    criteria = ("intuitivity", "semantics", "quality")
    rng = np.random.default_rng(seed)
    rows = []
    rater_bias = rng.normal(0, 0.5, n_raters)
    item_bias = rng.normal(0, 0.8, n_items)
    for r in range(n_raters):
        variant = "A" if r % 2 == 0 else "B"
        for i in range(n_items):
            for method, base in methods.items():
                for criterion in criteria:
                    score = base + rater_bias[r] + item_bias[i] \
                        + rng.normal(0, 0.7)
                    rows.append({
                        "rater_id": f"r{r}",
                        "item_id": f"item{i:02d}",
                        "method": method,
                        "criterion": criterion,
                        "score": int(np.clip(round(score), -4, 4)),
                        "variant": variant,
                    })
    return pd.DataFrame(rows)


@pytest.fixture(scope="session")
def tiny_dataset():
    samples = generate_synthetic_dataset(60, seed=7, size=32)
    return stratified_split(samples, 0.7, seed=0)


@pytest.fixture(scope="session")
def tiny_classifier(tiny_dataset):
    clf = build_classifier(TINY_CLF, 32, seed=0)
    clf, metrics = train_classifier(
        clf, tiny_dataset, TrainConfig(batch_size=16, max_epochs=10, seed=0))
    return clf, metrics


@pytest.fixture(scope="session")
def desk_dataset():
    samples = generate_synthetic_dataset(400, seed=7, size=64)
    return stratified_split(samples, 0.7, seed=0)


@pytest.fixture(scope="session")
def desk_classifier(desk_dataset):
    clf = build_classifier(TINY_CLF, 64, seed=0)
    clf, metrics = train_classifier(
        clf, desk_dataset, TrainConfig(batch_size=32, max_epochs=12, seed=0))
    return clf, metrics


@pytest.fixture(scope="session")
def desk_bundle(desk_classifier, desk_dataset):
    clf, _ = desk_classifier
    bundle = build_bundle(clf, TINY_GEN, TINY_DISC, seed=0)
    config = TrainConfig(batch_size=16, max_epochs=4, seed=0,
                         ssim=SsimParams(n_scales=3))
    bundle, log = train_explainer(bundle, desk_dataset, config)
    return bundle, log


@pytest.fixture(scope="session")
def study_responses():
    return make_study_responses()
