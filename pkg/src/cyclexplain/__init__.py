"""Counterfactual decision explanations for binary image classifiers.

Trains a cycle-consistent pair of generators, one pushing images toward
each class of a frozen classifier, and visualizes the difference of the two
counterfactuals as a signed per-pixel relevance map, together with the
quantitative (domain transfer, classifier metrics) and user-study
statistics needed to evaluate such explanations.
"""

from .data import (
    DataError,
    DatasetSummary,
    LabeledSample,
    generate_synthetic_dataset,
    load_manifest,
    stratified_split,
    validate_image,
)
from .losses import (
    LossWeights,
    SsimParams,
    am_loss,
    cross_entropy,
    cycle_loss,
    dssim,
    generator_loss,
    ms_dssim,
    similarity_loss,
    ssim,
)
from .models import (
    ClassifierSpec,
    DiscriminatorSpec,
    ExplainerBundle,
    GeneratorSpec,
    build_bundle,
    build_classifier,
    build_discriminator,
    build_generator,
    classify,
    load_bundle,
    load_classifier,
    save_bundle,
    save_classifier,
)
from .training import TrainConfig, TrainLog, train_classifier, train_explainer
from .relevance import RelevanceMap, explain, export_map, load_raw_map, render_overlay
from .metrics import (
    ConfusionCounts,
    MetricReport,
    TransferReport,
    compute_metrics,
    confusion_metrics,
    evaluate_transfer,
    paired_t_test,
)
from .studystats import (
    QuestionnairePlan,
    general_factor,
    interobserver_rho,
    kmo,
    make_questionnaire_plan,
    method_comparison,
    order_effect_test,
    z_adjust,
)

__version__ = "0.1.0"
