"""Classifier performance metrics with bootstrap CIs and the domain-transfer
evaluation (classifier probability shifts under both generators)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats

from .models import ExplainerBundle


class MetricError(ValueError):
    pass


class DegenerateInputError(MetricError):
    """Zero-variance differences or otherwise undefined statistic."""


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def _safe_div(a, b):
    return a / b if b > 0 else float("nan")


def confusion_metrics(c: ConfusionCounts) -> dict:
    """Point estimates of all threshold-based metrics from a confusion matrix."""
    if c.total == 0:
        raise MetricError("empty confusion matrix")
    sens = _safe_div(c.tp, c.tp + c.fn)
    spec = _safe_div(c.tn, c.tn + c.fp)
    ppv = _safe_div(c.tp, c.tp + c.fp)
    npv = _safe_div(c.tn, c.tn + c.fn)
    informedness = sens + spec - 1
    markedness = ppv + npv - 1
    denom = np.sqrt(float(c.tp + c.fp) * (c.tp + c.fn)
                    * (c.tn + c.fp) * (c.tn + c.fn))
    mcc = (c.tp * c.tn - c.fp * c.fn) / denom if denom > 0 else float("nan")
    f1 = _safe_div(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    return {
        "accuracy": _safe_div(c.tp + c.tn, c.total),
        "f1": f1,
        "sensitivity": sens,
        "specificity": spec,
        "ppv": ppv,
        "npv": npv,
        "informedness": informedness,
        "markedness": markedness,
        "mcc": mcc,
    }


def auc_score(labels: np.ndarray, probs: np.ndarray) -> float:
    """Rank-based AUC (concordance probability) with midrank tie handling."""
    labels = np.asarray(labels)
    probs = np.asarray(probs, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: labels contain a single class")
    ranks = stats.rankdata(probs)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2)
                 / (n_pos * n_neg))


def _point_estimates(labels, probs, threshold):
    preds = probs >= threshold
    c = ConfusionCounts(
        tp=int(np.sum((preds == 1) & (labels == 1))),
        fp=int(np.sum((preds == 1) & (labels == 0))),
        tn=int(np.sum((preds == 0) & (labels == 0))),
        fn=int(np.sum((preds == 0) & (labels == 1))),
    )
    out = confusion_metrics(c)
    out["auc"] = auc_score(labels, probs)
    return out


@dataclass
class MetricReport:
    # metric name -> (estimate, ci_low, ci_high)
    metrics: dict = field(default_factory=dict)
    threshold: float = 0.5
    n_boot: int = 0

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "n_boot": self.n_boot,
            "metrics": {k: {"estimate": v[0], "ci_low": v[1], "ci_high": v[2]}
                        for k, v in self.metrics.items()},
        }


def compute_metrics(labels, probs, threshold: float = 0.5,
                    n_boot: int = 10000, seed: int = 0) -> MetricReport:
    """Confusion-matrix metrics plus AUC, with percentile-bootstrap 95% CIs.

    Bootstrap resamples that lose one of the classes are redrawn, since
    most of the metrics are undefined for them.
    """
    labels = np.asarray(labels).astype(int)
    probs = np.asarray(probs, dtype=np.float64)
    if labels.shape != probs.shape:
        raise MetricError("labels and probs must align")
    if len(np.unique(labels)) < 2:
        raise MetricError("labels must contain both classes")

    point = _point_estimates(labels, probs, threshold)
    rng = np.random.default_rng(seed)
    n = len(labels)
    boot = {k: [] for k in point}
    for _ in range(n_boot):
        for _attempt in range(100):
            idx = rng.integers(0, n, n)
            if len(np.unique(labels[idx])) == 2:
                break
        est = _point_estimates(labels[idx], probs[idx], threshold)
        for k, v in est.items():
            boot[k].append(v)

    report = MetricReport(threshold=threshold, n_boot=n_boot)
    for k, v in point.items():
        if n_boot > 0:
            vals = np.asarray(boot[k])
            vals = vals[np.isfinite(vals)]
            if vals.size:
                lo, hi = np.percentile(vals, [2.5, 97.5])
            else:
                lo = hi = v
        else:
            lo = hi = v
        report.metrics[k] = (float(v), float(lo), float(hi))
    return report


def paired_t_test(a, b, df_override: int | None = None) -> tuple:
    """Two-tailed paired t-test on mean difference; df = n-1 unless overridden."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise MetricError("inputs must be equal-length 1-D with n >= 2")
    diff = a - b
    sd = diff.std(ddof=1)
    if sd == 0:
        if np.allclose(diff, 0):
            return 0.0, 1.0
        raise DegenerateInputError("zero variance of nonzero differences")
    n = len(diff)
    t = diff.mean() / (sd / np.sqrt(n))
    df = df_override if df_override is not None else n - 1
    p = 2 * stats.t.sf(abs(t), df)
    return float(t), float(p)


@dataclass
class TransferReport:
    mean_prob_original: tuple
    mean_prob_plus: tuple
    mean_prob_minus: tuple
    t_plus: float
    p_plus: float
    t_minus: float
    p_minus: float

    def to_dict(self):
        def ci(v):
            return {"mean": v[0], "ci_low": v[1], "ci_high": v[2]}
        return {
            "original": ci(self.mean_prob_original),
            "plus": ci(self.mean_prob_plus),
            "minus": ci(self.mean_prob_minus),
            "t_plus": self.t_plus, "p_plus": self.p_plus,
            "t_minus": self.t_minus, "p_minus": self.p_minus,
        }


def _boot_mean_ci(values, n_boot, rng):
    if n_boot == 0:
        m = float(values.mean())
        return (m, m, m)
    means = np.array([values[rng.integers(0, len(values), len(values))].mean()
                      for _ in range(n_boot)])
    lo, hi = np.percentile(means, [2.5, 97.5])
    return (float(values.mean()), float(lo), float(hi))


def evaluate_transfer(bundle: ExplainerBundle, samples, n_boot: int = 10000,
                      seed: int = 0) -> TransferReport:
    """Classifier probabilities on x, G+(x), G-(x), with paired t-tests."""
    bundle.require_trained()
    if not samples:
        raise MetricError("no samples to evaluate")
    images = np.stack([s.image for s in samples])
    with torch.no_grad():
        xb = torch.as_tensor(images).unsqueeze(1)
        p0 = bundle.classifier.prob_positive(xb).numpy()
        pp = bundle.classifier.prob_positive(bundle.g_plus(xb)).numpy()
        pm = bundle.classifier.prob_positive(bundle.g_minus(xb)).numpy()
    rng = np.random.default_rng(seed)
    t_plus, p_plus = _paired_or_zero(pp, p0)
    t_minus, p_minus = _paired_or_zero(pm, p0)
    return TransferReport(
        mean_prob_original=_boot_mean_ci(p0, n_boot, rng),
        mean_prob_plus=_boot_mean_ci(pp, n_boot, rng),
        mean_prob_minus=_boot_mean_ci(pm, n_boot, rng),
        t_plus=t_plus, p_plus=p_plus, t_minus=t_minus, p_minus=p_minus,
    )


def _paired_or_zero(a, b):
    try:
        return paired_t_test(a, b)
    except DegenerateInputError:
        raise
    except MetricError:
        return 0.0, 1.0
