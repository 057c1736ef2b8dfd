"""Alternating adversarial training of the explainer, plus classifier training.

One logical thread owns all parameters. Each explainer step draws random
same-domain image pairs, updates both discriminators on (real, fake) pairs
with randomized slot order, then updates both generators against frozen
discriminators with inverted adversarial targets. True sample labels are
never read during explainer training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .data import LabeledSample
from .losses import LossWeights, SsimParams, cross_entropy, generator_loss, ms_dssim
from .models import ExplainerBundle, Classifier, freeze, parameter_checksum


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    """Loss became non-finite; training aborted."""


@dataclass
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 50
    optimizer: str = "adam"
    learning_rate: float = 2e-4
    betas: tuple = (0.5, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    ssim: SsimParams = field(default_factory=SsimParams)
    convergence_window: int = 5
    convergence_rel_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise TrainingError("batch_size must be >= 2 (image pairs required)")
        if self.convergence_rel_tol <= 0:
            raise TrainingError("convergence_rel_tol must be positive")


@dataclass
class TrainLog:
    """Per-step loss records plus out-of-band events (probes, divergences).

    `records` holds exactly one entry per optimization step; anything that
    is not a step (end-of-epoch probes, divergence diagnostics) goes to
    `events` so the step log stays contiguous.
    """

    records: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def append(self, **record):
        record["step"] = len(self.records)
        self.records.append(record)

    def append_event(self, **event):
        self.events.append(event)

    def save(self, path, events_path=None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if events_path is not None:
            with open(Path(events_path), "w") as fh:
                for event in self.events:
                    fh.write(json.dumps(event, sort_keys=True) + "\n")


def _make_optimizer(params, config: TrainConfig):
    if config.optimizer != "adam":
        raise TrainingError(f"unsupported optimizer {config.optimizer!r}")
    return torch.optim.Adam(params, lr=config.learning_rate,
                            betas=tuple(config.betas))


def _images(samples, split=None) -> np.ndarray:
    chosen = [s for s in samples if split is None or s.split == split]
    return np.stack([s.image for s in chosen]) if chosen else np.zeros((0, 0, 0))


def train_classifier(classifier: Classifier, samples: list[LabeledSample],
                     config: TrainConfig):
    """Train with class-frequency-weighted cross entropy; returns test metrics.

    Weights are inversely proportional to class counts, normalized to sum
    to 1, so the minority class contributes equally. The classifier comes
    back frozen.
    """
    train = [s for s in samples if s.split == "train"]
    labels = np.array([s.label for s in train])
    n_pos, n_neg = int(labels.sum()), int(len(labels) - labels.sum())
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("training split must contain both classes")
    w = class_weights(n_pos, n_neg)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    classifier.train()
    opt = _make_optimizer(classifier.parameters(), config)
    images = torch.as_tensor(_images(train)).unsqueeze(1)
    targets = torch.as_tensor(labels, dtype=torch.long)
    sample_w = torch.where(targets == 1, w[1], w[0]).float()

    epoch_losses = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(order) - 1, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            probs = classifier(images[idx])
            p_true = probs.gather(1, targets[idx].unsqueeze(1)).squeeze(1)
            loss = (sample_w[idx] * -(p_true.clamp(1e-7)).log()).sum() \
                / sample_w[idx].sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            count += 1
        epoch_losses.append(total / max(count, 1))
        if _converged(epoch_losses, config.convergence_window,
                      config.convergence_rel_tol):
            break

    freeze(classifier)
    test = [s for s in samples if s.split == "test"]
    metrics = {"epoch_losses": epoch_losses}
    if test:
        with torch.no_grad():
            probs = classifier.prob_positive(_images(test)).numpy()
        preds = (probs >= 0.5).astype(int)
        truth = np.array([s.label for s in test])
        metrics["test_accuracy"] = float((preds == truth).mean())
    return classifier, metrics


def class_weights(n_pos: int, n_neg: int) -> tuple:
    """Inverse-frequency class weights (w_neg, w_pos), normalized to sum 1."""
    total = n_pos + n_neg
    return (n_pos / total, n_neg / total)


def _converged(epoch_losses, window, rel_tol):
    if len(epoch_losses) < 2 * window:
        return False
    prev = np.mean(epoch_losses[-2 * window:-window])
    cur = np.mean(epoch_losses[-window:])
    return abs(cur - prev) < rel_tol * max(abs(prev), 1e-12)


def _discriminator_step(disc, generator, x_a, x_b, opt, torch_rng, config):
    with torch.no_grad():
        fake = generator(x_a)
    outputs = disc.discriminate(x_b, fake, torch_rng)
    loss = torch.stack([cross_entropy(t, p) for p, t in outputs]).mean()
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.detach())


def train_explainer(bundle: ExplainerBundle, samples: list[LabeledSample],
                    config: TrainConfig):
    """Alternating training of both GAN pairs around the frozen classifier.

    Stops when the windowed mean of the summed generator losses changes by
    less than rel_tol across consecutive windows, or at max_epochs.
    """
    train_imgs = _images(samples, "train")
    if train_imgs.size == 0:
        train_imgs = _images(samples)
    if train_imgs.size == 0:
        raise TrainingError("no training images")
    probe = _images(samples, "test")
    if probe.size == 0:
        probe = train_imgs[: config.batch_size]

    torch.manual_seed(config.seed)
    torch_rng = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    classifier = bundle.classifier
    checksum_before = parameter_checksum(classifier)
    nets = {
        "g_plus": bundle.g_plus, "g_minus": bundle.g_minus,
        "d_plus": bundle.d_plus, "d_minus": bundle.d_minus,
    }
    opts = {name: _make_optimizer(net.parameters(), config)
            for name, net in nets.items()}

    images = torch.as_tensor(train_imgs).unsqueeze(1)
    log = TrainLog()
    epoch_losses = []
    for epoch in range(config.max_epochs):
        for net in nets.values():
            net.train()
        order = rng.permutation(len(images))
        pair_order = rng.permutation(len(images))
        epoch_total, n_steps = 0.0, 0
        for start in range(0, len(order) - 1, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            x_a = images[idx]
            x_b = images[pair_order[start:start + len(idx)]]

            d_plus_loss = _discriminator_step(
                bundle.d_plus, bundle.g_plus, x_a, x_b,
                opts["d_plus"], torch_rng, config)
            d_minus_loss = _discriminator_step(
                bundle.d_minus, bundle.g_minus, x_a, x_b,
                opts["d_minus"], torch_rng, config)

            for d in (bundle.d_plus, bundle.d_minus):
                for p in d.parameters():
                    p.requires_grad_(False)
            loss_plus, bd_plus = generator_loss(
                x_a, x_b, 1, bundle.g_plus, bundle.g_minus, bundle.d_plus,
                classifier.prob_positive, config.weights, config.ssim)
            loss_minus, bd_minus = generator_loss(
                x_a, x_b, 0, bundle.g_minus, bundle.g_plus, bundle.d_minus,
                classifier.prob_positive, config.weights, config.ssim)
            total = loss_plus + loss_minus
            if not torch.isfinite(total):
                log.append_event(event="divergence", epoch=epoch,
                                 g_plus=bd_plus, g_minus=bd_minus)
                raise DivergenceError(
                    f"non-finite generator loss at epoch {epoch}: "
                    f"g_plus={bd_plus} g_minus={bd_minus}")
            opts["g_plus"].zero_grad()
            opts["g_minus"].zero_grad()
            total.backward()
            opts["g_plus"].step()
            opts["g_minus"].step()
            for d in (bundle.d_plus, bundle.d_minus):
                for p in d.parameters():
                    p.requires_grad_(True)

            log.append(epoch=epoch, g_plus=bd_plus, g_minus=bd_minus,
                       d_plus=d_plus_loss, d_minus=d_minus_loss)
            epoch_total += float(total.detach())
            n_steps += 1

        epoch_losses.append(epoch_total / max(n_steps, 1))
        for net in nets.values():
            net.eval()
        with torch.no_grad():
            p0 = classifier.prob_positive(probe)
            pp = classifier.prob_positive(bundle.g_plus(torch.as_tensor(
                probe).unsqueeze(1)))
            pm = classifier.prob_positive(bundle.g_minus(torch.as_tensor(
                probe).unsqueeze(1)))
        log.append_event(event="probe", epoch=epoch,
                         mean_prob=float(p0.mean()),
                         mean_prob_plus=float(pp.mean()),
                         mean_prob_minus=float(pm.mean()))
        if _converged(epoch_losses, config.convergence_window,
                      config.convergence_rel_tol):
            break

    if parameter_checksum(classifier) != checksum_before:
        raise TrainingError("classifier parameters changed during training")
    bundle.trained = True
    return bundle, log
