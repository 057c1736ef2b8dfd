"""Differentiable loss terms for generator training.

All functions accept 2-D arrays/tensors (H, W) or batches (N, H, W) /
(N, 1, H, W) and return a scalar torch tensor, so gradients flow when the
inputs require grad. SSIM statistics use a uniform box window over valid
positions only, which makes ssim(x, x) exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

EPS = 1e-7  # probability clamp to avoid log(0)


class LossArgumentError(ValueError):
    pass


@dataclass
class SsimParams:
    c1: float = 0.01
    c2: float = 0.03
    window: int = 7
    n_scales: int = 3
    # reproduce the printed dissimilarity formula (minimum 0.5 at identity)
    literal_dssim: bool = False

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise LossArgumentError("c1 and c2 must be positive")
        if self.window < 3 or self.window % 2 == 0:
            raise LossArgumentError("window must be odd and >= 3")
        if self.n_scales < 1:
            raise LossArgumentError("n_scales must be >= 1")


@dataclass
class LossWeights:
    w_cycle: float = 1.0
    w_sim: float = 1.0
    w_adv: float = 1.0
    w_am: float = 1.0
    w_l1_in_cycle: float = 0.5

    def __post_init__(self):
        for name in ("w_cycle", "w_sim", "w_adv", "w_am"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise LossArgumentError(f"{name} must be finite and >= 0, got {v}")


def _to_batch(x) -> torch.Tensor:
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(x)
    t = t.to(torch.float32) if not t.is_floating_point() else t
    if t.dim() == 2:
        t = t.unsqueeze(0).unsqueeze(0)
    elif t.dim() == 3:
        t = t.unsqueeze(1)
    elif t.dim() != 4:
        raise LossArgumentError(f"expected 2-4 dims, got shape {tuple(t.shape)}")
    return t


def _check_pair(x, y):
    xb, yb = _to_batch(x), _to_batch(y)
    if xb.shape != yb.shape:
        raise LossArgumentError(
            f"shape mismatch: {tuple(xb.shape)} vs {tuple(yb.shape)}"
        )
    return xb, yb


def _ssim_map(x: torch.Tensor, y: torch.Tensor, p: SsimParams) -> torch.Tensor:
    if x.shape[-1] < p.window or x.shape[-2] < p.window:
        raise LossArgumentError(
            f"image smaller than SSIM window {p.window}: {tuple(x.shape)}"
        )
    kernel = torch.ones(1, 1, p.window, p.window, dtype=x.dtype, device=x.device)
    kernel = kernel / (p.window * p.window)
    mu_x = F.conv2d(x, kernel)
    mu_y = F.conv2d(y, kernel)
    var_x = F.conv2d(x * x, kernel) - mu_x * mu_x
    var_y = F.conv2d(y * y, kernel) - mu_y * mu_y
    cov = F.conv2d(x * y, kernel) - mu_x * mu_y
    num = (2 * mu_x * mu_y + p.c1) * (2 * cov + p.c2)
    den = (mu_x * mu_x + mu_y * mu_y + p.c1) * (var_x + var_y + p.c2)
    return num / den


def ssim(x, y, p: SsimParams | None = None) -> torch.Tensor:
    """Mean local SSIM index in [-1, 1]; ssim(x, x) == 1."""
    p = p or SsimParams()
    xb, yb = _check_pair(x, y)
    return _ssim_map(xb, yb, p).mean()


def dssim(x, y, p: SsimParams | None = None) -> torch.Tensor:
    """Structural dissimilarity in [0, 1]; 0 exactly at identical inputs."""
    p = p or SsimParams()
    xb, yb = _check_pair(x, y)
    s = _ssim_map(xb, yb, p).mean()
    if p.literal_dssim:
        return 1 - s / 2
    return (1 - s) / 2


def ms_dssim(x, y, p: SsimParams | None = None) -> torch.Tensor:
    """Mean of dssim over dyadic scales (2x2 average-pool between scales)."""
    p = p or SsimParams()
    xb, yb = _check_pair(x, y)
    size = min(xb.shape[-1], xb.shape[-2])
    needed = p.window * 2 ** (p.n_scales - 1)
    if size < needed:
        raise LossArgumentError(
            f"image size {size} too small for {p.n_scales} scales "
            f"with window {p.window} (needs >= {needed})"
        )
    vals = []
    for scale in range(p.n_scales):
        if scale > 0:
            xb = F.avg_pool2d(xb, 2)
            yb = F.avg_pool2d(yb, 2)
        vals.append(dssim(xb, yb, p=SsimParams(p.c1, p.c2, p.window, 1,
                                               p.literal_dssim)))
    return torch.stack(vals).mean()


def cycle_loss(x, x_rec, p: SsimParams | None = None,
               l1_weight: float = 0.5) -> torch.Tensor:
    """Reconstruction loss: 0.5 * (mean |x - x'| + ms_dssim(x, x'))."""
    xb, yb = _check_pair(x, x_rec)
    return l1_weight * ((xb - yb).abs().mean() + ms_dssim(xb, yb, p))


def similarity_loss(x, gx, p: SsimParams | None = None) -> torch.Tensor:
    """Keeps generated images close to their source; identical to ms_dssim."""
    return ms_dssim(x, gx, p)


def cross_entropy(y, y_hat) -> torch.Tensor:
    """Binary negative log-likelihood, mean over elements; y_hat clamped."""
    yt = torch.as_tensor(y, dtype=torch.float32)
    ph = y_hat if isinstance(y_hat, torch.Tensor) else torch.as_tensor(
        y_hat, dtype=torch.float32)
    yt = yt.to(ph.dtype).expand_as(ph) if yt.dim() == 0 else yt.to(ph.dtype)
    ph = ph.clamp(EPS, 1 - EPS)
    return -(yt * ph.log() + (1 - yt) * (1 - ph).log()).mean()


def am_loss(target_label: int, classifier_prob) -> torch.Tensor:
    """Activation-maximization term: cross entropy against the target class.

    `classifier_prob` is the classifier's class-1 probability for the
    generated image; the sample's true label is never involved.
    """
    return cross_entropy(target_label, classifier_prob)


def generator_loss(x_a, x_b, target_label, g_self, g_other, d_self, classifier,
                   weights: LossWeights | None = None,
                   params: SsimParams | None = None):
    """Composite generator objective with a per-term breakdown.

    Terms: cycle reconstruction through both generators, similarity to the
    source, the adversarial term with inverted targets (the discriminator
    should place "real" on the generated slot), and activation maximization
    on the frozen classifier. Returns (total, breakdown dict of detached
    floats).
    """
    w = weights or LossWeights()
    p = params or SsimParams()
    xa, xb = _check_pair(x_a, x_b)
    fake = g_self(xa)
    rec = g_other(fake)
    cyc = cycle_loss(xa, rec, p, l1_weight=w.w_l1_in_cycle)
    sim = similarity_loss(xa, fake, p)
    # fake occupies slot 0; the generator wants slot 0 judged real
    slot0_real_probs = d_self(fake, xb)
    adv = torch.stack([cross_entropy(1.0, pr) for pr in slot0_real_probs]).mean()
    am = am_loss(target_label, classifier(fake))
    total = w.w_cycle * cyc + w.w_sim * sim + w.w_adv * adv + w.w_am * am
    breakdown = {
        "cycle": float(cyc.detach()),
        "sim": float(sim.detach()),
        "adv": float(adv.detach()),
        "am": float(am.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown
