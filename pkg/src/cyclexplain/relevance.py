"""Signed relevance maps from a trained generator pair, and overlay rendering.

The relevance of an image x is the difference between its two counterfactuals:
R = G+(x) - G-(x), equivalently the difference of the per-class deltas.
Positive values mark regions pushed toward class 1 (rendered red), negative
toward class 0 (rendered blue).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .models import ExplainerBundle, classify

POSITIVE_COLOR = np.array([0.85, 0.10, 0.10])  # class-1-indicating, red
NEGATIVE_COLOR = np.array([0.10, 0.25, 0.90])  # class-0-indicating, blue


@dataclass
class RelevanceMap:
    delta_plus: np.ndarray
    delta_minus: np.ndarray
    relevance: np.ndarray
    source_id: str
    prob_before: float
    prob_plus: float
    prob_minus: float

    def __post_init__(self):
        shapes = {self.delta_plus.shape, self.delta_minus.shape,
                  self.relevance.shape}
        if len(shapes) != 1:
            raise ValueError(f"array shapes disagree: {shapes}")
        if np.abs(self.relevance - (self.delta_plus - self.delta_minus)).max() > 1e-6:
            raise ValueError("relevance != delta_plus - delta_minus")


def explain(bundle: ExplainerBundle, x, source_id: str = "") -> RelevanceMap:
    """Run both generators on x and assemble the signed relevance map."""
    bundle.require_trained()
    arr = np.asarray(x, dtype=np.float32)
    with torch.no_grad():
        xb = torch.as_tensor(arr).unsqueeze(0).unsqueeze(0)
        plus = bundle.g_plus(xb)[0, 0].numpy()
        minus = bundle.g_minus(xb)[0, 0].numpy()
    return RelevanceMap(
        delta_plus=plus - arr,
        delta_minus=minus - arr,
        relevance=plus - minus,
        source_id=source_id,
        prob_before=classify(bundle.classifier, arr),
        prob_plus=classify(bundle.classifier, plus),
        prob_minus=classify(bundle.classifier, minus),
    )


def auto_gain(relevance: np.ndarray) -> float:
    """Default display gain: 1 / 99th percentile of |R|."""
    p99 = float(np.percentile(np.abs(relevance), 99))
    return 1.0 / p99 if p99 > 0 else 1.0


def render_overlay(x, relevance, gain: float) -> np.ndarray:
    """Grayscale base with a diverging red/blue tint, alpha = clamp(|R|*gain).

    Returns an (H, W, 3) float array in [0, 1]; zero-relevance pixels stay
    pure grayscale.
    """
    base = np.asarray(x, dtype=np.float64)
    rel = np.asarray(relevance, dtype=np.float64)
    if base.shape != rel.shape:
        raise ValueError(f"shape mismatch: {base.shape} vs {rel.shape}")
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    alpha = np.clip(np.abs(rel) * gain, 0.0, 1.0)[..., None]
    color = np.where((rel > 0)[..., None], POSITIVE_COLOR, NEGATIVE_COLOR)
    gray = np.repeat(base[..., None], 3, axis=2)
    return (1.0 - alpha) * gray + alpha * color


def export_map(rmap: RelevanceMap, out_dir, base_image=None,
               gain: float | None = None) -> dict:
    """Write overlay PNG, raw float32 relevance + JSON sidecar, and the
    probability record. Returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = rmap.source_id or "relevance"
    g = auto_gain(rmap.relevance) if gain is None else gain

    if base_image is None:
        # reconstruct a neutral base from the counterfactual midpoint
        base_image = np.clip(
            (rmap.delta_plus + rmap.delta_minus) / 2 + 0.5, 0.0, 1.0)
    overlay = render_overlay(base_image, rmap.relevance, g)
    png_path = out_dir / f"{stem}_overlay.png"
    Image.fromarray((overlay * 255).round().astype(np.uint8)).save(png_path)

    raw_path = out_dir / f"{stem}_relevance.bin"
    rmap.relevance.astype("<f4").tofile(raw_path)
    h, w = rmap.relevance.shape
    sidecar = {"height": h, "width": w, "gain": g}
    sidecar_path = out_dir / f"{stem}_relevance.bin.json"
    sidecar_path.write_text(json.dumps(sidecar, sort_keys=True))

    probs_path = out_dir / f"{stem}_probs.json"
    probs_path.write_text(json.dumps({
        "source_id": rmap.source_id,
        "prob_before": rmap.prob_before,
        "prob_plus": rmap.prob_plus,
        "prob_minus": rmap.prob_minus,
    }, sort_keys=True))
    return {"overlay": png_path, "raw": raw_path, "sidecar": sidecar_path,
            "probs": probs_path}


def load_raw_map(raw_path) -> np.ndarray:
    raw_path = Path(raw_path)
    meta = json.loads((raw_path.parent / (raw_path.name + ".json")).read_text())
    flat = np.fromfile(raw_path, dtype="<f4")
    return flat.reshape(meta["height"], meta["width"])
