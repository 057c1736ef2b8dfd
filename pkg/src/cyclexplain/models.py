"""Network definitions: the classifier under explanation, U-Net generators,
and pairwise multiscale patch discriminators, plus checkpoint I/O.

All networks operate on single-channel square images in [0, 1], passed as
(N, 1, S, S) tensors. Convolutions are 3x3 with "same" padding; leaky
rectifiers use slope 0.2.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class BuildError(ValueError):
    pass


class StateError(RuntimeError):
    """Operation requires a trained model/bundle."""


@dataclass
class ClassifierSpec:
    # (kernels, stride) per convolutional block
    blocks: list = field(default_factory=lambda: [(32, 1), (64, 2), (128, 2), (256, 2)])

    def __post_init__(self):
        if not self.blocks:
            raise BuildError("classifier needs at least one block")
        if any(s < 1 for _, s in self.blocks):
            raise BuildError("strides must be >= 1")


@dataclass
class GeneratorSpec:
    depth: int = 3
    convs_per_stage: int = 3
    stage_kernels: list = field(default_factory=lambda: [48, 96, 192, 384])
    leaky_slope: float = 0.2

    def __post_init__(self):
        if len(self.stage_kernels) != self.depth + 1:
            raise BuildError(
                f"stage_kernels must have depth+1={self.depth + 1} entries, "
                f"got {len(self.stage_kernels)}"
            )


@dataclass
class DiscriminatorSpec:
    backbone: GeneratorSpec = field(default_factory=GeneratorSpec)
    tap_stages: tuple = (2, 3)

    def __post_init__(self):
        if not self.tap_stages:
            raise BuildError("at least one tap stage required")
        if max(self.tap_stages) > self.backbone.depth:
            raise BuildError(
                f"tap stage {max(self.tap_stages)} exceeds backbone depth "
                f"{self.backbone.depth}"
            )


def to_batch(x) -> torch.Tensor:
    """Coerce a single image or batch (numpy or tensor) to (N, 1, S, S)."""
    t = torch.as_tensor(np.asarray(x, dtype=np.float32)) \
        if not isinstance(x, torch.Tensor) else x.float()
    if t.dim() == 2:
        t = t.unsqueeze(0).unsqueeze(0)
    elif t.dim() == 3:
        t = t.unsqueeze(1)
    return t


class Classifier(nn.Module):
    """Strided-conv blocks with batch norm and ReLU, softmax pair head."""

    def __init__(self, spec: ClassifierSpec, input_size: int):
        super().__init__()
        n_stride2 = sum(1 for _, s in spec.blocks if s == 2)
        if input_size % (2 ** n_stride2) != 0:
            raise BuildError(
                f"input size {input_size} not divisible by {2 ** n_stride2}"
            )
        self.spec = spec
        self.input_size = input_size
        layers = []
        in_ch = 1
        size = input_size
        for kernels, stride in spec.blocks:
            layers += [
                nn.Conv2d(in_ch, kernels, 3, stride=stride, padding=1),
                nn.BatchNorm2d(kernels),
                nn.ReLU(inplace=True),
            ]
            in_ch = kernels
            size = (size + stride - 1) // stride
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_ch * size * size, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.features(x)
        logits = self.head(f.flatten(1))
        return F.softmax(logits, dim=1)

    def prob_positive(self, x) -> torch.Tensor:
        """Class-1 probability per image, shape (N,)."""
        return self.forward(to_batch(x))[:, 1]


class _ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride, slope):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm = nn.BatchNorm2d(out_ch)
        self.act = nn.LeakyReLU(slope, inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class _Encoder(nn.Module):
    """Generator encoder: stages of convs, stride-2 entry into deeper stages."""

    def __init__(self, spec: GeneratorSpec, max_stage: int | None = None):
        super().__init__()
        self.spec = spec
        last = max_stage if max_stage is not None else spec.depth
        self.stages = nn.ModuleList()
        in_ch = 1
        for stage in range(last + 1):
            convs = []
            for c in range(spec.convs_per_stage):
                stride = 2 if (stage > 0 and c == 0) else 1
                convs.append(_ConvBlock(in_ch, spec.stage_kernels[stage],
                                        stride, spec.leaky_slope))
                in_ch = spec.stage_kernels[stage]
            self.stages.append(nn.Sequential(*convs))

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class Generator(nn.Module):
    """U-Net with nearest-neighbor upsampling, skip connections, sigmoid head."""

    def __init__(self, spec: GeneratorSpec, input_size: int):
        super().__init__()
        if input_size % (2 ** spec.depth) != 0:
            raise BuildError(
                f"input size {input_size} not divisible by {2 ** spec.depth}"
            )
        self.spec = spec
        self.input_size = input_size
        self.encoder = _Encoder(spec)
        self.decoder = nn.ModuleList()
        for stage in range(spec.depth - 1, -1, -1):
            in_ch = spec.stage_kernels[stage + 1] + spec.stage_kernels[stage]
            convs = []
            for c in range(spec.convs_per_stage):
                convs.append(_ConvBlock(in_ch if c == 0 else spec.stage_kernels[stage],
                                        spec.stage_kernels[stage], 1,
                                        spec.leaky_slope))
            self.decoder.append(nn.Sequential(*convs))
        self.out_conv = nn.Conv2d(spec.stage_kernels[0], 1, 1)

    def forward(self, x):
        single = x.dim() == 2
        xb = to_batch(x)
        feats = self.encoder(xb)
        h = feats[-1]
        for i, block in enumerate(self.decoder):
            stage = self.spec.depth - 1 - i
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, feats[stage]], dim=1))
        out = torch.sigmoid(self.out_conv(h))
        return out[0, 0] if single else out


class Discriminator(nn.Module):
    """Pairwise multiscale patch discriminator.

    A single shared encoder extracts features from both images of an ordered
    (slot 0, slot 1) pair. At each tap stage a scalar per-position head
    scores both concatenation orders and a softmax over the two scores gives
    the probability of each slot holding the real image, so swapping the
    inputs exactly swaps the probabilities and no dedicated real/fake neuron
    can emerge. `forward` returns the probability that slot 0 is real, one
    map per tap stage. `discriminate` additionally randomizes the slot order
    per patch position and returns the matching targets.
    """

    def __init__(self, spec: DiscriminatorSpec, input_size: int):
        super().__init__()
        if input_size % (2 ** spec.backbone.depth) != 0:
            raise BuildError(
                f"input size {input_size} not divisible by "
                f"{2 ** spec.backbone.depth}"
            )
        self.spec = spec
        self.input_size = input_size
        self.encoder = _Encoder(spec.backbone, max_stage=max(spec.tap_stages))
        self.heads = nn.ModuleDict()
        for stage in spec.tap_stages:
            ch = spec.backbone.stage_kernels[stage]
            self.heads[str(stage)] = nn.Conv2d(2 * ch, 1, 1)

    def _slot0_prob(self, f0, f1, stage):
        head = self.heads[str(stage)]
        logit0 = head(torch.cat([f0, f1], dim=1))
        logit1 = head(torch.cat([f1, f0], dim=1))
        return F.softmax(torch.cat([logit0, logit1], dim=1), dim=1)[:, 0]

    def forward(self, img0, img1):
        b0, b1 = to_batch(img0), to_batch(img1)
        if b0.shape != b1.shape:
            raise BuildError(
                f"pair shape mismatch: {tuple(b0.shape)} vs {tuple(b1.shape)}"
            )
        feats0 = self.encoder(b0)
        feats1 = self.encoder(b1)
        return [self._slot0_prob(feats0[stage], feats1[stage], stage)
                for stage in self.spec.tap_stages]

    def discriminate(self, real, fake, rng: torch.Generator):
        """Randomized-slot forward for discriminator training.

        Returns one (prob_slot0_real, target) pair per tap stage, where the
        per-position slot order is shuffled and target is 1 at positions
        whose presented slot 0 held the real image.
        """
        br, bf = to_batch(real), to_batch(fake)
        n = br.shape[0]
        feats_r = self.encoder(br)
        feats_f = self.encoder(bf)
        out = []
        for stage in self.spec.tap_stages:
            size = self.input_size // (2 ** stage)
            mask = torch.randint(0, 2, (n, size, size), generator=rng)
            m = mask.to(br.dtype).unsqueeze(1)
            f0 = feats_r[stage] * (1 - m) + feats_f[stage] * m
            f1 = feats_f[stage] * (1 - m) + feats_r[stage] * m
            p0 = self._slot0_prob(f0, f1, stage)
            target = 1.0 - mask.to(p0.dtype)  # slot 0 real where not swapped
            out.append((p0, target))
        return out


def _seed_everything(seed: int):
    torch.manual_seed(seed)


def build_classifier(spec: ClassifierSpec, input_size: int, seed: int) -> Classifier:
    _seed_everything(seed)
    model = Classifier(spec, input_size)
    model.eval()
    return model


def build_generator(spec: GeneratorSpec, input_size: int, seed: int) -> Generator:
    _seed_everything(seed)
    model = Generator(spec, input_size)
    model.eval()
    return model


def build_discriminator(spec: DiscriminatorSpec, input_size: int,
                        seed: int) -> Discriminator:
    _seed_everything(seed)
    model = Discriminator(spec, input_size)
    model.eval()
    return model


def classify(classifier: Classifier, x) -> float:
    """Class-1 probability for a single image, inference mode."""
    classifier.eval()
    with torch.no_grad():
        return float(classifier.prob_positive(to_batch(x))[0])


def freeze(model: nn.Module) -> nn.Module:
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    return model


def parameter_checksum(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class ExplainerBundle:
    classifier: Classifier
    g_plus: Generator
    g_minus: Generator
    d_plus: Discriminator
    d_minus: Discriminator
    seed: int = 0
    trained: bool = False

    def __post_init__(self):
        sizes = {
            self.classifier.input_size,
            self.g_plus.input_size, self.g_minus.input_size,
            self.d_plus.input_size, self.d_minus.input_size,
        }
        if len(sizes) != 1:
            raise BuildError(f"networks disagree on input size: {sorted(sizes)}")
        freeze(self.classifier)
        self._classifier_checksum = parameter_checksum(self.classifier)

    @property
    def input_size(self) -> int:
        return self.classifier.input_size

    def config_fingerprint(self) -> str:
        payload = json.dumps({
            "classifier": asdict(self.classifier.spec),
            "generator": asdict(self.g_plus.spec),
            "discriminator": asdict(self.d_plus.spec),
            "input_size": self.input_size,
            "seed": self.seed,
        }, sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def verify_classifier_frozen(self) -> bool:
        return parameter_checksum(self.classifier) == self._classifier_checksum

    def require_trained(self):
        if not self.trained:
            raise StateError("explainer bundle has not been trained")


def build_bundle(classifier: Classifier, gen_spec: GeneratorSpec,
                 disc_spec: DiscriminatorSpec, seed: int) -> ExplainerBundle:
    size = classifier.input_size
    return ExplainerBundle(
        classifier=classifier,
        g_plus=build_generator(gen_spec, size, seed),
        g_minus=build_generator(gen_spec, size, seed + 1),
        d_plus=build_discriminator(disc_spec, size, seed + 2),
        d_minus=build_discriminator(disc_spec, size, seed + 3),
        seed=seed,
    )


def save_classifier(classifier: Classifier, path, seed: int = 0) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(classifier.state_dict(), tmp)
    tmp.replace(path)
    sidecar = {
        "classifier_spec": asdict(classifier.spec),
        "input_size": classifier.input_size,
        "seed": seed,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2, default=list))


def load_classifier(path) -> Classifier:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    spec = ClassifierSpec(blocks=[tuple(b) for b in meta["classifier_spec"]["blocks"]])
    model = build_classifier(spec, meta["input_size"], meta["seed"])
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.eval()
    return model


def save_bundle(bundle: ExplainerBundle, path) -> None:
    """Checkpoint: torch state dicts plus a JSON sidecar with specs and seed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save({
        "classifier": bundle.classifier.state_dict(),
        "g_plus": bundle.g_plus.state_dict(),
        "g_minus": bundle.g_minus.state_dict(),
        "d_plus": bundle.d_plus.state_dict(),
        "d_minus": bundle.d_minus.state_dict(),
    }, tmp)
    tmp.replace(path)
    sidecar = {
        "classifier_spec": asdict(bundle.classifier.spec),
        "generator_spec": asdict(bundle.g_plus.spec),
        "discriminator_spec": asdict(bundle.d_plus.spec),
        "input_size": bundle.input_size,
        "seed": bundle.seed,
        "trained": bundle.trained,
        "fingerprint": bundle.config_fingerprint(),
    }
    side_path = path.with_suffix(path.suffix + ".json")
    tmp_side = side_path.with_suffix(".tmp")
    tmp_side.write_text(json.dumps(sidecar, sort_keys=True, indent=2, default=list))
    tmp_side.replace(side_path)


def load_bundle(path) -> ExplainerBundle:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    cspec = ClassifierSpec(blocks=[tuple(b) for b in meta["classifier_spec"]["blocks"]])
    gmeta = dict(meta["generator_spec"])
    gspec = GeneratorSpec(**gmeta)
    dmeta = dict(meta["discriminator_spec"])
    dspec = DiscriminatorSpec(backbone=GeneratorSpec(**dmeta["backbone"]),
                              tap_stages=tuple(dmeta["tap_stages"]))
    size, seed = meta["input_size"], meta["seed"]
    bundle = ExplainerBundle(
        classifier=build_classifier(cspec, size, seed),
        g_plus=build_generator(gspec, size, seed),
        g_minus=build_generator(gspec, size, seed + 1),
        d_plus=build_discriminator(dspec, size, seed + 2),
        d_minus=build_discriminator(dspec, size, seed + 3),
        seed=seed,
    )
    state = torch.load(path, map_location="cpu", weights_only=True)
    bundle.classifier.load_state_dict(state["classifier"])
    bundle.g_plus.load_state_dict(state["g_plus"])
    bundle.g_minus.load_state_dict(state["g_minus"])
    bundle.d_plus.load_state_dict(state["d_plus"])
    bundle.d_minus.load_state_dict(state["d_minus"])
    bundle.trained = meta["trained"]
    bundle._classifier_checksum = parameter_checksum(bundle.classifier)
    return bundle
