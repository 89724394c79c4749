"""Frozen classification backbone and the feature-space losses.

The content loss is the squared Euclidean distance between backbone
activations of the two images at one layer, divided by that layer's
C*H*W. The style representation is the channel Gram matrix of an
activation (also 1/(C*H*W)-normalized); the per-layer style loss is the
squared Frobenius norm between Gram matrices, summed over a configured
layer set. Losses are averaged over the batch so loss weights do not
depend on batch size.

Two backbones ship: the VGG-16 feature stack (pretrained weights are an
external asset, see ``VGG16_WEIGHTS_URL``) and a tiny seeded random stack
with the same tap names, used by the tests and by desk-scale training runs
in environments without the pretrained asset.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import torch
from torch import nn

from .errors import ConfigurationError, SetupError
from .images import ImageTensor

# normalization constants published with the backbone weights
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

VGG16_WEIGHTS_URL = "https://download.pytorch.org/models/vgg16-397923af.pth"
# torchvision convention: the filename tag is the first 8 hex chars of the
# file's SHA-256, verified on load
VGG16_WEIGHTS_SHA256_PREFIX = "397923af"

# indices of the ReLU outputs inside the VGG-16 feature stack
VGG16_TAPS = {
    "relu1_1": 1, "relu1_2": 3,
    "relu2_1": 6, "relu2_2": 8,
    "relu3_1": 11, "relu3_2": 13, "relu3_3": 15,
    "relu4_1": 18, "relu4_2": 20, "relu4_3": 22,
    "relu5_1": 25, "relu5_2": 27, "relu5_3": 29,
}

DEFAULT_CONTENT_LAYER = "relu2_2"
DEFAULT_STYLE_LAYERS = ("relu1_2", "relu2_2", "relu3_3", "relu4_3")


class FeatureExtractor:
    """A frozen backbone with named activation taps.

    Immutable after construction and safe for concurrent readers; inputs
    are unit-range images, normalized with the backbone's mean/std before
    the forward pass.
    """

    def __init__(self, backbone: nn.Sequential, taps: dict[str, int],
                 mean=IMAGENET_MEAN, std=IMAGENET_STD,
                 tap_gains: dict[str, float] | None = None):
        backbone.eval()
        for p in backbone.parameters():
            p.requires_grad_(False)
        self._backbone = backbone
        self._taps = dict(taps)
        self._tap_gains = dict(tap_gains) if tap_gains else {}
        dtype = next(backbone.parameters()).dtype
        self._mean = torch.tensor(mean, dtype=dtype).view(1, 3, 1, 1)
        self._std = torch.tensor(std, dtype=dtype).view(1, 3, 1, 1)

    @property
    def tap_names(self) -> tuple[str, ...]:
        return tuple(self._taps)

    @property
    def backbone(self) -> nn.Sequential:
        return self._backbone

    def preprocess(self, image: ImageTensor) -> torch.Tensor:
        x = image.unit().data
        if x.shape[1] != 3:
            raise ValueError(f"backbone expects 3-channel input, got {x.shape[1]}")
        return (x - self._mean.to(x.dtype)) / self._std.to(x.dtype)

    def extract(self, image: ImageTensor, taps) -> dict[str, torch.Tensor]:
        """Activations at the requested taps, keyed by tap name."""
        taps = list(taps)
        unknown = [t for t in taps if t not in self._taps]
        if unknown:
            raise ConfigurationError(f"unknown tap(s) {unknown}; available: {self.tap_names}")
        if not taps:
            return {}
        wanted = {self._taps[t]: t for t in taps}
        last = max(wanted)
        out = {}
        x = self.preprocess(image)
        for i, layer in enumerate(self._backbone):
            x = layer(x)
            if i in wanted:
                name = wanted[i]
                gain = self._tap_gains.get(name)
                out[name] = x * gain if gain is not None else x
            if i == last:
                break
        return out


def extract_features(extractor: FeatureExtractor, image: ImageTensor, taps) -> dict[str, torch.Tensor]:
    return extractor.extract(image, taps)


def vgg16_extractor(weights_path=None, pretrained: bool = True) -> FeatureExtractor:
    """The published 16-layer classification backbone.

    ``weights_path`` points at a local copy of the weight file; when omitted
    the torchvision cache is used. With ``pretrained=False`` the stack is
    randomly initialized (architecture-only, useful for shape tests).
    """
    from torchvision.models import vgg16

    features = vgg16(weights=None).features
    if pretrained:
        path = Path(weights_path) if weights_path else _default_vgg16_cache_path()
        if not path.is_file():
            raise SetupError(
                f"VGG-16 weights not found at {path}. Download them with\n"
                f"    curl -L -o {path} {VGG16_WEIGHTS_URL}\n"
                f"(SHA-256 must start with {VGG16_WEIGHTS_SHA256_PREFIX}) or pass weights_path=."
            )
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if not digest.startswith(VGG16_WEIGHTS_SHA256_PREFIX):
            raise SetupError(
                f"checksum mismatch for {path}: sha256 {digest[:8]}..., "
                f"expected prefix {VGG16_WEIGHTS_SHA256_PREFIX}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        features.load_state_dict(
            {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")})
    return FeatureExtractor(features, VGG16_TAPS)


def _default_vgg16_cache_path() -> Path:
    hub = Path(torch.hub.get_dir()) / "checkpoints"
    return hub / VGG16_WEIGHTS_URL.rsplit("/", 1)[-1]


# widths of the stub stages, and per-tap output gains tuned so the shipped
# loss weights (1e5 / 1e10 / 1e3) give the weighted content/style/depth
# terms a balance comparable to what the published backbone's layer scales
# give them
STUB_STAGE_CHANNELS = (8, 12, 16, 24)
STUB_TAP_GAINS = {
    "relu1_1": 0.04, "relu1_2": 0.04,
    "relu2_1": 0.04, "relu2_2": 0.04,
    "relu3_1": 0.035, "relu3_2": 0.035, "relu3_3": 0.035,
    "relu4_1": 0.015, "relu4_2": 0.015, "relu4_3": 0.015,
}


def stub_extractor(seed: int = 0, dtype: torch.dtype = torch.float32,
                   smooth: bool = False) -> FeatureExtractor:
    """A tiny frozen random backbone with the same tap interface.

    Mirrors the real backbone's block layout (2+2+3+3 convs with 2x pooling
    between blocks) at small widths, deterministically initialized from the
    seed. Needs no downloaded asset.

    ``smooth=True`` swaps ReLU for softplus and max-pooling for average
    pooling. Finite-difference gradient checks need that variant: a central
    difference taken across a ReLU kink or a max-pool argmax switch does
    not estimate the derivative at the base point.
    """
    gen = torch.Generator().manual_seed(seed)
    layers: list[nn.Module] = []
    taps: dict[str, int] = {}
    in_ch = 3
    for block, (width, convs) in enumerate(zip(STUB_STAGE_CHANNELS, (2, 2, 3, 3)), start=1):
        for k in range(1, convs + 1):
            conv = nn.Conv2d(in_ch, width, 3, padding=1)
            with torch.no_grad():
                fan_in = in_ch * 9
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
            layers += [conv, nn.Softplus(beta=2.0) if smooth else nn.ReLU(inplace=False)]
            taps[f"relu{block}_{k}"] = len(layers) - 1
            in_ch = width
        if block < len(STUB_STAGE_CHANNELS):
            layers.append(nn.AvgPool2d(2) if smooth else nn.MaxPool2d(2))
    backbone = nn.Sequential(*layers).to(dtype)
    return FeatureExtractor(backbone, taps, tap_gains=STUB_TAP_GAINS)


def content_loss(extractor: FeatureExtractor, y_hat: ImageTensor, x: ImageTensor,
                 layer: str = DEFAULT_CONTENT_LAYER) -> torch.Tensor:
    """Feature-space squared distance at one layer, 1/(C*H*W)-normalized
    and averaged over the batch. Differentiable w.r.t. ``y_hat``."""
    if y_hat.data.shape != x.data.shape:
        raise ValueError(f"shape mismatch: {tuple(y_hat.data.shape)} vs {tuple(x.data.shape)}")
    f_hat = extractor.extract(y_hat, [layer])[layer]
    with torch.no_grad():
        f_x = extractor.extract(x, [layer])[layer]
    diff = f_hat - f_x.detach()
    return diff.pow(2).flatten(1).sum(dim=1).div(diff[0].numel()).mean()


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """Channel Gram matrices of a (N,C,H,W) activation, one C x C matrix per
    batch element, normalized by C*H*W."""
    if features.dim() != 4:
        raise ValueError(f"expected a 4-D activation, got {features.dim()}-D")
    n, c, h, w = features.shape
    flat = features.reshape(n, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def style_loss_layer(gram_yhat: torch.Tensor, gram_y: torch.Tensor) -> torch.Tensor:
    """Squared Frobenius norm between Gram matrices, batch-averaged.
    A (1,C,C) target broadcasts against a batched first argument."""
    if gram_yhat.dim() != 3 or gram_y.dim() != 3:
        raise ValueError("expected (N,C,C) Gram matrices")
    if gram_yhat.shape[1:] != gram_y.shape[1:]:
        raise ValueError(f"Gram size mismatch: {tuple(gram_yhat.shape)} vs {tuple(gram_y.shape)}")
    if gram_y.shape[0] not in (1, gram_yhat.shape[0]):
        raise ValueError(f"batch mismatch: {gram_yhat.shape[0]} vs {gram_y.shape[0]}")
    diff = gram_yhat - gram_y
    return diff.pow(2).flatten(1).sum(dim=1).mean()


@dataclasses.dataclass(frozen=True, eq=False)
class StyleTarget:
    """Per-layer Gram matrices of one style image."""

    grams: dict[str, torch.Tensor]
    layers: tuple[str, ...]

    def __post_init__(self):
        if set(self.grams) != set(self.layers):
            raise ConfigurationError(
                f"target layers {sorted(self.grams)} do not match configured {sorted(self.layers)}")


def style_target(extractor: FeatureExtractor, style: ImageTensor,
                 layers=DEFAULT_STYLE_LAYERS) -> StyleTarget:
    layers = tuple(layers)
    with torch.no_grad():
        feats = extractor.extract(style, layers)
        grams = {name: gram_matrix(f) for name, f in feats.items()}
    return StyleTarget(grams=grams, layers=layers)


def style_loss_total(extractor: FeatureExtractor, y_hat: ImageTensor,
                     target: StyleTarget, layers=None) -> torch.Tensor:
    """Sum of per-layer style losses over the layer set. Differentiable
    w.r.t. ``y_hat``."""
    layers = tuple(layers) if layers is not None else target.layers
    missing = [l for l in layers if l not in target.grams]
    if missing:
        raise ConfigurationError(f"style target is missing layer(s) {missing}")
    feats = extractor.extract(y_hat, layers)
    total = None
    for name in layers:
        loss = style_loss_layer(gram_matrix(feats[name]), target.grams[name])
        total = loss if total is None else total + loss
    return total
