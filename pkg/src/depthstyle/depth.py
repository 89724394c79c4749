"""Frozen monocular depth backends and the depth reconstruction loss.

A depth estimator maps a 3-channel image batch to one relative
inverse-depth map per image (larger = closer, arbitrary per-image scale),
resized back to the input's spatial dims. The depth loss is the squared
distance between the estimator's responses on the two images, divided by
the map's H*W (single channel) and averaged over the batch.

Backends are pluggable behind ``DepthEstimator``. The production backend
wraps the MiDaS network (an external asset, see ``MIDAS_HUB_REPO``); the
hermetic ``BlurDepthEstimator`` is a deterministic differentiable proxy
(pooled, blurred luminance) used by the tests and by desk-scale runs.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigurationError, SetupError
from .images import ImageTensor

MIDAS_HUB_REPO = "intel-isl/MiDaS"
MIDAS_SMALL_WEIGHTS_URL = "https://github.com/isl-org/MiDaS/releases/download/v2_1/model-small.pt"


@dataclasses.dataclass(frozen=True, eq=False)
class DepthMap:
    """Relative inverse-depth predictions, one (H,W) map per batch element."""

    values: torch.Tensor  # (N, H, W)

    def __post_init__(self):
        if self.values.dim() != 3:
            raise ValueError(f"DepthMap.values must be (N,H,W), got {tuple(self.values.shape)}")
        with torch.no_grad():
            if not torch.isfinite(self.values).all():
                raise ValueError("DepthMap contains non-finite values")


class DepthEstimator:
    """Base class for frozen depth backends; immutable after construction
    and safe for concurrent readers."""

    def estimate(self, image: ImageTensor) -> DepthMap:
        raise NotImplementedError


def estimate_depth(estimator: DepthEstimator, image: ImageTensor) -> DepthMap:
    """One single-channel map per batch element, at the image's spatial dims."""
    if image.channels != 3:
        raise ValueError(f"depth estimation expects 3-channel images, got {image.channels}")
    return estimator.estimate(image)


class BlurDepthEstimator(DepthEstimator):
    """Deterministic differentiable depth proxy: luminance, average-pooled
    by ``pool`` and Gaussian-smoothed at the coarse scale, then upsampled
    back and scaled to [0, output_scale]. Linear in the input, so gradient
    checks against it are exact to finite-difference accuracy."""

    LUMA = (0.299, 0.587, 0.114)

    def __init__(self, pool: int = 8, output_scale: float = 80.0):
        if pool < 1:
            raise ConfigurationError(f"pool must be >= 1, got {pool}")
        self.pool = pool
        self.output_scale = output_scale
        # 5x5 binomial kernel
        k1 = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0])
        k2 = torch.outer(k1, k1)
        self._kernel = (k2 / k2.sum()).view(1, 1, 5, 5)

    def estimate(self, image: ImageTensor) -> DepthMap:
        x = image.unit().data
        h, w = x.shape[2], x.shape[3]
        if h < self.pool or w < self.pool:
            raise ValueError(f"image {h}x{w} smaller than pooling factor {self.pool}")
        weights = torch.tensor(self.LUMA, dtype=x.dtype).view(1, 3, 1, 1)
        lum = (x * weights).sum(dim=1, keepdim=True)
        d = F.avg_pool2d(lum, self.pool)
        kernel = self._kernel.to(x.dtype)
        d = F.conv2d(F.pad(d, [2, 2, 2, 2], mode="replicate"), kernel)
        d = F.interpolate(d, size=(h, w), mode="bilinear", align_corners=False)
        return DepthMap(d[:, 0] * self.output_scale)


class MidasDepthEstimator(DepthEstimator):
    """Wrapper around the MiDaS small model loaded through torch.hub.

    Needs the hub repo and the pretrained weights to be fetchable (or
    already cached under ``torch.hub.get_dir()``). Inputs are resized to the
    network's native resolution with a differentiable bilinear resize and
    normalized with the published mean/std; outputs are resized back to the
    image dims.
    """

    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, model_type: str = "MiDaS_small", input_size: int = 256,
                 expected_sha256: str | None = None):
        self.input_size = input_size
        try:
            self.model = torch.hub.load(MIDAS_HUB_REPO, model_type, trust_repo=True)
        except Exception as exc:
            raise SetupError(
                f"cannot load the MiDaS depth backend ({exc}).\n"
                f"Fetch it once on a machine with network access:\n"
                f"    python -c \"import torch; torch.hub.load('{MIDAS_HUB_REPO}', '{model_type}')\"\n"
                f"or download the weights from {MIDAS_SMALL_WEIGHTS_URL} into "
                f"{Path(torch.hub.get_dir()) / 'checkpoints'}, then retry. "
                f"Until then use the 'blur' backend."
            ) from exc
        if expected_sha256:
            import hashlib
            ckpt = Path(torch.hub.get_dir()) / "checkpoints" / MIDAS_SMALL_WEIGHTS_URL.rsplit("/", 1)[-1]
            if ckpt.is_file():
                digest = hashlib.sha256(ckpt.read_bytes()).hexdigest()
                if digest != expected_sha256:
                    raise SetupError(f"checksum mismatch for {ckpt}: {digest} != {expected_sha256}")
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    def estimate(self, image: ImageTensor) -> DepthMap:
        x = image.unit().data
        h, w = x.shape[2], x.shape[3]
        mean = torch.tensor(self.MEAN, dtype=x.dtype).view(1, 3, 1, 1)
        std = torch.tensor(self.STD, dtype=x.dtype).view(1, 3, 1, 1)
        resized = F.interpolate(x, size=(self.input_size, self.input_size),
                                mode="bilinear", align_corners=False)
        pred = self.model((resized - mean) / std)
        if pred.dim() == 3:
            pred = pred.unsqueeze(1)
        out = F.interpolate(pred, size=(h, w), mode="bilinear", align_corners=False)
        return DepthMap(out[:, 0])


_BACKENDS = {
    "blur": BlurDepthEstimator,
    "midas": MidasDepthEstimator,
}


def depth_backend(name: str, **kwargs) -> DepthEstimator:
    if name not in _BACKENDS:
        raise ConfigurationError(f"unknown depth backend {name!r}; available: {sorted(_BACKENDS)}")
    return _BACKENDS[name](**kwargs)


def depth_loss(estimator: DepthEstimator, y_hat: ImageTensor, x: ImageTensor,
               normalize_maps: bool = False) -> torch.Tensor:
    """Squared distance between depth responses, divided by the map size and
    averaged over the batch. Differentiable w.r.t. ``y_hat``.

    By default raw estimator responses are compared. ``normalize_maps``
    min-max rescales each map first — an experimental variant for backends
    whose output scale varies strongly per image.
    """
    if y_hat.data.shape != x.data.shape:
        raise ValueError(f"shape mismatch: {tuple(y_hat.data.shape)} vs {tuple(x.data.shape)}")
    d_hat = estimate_depth(estimator, y_hat).values
    with torch.no_grad():
        d_x = estimate_depth(estimator, x).values
    if normalize_maps:
        d_hat = _minmax(d_hat)
        d_x = _minmax(d_x)
    diff = d_hat - d_x.detach()
    return diff.pow(2).flatten(1).sum(dim=1).div(diff[0].numel()).mean()


def _minmax(maps: torch.Tensor) -> torch.Tensor:
    flat = maps.flatten(1)
    lo = flat.min(dim=1).values.view(-1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1)
    span = (hi - lo).clamp_min(1e-12)
    return (maps - lo) / span


def export_depth_png(depth: DepthMap, path, index: int = 0) -> Path:
    """Write one map as a 16-bit grayscale PNG, min-max mapped per image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = depth.values[index].detach().cpu().numpy().astype(np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo > 0:
        scaled = (values - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(values)
    arr = (scaled * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(arr).save(path)  # uint16 -> 16-bit grayscale
    return path
