"""The image transformation network: a residual conv generator with
instance normalization that stylizes an image in one forward pass.

Architecture (with the default config): a 9x9 conv to 32 channels, two
stride-2 3x3 convs to 64 and 128, five residual blocks at 128, two
nearest-neighbor x2 upsamplings back to 64/32, and a final 9x9 conv to 3
channels. Every conv except the output is followed by instance
normalization and ReLU; the output is bounded with a scaled tanh.

Archive format (``save_net``/``load_net``): a single .npz file whose keys are

    format_version            int64 scalar
    config                    JSON string of the TransformNetConfig
    param/<name>              float32 array per parameter

where ``<name>`` follows the module tree, e.g. ``encoder.0.conv.weight``,
``encoder.0.norm.gamma``, ``blocks.2.conv1.bias``, ``decoder.1.norm.beta``,
``output.conv.weight``. The scheme is stable so other implementations can
read the archives.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArchiveError, ArchiveVersionError, ConfigurationError, NumericalError
from .images import ImageTensor

ARCHIVE_FORMAT_VERSION = 1

PADDING_MODES = ("reflect", "replicate", "zeros")
UPSAMPLE_MODES = ("nearest", "transposed")


@dataclasses.dataclass(frozen=True)
class TransformNetConfig:
    """Shape and numeric settings of the generator.

    ``downsample_channels`` lists the encoder widths; each step after the
    first halves the resolution, so the net downsamples by
    ``2 ** (len(downsample_channels) - 1)`` overall.
    """

    downsample_channels: tuple[int, ...] = (32, 64, 128)
    num_residual_blocks: int = 5
    padding_mode: str = "reflect"
    upsample_mode: str = "nearest"
    in_epsilon: float = 1e-5

    def validate(self) -> None:
        ch = tuple(self.downsample_channels)
        if len(ch) < 2 or any(c <= 0 for c in ch):
            raise ConfigurationError(f"downsample_channels needs >=2 positive entries, got {ch}")
        if any(a >= b for a, b in zip(ch, ch[1:])):
            raise ConfigurationError(f"downsample_channels must be strictly increasing, got {ch}")
        if self.num_residual_blocks < 1:
            raise ConfigurationError(f"num_residual_blocks must be >= 1, got {self.num_residual_blocks}")
        if self.padding_mode not in PADDING_MODES:
            raise ConfigurationError(f"padding_mode must be one of {PADDING_MODES}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ConfigurationError(f"upsample_mode must be one of {UPSAMPLE_MODES}")
        if not self.in_epsilon > 0:
            raise ConfigurationError(f"in_epsilon must be > 0, got {self.in_epsilon}")

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(tuple(self.downsample_channels)) - 1)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["downsample_channels"] = list(self.downsample_channels)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TransformNetConfig":
        d = json.loads(text)
        d["downsample_channels"] = tuple(d["downsample_channels"])
        return cls(**d)


def instance_normalize(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
                       epsilon: float) -> torch.Tensor:
    """Normalize each (instance, channel) slice over its spatial dims.

    output = gamma_c * (x - mean) / sqrt(var + epsilon) + beta_c, with mean
    and variance taken per batch element and channel, so the result does not
    depend on the other images in the batch.
    """
    if x.dim() != 4:
        raise ValueError(f"expected a 4-D activation, got {x.dim()}-D")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError(
            f"gamma/beta must have shape ({c},), got {tuple(gamma.shape)} and {tuple(beta.shape)}")
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be > 0, got {epsilon}")
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
    normalized = (x - mean) / torch.sqrt(var + epsilon)
    return normalized * gamma.view(1, c, 1, 1) + beta.view(1, c, 1, 1)


class InstanceNorm(nn.Module):
    """Per-instance normalization with learnable scale/shift."""

    def __init__(self, channels: int, epsilon: float = 1e-5):
        super().__init__()
        self.epsilon = epsilon
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return instance_normalize(x, self.gamma, self.beta, self.epsilon)


class _Conv(nn.Module):
    """Conv with explicit same-ish padding (reflect by default)."""

    def __init__(self, in_ch, out_ch, kernel, stride, padding_mode):
        super().__init__()
        self.pad = kernel // 2
        self.pad_mode = "constant" if padding_mode == "zeros" else padding_mode
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=0)

    def forward(self, x):
        if self.pad:
            x = F.pad(x, [self.pad] * 4, mode=self.pad_mode)
        return self.conv(x)


class _ConvNormRelu(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride, cfg: TransformNetConfig):
        super().__init__()
        self.conv = _Conv(in_ch, out_ch, kernel, stride, cfg.padding_mode)
        self.norm = InstanceNorm(out_ch, cfg.in_epsilon)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class _ResidualBlock(nn.Module):
    def __init__(self, channels, cfg: TransformNetConfig):
        super().__init__()
        self.conv1 = _Conv(channels, channels, 3, 1, cfg.padding_mode)
        self.norm1 = InstanceNorm(channels, cfg.in_epsilon)
        self.conv2 = _Conv(channels, channels, 3, 1, cfg.padding_mode)
        self.norm2 = InstanceNorm(channels, cfg.in_epsilon)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return x + y


class _Upsample(nn.Module):
    def __init__(self, in_ch, out_ch, cfg: TransformNetConfig):
        super().__init__()
        self.mode = cfg.upsample_mode
        if self.mode == "transposed":
            self.conv = nn.ConvTranspose2d(in_ch, out_ch, 3, stride=2, padding=1, output_padding=1)
        else:
            self.conv = _Conv(in_ch, out_ch, 3, 1, cfg.padding_mode)
        self.norm = InstanceNorm(out_ch, cfg.in_epsilon)

    def forward(self, x):
        if self.mode == "nearest":
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.relu(self.norm(self.conv(x)))


class _OutputConv(nn.Module):
    def __init__(self, in_ch, cfg: TransformNetConfig):
        super().__init__()
        self.conv = _Conv(in_ch, 3, 9, 1, cfg.padding_mode)

    def forward(self, x):
        # scaled tanh keeps the output inside [0, 1]
        return (torch.tanh(self.conv(x)) + 1.0) / 2.0


class TransformNet(nn.Module):
    """The stylization generator. Frozen (eval-mode) nets are safe for
    concurrent forward passes; parameter mutation is single-writer."""

    def __init__(self, config: TransformNetConfig | None = None):
        super().__init__()
        cfg = config or TransformNetConfig()
        cfg.validate()
        self.config = cfg
        ch = tuple(cfg.downsample_channels)

        encoder = [_ConvNormRelu(3, ch[0], 9, 1, cfg)]
        encoder += [_ConvNormRelu(a, b, 3, 2, cfg) for a, b in zip(ch, ch[1:])]
        self.encoder = nn.Sequential(*encoder)
        self.blocks = nn.Sequential(*[_ResidualBlock(ch[-1], cfg)
                                      for _ in range(cfg.num_residual_blocks)])
        rev = ch[::-1]
        self.decoder = nn.Sequential(*[_Upsample(a, b, cfg) for a, b in zip(rev, rev[1:])])
        self.output = _OutputConv(ch[0], cfg)

    def forward(self, image: ImageTensor) -> ImageTensor:
        if image.channels != 3:
            raise ValueError(f"expected 3-channel input, got {image.channels}")
        if image.height < 16 or image.width < 16:
            raise ValueError(f"input must be at least 16x16, got {image.height}x{image.width}")
        x = image.unit().data
        h, w = x.shape[2], x.shape[3]

        # pad up to the downsampling multiple, crop back afterwards
        m = self.config.downsample_factor
        ph, pw = (-h) % m, (-w) % m
        if ph or pw:
            x = F.pad(x, [0, pw, 0, ph], mode="reflect")

        x = self._checked(self.encoder(x), "encoder")
        x = self._checked(self.blocks(x), "residual blocks")
        x = self._checked(self.decoder(x), "decoder")
        x = self._checked(self.output(x), "output conv")

        if ph or pw:
            x = x[:, :, :h, :w]
        out = ImageTensor(x, "unit")
        return out if image.value_range == "unit" else out.byte_range()

    @staticmethod
    def _checked(x: torch.Tensor, stage: str) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise NumericalError(f"non-finite activations after {stage}")
        return x


def init_transform_net(config: TransformNetConfig | None = None, seed: int = 0) -> TransformNet:
    """Build a net with fan-in-scaled random conv weights; IN layers start
    as identity (gamma=1, beta=0). Bit-deterministic for a given seed."""
    net = TransformNet(config)
    gen = torch.Generator().manual_seed(seed)
    for name, p in net.named_parameters():
        with torch.no_grad():
            if name.endswith(".weight") and p.dim() == 4:
                owner = net.get_submodule(name.rsplit(".", 1)[0])
                if isinstance(owner, nn.ConvTranspose2d):
                    # transposed conv weight is (in, out, kh, kw)
                    fan_in = p.shape[0] * p.shape[2] * p.shape[3]
                else:
                    fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                std = (2.0 / fan_in) ** 0.5
                p.copy_(torch.randn(p.shape, generator=gen) * std)
            elif name.endswith(".bias"):
                p.zero_()
            elif name.endswith(".gamma"):
                p.fill_(1.0)
            elif name.endswith(".beta"):
                p.zero_()
            else:
                raise ConfigurationError(f"unexpected parameter {name}")
    return net


def parameter_count(config: TransformNetConfig) -> int:
    """Number of parameters implied by a config (without building the net)."""
    ch = tuple(config.downsample_channels)
    n = 0
    conv = lambda i, o, k: i * o * k * k + o
    norm = lambda c: 2 * c
    n += conv(3, ch[0], 9) + norm(ch[0])
    for a, b in zip(ch, ch[1:]):
        n += conv(a, b, 3) + norm(b)
    n += config.num_residual_blocks * 2 * (conv(ch[-1], ch[-1], 3) + norm(ch[-1]))
    rev = ch[::-1]
    for a, b in zip(rev, rev[1:]):
        n += conv(a, b, 3) + norm(b)
    n += conv(ch[0], 3, 9)
    return n


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameters (and buffers) in name order; used to
    verify that frozen networks stay frozen."""
    h = hashlib.sha256()
    for name, t in sorted(list(module.named_parameters()) + list(module.named_buffers())):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_net(net: TransformNet, path) -> Path:
    """Write the single-file model archive described in the module docstring."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.int64(ARCHIVE_FORMAT_VERSION),
        "config": np.str_(net.config.to_json()),
    }
    for name, p in net.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())
    return path


def load_net(path) -> TransformNet:
    """Load a model archive; raises ArchiveError / ArchiveVersionError on a
    damaged file or an unsupported format version."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            if "format_version" not in data or "config" not in data:
                raise ArchiveError(f"{path} is not a model archive (missing header keys)")
            version = int(data["format_version"])
            if version != ARCHIVE_FORMAT_VERSION:
                raise ArchiveVersionError(
                    f"{path} has format version {version}, expected {ARCHIVE_FORMAT_VERSION}")
            config = TransformNetConfig.from_json(str(data["config"]))
            net = TransformNet(config)
            state = {}
            for name, p in net.named_parameters():
                key = f"param/{name}"
                if key not in data:
                    raise ArchiveError(f"{path} is missing parameter {name}")
                arr = data[key]
                if tuple(arr.shape) != tuple(p.shape):
                    raise ArchiveError(
                        f"{path}: parameter {name} has shape {arr.shape}, expected {tuple(p.shape)}")
                state[name] = torch.from_numpy(arr.copy())
            net.load_state_dict(state)
    except (zipfile.BadZipFile, OSError, KeyError, ValueError) as exc:
        raise ArchiveError(f"cannot read model archive {path}: {exc}") from exc
    net.eval()
    return net
