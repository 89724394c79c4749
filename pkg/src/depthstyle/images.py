"""Batched image container and file IO used by every other module.

Images travel through the package as ``ImageTensor``: a 4-D float tensor in
channels-first layout (batch, channels, height, width) together with a
declared value range, either ``"unit"`` ([0, 1]) or ``"byte"`` ([0, 255]).
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import torch
from PIL import Image

VALUE_RANGES = ("unit", "byte")

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".webp")


@dataclasses.dataclass(frozen=True, eq=False)
class ImageTensor:
    """A batch of images plus the value range its numbers live in.

    Invariants checked on construction: 4-D floating tensor, 1 or 3
    channels, all values finite and inside the declared range.
    """

    data: torch.Tensor
    value_range: str = "unit"

    def __post_init__(self):
        if self.value_range not in VALUE_RANGES:
            raise ValueError(f"value_range must be one of {VALUE_RANGES}, got {self.value_range!r}")
        d = self.data
        if not isinstance(d, torch.Tensor) or d.dim() != 4:
            raise ValueError("ImageTensor.data must be a 4-D (N,C,H,W) tensor")
        if not d.is_floating_point():
            raise ValueError("ImageTensor.data must be a floating tensor")
        if d.shape[1] not in (1, 3):
            raise ValueError(f"ImageTensor must have 1 or 3 channels, got {d.shape[1]}")
        with torch.no_grad():
            if not torch.isfinite(d).all():
                raise ValueError("ImageTensor contains non-finite values")
            hi = 1.0 if self.value_range == "unit" else 255.0
            lo_v, hi_v = float(d.min()), float(d.max())
        # small slack for accumulated float error in resize/roundtrips
        if lo_v < -1e-4 * hi - 1e-6 or hi_v > hi * (1.0 + 1e-4):
            raise ValueError(f"values outside declared {self.value_range!r} range "
                             f"[{lo_v:.4g}, {hi_v:.4g}]")

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    def unit(self) -> "ImageTensor":
        """Return the same images in [0, 1]."""
        if self.value_range == "unit":
            return self
        return ImageTensor(self.data / 255.0, "unit")

    def byte_range(self) -> "ImageTensor":
        """Return the same images in [0, 255]."""
        if self.value_range == "byte":
            return self
        return ImageTensor(self.data * 255.0, "byte")

    def clamped(self) -> "ImageTensor":
        hi = 1.0 if self.value_range == "unit" else 255.0
        return ImageTensor(self.data.clamp(0.0, hi), self.value_range)

    def single(self, index: int = 0) -> "ImageTensor":
        """One batch element, kept 4-D."""
        return ImageTensor(self.data[index:index + 1], self.value_range)


def from_array(array: np.ndarray, value_range: str = "unit") -> ImageTensor:
    """Build an ImageTensor from an (H,W), (H,W,C) or (N,H,W,C) numpy array."""
    a = np.asarray(array, dtype=np.float32)
    if a.ndim == 2:
        a = a[None, None]
    elif a.ndim == 3:
        a = a.transpose(2, 0, 1)[None]
    elif a.ndim == 4:
        a = a.transpose(0, 3, 1, 2)
    else:
        raise ValueError(f"cannot interpret array of shape {array.shape} as images")
    return ImageTensor(torch.from_numpy(np.ascontiguousarray(a)), value_range)


def to_uint8(image: ImageTensor) -> np.ndarray:
    """Convert to (N,H,W,C) uint8, rounding half up."""
    d = image.unit().clamped().data.detach().cpu().numpy()
    return (d.transpose(0, 2, 3, 1) * 255.0 + 0.5).astype(np.uint8)


def to_pil(image: ImageTensor, index: int = 0) -> Image.Image:
    arr = to_uint8(image)[index]
    if arr.shape[2] == 1:
        return Image.fromarray(arr[:, :, 0], mode="L")
    return Image.fromarray(arr, mode="RGB")


def load_image(path, size: int | None = None, crop_square: bool = False) -> ImageTensor:
    """Load one image file as a unit-range RGB ImageTensor (batch of 1).

    With ``size`` the short side is resized to ``size`` (bicubic); with
    ``crop_square`` the result is additionally center-cropped to size x size.
    """
    with Image.open(path) as img:
        img = img.convert("RGB")
        if size is not None:
            img = resize_short_side(img, size)
            if crop_square:
                img = center_crop(img, size, size)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return from_array(arr, "unit")


def save_image(image: ImageTensor, path, index: int = 0) -> Path:
    """Write one batch element to an image file (format from the suffix)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_pil(image, index).save(path)
    return path


def resize_short_side(img: Image.Image, size: int) -> Image.Image:
    w, h = img.size
    if w <= h:
        new = (size, max(1, round(h * size / w)))
    else:
        new = (max(1, round(w * size / h)), size)
    return img.resize(new, Image.BICUBIC)


def center_crop(img: Image.Image, width: int, height: int) -> Image.Image:
    w, h = img.size
    left = (w - width) // 2
    top = (h - height) // 2
    return img.crop((left, top, left + width, top + height))


def resize_image(image: ImageTensor, height: int, width: int) -> ImageTensor:
    """Bicubic resize of a whole batch to (height, width)."""
    if (image.height, image.width) == (height, width):
        return image
    out = torch.nn.functional.interpolate(
        image.data, size=(height, width), mode="bicubic", align_corners=False, antialias=True)
    hi = 1.0 if image.value_range == "unit" else 255.0
    return ImageTensor(out.clamp(0.0, hi), image.value_range)


def list_image_files(root) -> list[Path]:
    """Image files directly under ``root``, sorted by name."""
    root = Path(root)
    return sorted(p for p in root.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
