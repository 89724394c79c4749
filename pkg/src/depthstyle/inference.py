"""Applying trained models to images and directories."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import torch

from .images import ImageTensor, list_image_files, load_image, resize_image, save_image
from .model import TransformNet, load_net

log = logging.getLogger(__name__)


@dataclasses.dataclass
class StylizeRequest:
    """A batch job: stylize one file or every image in a directory."""

    model_path: str
    input_path: str
    output_path: str
    output_format: str = "png"  # lossless default keeps metrics uncontaminated
    max_dim: int | None = None


def stylize(net: TransformNet, image: ImageTensor) -> ImageTensor:
    """One forward pass, gradient-free; output has the input's dims (the
    net pads to its downsampling multiple internally and crops back).
    Never mutates the model; safe to call concurrently on a frozen net."""
    if image.channels != 3:
        raise ValueError(f"expected a 3-channel image, got {image.channels}")
    if image.height < 16 or image.width < 16:
        raise ValueError(f"input must be at least 16x16, got {image.height}x{image.width}")
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            return net.forward(image)
    except RuntimeError as exc:
        if "alloc" in str(exc).lower() or "memory" in str(exc).lower():
            raise MemoryError(
                f"out of memory stylizing a {image.height}x{image.width} image; "
                f"rerun with a max-dimension limit (--max-dim)") from exc
        raise
    finally:
        if was_training:
            net.train()


def stylize_file(net: TransformNet, input_path, output_path, max_dim: int | None = None) -> Path:
    image = load_image(input_path)
    if max_dim is not None and max(image.height, image.width) > max_dim:
        scale = max_dim / max(image.height, image.width)
        image = resize_image(image, max(16, round(image.height * scale)),
                             max(16, round(image.width * scale)))
    out = stylize(net, image)
    return save_image(out, output_path)


@dataclasses.dataclass
class BatchReport:
    """Outcome of a batch job: output files written and per-file failures."""

    outputs: list[str] = dataclasses.field(default_factory=list)
    failures: dict[str, str] = dataclasses.field(default_factory=dict)
    total: int = 0

    @property
    def ok_count(self) -> int:
        return len(self.outputs)

    def summary(self) -> str:
        return f"{self.ok_count}/{self.total} images stylized" + (
            f", failures: {sorted(self.failures)}" if self.failures else "")


def stylize_batch(request: StylizeRequest) -> BatchReport:
    """Stylize a file or directory. Output filenames mirror the inputs
    (same stem, requested format) so reruns overwrite deterministically;
    per-file errors are collected in the report instead of aborting."""
    input_path = Path(request.input_path)
    output_path = Path(request.output_path)
    if not input_path.exists():
        raise FileNotFoundError(f"input {input_path} does not exist")

    net = load_net(request.model_path)
    report = BatchReport()
    if input_path.is_file():
        files = [input_path]
        out_for = lambda p: (output_path if output_path.suffix
                             else output_path / f"{p.stem}.{request.output_format}")
    else:
        files = list_image_files(input_path)
        out_for = lambda p: output_path / f"{p.stem}.{request.output_format}"
        if not files:
            log.warning("no images found under %s", input_path)

    report.total = len(files)
    for path in files:
        try:
            written = stylize_file(net, path, out_for(path), request.max_dim)
            report.outputs.append(str(written))
        except Exception as exc:
            report.failures[str(path)] = str(exc)
            log.warning("failed to stylize %s: %s", path, exc)
    return report
