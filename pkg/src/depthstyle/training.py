"""Dataset ingestion, total-loss assembly and the optimization loop.

One run trains one generator for one style image by minimizing

    content_weight * L_content + style_weight * L_style + depth_weight * L_depth

over batches of training images with Adam. The shipped default weights are
1e5 / 1e10 / 1e3 with learning rate 1e-3 and batch size 4 at 256x256.
The log records the three unweighted component losses and the weighted
total per interval (CSV, append-only), so weight sweeps stay comparable.

Determinism: the batch sequence is a pure function of (seed, iteration),
the generator init is seeded, and the frozen backbones never change, so
two runs with the same config reproduce the same loss trajectory and a
resumed run continues exactly where the checkpoint left off.
"""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import time
import zipfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import depth as depth_mod
from . import perceptual
from .errors import ArchiveError, ArchiveVersionError, ConfigurationError, NumericalError, SetupError
from .images import ImageTensor, center_crop, list_image_files, load_image, resize_short_side
from .model import (ARCHIVE_FORMAT_VERSION, TransformNet, TransformNetConfig,
                    init_transform_net, save_net)

log = logging.getLogger(__name__)

FEATURE_BACKBONES = ("vgg16", "stub")
DEPTH_BACKENDS = ("midas", "blur")


@dataclasses.dataclass
class TrainConfig:
    """Everything one training run needs. The YAML/JSON config file read by
    the CLI mirrors these field names exactly."""

    style_image: str = ""
    dataset_root: str = ""
    image_size: int = 256
    batch_size: int = 4
    learning_rate: float = 1e-3
    content_weight: float = 1e5
    style_weight: float = 1e10
    depth_weight: float = 1e3
    iterations: int = 40_000  # ~2 epochs of an 80k-image set at batch 4
    seed: int = 0
    checkpoint_interval: int = 2_000
    log_interval: int = 1
    content_layer: str = perceptual.DEFAULT_CONTENT_LAYER
    style_layers: tuple[str, ...] = perceptual.DEFAULT_STYLE_LAYERS
    feature_backbone: str = "vgg16"
    feature_weights_path: str | None = None
    depth_backend: str = "midas"
    normalize_depth_maps: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999

    def validate(self) -> None:
        if self.content_weight < 0 or self.style_weight < 0 or self.depth_weight < 0:
            raise ConfigurationError("loss weights must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.image_size < 64:
            raise ConfigurationError(f"image_size must be >= 64, got {self.image_size}")
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {self.iterations}")
        if self.feature_backbone not in FEATURE_BACKBONES:
            raise ConfigurationError(f"feature_backbone must be one of {FEATURE_BACKBONES}")
        if self.depth_backend not in DEPTH_BACKENDS:
            raise ConfigurationError(f"depth_backend must be one of {DEPTH_BACKENDS}")

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["style_layers"] = list(self.style_layers)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {sorted(unknown)}")
        d = dict(d)
        if "style_layers" in d:
            d["style_layers"] = tuple(d["style_layers"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def total_loss(content_weight, style_weight, depth_weight, l_content, l_style, l_depth):
    """Weighted sum of the three component losses. Linear in every argument;
    a zero depth weight recovers the depth-free objective."""
    if content_weight < 0 or style_weight < 0 or depth_weight < 0:
        raise ConfigurationError("loss weights must be >= 0")
    return content_weight * l_content + style_weight * l_style + depth_weight * l_depth


class ImageFolderSource:
    """Deterministic batch source over a directory of images.

    Files that fail a header check are skipped up front (counted and
    logged); files that fail to decode later are skipped at load time, also
    counted. Each epoch is a seeded permutation of the good files, so the
    batch at a given iteration is a pure function of (seed, iteration) --
    which is what makes checkpoint resume exact.
    """

    def __init__(self, root, image_size: int = 256, seed: int = 0):
        self.root = Path(root)
        self.image_size = image_size
        self.seed = seed
        self.skip_count = 0
        self._cursor = 0
        if not self.root.is_dir():
            raise SetupError(f"dataset root {self.root} does not exist")
        candidates = list_image_files(self.root)
        self.files = []
        for path in candidates:
            try:
                with Image.open(path) as img:
                    img.verify()
                self.files.append(path)
            except Exception as exc:
                self.skip_count += 1
                log.warning("skipping unreadable image %s (%s)", path, exc)
        if not self.files:
            raise SetupError(f"no decodable images under {self.root}")

    def __len__(self) -> int:
        return len(self.files)

    def epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, epoch])
        return rng.permutation(len(self.files))

    def _stream_index(self, position: int) -> Path:
        epoch, offset = divmod(position, len(self.files))
        return self.files[self.epoch_order(epoch)[offset]]

    def load_one(self, path) -> torch.Tensor | None:
        try:
            with Image.open(path) as img:
                img = img.convert("RGB")
                img = resize_short_side(img, self.image_size)
                img = center_crop(img, self.image_size, self.image_size)
                arr = np.asarray(img, dtype=np.float32) / 255.0
            return torch.from_numpy(arr.transpose(2, 0, 1).copy())
        except Exception as exc:
            self.skip_count += 1
            log.warning("skipping undecodable image %s (%s)", path, exc)
            return None

    def batch_at(self, iteration: int, batch_size: int) -> ImageTensor:
        """The batch for a given iteration; stateless and reproducible."""
        position = iteration * batch_size
        tensors = []
        while len(tensors) < batch_size:
            t = self.load_one(self._stream_index(position))
            position += 1
            if t is not None:
                tensors.append(t)
        return ImageTensor(torch.stack(tensors), "unit")

    def next_batch(self, batch_size: int) -> ImageTensor:
        batch = self.batch_at(self._cursor, batch_size)
        self._cursor += 1
        return batch


def load_batch(source: ImageFolderSource, batch_size: int) -> ImageTensor:
    """Next batch from the source's internal cursor."""
    return source.next_batch(batch_size)


@dataclasses.dataclass
class LogRecord:
    iteration: int
    content: float
    style: float
    depth: float
    total: float
    seconds: float


class TrainingLog:
    """Append-only per-interval loss records, written straight to CSV."""

    FIELDS = ("iteration", "content", "style", "depth", "total", "seconds")

    def __init__(self, path=None):
        self.records: list[LogRecord] = []
        self._fh = None
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w")
            self._fh.write(",".join(self.FIELDS) + "\n")
            self._fh.flush()

    def append(self, record: LogRecord) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(f"{record.iteration},{record.content:.8g},{record.style:.8g},"
                           f"{record.depth:.8g},{record.total:.8g},{record.seconds:.3f}\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def smoothed(self, name: str, window: int = 10) -> np.ndarray:
        """Trailing-window means; entry i averages records [i-window+1, i]."""
        col = self.column(name)
        if len(col) == 0:
            return col
        kernel = np.ones(min(window, len(col))) / min(window, len(col))
        return np.convolve(col, kernel, mode="valid")

    @classmethod
    def from_csv(cls, path) -> "TrainingLog":
        out = cls()
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header != list(cls.FIELDS):
                raise ValueError(f"unexpected log header {header}")
            for line in fh:
                vals = line.strip().split(",")
                out.records.append(LogRecord(int(vals[0]), *(float(v) for v in vals[1:])))
        return out


def build_feature_extractor(config: TrainConfig) -> perceptual.FeatureExtractor:
    if config.feature_backbone == "stub":
        return perceptual.stub_extractor()
    return perceptual.vgg16_extractor(weights_path=config.feature_weights_path)


def build_depth_estimator(config: TrainConfig) -> depth_mod.DepthEstimator:
    return depth_mod.depth_backend(config.depth_backend)


CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path, net: TransformNet, optimizer: torch.optim.Adam,
                    iteration: int, config: TrainConfig, stats: dict | None = None) -> Path:
    """Single-file training checkpoint: model params, Adam state, iteration
    counter, loss statistics and the full config snapshot."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.int64(CHECKPOINT_FORMAT_VERSION),
        "model_format_version": np.int64(ARCHIVE_FORMAT_VERSION),
        "iteration": np.int64(iteration),
        "train_config": np.str_(config.to_json()),
        "model_config": np.str_(net.config.to_json()),
        "stats": np.str_(json.dumps(stats or {})),
    }
    for name, p in net.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
    param_names = [name for name, _ in net.named_parameters()]
    state = optimizer.state_dict()["state"]
    for idx, name in enumerate(param_names):
        if idx in state:
            arrays[f"adam/{name}/step"] = np.float64(float(state[idx]["step"]))
            arrays[f"adam/{name}/exp_avg"] = state[idx]["exp_avg"].cpu().numpy()
            arrays[f"adam/{name}/exp_avg_sq"] = state[idx]["exp_avg_sq"].cpu().numpy()
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path) -> dict:
    """Restore a checkpoint into {net, iteration, config, stats, adam_state}."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            if "format_version" not in data:
                raise ArchiveError(f"{path} is not a training checkpoint")
            version = int(data["format_version"])
            if version != CHECKPOINT_FORMAT_VERSION:
                raise ArchiveVersionError(
                    f"{path} has checkpoint version {version}, expected {CHECKPOINT_FORMAT_VERSION}")
            config = TrainConfig.from_json(str(data["train_config"]))
            net = TransformNet(TransformNetConfig.from_json(str(data["model_config"])))
            state = {}
            for name, p in net.named_parameters():
                arr = data[f"param/{name}"]
                state[name] = torch.from_numpy(arr.copy())
            net.load_state_dict(state)
            adam_state = {}
            for idx, (name, _) in enumerate(net.named_parameters()):
                key = f"adam/{name}/step"
                if key in data:
                    adam_state[idx] = {
                        "step": torch.tensor(float(data[key])),
                        "exp_avg": torch.from_numpy(data[f"adam/{name}/exp_avg"].copy()),
                        "exp_avg_sq": torch.from_numpy(data[f"adam/{name}/exp_avg_sq"].copy()),
                    }
            return {
                "net": net,
                "iteration": int(data["iteration"]),
                "config": config,
                "stats": json.loads(str(data["stats"])),
                "adam_state": adam_state,
            }
    except (zipfile.BadZipFile, OSError, KeyError, ValueError) as exc:
        raise ArchiveError(f"cannot read checkpoint {path}: {exc}") from exc


def _restore_adam(optimizer: torch.optim.Adam, adam_state: dict) -> None:
    sd = optimizer.state_dict()
    sd["state"] = adam_state
    optimizer.load_state_dict(sd)


def train(config: TrainConfig, out_dir=None, resume_from=None,
          extractor=None, depth_estimator=None) -> tuple[TransformNet, TrainingLog]:
    """Run the optimization loop; returns the trained net and its log.

    With ``out_dir`` the run writes ``training_log.csv``, periodic
    ``checkpoint_######.npz`` files and a final ``model.npz``. Pass
    ``extractor``/``depth_estimator`` to reuse already-built backbones
    (they must match the config's choices); otherwise they are built from
    the config. A non-finite loss aborts with the last checkpoint intact.
    """
    config.validate()
    if not Path(config.style_image).is_file():
        raise SetupError(f"style image {config.style_image!r} not found")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    extractor = extractor or build_feature_extractor(config)
    depth_estimator = depth_estimator or build_depth_estimator(config)
    source = ImageFolderSource(config.dataset_root, config.image_size, config.seed)

    torch.manual_seed(config.seed)
    start_iteration = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        net = ckpt["net"]
        start_iteration = ckpt["iteration"]
        optimizer = _make_optimizer(net, config)
        _restore_adam(optimizer, ckpt["adam_state"])
        log.info("resumed from %s at iteration %d", resume_from, start_iteration)
    else:
        net = init_transform_net(seed=config.seed)
        optimizer = _make_optimizer(net, config)
    net.train()

    style = _load_style_image(config)
    target = perceptual.style_target(extractor, style, config.style_layers)

    train_log = TrainingLog(out_dir / "training_log.csv" if out_dir else None)
    started = time.time()
    last_checkpoint = None
    for iteration in range(start_iteration, config.iterations):
        batch = source.batch_at(iteration, config.batch_size)
        optimizer.zero_grad()
        stylized = net.forward(batch)

        l_content = perceptual.content_loss(extractor, stylized, batch, config.content_layer)
        l_style = perceptual.style_loss_total(extractor, stylized, target)
        if config.depth_weight > 0:
            l_depth = depth_mod.depth_loss(depth_estimator, stylized, batch,
                                           config.normalize_depth_maps)
        else:
            with torch.no_grad():  # still recorded in the log, just unweighted
                l_depth = depth_mod.depth_loss(depth_estimator, stylized, batch,
                                               config.normalize_depth_maps)
        loss = total_loss(config.content_weight, config.style_weight, config.depth_weight,
                          l_content, l_style, l_depth)

        values = (l_content.item(), l_style.item(), l_depth.item(), loss.item())
        if not all(np.isfinite(v) for v in values):
            train_log.close()
            raise NumericalError(
                f"non-finite loss at iteration {iteration} "
                f"(content={values[0]:.4g}, style={values[1]:.4g}, depth={values[2]:.4g}); "
                f"last checkpoint: {last_checkpoint}")

        loss.backward()
        optimizer.step()

        done = iteration + 1
        if done % config.log_interval == 0 or done == config.iterations:
            train_log.append(LogRecord(done, *values, time.time() - started))
        if out_dir and (done % config.checkpoint_interval == 0 or done == config.iterations):
            last_checkpoint = save_checkpoint(
                out_dir / f"checkpoint_{done:06d}.npz", net, optimizer, done, config,
                stats={"last_total": values[3]})

    train_log.close()
    net.eval()
    if out_dir:
        save_net(net, out_dir / "model.npz")
    return net, train_log


def _make_optimizer(net: TransformNet, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=config.learning_rate,
                            betas=(config.adam_beta1, config.adam_beta2))


def _load_style_image(config: TrainConfig) -> ImageTensor:
    return load_image(config.style_image, size=config.image_size, crop_square=True)


@dataclasses.dataclass
class SweepPoint:
    depth_weight: float
    net: TransformNet
    log: TrainingLog
    summary: dict[str, float]


def sweep_depth_weight(config: TrainConfig, depth_weights, held_out_dir,
                       out_dir=None, extractor=None, depth_estimator=None) -> list[SweepPoint]:
    """Train one model per depth weight with otherwise identical config and
    seed; score each on a held-out set with the depth-map SSIM between
    content and stylized images. Results are sorted by ascending weight.
    """
    from .evaluation import depth_map_ssim
    from .inference import stylize

    weights = sorted(float(g) for g in depth_weights)
    if not weights:
        raise ValueError("depth_weights is empty")
    if any(g < 0 for g in weights):
        raise ConfigurationError("depth weights must be >= 0")

    held_out = list_image_files(held_out_dir)
    if not held_out:
        raise SetupError(f"no held-out images under {held_out_dir}")

    extractor = extractor or build_feature_extractor(config)
    depth_estimator = depth_estimator or build_depth_estimator(config)

    points = []
    for gamma in weights:
        cfg = dataclasses.replace(config, depth_weight=gamma)
        run_dir = Path(out_dir) / f"gamma_{gamma:g}" if out_dir else None
        net, train_log = train(cfg, out_dir=run_dir, extractor=extractor,
                               depth_estimator=depth_estimator)
        scores = []
        for path in held_out:
            content = load_image(path, size=config.image_size, crop_square=True)
            stylized = stylize(net, content)
            scores.append(depth_map_ssim(content, stylized, depth_estimator))
        tail = train_log.smoothed("style", window=10)
        summary = {
            "depth_weight": gamma,
            "depth_map_ssim_mean": float(np.mean(scores)),
            "final_style_loss": float(tail[-1]) if len(tail) else float("nan"),
            "final_total_loss": float(train_log.smoothed("total", window=10)[-1]),
            "held_out_images": float(len(scores)),
        }
        log.info("sweep point depth_weight=%g: depth-map SSIM %.4f",
                 gamma, summary["depth_map_ssim_mean"])
        points.append(SweepPoint(gamma, net, train_log, summary))
    return points
