"""Structure-preservation metrics and the comparison report pipeline.

Six similarity numbers are computed per (content, stylized) pair: SSIM,
histogram correlation, average-hash and difference-hash similarity on the
decolorized images, plus SSIM between the two images' depth maps and
between their saliency maps. ``compare_methods`` aggregates per-method
means over a manifest and exports them as CSV/JSON (schema is versioned).

Grayscale images here are plain 2-D float arrays in [0, 1].
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .depth import BlurDepthEstimator, DepthEstimator, estimate_depth
from .errors import ConfigurationError
from .images import ImageTensor, load_image, resize_image

REPORT_SCHEMA_VERSION = 1

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

METRIC_NAMES = ("ssim", "hist", "ahash_sim", "dhash_sim", "depth_ssim", "saliency_ssim")


def decolorize(image) -> np.ndarray:
    """Luminance conversion (0.299 R + 0.587 G + 0.114 B) to a 2-D [0,1]
    array. Accepts a single-image ImageTensor or an (H,W)/(H,W,3) array;
    grayscale inputs pass through unchanged."""
    if isinstance(image, ImageTensor):
        if image.batch_size != 1:
            raise ValueError(f"decolorize expects a single image, got batch of {image.batch_size}")
        arr = image.unit().data[0].detach().cpu().numpy().transpose(1, 2, 0)
    else:
        arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr.astype(np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[:, :, 0].astype(np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        w = np.asarray(LUMA_WEIGHTS)
        return (arr.astype(np.float64) @ w)
    raise ValueError(f"cannot decolorize array of shape {arr.shape}")


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean local structural similarity with a Gaussian window.

    The canonical parameterization: 11x11 window, sigma 1.5, stabilizers
    (k1*L)^2 and (k2*L)^2; returns a value in [-1, 1]. Constant images
    compare as 1.0 (the stabilizers prevent 0/0).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < window_size:
        raise ValueError(f"expected 2-D images of at least {window_size}x{window_size}, got {a.shape}")
    win = _gaussian_window(window_size, sigma)
    filt = lambda x: ndimage.correlate(x, win, mode="reflect")
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def hist_similarity(a: np.ndarray, b: np.ndarray, bins: int = 256) -> float:
    """Pearson correlation between the two normalized intensity histograms
    (256 bins over [0, 1]).

    Degenerate cases are defined, not errors: when either image is constant
    (all mass in one bin) or either histogram is perfectly flat (Pearson
    undefined), the result is 1.0 for identical histograms and 0.0 otherwise.
    """
    h_a = np.histogram(np.asarray(a, dtype=np.float64), bins=bins, range=(0.0, 1.0))[0]
    h_b = np.histogram(np.asarray(b, dtype=np.float64), bins=bins, range=(0.0, 1.0))[0]
    n_a = h_a / max(h_a.sum(), 1)
    n_b = h_b / max(h_b.sum(), 1)
    degenerate = (np.count_nonzero(h_a) <= 1 or np.count_nonzero(h_b) <= 1
                  or np.ptp(n_a) == 0 or np.ptp(n_b) == 0)
    if degenerate:
        return 1.0 if np.array_equal(n_a, n_b) else 0.0
    da = n_a - n_a.mean()
    db = n_b - n_b.mean()
    return float((da @ db) / np.sqrt((da @ da) * (db @ db)))


@dataclasses.dataclass(frozen=True)
class HashDigest:
    """64-bit perceptual hash plus the algorithm that produced it."""

    value: int
    algorithm: str

    def __post_init__(self):
        if not 0 <= self.value < (1 << 64):
            raise ValueError("hash value must fit in 64 bits")

    def bits(self) -> np.ndarray:
        return np.array([(self.value >> (63 - i)) & 1 for i in range(64)], dtype=np.uint8)


def _block_mean_resize(gray: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Area downsample onto an integer-boundary block partition: cell (r,c)
    is the mean of gray[H*r//rows : H*(r+1)//rows, W*c//cols : W*(c+1)//cols]."""
    h, w = gray.shape
    out = np.empty((rows, cols), dtype=np.float64)
    r_edges = [h * r // rows for r in range(rows + 1)]
    c_edges = [w * c // cols for c in range(cols + 1)]
    for r in range(rows):
        for c in range(cols):
            out[r, c] = gray[r_edges[r]:r_edges[r + 1], c_edges[c]:c_edges[c + 1]].mean()
    return out


def _pack_bits(bits: np.ndarray) -> int:
    # row-major, first bit is the most significant
    value = 0
    for bit in bits.ravel():
        value = (value << 1) | int(bit)
    return value


def _check_hash_input(gray: np.ndarray) -> np.ndarray:
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] < 9 or gray.shape[1] < 9:
        raise ValueError(f"hashing needs a 2-D image of at least 9x9, got {gray.shape}")
    return gray


def ahash(gray: np.ndarray) -> HashDigest:
    """Average hash: block-mean resize to 8x8, one bit per cell set when the
    cell strictly exceeds the 64-cell mean (so a constant image hashes to 0)."""
    small = _block_mean_resize(_check_hash_input(gray), 8, 8)
    bits = (small > small.mean()).astype(np.uint8)
    return HashDigest(_pack_bits(bits), "ahash")


def dhash(gray: np.ndarray) -> HashDigest:
    """Difference hash: block-mean resize to 8 rows x 9 columns, one bit per
    horizontally adjacent cell pair set when the left cell strictly exceeds
    the right one."""
    small = _block_mean_resize(_check_hash_input(gray), 8, 9)
    bits = (small[:, :-1] > small[:, 1:]).astype(np.uint8)
    return HashDigest(_pack_bits(bits), "dhash")


def hamming_distance(h1: HashDigest, h2: HashDigest) -> int:
    if h1.algorithm != h2.algorithm:
        raise ValueError(f"algorithm mismatch: {h1.algorithm} vs {h2.algorithm}")
    return int(bin(h1.value ^ h2.value).count("1"))


def hash_similarity(h1: HashDigest, h2: HashDigest) -> float:
    """1 - HammingDistance/64, in [0, 1] with higher meaning more similar."""
    return 1.0 - hamming_distance(h1, h2) / 64.0


def _spectral_residual(gray: np.ndarray, working_width: int = 64,
                       smooth_sigma: float = 2.5) -> np.ndarray:
    """Spectral-residual saliency: suppress the smooth part of the log
    amplitude spectrum, reconstruct with the original phase, square and
    smooth. Returned at the working resolution."""
    spectrum = np.fft.fft2(gray)
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    log_amp = np.log(amplitude + 1e-9)
    residual = log_amp - ndimage.uniform_filter(log_amp, size=3, mode="wrap")
    recon = np.fft.ifft2(np.exp(residual + 1j * phase))
    sal = np.abs(recon) ** 2
    return ndimage.gaussian_filter(sal, sigma=smooth_sigma, mode="reflect")


def _resize_gray(gray: np.ndarray, height: int, width: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(gray, dtype=np.float64))[None, None]
    out = torch.nn.functional.interpolate(t, size=(height, width), mode="bilinear",
                                          align_corners=False, antialias=True)
    return out[0, 0].numpy()


SALIENCY_BACKENDS = ("spectral_residual",)


def saliency(image, backend: str = "spectral_residual") -> np.ndarray:
    """Saliency map in [0, 1] at the input's dims. Deterministic per backend.

    The map is normalized by its maximum (rather than min-max stretched) so
    a near-constant response stays near-constant instead of being blown up
    to full range.
    """
    if backend not in SALIENCY_BACKENDS:
        raise ConfigurationError(f"unknown saliency backend {backend!r}; "
                                 f"available: {SALIENCY_BACKENDS}")
    gray = decolorize(image)
    h, w = gray.shape
    work_w = min(64, w)
    work_h = max(8, round(h * work_w / w))
    small = _resize_gray(gray, work_h, work_w)
    sal = _spectral_residual(small)
    sal = _resize_gray(sal, h, w)
    peak = sal.max()
    if peak > 0:
        sal = sal / peak
    return np.clip(sal, 0.0, 1.0)


def minmax_normalize(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi - lo == 0:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def depth_map_ssim(content: ImageTensor, stylized: ImageTensor,
                   estimator: DepthEstimator) -> float:
    """SSIM between the min-max-normalized depth maps of the two images."""
    d_c = estimate_depth(estimator, content).values[0].detach().cpu().numpy()
    d_s = estimate_depth(estimator, stylized).values[0].detach().cpu().numpy()
    return ssim(minmax_normalize(d_c), minmax_normalize(d_s))


def saliency_map_ssim(content: ImageTensor, stylized: ImageTensor,
                      backend: str = "spectral_residual") -> float:
    return ssim(saliency(content, backend), saliency(stylized, backend))


@dataclasses.dataclass
class PairMetrics:
    """One report row: all six metrics for a (content, stylized) pair.
    Failed metrics are recorded as None with a note, never raised."""

    content: str
    stylized: str
    ssim: float | None = None
    hist: float | None = None
    ahash_sim: float | None = None
    dhash_sim: float | None = None
    depth_ssim: float | None = None
    saliency_ssim: float | None = None
    notes: list[str] = dataclasses.field(default_factory=list)

    def values(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def evaluate_pair(content_path, stylized_path, depth_estimator: DepthEstimator | None = None,
                  saliency_backend: str = "spectral_residual") -> PairMetrics:
    """Compute all six metrics for one image pair.

    The stylized image is resized (bicubic) to the content image's dims
    before comparison. ``depth_estimator`` defaults to the hermetic blur
    proxy; pass a MidasDepthEstimator to score with the production backend.
    """
    row = PairMetrics(content=str(content_path), stylized=str(stylized_path))
    content = load_image(content_path)
    stylized = load_image(stylized_path)
    stylized = resize_image(stylized, content.height, content.width)
    if depth_estimator is None:
        depth_estimator = BlurDepthEstimator()

    gray_c = decolorize(content)
    gray_s = decolorize(stylized)

    def attempt(name, fn):
        try:
            setattr(row, name, float(fn()))
        except Exception as exc:  # per-metric failures are recorded, not fatal
            row.notes.append(f"{name}: {exc}")

    attempt("ssim", lambda: ssim(gray_c, gray_s))
    attempt("hist", lambda: hist_similarity(gray_c, gray_s))
    attempt("ahash_sim", lambda: hash_similarity(ahash(gray_c), ahash(gray_s)))
    attempt("dhash_sim", lambda: hash_similarity(dhash(gray_c), dhash(gray_s)))
    attempt("depth_ssim", lambda: depth_map_ssim(content, stylized, depth_estimator))
    attempt("saliency_ssim", lambda: saliency_map_ssim(content, stylized, saliency_backend))
    return row


@dataclasses.dataclass
class MethodTable:
    """Aggregate comparison across methods: per-pair rows, per-method metric
    means, per-metric best/second-best method, and missing files."""

    rows: list[PairMetrics]
    methods: list[str]
    means: dict[str, dict[str, float | None]]
    missing: dict[str, list[str]]
    best: dict[str, list[str]]
    row_methods: list[str] = dataclasses.field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "metrics": list(METRIC_NAMES),
            "methods": self.methods,
            "means": self.means,
            "best": self.best,
            "missing": self.missing,
            "rows": [dict(method=m, **r.values(), content=r.content, stylized=r.stylized)
                     for m, r in zip(self.row_methods, self.rows)],
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json_dict(), indent=2))
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method"] + list(METRIC_NAMES))
            for method in self.methods:
                writer.writerow([method] + [_fmt(self.means[method][m]) for m in METRIC_NAMES])
        return path


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def compare_methods(manifest, depth_estimator: DepthEstimator | None = None,
                    saliency_backend: str = "spectral_residual") -> MethodTable:
    """Evaluate a manifest of (method, content_path, stylized_path) triples
    and average each metric per method. Missing files are listed per method
    rather than aborting the run."""
    manifest = list(manifest)
    if not manifest:
        raise ValueError("manifest is empty")
    if depth_estimator is None:
        depth_estimator = BlurDepthEstimator()

    methods: list[str] = []
    rows: list[PairMetrics] = []
    row_methods: list[str] = []
    missing: dict[str, list[str]] = {}
    per_method: dict[str, list[PairMetrics]] = {}
    for method, content_path, stylized_path in manifest:
        if method not in methods:
            methods.append(method)
            per_method[method] = []
            missing[method] = []
        absent = [str(p) for p in (content_path, stylized_path) if not Path(p).is_file()]
        if absent:
            missing[method].extend(absent)
            continue
        row = evaluate_pair(content_path, stylized_path, depth_estimator, saliency_backend)
        rows.append(row)
        row_methods.append(method)
        per_method[method].append(row)

    means: dict[str, dict[str, float | None]] = {}
    for method in methods:
        means[method] = {}
        for metric in METRIC_NAMES:
            vals = [r.values()[metric] for r in per_method[method] if r.values()[metric] is not None]
            means[method][metric] = float(np.mean(vals)) if vals else None

    best: dict[str, list[str]] = {}
    for metric in METRIC_NAMES:
        scored = [(m, means[m][metric]) for m in methods if means[m][metric] is not None]
        scored.sort(key=lambda kv: kv[1], reverse=True)
        best[metric] = [m for m, _ in scored[:2]]

    return MethodTable(rows=rows, methods=methods, means=means, missing=missing,
                       best=best, row_methods=row_methods)


def read_manifest_csv(path) -> list[tuple[str, str, str]]:
    """Read a manifest CSV with columns method,content_path,stylized_path."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"method", "content_path", "stylized_path"}
        missing_cols = required - set(reader.fieldnames or [])
        if missing_cols:
            raise ValueError(f"manifest is missing column(s) {sorted(missing_cols)}")
        for record in reader:
            out.append((record["method"], record["content_path"], record["stylized_path"]))
    return out
