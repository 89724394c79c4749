import numpy as np
import pytest
import torch
from PIL import Image
from scipy import ndimage

import depthstyle as ds


def synth_photo(seed: int, height: int = 96, width: int = 96) -> np.ndarray:
    """Deterministic naturalistic test image: vertical color gradient plus a
    few soft-edged blobs and mild texture noise. Returns HxWx3 float in [0,1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width
    top = rng.uniform(0.3, 0.9, 3)
    bottom = rng.uniform(0.1, 0.7, 3)
    img = top[None, None, :] * (1 - yy[..., None]) + bottom[None, None, :] * yy[..., None]
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.2, 0.9), rng.uniform(0.1, 0.9)
        ry, rx = rng.uniform(0.05, 0.25), rng.uniform(0.05, 0.3)
        color = rng.uniform(0, 1, 3)
        mask = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) < 1
        soft = ndimage.gaussian_filter(mask.astype(float), sigma=2)
        img = img * (1 - soft[..., None]) + color[None, None, :] * soft[..., None]
    img = np.clip(img + rng.normal(0, 0.02, (height, width, 3)), 0, 1)
    return img


def synth_image_tensor(seed: int, height: int = 96, width: int = 96,
                       batch: int = 1) -> ds.ImageTensor:
    data = np.stack([synth_photo(seed + i, height, width).transpose(2, 0, 1)
                     for i in range(batch)])
    return ds.ImageTensor(torch.from_numpy(data.astype(np.float32)), "unit")


def blob_image(height: int = 96, width: int = 96) -> np.ndarray:
    """Single bright blob on a dark field; the blob is the 'foreground'."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = height * 0.55, width * 0.5
    r = min(height, width) * 0.18
    mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r ** 2
    img = np.full((height, width, 3), 0.08)
    img[mask] = (0.9, 0.85, 0.7)
    return ndimage.gaussian_filter(img, sigma=(1.5, 1.5, 0))


def save_photo(path, array01: np.ndarray) -> None:
    Image.fromarray((np.clip(array01, 0, 1) * 255 + 0.5).astype(np.uint8)).save(path)


@pytest.fixture(scope="session")
def stub_ext():
    return ds.stub_extractor(seed=0)


@pytest.fixture(scope="session")
def blur_est():
    return ds.BlurDepthEstimator()


@pytest.fixture(scope="session")
def photo_dir(tmp_path_factory):
    """Ten decodable photos, used by dataset/batch tests."""
    root = tmp_path_factory.mktemp("photos")
    for s in range(10):
        save_photo(root / f"img_{s:03d}.png", synth_photo(s, 96, 120))
    return root


@pytest.fixture(scope="session")
def trained_tiny(tmp_path_factory, stub_ext, blur_est):
    """A quickly trained tiny model shared by inference/CLI tests."""
    root = tmp_path_factory.mktemp("tinytrain")
    data = root / "data"
    data.mkdir()
    for s in range(16):
        save_photo(data / f"img_{s:03d}.png", synth_photo(s, 80, 80))
    save_photo(root / "style.png", synth_photo(500, 80, 80))
    cfg = ds.TrainConfig(style_image=str(root / "style.png"), dataset_root=str(data),
                         image_size=64, iterations=8, seed=3,
                         feature_backbone="stub", depth_backend="blur")
    out = root / "run"
    net, log = ds.train(cfg, out_dir=out, extractor=stub_ext, depth_estimator=blur_est)
    return {"net": net, "log": log, "out": out, "root": root, "config": cfg}
