import numpy as np
import pytest
import torch
from PIL import Image

import depthstyle as ds
from depthstyle.images import (from_array, list_image_files, load_image, resize_image,
                               save_image, to_uint8)

from conftest import save_photo, synth_photo


class TestImageTensor:
    def test_valid_construction(self):
        img = ds.ImageTensor(torch.rand(2, 3, 16, 16), "unit")
        assert img.batch_size == 2 and img.channels == 3

    def test_rejects_bad_shapes_and_ranges(self):
        with pytest.raises(ValueError):
            ds.ImageTensor(torch.rand(3, 16, 16), "unit")  # 3-D
        with pytest.raises(ValueError):
            ds.ImageTensor(torch.rand(1, 2, 16, 16), "unit")  # 2 channels
        with pytest.raises(ValueError):
            ds.ImageTensor(torch.rand(1, 3, 16, 16) * 2.0, "unit")  # out of range
        with pytest.raises(ValueError):
            ds.ImageTensor(torch.full((1, 3, 4, 4), float("nan")), "unit")
        with pytest.raises(ValueError):
            ds.ImageTensor(torch.rand(1, 3, 4, 4), "percent")

    def test_range_conversions(self):
        img = ds.ImageTensor(torch.full((1, 3, 4, 4), 0.5), "unit")
        as_byte = img.byte_range()
        assert as_byte.value_range == "byte"
        assert float(as_byte.data.max()) == 127.5
        back = as_byte.unit()
        assert torch.allclose(back.data, img.data)

    def test_single_keeps_batch_dim(self):
        img = ds.ImageTensor(torch.rand(3, 3, 8, 8), "unit")
        assert img.single(1).data.shape == (1, 3, 8, 8)


class TestIO:
    def test_load_save_roundtrip(self, tmp_path):
        arr = synth_photo(0, 40, 56)
        path = tmp_path / "img.png"
        save_photo(path, arr)
        img = load_image(path)
        assert img.data.shape == (1, 3, 40, 56)
        out_path = save_image(img, tmp_path / "copy.png")
        reread = load_image(out_path)
        assert torch.equal(img.data, reread.data)  # png is lossless

    def test_load_with_resize_and_crop(self, tmp_path):
        save_photo(tmp_path / "img.png", synth_photo(1, 60, 100))
        img = load_image(tmp_path / "img.png", size=48, crop_square=True)
        assert img.data.shape == (1, 3, 48, 48)

    def test_from_array_layouts(self):
        assert from_array(np.zeros((5, 6))).data.shape == (1, 1, 5, 6)
        assert from_array(np.zeros((5, 6, 3))).data.shape == (1, 3, 5, 6)
        assert from_array(np.zeros((2, 5, 6, 3))).data.shape == (2, 3, 5, 6)

    def test_to_uint8_rounding(self):
        img = ds.ImageTensor(torch.tensor([[[[0.0, 0.5, 1.0]]]]), "unit")
        assert to_uint8(img).tolist() == [[[[0], [128], [255]]]]

    def test_resize_image_bounds(self):
        img = ds.ImageTensor(torch.rand(1, 3, 32, 48), "unit")
        resized = resize_image(img, 24, 24)
        assert resized.data.shape == (1, 3, 24, 24)
        assert resized.data.min() >= 0 and resized.data.max() <= 1.0

    def test_list_image_files_filters_and_sorts(self, tmp_path):
        save_photo(tmp_path / "b.png", synth_photo(2, 16, 16))
        save_photo(tmp_path / "a.jpg", synth_photo(3, 16, 16))
        (tmp_path / "notes.txt").write_text("not an image")
        names = [p.name for p in list_image_files(tmp_path)]
        assert names == ["a.jpg", "b.png"]
