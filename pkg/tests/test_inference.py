import numpy as np
import pytest
import torch
from PIL import Image

import depthstyle as ds
from depthstyle.images import load_image, resize_image
from depthstyle.model import parameter_checksum

from conftest import save_photo, synth_image_tensor, synth_photo


@pytest.fixture(scope="module")
def net():
    return ds.init_transform_net(seed=0).eval()


class TestStylize:
    def test_shape_contract_256(self, net):
        out = ds.stylize(net, synth_image_tensor(0, 256, 256))
        assert out.data.shape == (1, 3, 256, 256)
        assert 0.0 <= out.data.min() and out.data.max() <= 1.0

    def test_nondivisible_dims(self, net):
        out = ds.stylize(net, synth_image_tensor(1, 250, 250))
        assert out.data.shape == (1, 3, 250, 250)

    def test_scale_dependence_expected(self, net):
        # fully convolutional nets are not scale-equivariant: both sizes
        # must succeed but produce different stylizations
        small = ds.stylize(net, synth_image_tensor(2, 128, 128))
        big = ds.stylize(net, synth_image_tensor(2, 256, 256))
        assert small.data.shape[2:] == (128, 128)
        assert big.data.shape[2:] == (256, 256)
        big_down = resize_image(big, 128, 128)
        assert (big_down.data - small.data).abs().max() > 1e-3

    def test_model_not_mutated(self, net):
        before = parameter_checksum(net)
        ds.stylize(net, synth_image_tensor(3, 64, 64))
        assert parameter_checksum(net) == before

    def test_output_gradient_free(self, net):
        out = ds.stylize(net, synth_image_tensor(4, 64, 64))
        assert not out.data.requires_grad

    def test_small_input_rejected(self, net):
        with pytest.raises(ValueError):
            ds.stylize(net, ds.ImageTensor(torch.rand(1, 3, 8, 8), "unit"))


class TestStylizeBatch:
    @pytest.fixture()
    def model_path(self, net, tmp_path):
        path = tmp_path / "model.npz"
        ds.save_net(net, path)
        return path

    def test_directory_of_three(self, model_path, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        for s in range(3):
            save_photo(src / f"photo_{s}.png", synth_photo(s, 48, 48))
        out = tmp_path / "out"
        report = ds.stylize_batch(ds.StylizeRequest(
            model_path=str(model_path), input_path=str(src), output_path=str(out)))
        assert report.ok_count == 3 and report.total == 3
        assert sorted(p.name for p in out.iterdir()) == [
            "photo_0.png", "photo_1.png", "photo_2.png"]
        # outputs round-trip through the file format within range
        arr = np.asarray(Image.open(out / "photo_0.png"))
        assert arr.dtype == np.uint8 and arr.shape == (48, 48, 3)

    def test_empty_directory_ok(self, model_path, tmp_path):
        src = tmp_path / "empty"
        src.mkdir()
        report = ds.stylize_batch(ds.StylizeRequest(
            model_path=str(model_path), input_path=str(src),
            output_path=str(tmp_path / "out")))
        assert report.total == 0 and report.ok_count == 0 and not report.failures

    def test_unreadable_file_collected(self, model_path, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        for s in range(2):
            save_photo(src / f"ok_{s}.png", synth_photo(s, 48, 48))
        (src / "broken.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really")
        out = tmp_path / "out"
        report = ds.stylize_batch(ds.StylizeRequest(
            model_path=str(model_path), input_path=str(src), output_path=str(out)))
        assert report.ok_count == 2 and report.total == 3
        assert list(report.failures) == [str(src / "broken.png")]
        assert "2/3" in report.summary()

    def test_rerun_overwrites_deterministically(self, model_path, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        save_photo(src / "a.png", synth_photo(9, 48, 48))
        out = tmp_path / "out"
        request = ds.StylizeRequest(model_path=str(model_path), input_path=str(src),
                                    output_path=str(out))
        first = ds.stylize_batch(request)
        blob_a = (out / "a.png").read_bytes()
        second = ds.stylize_batch(request)
        assert first.outputs == second.outputs
        assert (out / "a.png").read_bytes() == blob_a
        assert len(list(out.iterdir())) == 1

    def test_single_file_input(self, model_path, tmp_path):
        save_photo(tmp_path / "one.png", synth_photo(5, 40, 56))
        report = ds.stylize_batch(ds.StylizeRequest(
            model_path=str(model_path), input_path=str(tmp_path / "one.png"),
            output_path=str(tmp_path / "styled.png")))
        assert report.ok_count == 1
        with Image.open(tmp_path / "styled.png") as img:
            assert img.size == (56, 40)

    def test_max_dim_limits_processing_size(self, model_path, tmp_path):
        save_photo(tmp_path / "big.png", synth_photo(6, 96, 128))
        report = ds.stylize_batch(ds.StylizeRequest(
            model_path=str(model_path), input_path=str(tmp_path / "big.png"),
            output_path=str(tmp_path / "small.png"), max_dim=64))
        assert report.ok_count == 1
        with Image.open(tmp_path / "small.png") as img:
            assert max(img.size) == 64

    def test_missing_input_rejected(self, model_path, tmp_path):
        with pytest.raises(FileNotFoundError):
            ds.stylize_batch(ds.StylizeRequest(
                model_path=str(model_path), input_path=str(tmp_path / "ghost"),
                output_path=str(tmp_path / "out")))
