import json

import numpy as np
import pytest

from esihdr import io
from esihdr.config import NetworkConfig
from esihdr.imaging import LdrImage, gamma_correct
from esihdr.mhdr import HdrNet, mhdr_forward
from esihdr.synth import synth_scene
from esihdr.tensor import no_grad
from esihdr.verify import toy_batch


class TestPfm:
    def test_tiny_color_bit_exact(self, tmp_path):
        px = np.array([[[0.0, 1.5, -2.25], [1e-30, 3.4e38, 7.0]],
                       [[0.1, 0.2, 0.3], [np.pi, np.e, 65504.0]]], dtype=np.float32)
        io.write_pfm(tmp_path / "a.pfm", px)
        back = io.read_pfm(tmp_path / "a.pfm")
        assert back.dtype == np.float32
        assert back.tobytes() == px.tobytes()

    def test_grey(self, tmp_path):
        px = np.random.default_rng(0).random((3, 5)).astype(np.float32)
        io.write_pfm(tmp_path / "g.pfm", px)
        np.testing.assert_array_equal(io.read_pfm(tmp_path / "g.pfm"), px)

    def test_header_and_row_order(self, tmp_path):
        px = np.arange(6, dtype=np.float32).reshape(2, 1, 3)
        io.write_pfm(tmp_path / "r.pfm", px)
        raw = (tmp_path / "r.pfm").read_bytes()
        assert raw.startswith(b"PF\n1 2\n-1.0\n")
        # bottom row first
        np.testing.assert_array_equal(np.frombuffer(raw[-24:], "<f4"), [3, 4, 5, 0, 1, 2])

    def test_big_endian(self, tmp_path):
        body = np.array([1.0, 2.0, 3.0, 4.0], dtype=">f4").tobytes()
        (tmp_path / "b.pfm").write_bytes(b"Pf\n2 2\n1.0\n" + body)
        np.testing.assert_array_equal(io.read_pfm(tmp_path / "b.pfm"), [[3, 4], [1, 2]])

    def test_gamma_path_zero_ulp(self, tmp_path):
        ldr = LdrImage(np.random.default_rng(2).integers(0, 256, (4, 5, 3)) / 255.0, 4.0)
        hdr = gamma_correct(ldr).pixels.astype(np.float32)
        io.write_pfm(tmp_path / "h.pfm", hdr)
        assert io.read_pfm(tmp_path / "h.pfm").tobytes() == hdr.tobytes()

    def test_errors(self, tmp_path):
        (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n000")
        with pytest.raises(io.MalformedHeader):
            io.read_pfm(tmp_path / "bad.pfm")
        (tmp_path / "short.pfm").write_bytes(b"PF\n2 2\n-1.0\n" + b"\0" * 10)
        with pytest.raises(io.TruncatedPayload):
            io.read_pfm(tmp_path / "short.pfm")
        (tmp_path / "dims.pfm").write_bytes(b"PF\nx 2\n-1.0\n")
        with pytest.raises(io.MalformedHeader):
            io.read_pfm(tmp_path / "dims.pfm")
        with pytest.raises(ValueError):
            io.write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 4)))


class TestPng:
    def test_round_trip_all_levels(self, tmp_path):
        px = np.arange(128 * 3).reshape(16, 8, 3) % 256 / 255.0
        io.write_png(tmp_path / "a.png", px)
        np.testing.assert_array_equal(io.read_png(tmp_path / "a.png"), px)

    def test_grey(self, tmp_path):
        px = np.linspace(0, 1, 256).reshape(16, 16)
        io.write_png(tmp_path / "g.png", px)
        np.testing.assert_array_equal(io.read_png(tmp_path / "g.png") * 255, np.round(px * 255))

    def test_sixteen_bit_rejected(self, tmp_path):
        from PIL import Image

        Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(tmp_path / "d.png")
        with pytest.raises(io.UnsupportedBitDepth):
            io.read_png(tmp_path / "d.png")

    def test_not_png(self, tmp_path):
        (tmp_path / "n.png").write_bytes(b"hello")
        with pytest.raises(io.MalformedHeader):
            io.read_png(tmp_path / "n.png")

    def test_truncated(self, tmp_path):
        io.write_png(tmp_path / "t.png", np.random.default_rng(0).random((32, 32, 3)))
        raw = (tmp_path / "t.png").read_bytes()
        (tmp_path / "t.png").write_bytes(raw[: len(raw) // 2])
        with pytest.raises(io.TruncatedPayload):
            io.read_png(tmp_path / "t.png")

    def test_error_classes_are_distinct(self):
        kinds = {io.MalformedHeader, io.TruncatedPayload, io.UnsupportedBitDepth, io.ChecksumMismatch}
        assert len(kinds) == 4 and all(issubclass(k, io.DataError) for k in kinds)


class TestScenes:
    def test_stack_round_trip(self, tmp_path):
        scene = synth_scene(3, motion_px=2)
        io.write_scene(tmp_path, scene)
        stack = io.read_stack(tmp_path)
        for a, b in zip(stack.images, scene.stack.images):
            np.testing.assert_array_equal(a.pixels, b.pixels)
            assert (a.exposure_time, a.ev) == (b.exposure_time, b.ev)
        np.testing.assert_array_equal(io.read_png(tmp_path / "mask.png") > 0.5, scene.motion_mask)
        gt = io.read_hdr(tmp_path / "gt.pfm").pixels
        np.testing.assert_array_equal(gt, scene.ground_truth.pixels.astype(np.float32))

    def test_bad_manifest(self, tmp_path):
        io.write_stack(tmp_path, synth_scene(0).stack)
        (tmp_path / "exposure.json").write_text('{"frames": [{"file": "ldr_0.png"}]}')
        with pytest.raises(io.DataError):
            io.read_stack(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(io.DataError):
            io.read_stack(tmp_path)


def trained_model():
    rng = np.random.default_rng(0)
    model = HdrNet(NetworkConfig(channels=4, seed=2))
    with no_grad():
        model(*toy_batch(rng, 32, batch=2)[0])  # moves the running statistics
    for _, t in model.store:
        t.data += 0.01 * rng.standard_normal(t.shape)
    return model


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = trained_model()
        io.save_checkpoint(tmp_path, model)
        loaded = io.load_checkpoint(tmp_path)
        a, b = model.store.state_dict(), loaded.store.state_dict()
        assert list(a) == list(b)
        for name in a:
            assert a[name].tobytes() == b[name].tobytes(), name
        assert loaded.cfg == model.cfg

    def test_infer_after_reload_is_identical(self, tmp_path):
        model = trained_model().eval()
        stack = synth_scene(6, motion_px=3).stack
        before = mhdr_forward(stack, model)[0].pixels
        io.save_checkpoint(tmp_path, model)
        after = mhdr_forward(stack, io.load_checkpoint(tmp_path).eval())[0].pixels
        assert before.tobytes() == after.tobytes()

    def test_ablated_config_survives(self, tmp_path):
        model = HdrNet(NetworkConfig(channels=4, ablation="no_gsm"))
        io.save_checkpoint(tmp_path, model)
        assert io.load_checkpoint(tmp_path).cfg.ablation == "no_gsm"

    def test_corruption_detected(self, tmp_path):
        io.save_checkpoint(tmp_path, HdrNet(NetworkConfig(channels=4)))
        raw = bytearray((tmp_path / "params.bin").read_bytes())
        raw[100] ^= 0xFF
        (tmp_path / "params.bin").write_bytes(bytes(raw))
        with pytest.raises(io.ChecksumMismatch):
            io.load_checkpoint(tmp_path)

    def test_truncation_detected(self, tmp_path):
        io.save_checkpoint(tmp_path, HdrNet(NetworkConfig(channels=4)))
        raw = (tmp_path / "params.bin").read_bytes()
        (tmp_path / "params.bin").write_bytes(raw[:-8])
        with pytest.raises(io.TruncatedPayload):
            io.load_checkpoint(tmp_path)

    def test_unknown_format(self, tmp_path):
        io.save_checkpoint(tmp_path, HdrNet(NetworkConfig(channels=4)))
        doc = json.loads((tmp_path / "manifest.json").read_text())
        doc["format"] = "other"
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(io.MalformedHeader):
            io.load_checkpoint(tmp_path)
