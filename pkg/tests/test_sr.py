import shlex
import sys

import numpy as np
import pytest

from appearance_transfer.imaging import resize_bicubic
from appearance_transfer.sr import (
    TMPDIR_ENV,
    SRBackendError,
    SRBackendSpec,
    downscale_eval,
    sr_heatmap,
    upscale,
)
from appearance_transfer.synthetic import radial_gradient

SHIM = """
import os, sys
from appearance_transfer.imaging import load_png, resize_bicubic, save_png
src, dst, factor = sys.argv[1], sys.argv[2], int(sys.argv[3])
if len(sys.argv) > 4:
    open(sys.argv[4], "w").write(os.getcwd())
img = load_png(src)
save_png(resize_bicubic(img, img.shape[1] * factor, img.shape[0] * factor), dst)
"""


@pytest.fixture
def shim(tmp_path):
    path = tmp_path / "shim.py"
    path.write_text(SHIM)
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(path))} {{in}} {{out}} {{factor}}"


def quantized(img):
    return np.round(img * 255) / 255


class TestSpec:
    def test_factor(self):
        with pytest.raises(ValueError):
            SRBackendSpec(factor=3)

    def test_external_needs_command(self):
        with pytest.raises(ValueError):
            SRBackendSpec(kind="external")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SRBackendSpec(kind="magic")


class TestBicubic:
    def test_constant(self):
        out = upscale(np.full((5, 7, 3), 0.3))
        assert out.shape == (10, 14, 3) and np.abs(out - 0.3).max() < 1e-12

    def test_factor_four(self):
        assert upscale(np.zeros((3, 2, 3)), SRBackendSpec(factor=4)).shape == (12, 8, 3)

    def test_up_then_down_keeps_constant(self):
        img = np.full((6, 6, 3), 0.42)
        assert np.abs(downscale_eval(upscale(img), 2) - img).max() < 1e-12

    def test_empty(self):
        with pytest.raises(ValueError):
            upscale(np.zeros((0, 4, 3)))


class TestExternal:
    def test_shim_matches_bicubic(self, shim):
        tex = quantized(np.random.default_rng(0).random((9, 7, 3)))
        out = upscale(tex, SRBackendSpec("external", 2, shim))
        assert np.array_equal(out, quantized(resize_bicubic(tex, 14, 18)))

    def test_deterministic(self, shim):
        tex = quantized(np.random.default_rng(1).random((5, 5, 3)))
        spec = SRBackendSpec("external", 4, shim)
        assert np.array_equal(upscale(tex, spec), upscale(tex, spec))

    def test_nonzero_exit(self):
        cmd = f"{shlex.quote(sys.executable)} -c \"import sys; sys.stderr.write('boom'); sys.exit(1)\" {{in}} {{out}}"
        with pytest.raises(SRBackendError) as info:
            upscale(np.zeros((4, 4, 3)), SRBackendSpec("external", 2, cmd))
        assert info.value.returncode == 1 and "boom" in info.value.stderr
        assert "status 1" in str(info.value)

    def test_missing_output(self):
        cmd = f"{shlex.quote(sys.executable)} -c pass {{in}} {{out}}"
        with pytest.raises(SRBackendError, match="did not write"):
            upscale(np.zeros((4, 4, 3)), SRBackendSpec("external", 2, cmd))

    def test_wrong_size(self, tmp_path):
        (tmp_path / "copy.py").write_text("import shutil, sys; shutil.copy(sys.argv[1], sys.argv[2])")
        cmd = f"{shlex.quote(sys.executable)} {shlex.quote(str(tmp_path / 'copy.py'))} {{in}} {{out}}"
        with pytest.raises(SRBackendError, match="expected 8x8"):
            upscale(np.zeros((4, 4, 3)), SRBackendSpec("external", 2, cmd))

    def test_temp_dir_override(self, shim, tmp_path, monkeypatch):
        root = tmp_path / "scratch"
        root.mkdir()
        monkeypatch.setenv(TMPDIR_ENV, str(root))
        record = tmp_path / "cwd.txt"
        upscale(np.zeros((4, 4, 3)), SRBackendSpec("external", 2, f"{shim} {shlex.quote(str(record))}"))
        cwd = record.read_text()
        assert cwd.startswith(str(root))
        assert not list(root.iterdir())  # cleaned up afterwards


class TestDownscale:
    def test_dimensions(self):
        assert downscale_eval(np.zeros((64, 32, 3)), 4).shape == (16, 8, 3)

    def test_constant(self):
        assert np.abs(downscale_eval(np.full((8, 8, 3), 0.6), 2) - 0.6).max() < 1e-12

    def test_not_divisible(self):
        with pytest.raises(ValueError, match="divisible"):
            downscale_eval(np.zeros((10, 9, 3)), 2)

    def test_smooth_gradient_survives_round_trip(self):
        gt = radial_gradient(256)
        out = upscale(downscale_eval(gt, 2))
        mse = np.mean(((out - gt) @ [0.299, 0.587, 0.114]) ** 2)
        assert 10 * np.log10(1 / mse) >= 30


class TestHeatmap:
    def test_zero_error_is_blue(self):
        img = np.random.default_rng(0).random((4, 4, 3))
        assert np.all(sr_heatmap(img, img) == [0, 0, 1])

    def test_clamped_to_red(self):
        a, b = np.zeros((2, 2, 3)), np.zeros((2, 2, 3))
        b[0, 0] = 0.25
        b[1, 1] = 0.9
        h = sr_heatmap(a, b)
        assert h[0, 0] == pytest.approx([1, 0, 0], abs=1e-12)
        assert np.all(h[1, 1] == [1, 0, 0])

    def test_midpoint_is_green(self):
        h = sr_heatmap(np.zeros((1, 1, 3)), np.full((1, 1, 3), 0.125))
        assert h[0, 0] == pytest.approx([0, 1, 0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sr_heatmap(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
