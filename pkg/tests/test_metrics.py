import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neid import metrics
from neid.errors import ShapeMismatch, TooSmall


def ssim_oracle(x, y):
    """Window-by-window SSIM with two-pass weighted moments."""
    ax = np.arange(11) - 5.0
    win = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * 1.5**2))
    win /= win.sum()
    c1, c2 = 0.01**2, 0.03**2
    scores = []
    for c in range(x.shape[2]):
        vals = []
        for i in range(x.shape[0] - 10):
            for j in range(x.shape[1] - 10):
                px = x[i : i + 11, j : j + 11, c]
                py = y[i : i + 11, j : j + 11, c]
                mx, my = (win * px).sum(), (win * py).sum()
                vx = (win * (px - mx) ** 2).sum()
                vy = (win * (py - my) ** 2).sum()
                cxy = (win * (px - mx) * (py - my)).sum()
                vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
        scores.append(np.mean(vals))
    return float(np.mean(scores))


def test_psnr_identical_is_inf():
    x = np.random.default_rng(0).random((4, 4, 3))
    assert metrics.psnr(x, x) == math.inf


def test_psnr_extremes():
    assert metrics.psnr(np.zeros((3, 3, 3)), np.ones((3, 3, 3))) == pytest.approx(0.0, abs=1e-12)


def test_psnr_one_level_offset():
    x = np.full((5, 5, 3), 0.25)
    assert metrics.psnr(x + 1 / 255, x) == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert metrics.psnr(x + 1 / 255, x) == pytest.approx(48.1308, abs=1e-3)


def test_psnr_symmetric_and_shift_invariant():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0.1, 0.8, (2, 6, 6, 3))
    assert metrics.psnr(a, b) == metrics.psnr(b, a)
    assert metrics.psnr(a + 0.1, b + 0.1) == pytest.approx(metrics.psnr(a, b), rel=1e-9)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        metrics.psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    with pytest.raises(ShapeMismatch):
        metrics.ssim(np.zeros((12, 12, 3)), np.zeros((12, 13, 3)))


def test_ssim_too_small():
    with pytest.raises(TooSmall):
        metrics.ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


def test_ssim_identity():
    x = np.random.default_rng(2).random((20, 24, 3))
    assert metrics.ssim(x, x) == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_closed_form():
    a, b = 0.25, 0.75
    expected = (2 * a * b + 1e-4) / (a * a + b * b + 1e-4)
    got = metrics.ssim(np.full((16, 16, 3), a), np.full((16, 16, 3), b))
    assert got == pytest.approx(expected, abs=1e-9)
    assert got == pytest.approx(0.60007, abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_windowed_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    x = rng.random((32, 32, 3))
    y = np.clip(x + rng.normal(0, 0.2, x.shape), 0, 1)
    assert abs(metrics.ssim(x, y) - ssim_oracle(x, y)) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_ssim_range_symmetry_transpose(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((2, 13, 15, 3))
    s = metrics.ssim(x, y)
    assert -1 <= s <= 1
    assert s == pytest.approx(metrics.ssim(y, x), abs=1e-12)
    xt, yt = x.transpose(1, 0, 2), y.transpose(1, 0, 2)
    assert s == pytest.approx(metrics.ssim(xt, yt), abs=1e-12)
    assert metrics.psnr(x, y) == pytest.approx(metrics.psnr(xt, yt), abs=1e-12)


def test_report_json(tmp_path):
    report = metrics.MetricsReport()
    report.add("a", 20.0, 0.5)
    report.add("b", math.inf, 1.0)
    report.add("c", 30.0, 0.7)
    path = tmp_path / "r.json"
    report.save_json(path)
    raw = json.loads(path.read_text())
    assert raw["per_image"][1]["psnr"] == "inf"
    assert raw["mean_psnr"] == "inf"
    assert set(raw) == {"per_image", "mean_psnr", "mean_ssim"}
    assert metrics.MetricsReport.load_json(path).per_image == report.per_image


def test_report_means():
    rng = np.random.default_rng(5)
    report = metrics.MetricsReport()
    vals = rng.random((15, 2))
    for i, (p, s) in enumerate(vals):
        report.add(str(i), 20 + p, s)
    assert abs(report.mean_psnr - np.mean(20 + vals[:, 0])) < 1e-9
    assert abs(report.mean_ssim - np.mean(vals[:, 1])) < 1e-9
