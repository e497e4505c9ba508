"""Full-reference quality metrics (PSNR, SSIM) and the JSON report format."""
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch, TooSmall

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def psnr(pred, gt, data_range=1.0):
    """Peak signal-to-noise ratio in dB, one MSE over all channels.

    Returns ``math.inf`` for identical inputs.
    """
    pred, gt = _pair(pred, gt)
    mse = np.mean((pred - gt) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range**2 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalized 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable weighted sum over every fully-contained window
    rows = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim_map(pred, gt, data_range=1.0):
    """Per-window SSIM for 2-D single-channel inputs (valid windows only)."""
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = _filter_valid(pred, g)
    mu_y = _filter_valid(gt, g)
    sxx = _filter_valid(pred * pred, g) - mu_x**2
    syy = _filter_valid(gt * gt, g) - mu_y**2
    sxy = _filter_valid(pred * gt, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(pred, gt, data_range=1.0):
    """Mean SSIM: 11x11 Gaussian window (sigma 1.5), per channel then averaged."""
    pred, gt = _pair(pred, gt)
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    if min(pred.shape[0], pred.shape[1]) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {pred.shape[:2]}")
    scores = [ssim_map(pred[..., c], gt[..., c], data_range).mean() for c in range(pred.shape[2])]
    return float(np.mean(scores))


def _encode_float(x):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _decode_float(x):
    return float(x)


@dataclass
class MetricsReport:
    per_image: list = field(default_factory=list)  # dicts with id, psnr, ssim

    def add(self, image_id, psnr_value, ssim_value):
        self.per_image.append({"id": image_id, "psnr": float(psnr_value), "ssim": float(ssim_value)})

    @property
    def mean_psnr(self):
        return float(np.mean([r["psnr"] for r in self.per_image])) if self.per_image else math.nan

    @property
    def mean_ssim(self):
        return float(np.mean([r["ssim"] for r in self.per_image])) if self.per_image else math.nan

    def to_dict(self):
        return {
            "per_image": [
                {"id": r["id"], "psnr": _encode_float(r["psnr"]), "ssim": r["ssim"]}
                for r in self.per_image
            ],
            "mean_psnr": _encode_float(self.mean_psnr),
            "mean_ssim": self.mean_ssim,
        }

    @classmethod
    def from_dict(cls, d):
        report = cls()
        for r in d["per_image"]:
            report.add(r["id"], _decode_float(r["psnr"]), _decode_float(r["ssim"]))
        return report

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("id,psnr,ssim\n")
            for r in self.per_image:
                fh.write(f"{r['id']},{r['psnr']!r},{r['ssim']!r}\n")
