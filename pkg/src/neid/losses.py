"""Training objective: Huber (LE) + weighted MSE (DR) + weighted HSV color term."""
from dataclasses import dataclass

import torch

from .errors import MissingDrOutput, ShapeMismatch


@dataclass(frozen=True)
class LossConfig:
    delta: float = 1.0
    lambda_mse: float = 0.1
    lambda_color: float = 0.1
    dr_target: str = "low"  # "low": high-res low-light patch, "normal": LE target

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.lambda_mse < 0 or self.lambda_color < 0:
            raise ValueError("loss weights must be >= 0")
        if self.dr_target not in ("low", "normal"):
            raise ValueError(f"dr_target must be 'low' or 'normal', got {self.dr_target!r}")


@dataclass
class LossBreakdown:
    huber: torch.Tensor
    mse: torch.Tensor
    color_h: torch.Tensor
    color_s: torch.Tensor
    total: torch.Tensor

    def as_floats(self):
        return {k: float(getattr(self, k).detach()) for k in ("huber", "mse", "color_h", "color_s", "total")}


def _check(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def huber_loss(pred, gt, delta=1.0):
    _check(pred, gt)
    a = (gt - pred).abs()
    quad = 0.5 * a * a
    lin = delta * a - 0.5 * delta * delta
    return torch.where(a <= delta, quad, lin).mean()


def mse_loss(pred, gt):
    _check(pred, gt)
    return ((pred - gt) ** 2).mean()


def rgb_to_hsv(x):
    """Differentiable hexcone conversion of an NCHW RGB tensor.

    Matches :func:`neid.imgcore.rgb_to_hsv`: hue in [0, 1), hue 0 and
    saturation 0 at achromatic / black pixels.
    """
    r, g, b = x[:, 0], x[:, 1], x[:, 2]
    v = torch.amax(x, dim=1)
    delta = v - torch.amin(x, dim=1)
    chroma = delta > 0
    safe_v = torch.where(v > 0, v, torch.ones_like(v))
    s = torch.where(v > 0, delta / safe_v, torch.zeros_like(v))
    safe_d = torch.where(chroma, delta, torch.ones_like(delta))
    h_r = torch.remainder((g - b) / safe_d, 6.0)
    h_g = (b - r) / safe_d + 2.0
    h_b = (r - g) / safe_d + 4.0
    h = torch.where(v == r, h_r, torch.where(v == g, h_g, h_b)) / 6.0
    h = torch.where(chroma & (h < 1.0), h, torch.zeros_like(h))
    return torch.stack([h, s, v], dim=1)


def cosine_distance(p, q):
    """Per-sample ``1 - cos(p, q)`` over flattened vectors; 0 if either norm is 0."""
    p = p.flatten(1)
    q = q.flatten(1)
    dot = (p * q).sum(dim=1)
    norm = p.norm(dim=1) * q.norm(dim=1)
    ok = norm > 0
    cos = torch.where(ok, dot / torch.where(ok, norm, torch.ones_like(norm)), torch.ones_like(norm))
    return 1.0 - cos


def color_loss(pred, gt):
    """Hue and saturation cosine distances, each averaged over the batch."""
    _check(pred, gt)
    hsv_p = rgb_to_hsv(pred)
    hsv_g = rgb_to_hsv(gt)
    color_h = cosine_distance(hsv_p[:, 0], hsv_g[:, 0]).mean()
    color_s = cosine_distance(hsv_p[:, 1], hsv_g[:, 1]).mean()
    return color_h, color_s


def total_loss(outputs, target_le, target_dr, cfg=None):
    cfg = cfg or LossConfig()
    le = outputs.le_image
    huber = huber_loss(le, target_le, cfg.delta)
    if outputs.has_dr:
        if outputs.dr_image is None:
            if cfg.lambda_mse > 0:
                raise MissingDrOutput("DR image required for the MSE term (run forward in train mode)")
            mse = torch.zeros((), dtype=le.dtype)
        else:
            mse = mse_loss(outputs.dr_image, target_dr)
    else:
        mse = torch.zeros((), dtype=le.dtype)
    color_h, color_s = color_loss(le, target_le)
    total = huber + cfg.lambda_mse * mse + cfg.lambda_color * (color_h + color_s)
    return LossBreakdown(huber, mse, color_h, color_s, total)
