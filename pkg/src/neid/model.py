"""The two-stream enhancement network.

A shared U-net encoder feeds two decoders: the light-enhancement (LE)
decoder, whose sub-pixel head produces the brightened 2x output, and the
detail-refinement (DR) decoder, whose head reconstructs the 2x low-light
image. A channel-attention fusion (FF) block uses pooled DR features to
reweight the encoder bottleneck before it enters the LE decoder.
"""
import functools
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import BadChannelCount, ShapeMismatch
from .imgcore import bicubic_weights

VARIANTS = ("unet_baseline", "le_only", "le_dr", "full")
STUB_VARIANT = "identity_stub"
INIT_STD = 0.02


@dataclass(frozen=True)
class ArchConfig:
    levels: int = 4
    base_channels: int = 32
    scale: int = 2
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS + (STUB_VARIANT,):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.scale != 2:
            raise ValueError("only scale 2 is supported")

    @property
    def widths(self):
        return [self.base_channels * 2**i for i in range(self.levels)]

    @property
    def has_dr(self):
        return self.variant in ("le_dr", "full")

    def to_dict(self):
        return asdict(self)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class ModelOutputs:
    le_image: torch.Tensor
    dr_image: Optional[torch.Tensor] = None
    dr_features: Optional[torch.Tensor] = None
    has_dr: bool = False


def pixel_shuffle(x, r=2):
    """Depth-to-space: ``out[n, c, y, x] = in[n, c*r*r + (y%r)*r + x%r, y//r, x//r]``."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise BadChannelCount(f"{c} channels not divisible by r^2={r * r}")
    oc = c // (r * r)
    x = x.reshape(n, oc, r, r, h, w).permute(0, 1, 4, 2, 5, 3)
    return x.reshape(n, oc, h * r, w * r)


def space_to_depth(x, r=2):
    """Inverse of :func:`pixel_shuffle`."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeMismatch(f"spatial size {h}x{w} not divisible by {r}")
    x = x.reshape(n, c, h // r, r, w // r, r).permute(0, 1, 3, 5, 2, 4)
    return x.reshape(n, c * r * r, h // r, w // r)


@functools.lru_cache(maxsize=64)
def _bicubic_matrix(n_in, n_out):
    return bicubic_weights(n_in, n_out)


def bicubic_resize_tensor(x, out_h, out_w):
    """Differentiable bicubic resampling of an NCHW tensor (no clamping)."""
    wh = torch.as_tensor(_bicubic_matrix(x.shape[-2], out_h), dtype=x.dtype, device=x.device)
    ww = torch.as_tensor(_bicubic_matrix(x.shape[-1], out_w), dtype=x.dtype, device=x.device)
    return wh @ x @ ww.T


class ConvPair(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)

    def forward(self, x):
        return F.relu(self.conv2(F.relu(self.conv1(x))))


class Encoder(nn.Module):
    def __init__(self, widths):
        super().__init__()
        ins = [3] + widths[:-1]
        self.levels = nn.ModuleList(ConvPair(i, o) for i, o in zip(ins, widths))
        self.bottleneck = ConvPair(widths[-1], widths[-1])

    def forward(self, x):
        skips = []
        for block in self.levels:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2, 2)
        return skips, self.bottleneck(x)


class Decoder(nn.Module):
    """Expansive path: 2x2 stride-2 transposed conv, skip concat, conv pair."""

    def __init__(self, widths):
        super().__init__()
        rev = widths[::-1]
        ins = [widths[-1]] + rev[:-1]
        self.ups = nn.ModuleList(nn.ConvTranspose2d(i, o, 2, stride=2) for i, o in zip(ins, rev))
        self.blocks = nn.ModuleList(ConvPair(2 * o, o) for o in rev)

    def forward(self, x, skips):
        for up, block, skip in zip(self.ups, self.blocks, reversed(skips)):
            x = block(torch.cat([up(x), skip], dim=1))
        return x


class SubPixelHead(nn.Module):
    def __init__(self, c_in, r=2):
        super().__init__()
        self.r = r
        self.conv = nn.Conv2d(c_in, 3 * r * r, 3, padding=1)

    def forward(self, x):
        return torch.sigmoid(pixel_shuffle(self.conv(x), self.r))


class FeatureFusion(nn.Module):
    """Channel attention over the bottleneck, driven by pooled DR features.

    ``fused = w * bottleneck + (1 - w) * project(dr_features)`` with
    ``w = sigmoid(fc2(relu(fc1(gap(dr_features)))))``.
    """

    def __init__(self, widths):
        super().__init__()
        base, top = widths[0], widths[-1]
        self.fc1 = nn.Linear(base, 2 * base)
        self.fc2 = nn.Linear(2 * base, top)
        outs = widths[1:] + [top]
        self.proj = nn.ModuleList(
            nn.Conv2d(i, o, 3, stride=2, padding=1) for i, o in zip(widths, outs)
        )

    def attention(self, dr_features):
        squeezed = dr_features.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(squeezed))))

    def project(self, dr_features):
        x = dr_features
        for conv in self.proj:
            x = F.relu(conv(x))
        return x

    def forward(self, bottleneck, dr_features):
        w = self.attention(dr_features)[:, :, None, None]
        projected = self.project(dr_features)
        if projected.shape != bottleneck.shape:
            raise ShapeMismatch(f"projected DR {tuple(projected.shape)} vs bottleneck {tuple(bottleneck.shape)}")
        return w * bottleneck + (1.0 - w) * projected


class NEID(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or ArchConfig()
        widths = self.cfg.widths
        self.encoder = Encoder(widths)
        self.le_decoder = Decoder(widths)
        if self.cfg.variant == "unet_baseline":
            self.baseline_head = nn.Conv2d(widths[0], 3, 3, padding=1)
        else:
            self.le_head = SubPixelHead(widths[0], self.cfg.scale)
        if self.cfg.has_dr:
            self.dr_decoder = Decoder(widths)
            self.dr_head = SubPixelHead(widths[0], self.cfg.scale)
        if self.cfg.variant == "full":
            self.ff = FeatureFusion(widths)

    def _check_input(self, x):
        m = 2**self.cfg.levels
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] % m or x.shape[3] % m:
            raise ShapeMismatch(f"input must be Nx3xHxW with H, W divisible by {m}; got {tuple(x.shape)}")

    def encode(self, x):
        self._check_input(x)
        return self.encoder(x)

    def decode_dr(self, bottleneck, skips, with_head=True):
        features = self.dr_decoder(bottleneck, skips)
        return features, (self.dr_head(features) if with_head else None)

    def ff_fuse(self, bottleneck, dr_features):
        return self.ff(bottleneck, dr_features)

    def decode_le(self, fused, skips):
        features = self.le_decoder(fused, skips)
        if self.cfg.variant == "unet_baseline":
            logits = self.baseline_head(features)
            h, w = logits.shape[-2:]
            return torch.sigmoid(bicubic_resize_tensor(logits, self.cfg.scale * h, self.cfg.scale * w))
        return self.le_head(features)

    def forward(self, x, mode="train"):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        skips, bottleneck = self.encode(x)
        dr_features = dr_image = None
        if self.cfg.has_dr:
            dr_features, dr_image = self.decode_dr(bottleneck, skips, with_head=mode == "train")
        fused = self.ff_fuse(bottleneck, dr_features) if self.cfg.variant == "full" else bottleneck
        le_image = self.decode_le(fused, skips)
        return ModelOutputs(le_image, dr_image, dr_features, self.cfg.has_dr)


class IdentityStub(nn.Module):
    """Parameter-free stand-in whose output is the bicubic 2x of its input."""

    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or ArchConfig(variant=STUB_VARIANT)

    def forward(self, x, mode="train"):
        h, w = x.shape[-2:]
        up = bicubic_resize_tensor(x, self.cfg.scale * h, self.cfg.scale * w)
        return ModelOutputs(up.clamp(0.0, 1.0))


def init_params(model, seed=0):
    """Weights ~ N(0, 0.02^2), biases 0, drawn in parameter-name order."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            else:
                noise = torch.randn(p.shape, generator=gen, dtype=torch.float64) * INIT_STD
                p.copy_(noise.to(p.dtype))
    return model


def build_model(cfg=None, seed=0, dtype=torch.float32):
    cfg = cfg or ArchConfig()
    if cfg.variant == STUB_VARIANT:
        return IdentityStub(cfg)
    model = NEID(cfg).to(dtype)
    return init_params(model, seed)


def count_dr_head_flops(model, h, w):
    """Multiply-accumulates saved per image by skipping the DR head at inference."""
    if not model.cfg.has_dr:
        return 0
    conv = model.dr_head.conv
    return int(np.prod(conv.weight.shape)) * h * w
