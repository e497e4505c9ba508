"""Pixel-level primitives.

Images are ``float64`` arrays of shape ``(H, W, 3)`` holding RGB values in
``[0, 1]``. 8-bit quantization only happens at the PNG boundary.
"""
import os
import struct

import numpy as np
from PIL import Image as PILImage

from .errors import InvalidCode, InvalidSize, MissingFile, ShapeMismatch, UnsupportedFormat

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
# PNG color types: 0 gray, 2 RGB, 4 gray+alpha, 6 RGBA (3 = palette, rejected)
_PNG_COLOR_TYPES = {0, 2, 4, 6}

KEYS_A = -0.5


def check_image(img, name="img"):
    """Validate and return ``img`` as a float64 ``(H, W, 3)`` array in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be at least 1x1, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")


def _read_png_header(path):
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise UnsupportedFormat(f"{path} is not a PNG file")
    width, height, bit_depth, color_type = struct.unpack(">IIBB", head[16:26])
    return width, height, bit_depth, color_type


def load_png_u8(path):
    """Read an 8-bit PNG as a ``uint8`` ``(H, W, 3)`` RGB array."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(path)
    _, _, bit_depth, color_type = _read_png_header(path)
    if bit_depth != 8:
        raise UnsupportedFormat(f"{path}: bit depth {bit_depth} (only 8 supported)")
    if color_type not in _PNG_COLOR_TYPES:
        raise UnsupportedFormat(f"{path}: PNG color type {color_type} not supported")
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_png(path):
    """Read an 8-bit PNG as an RGB image in [0, 1].

    Alpha is dropped and grayscale is promoted to RGB. Palette images and
    any bit depth other than 8 raise :class:`UnsupportedFormat`.
    """
    return load_png_u8(path).astype(np.float64) / 255.0


def quantize(img):
    """Map [0, 1] values to uint8 with round-half-up, clamped to [0, 255]."""
    q = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def save_png(img, path):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3) image, got {arr.shape}")
    PILImage.fromarray(quantize(arr), mode="RGB").save(os.fspath(path), format="PNG")


def rgb_to_hsv(img):
    """Hexcone RGB -> HSV with all three channels in [0, 1].

    Hue is the angle divided by 360 degrees; achromatic pixels get hue 0.
    """
    img = np.asarray(img, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    v = img.max(axis=-1)
    delta = v - img.min(axis=-1)
    safe_v = np.where(v > 0, v, 1.0)
    s = np.where(v > 0, delta / safe_v, 0.0)

    safe_d = np.where(delta > 0, delta, 1.0)
    h_r = np.mod((g - b) / safe_d, 6.0)
    h_g = (b - r) / safe_d + 2.0
    h_b = (r - g) / safe_d + 4.0
    # ties resolve in R, G, B priority order
    h = np.where(v == r, h_r, np.where(v == g, h_g, h_b)) / 6.0
    h = np.where(delta > 0, h, 0.0)
    h = np.where(h >= 1.0, 0.0, h)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(img):
    """Inverse of :func:`rgb_to_hsv`."""
    img = np.asarray(img, dtype=np.float64)
    h, s, v = img[..., 0], img[..., 1], img[..., 2]
    h6 = np.mod(h, 1.0) * 6.0
    sector = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.choose(sector, choices_r)
    g = np.choose(sector, choices_g)
    b = np.choose(sector, choices_b)
    return np.stack([r, g, b], axis=-1)


def keys_kernel(x, a=KEYS_A):
    """Keys cubic-convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def bicubic_weights(n_in, n_out):
    """Dense ``(n_out, n_in)`` resampling matrix along one axis.

    Half-pixel centers, four taps per output sample, out-of-range taps
    clamped to the nearest edge sample. No kernel stretching on downscale.
    """
    if n_in < 1 or n_out < 1:
        raise InvalidSize(f"sizes must be >= 1, got {n_in} -> {n_out}")
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, n_in - 1)
        np.add.at(mat, (rows, idx), keys_kernel(frac - k))
    return mat


def bicubic_resize(img, out_h, out_w, clamp=True):
    """Separable bicubic resampling of an ``(H, W, C)`` array."""
    if out_h < 1 or out_w < 1:
        raise InvalidSize(f"output size must be >= 1, got {out_h}x{out_w}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    wh = bicubic_weights(h, out_h)
    ww = bicubic_weights(w, out_w)
    # contiguous planes keep the BLAS result independent of input memory layout
    planes = np.ascontiguousarray(img.transpose(2, 0, 1))
    out = (wh @ planes @ ww.T).transpose(1, 2, 0)
    return np.clip(out, 0.0, 1.0) if clamp else out


# Augment codes: rotation = code % 4 quarter turns (counter-clockwise),
# flip = code // 4 vertical flip applied before the rotation.
def _augment_one(img, code):
    if code // 4:
        img = img[::-1]
    return np.ascontiguousarray(np.rot90(img, k=code % 4, axes=(0, 1)))


def _check_code(code):
    if not isinstance(code, (int, np.integer)) or not 0 <= code <= 7:
        raise InvalidCode(f"augment code must be an integer in 0..7, got {code!r}")
    return int(code)


def augment(img, code):
    """Apply one of the 8 dihedral transforms to a single ``(H, W, ...)`` array."""
    return _augment_one(np.asarray(img), _check_code(code))


def apply_augment(low, high, code):
    """Apply the same dihedral transform to a low/high image pair."""
    code = _check_code(code)
    return _augment_one(np.asarray(low), code), _augment_one(np.asarray(high), code)


def augment_inverse(code):
    """Code whose transform undoes ``code``.

    Pure rotations invert to the opposite rotation; flipped codes are
    reflections and therefore their own inverse.
    """
    code = _check_code(code)
    if code // 4:
        return code
    return (4 - code) % 4
