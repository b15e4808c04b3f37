"""Canonical image representation plus the pixel-level operators.

An image is a float64 ndarray of shape (H, W, C), channels-last, C in {1, 3},
with every value in [0, 1]. Decoding happens exactly once, in ``load_image``;
every other module consumes and produces this layout.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import correlate1d

from .errors import ImageFormatError, ParameterError

__all__ = [
    "BlurParams",
    "clamp01",
    "gaussian_blur",
    "gaussian_kernel1d",
    "image_from_png_bytes",
    "image_to_png_bytes",
    "load_image",
    "resize_bilinear",
    "resize_bilinear_adjoint",
    "save_image",
    "validate_image",
]


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (H, W, C) / [0, 1] contract and return the array as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ParameterError(f"{name}: expected (H, W, C) with C in {{1, 3}}, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"{name}: empty spatial dimensions {arr.shape}")
    if not np.isfinite(arr).all():
        raise ParameterError(f"{name}: contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ParameterError(f"{name}: values outside [0, 1] (min={arr.min():.4g}, max={arr.max():.4g})")
    return arr


def clamp01(img: np.ndarray) -> np.ndarray:
    """Project every value onto [0, 1]."""
    return np.clip(img, 0.0, 1.0)


def _from_pil(im: Image.Image) -> np.ndarray:
    if im.mode == "L":
        arr = np.asarray(im, dtype=np.float64) / 255.0
        return arr[:, :, None]
    if im.mode in ("I", "I;16"):
        arr = np.asarray(im, dtype=np.float64) / 65535.0
        return arr[:, :, None]
    arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def load_image(path) -> np.ndarray:
    """Decode a PNG or JPEG file into the canonical [0, 1] float layout."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            return _from_pil(im)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc


def image_from_png_bytes(data: bytes) -> np.ndarray:
    """Decode in-memory PNG/JPEG bytes (used by the verification wire format)."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            return _from_pil(im)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"cannot decode image bytes: {exc}") from exc


def _to_pil(img: np.ndarray) -> Image.Image:
    arr = validate_image(img)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    if u8.shape[2] == 1:
        return Image.fromarray(u8[:, :, 0], mode="L")
    return Image.fromarray(u8, mode="RGB")


def save_image(img: np.ndarray, path) -> None:
    """Write an 8-bit non-interlaced PNG; round trip is exact to quantization."""
    _to_pil(img).save(Path(path), format="PNG")


def image_to_png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    _to_pil(img).save(buf, format="PNG")
    return buf.getvalue()


@dataclass(frozen=True)
class BlurParams:
    """Gaussian blur settings: odd square kernel plus standard deviation in pixels."""

    kernel_size: int = 19
    sigma: float = 5.0

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ParameterError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")


def gaussian_kernel1d(kernel_size: int, sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian taps on offsets -r..r, r = kernel_size // 2."""
    r = kernel_size // 2
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, params: BlurParams = BlurParams()) -> np.ndarray:
    """Per-channel 2D Gaussian smoothing with edge-inclusive reflect padding.

    Implemented as two separable 1D passes, which equals the full 2D
    convolution with the outer-product kernel up to float rounding. The kernel
    sums to one, so for inputs in [0, 1] the output stays in [0, 1] up to
    rounding; no clamp is applied so the operator stays exactly linear.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ParameterError(f"gaussian_blur expects (H, W, C), got shape {arr.shape}")
    k = gaussian_kernel1d(params.kernel_size, params.sigma)
    out = correlate1d(arr, k, axis=0, mode="reflect")
    out = correlate1d(out, k, axis=1, mode="reflect")
    return out


def resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resample to (out_h, out_w); half-pixel centers, edges clamped.

    The map is linear in the input pixels, so ``resize_bilinear_adjoint``
    is its exact transpose for gradient propagation.
    """
    arr = np.asarray(img, dtype=np.float64)
    in_h, in_w = arr.shape[:2]
    out_h, out_w = out_hw
    if (in_h, in_w) == (out_h, out_w):
        return arr
    y0, y1, wy = _resize_taps(in_h, out_h)
    x0, x1, wx = _resize_taps(in_w, out_w)
    top = arr[y0][:, x0] * (1 - wx)[None, :, None] + arr[y0][:, x1] * wx[None, :, None]
    bot = arr[y1][:, x0] * (1 - wx)[None, :, None] + arr[y1][:, x1] * wx[None, :, None]
    return top * (1 - wy)[:, None, None] + bot * wy[:, None, None]


def resize_bilinear_adjoint(grad: np.ndarray, in_hw: tuple[int, int]) -> np.ndarray:
    """Transpose of ``resize_bilinear``: scatter an (out_h, out_w, C) gradient back."""
    g = np.asarray(grad, dtype=np.float64)
    out_h, out_w = g.shape[:2]
    in_h, in_w = in_hw
    if (in_h, in_w) == (out_h, out_w):
        return g
    y0, y1, wy = _resize_taps(in_h, out_h)
    x0, x1, wx = _resize_taps(in_w, out_w)
    # scatter along x first, then y
    gx = np.zeros((out_h, in_w, g.shape[2]), dtype=np.float64)
    np.add.at(gx, (slice(None), x0), g * (1 - wx)[None, :, None])
    np.add.at(gx, (slice(None), x1), g * wx[None, :, None])
    out = np.zeros((in_h, in_w, g.shape[2]), dtype=np.float64)
    np.add.at(out, (y0,), gx * (1 - wy)[:, None, None])
    np.add.at(out, (y1,), gx * wy[:, None, None])
    return out


def _resize_taps(in_n: int, out_n: int):
    scale = in_n / out_n
    centers = (np.arange(out_n, dtype=np.float64) + 0.5) * scale - 0.5
    centers = np.clip(centers, 0.0, in_n - 1.0)
    lo = np.floor(centers).astype(np.intp)
    lo = np.minimum(lo, in_n - 2) if in_n > 1 else lo
    hi = np.minimum(lo + 1, in_n - 1)
    w = centers - lo
    return lo, hi, w
