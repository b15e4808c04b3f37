"""Small numpy building blocks for the toy networks.

Forward functions are paired with explicit vector-Jacobian products so the
attack loops can push gradients from a scalar objective back to input pixels
or latent codes without an autodiff framework. Convolutions are 3x3, stride
1, zero-padded SAME; pooling is 2x2 mean over even-sized inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "conv3",
    "conv3_vjp_input",
    "conv3_vjp_weights",
    "dense",
    "im2col3",
    "meanpool2",
    "meanpool2_vjp",
    "relu",
    "relu_vjp",
    "sigmoid",
    "sigmoid_vjp",
    "tanh_vjp",
]


def im2col3(x: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (H*W, 9*C) patches for a zero-padded 3x3 window.

    Also accepts a batch (B, H, W, C), returning (B*H*W, 9*C). Row order is
    (ky, kx, c), matching ``w.reshape(9 * c_in, c_out)``.
    """
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    b, h, w, c = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
    win = win.transpose(0, 1, 2, 4, 5, 3)  # (B, H, W, 3, 3, C)
    return np.ascontiguousarray(win).reshape(b * h * w, 9 * c)


def col2im3(cols: np.ndarray, shape: tuple) -> np.ndarray:
    """Adjoint of im2col3: scatter (B*H*W, 9*C) patch gradients back to (B, H, W, C)."""
    if len(shape) == 3:
        b, (h, w, c) = 1, shape
    else:
        b, h, w, c = shape
    win = cols.reshape(b, h, w, 3, 3, c)
    padded = np.zeros((b, h + 2, w + 2, c), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            padded[:, ky : ky + h, kx : kx + w, :] += win[:, :, :, ky, kx, :]
    out = padded[:, 1 : 1 + h, 1 : 1 + w, :]
    return out if len(shape) == 4 else out[0]


def conv3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 SAME convolution; x (…, H, W, Cin), w (3, 3, Cin, Cout), b (Cout,)."""
    spatial = x.shape[:-1]
    c_out = w.shape[3]
    cols = im2col3(x)
    out = cols @ w.reshape(-1, c_out) + b
    return out.reshape(*spatial, c_out)


def conv3_vjp_input(grad_out: np.ndarray, w: np.ndarray, x_shape: tuple) -> np.ndarray:
    c_out = w.shape[3]
    gcols = grad_out.reshape(-1, c_out) @ w.reshape(-1, c_out).T
    return col2im3(gcols, x_shape)


def conv3_vjp_weights(x: np.ndarray, grad_out: np.ndarray, c_out: int):
    cols = im2col3(x)
    g = grad_out.reshape(-1, c_out)
    gw = (cols.T @ g).reshape(3, 3, x.shape[-1], c_out)
    gb = g.sum(axis=0)
    return gw, gb


def meanpool2(x: np.ndarray) -> np.ndarray:
    """2x2 mean pooling; spatial dims must be even."""
    if x.ndim == 3:
        h, w, c = x.shape
        return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))
    b, h, w, c = x.shape
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def meanpool2_vjp(grad_out: np.ndarray) -> np.ndarray:
    g = np.repeat(np.repeat(grad_out, 2, axis=-3), 2, axis=-2)
    return g / 4.0


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_vjp(grad_out: np.ndarray, x_pre: np.ndarray) -> np.ndarray:
    return grad_out * (x_pre > 0)


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_vjp(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """VJP given the forward output y = sigmoid(x)."""
    return grad_out * y * (1.0 - y)


def tanh_vjp(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """VJP given the forward output y = tanh(x)."""
    return grad_out * (1.0 - y * y)
