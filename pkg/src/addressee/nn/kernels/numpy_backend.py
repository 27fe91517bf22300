"""Pure-numpy fallback for the hot conv/pool kernels.

Semantics are shared with the compiled backend: valid (no-padding)
stride-1 cross-correlation, and 2x2 max pooling with floor division of odd
edges and first-position tie-breaking in row-major window order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "numpy"


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x (N,C,H,W), w (O,C,kh,kw), b (O,) -> y (N,O,H-kh+1,W-kw+1)."""
    kh, kw = w.shape[2:]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    y = np.einsum("nchwpq,ocpq->nohw", win, w, optimize=True)
    return y + b[:, np.newaxis, np.newaxis]


def conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of conv2d_forward: returns (dx, dw, db)."""
    kh, kw = w.shape[2:]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    db = dy.sum(axis=(0, 2, 3))
    dw = np.einsum("nohw,nchwpq->ocpq", dy, win, optimize=True)
    pad = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    winp = sliding_window_view(pad, (kh, kw), axis=(2, 3))
    dx = np.einsum("nohwpq,ocpq->nchw", winp, w[:, :, ::-1, ::-1], optimize=True)
    return dx, dw, db


def maxpool2_forward(x: np.ndarray):
    """2x2/stride-2 max pool; odd trailing rows/columns are dropped.

    Returns (y, idx) where idx holds each window's winning position in
    0..3 (row-major within the window), used to route gradients back.
    """
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    r = (x[:, :, :2 * h2, :2 * w2]
         .reshape(n, c, h2, 2, w2, 2)
         .transpose(0, 1, 2, 4, 3, 5)
         .reshape(n, c, h2, w2, 4))
    idx = r.argmax(axis=-1)
    y = np.take_along_axis(r, idx[..., np.newaxis], axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(idx: np.ndarray, dy: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c, h2, w2 = dy.shape
    d4 = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(d4, idx[..., np.newaxis], dy[..., np.newaxis], axis=-1)
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    dx[:, :, :2 * h2, :2 * w2] = (d4.reshape(n, c, h2, w2, 2, 2)
                                  .transpose(0, 1, 2, 4, 3, 5)
                                  .reshape(n, c, 2 * h2, 2 * w2))
    return dx
