"""Array primitives of the convolutional network.

The single-matrix functions (:func:`pad`, :func:`cross_correlate`,
:func:`avg_pool`) implement the textbook definitions. :class:`Conv2d` and
the pooling pair are the batched versions (with backward passes) used by
the network.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft

PAD_MODES = ("periodic", "zero")


def pad(X, p: int, mode: str = "periodic") -> np.ndarray:
    """Pad a matrix by ``p`` on every side, either wrapping around or with zeros."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("pad expects a matrix")
    if p < 0:
        raise ValueError("padding must be non-negative")
    if mode == "periodic":
        if p > min(X.shape):
            raise ValueError(f"periodic padding {p} exceeds matrix size {X.shape}")
        return np.pad(X, p, mode="wrap")
    if mode == "zero":
        return np.pad(X, p, mode="constant")
    raise ValueError(f"unknown padding mode {mode!r}")


def cross_correlate(W, X) -> np.ndarray:
    """Valid cross-correlation ``(W * X)_{ij} = sum W_{i'j'} X_{i'+i, j'+j}``."""
    W = np.asarray(W, dtype=float)
    X = np.asarray(X, dtype=float)
    if W.shape[0] > X.shape[0] or W.shape[1] > X.shape[1]:
        raise ValueError(f"kernel {W.shape} is larger than input {X.shape}")
    windows = sliding_window_view(X, W.shape)
    return np.tensordot(windows, W, axes=([2, 3], [0, 1]))


def avg_pool(X) -> np.ndarray:
    """Average over non-overlapping 2x2 blocks; a trailing odd row/column is dropped."""
    X = np.asarray(X, dtype=float)
    m, n = X.shape[-2] // 2, X.shape[-1] // 2
    X = X[..., : 2 * m, : 2 * n]
    return X.reshape(*X.shape[:-2], m, 2, n, 2).mean(axis=(-3, -1))


def relu(x):
    return np.maximum(x, 0.0)


def pad_matrix(size: int, p: int, mode: str) -> np.ndarray:
    """``E`` of shape ``(size + 2p, size)`` with ``pad(X) = E_r @ X @ E_c.T``."""
    if mode not in PAD_MODES:
        raise ValueError(f"unknown padding mode {mode!r}")
    if mode == "periodic" and p > size:
        raise ValueError(f"periodic padding {p} exceeds size {size}")
    src = np.arange(size + 2 * p) - p
    E = np.zeros((size + 2 * p, size))
    if mode == "periodic":
        E[np.arange(size + 2 * p), src % size] = 1.0
    else:
        inside = (src >= 0) & (src < size)
        E[np.nonzero(inside)[0], src[inside]] = 1.0
    return E


class Conv2d:
    """Multi-channel padded cross-correlation with one scalar bias per output channel.

    Weights have shape ``(c_in, c_out, n_k, n_k)``: ``W[j, k]`` is the kernel
    linking input channel ``j`` to output channel ``k``. Activations use the
    layout ``(channel, batch, rows, cols)``.

    All three products (output, weight gradient, input gradient) are computed
    with 2D FFTs on the padded frame. With ``n_k = 2p + 1`` the valid output,
    the kernel-sized weight gradient and the full convolution for the input
    gradient all fit inside the frame, so the circular products equal the
    linear ones.
    """

    def __init__(self, rows: int, cols: int, p: int, mode: str):
        self.p = p
        self.Er = pad_matrix(rows, p, mode)
        self.Ec = pad_matrix(cols, p, mode)
        self.frame = (rows + 2 * p, cols + 2 * p)

    def forward(self, X, W, b):
        """Returns the pre-activation and a cache for :meth:`backward`."""
        c_in, c_out, n_k, _ = W.shape
        _, B, H, Wd = X.shape
        Xf = sfft.rfft2(self.Er @ X @ self.Ec.T)
        Wf = sfft.rfft2(W, s=self.frame)
        fshape = Xf.shape[-2:]
        F = fshape[0] * fshape[1]
        # per frequency: (B, c_in) @ (c_in, c_out)
        Zt = Xf.reshape(c_in, B, F).transpose(2, 1, 0) @ np.conj(Wf).reshape(c_in, c_out, F).transpose(2, 0, 1)
        Z = sfft.irfft2(Zt.transpose(2, 1, 0).reshape(c_out, B, *fshape), s=self.frame)[..., :H, :Wd]
        Z += b[:, None, None, None]
        return Z, (Xf, Wf)

    def backward(self, dZ, cache, W):
        Xf, Wf = cache
        c_in, c_out, n_k, _ = W.shape
        B = dZ.shape[1]
        dZf = sfft.rfft2(dZ, s=self.frame)
        fshape = dZf.shape[-2:]
        F = fshape[0] * fshape[1]
        dZt = dZf.reshape(c_out, B, F).transpose(2, 1, 0)
        dWt = Xf.reshape(c_in, B, F).transpose(2, 0, 1) @ np.conj(dZt)
        dW = sfft.irfft2(dWt.transpose(1, 2, 0).reshape(c_in, c_out, *fshape), s=self.frame)[..., :n_k, :n_k]
        dXt = dZt @ Wf.reshape(c_in, c_out, F).transpose(2, 1, 0)
        dXp = sfft.irfft2(dXt.transpose(2, 1, 0).reshape(c_in, B, *fshape), s=self.frame)
        db = dZ.sum(axis=(1, 2, 3))
        dX = self.Er.T @ dXp @ self.Ec
        return dX, np.ascontiguousarray(dW), db


def pool_forward(X):
    return avg_pool(X)


def pool_backward(dY, in_shape):
    dX = np.zeros(in_shape)
    m, n = dY.shape[-2], dY.shape[-1]
    dX[..., : 2 * m, : 2 * n] = np.repeat(np.repeat(dY, 2, axis=-2), 2, axis=-1) / 4
    return dX
