"""Pure numpy implementations of the hot kernels.

Each function mirrors the signature of its counterpart in ``_ckernels.pyx``
and is used whenever the compiled module is unavailable or disabled.
"""
import numpy as np

_ROW_CHUNK = 256


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place bias-corrected Adam update of ``p`` with moments ``m``, ``v``."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(g, x):
    return g * (x > 0.0)


def _block_sum(a, b, gamma, skip_diagonal):
    total = 0.0
    for start in range(0, a.shape[0], _ROW_CHUNK):
        block = a[start:start + _ROW_CHUNK]
        diff = block[:, None, :] - b[None, :, :]
        k = np.exp(-gamma * np.einsum("ijk,ijk->ij", diff, diff))
        if skip_diagonal:
            rows = np.arange(block.shape[0])
            k[rows, rows + start] = 0.0
        total += float(k.sum())
    return total


def rbf_kernel_sums(x, y, gamma):
    """Return (off-diagonal sum of K_xx, off-diagonal sum of K_yy, sum of K_xy).

    The kernel is ``exp(-gamma * ||a - b||^2)``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return (
        _block_sum(x, x, gamma, True),
        _block_sum(y, y, gamma, True),
        _block_sum(x, y, gamma, False),
    )


def nearest_center(samples, centers):
    """Index of the closest center (squared Euclidean) for every sample row."""
    samples = np.asarray(samples, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if samples.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    diff = samples[:, None, :] - centers[None, :, :]
    return np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1).astype(np.int64)
