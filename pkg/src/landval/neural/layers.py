"""Hand-rolled differentiable layers on numpy arrays.

Every forward returns (output, cache); every backward consumes the upstream
gradient plus the cache. Image tensors are channels-last (N, H, W, C) and
convolution weights are (3, 3, C_in, C_out), so every GEMM runs on contiguous
blocks. All layers are dtype-polymorphic so the whole model can run in
float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import blas as _blas


def _gemm_for(dtype):
    return _blas.sgemm if np.dtype(dtype) == np.float32 else _blas.dgemm


def _mm_into(a: np.ndarray, b: np.ndarray, out: np.ndarray, beta: float,
             trans_a: int = 0, trans_b: int = 0) -> None:
    """out = op(a) @ op(b) + beta * out, in place, on C-contiguous arrays.

    BLAS sees a C-contiguous (m, n) array as its (n, m) transpose, so the
    product is computed as out.T = op(b).T @ op(a).T on the transposed views.
    """
    gemm = _gemm_for(out.dtype)
    res = gemm(1.0, b.T, a.T, beta=beta, c=out.T,
               trans_a=trans_b, trans_b=trans_a, overwrite_c=1)
    if not np.shares_memory(res, out):  # pragma: no cover - BLAS refused in-place
        out.T[:] = res


def conv3x3_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Same-padding 3x3 convolution as nine offset GEMMs.

    x (N,H,W,C), W (3,3,C,O). Shifted input views are kept in the cache for
    the weight gradient; accumulation happens inside BLAS to avoid temporary
    output-sized buffers.
    """
    n, h, w, c = x.shape
    o = W.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.empty((n * h * w, o), dtype=x.dtype)
    out[:] = b
    views = []
    for dy in range(3):
        for dx in range(3):
            v = np.ascontiguousarray(xp[:, dy : dy + h, dx : dx + w, :]).reshape(-1, c)
            views.append(v)
            # out += v @ W[dy, dx]
            _mm_into(v, W[dy, dx], out, beta=1.0)
    return out.reshape(n, h, w, o), (views, x.shape)


def conv3x3_backward(dout: np.ndarray, cache, W: np.ndarray):
    views, x_shape = cache
    n, h, w, c = x_shape
    o = W.shape[3]
    dm = np.ascontiguousarray(dout.reshape(-1, o))
    dW = np.empty_like(W)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dout.dtype)
    dv = np.empty((n * h * w, c), dtype=dout.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            dW[dy, dx] = views[k].T @ dm
            # dv = dm @ W[dy, dx].T, into the reused buffer
            _mm_into(dm, W[dy, dx], dv, beta=0.0, trans_b=1)
            dxp[:, dy : dy + h, dx : dx + w, :] += dv.reshape(n, h, w, c)
            k += 1
    db = dm.sum(axis=0)
    return dxp[:, 1 : h + 1, 1 : w + 1, :], dW, db


def maxpool2_forward(x: np.ndarray):
    """2x2 max pool, stride 2, channels-last. Ties route to the first of the
    four window positions (row-major order)."""
    slices = (x[:, 0::2, 0::2, :], x[:, 0::2, 1::2, :], x[:, 1::2, 0::2, :], x[:, 1::2, 1::2, :])
    out = np.maximum(np.maximum(slices[0], slices[1]), np.maximum(slices[2], slices[3]))
    return out, (out, x)


def maxpool2_backward(dout: np.ndarray, cache):
    out, x = cache
    dx = np.zeros_like(x)
    taken = np.zeros(dout.shape, dtype=bool)
    dests = ((0, 0), (0, 1), (1, 0), (1, 1))
    for oy, ox in dests:
        sl = x[:, oy::2, ox::2, :]
        hit = (sl == out) & ~taken
        dx[:, oy::2, ox::2, :] += dout * hit
        taken |= hit
    return dx


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask):
    return dout * mask


def global_avg_pool_forward(x: np.ndarray):
    """(N,H,W,C) -> (N,C)."""
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dout: np.ndarray, x_shape):
    n, h, w, c = x_shape
    return np.broadcast_to(dout[:, None, None, :], x_shape) / (h * w)


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """y = x W^T + b with W of shape (out, in)."""
    return x @ W.T + b, x


def linear_backward(dout: np.ndarray, x: np.ndarray, W: np.ndarray):
    dW = dout.T @ x
    db = dout.sum(axis=0)
    dx = dout @ W
    return dx, dW, db


def dropout_forward(x: np.ndarray, p: float, rng: np.random.Generator):
    """Inverted dropout: scaled at training time, inference is a no-op."""
    if p <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask):
    return dout if mask is None else dout * mask


def embedding_forward(ids: np.ndarray, table: np.ndarray):
    """Row lookup: ids (N,) int -> (N, dim)."""
    return table[ids], (ids, table.shape)


def embedding_backward(dout: np.ndarray, cache):
    ids, shape = cache
    dtable = np.zeros(shape, dtype=dout.dtype)
    np.add.at(dtable, ids, dout)
    return dtable


class RunningNorm:
    """Per-feature standardization with momentum-tracked running statistics.

    Training mode normalizes by batch statistics and updates the running
    mean/var; frozen mode (inference, gradient checking) normalizes by the
    stored statistics, making the transform a fixed affine map.
    """

    def __init__(self, n_features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.mean = np.zeros(n_features, dtype=dtype)
        self.var = np.ones(n_features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.frozen = False

    def forward(self, x: np.ndarray):
        if self.frozen or x.shape[0] < 2:
            inv = 1.0 / np.sqrt(self.var + self.eps)
            return (x - self.mean) * inv, ("frozen", inv.astype(x.dtype))
        bm = x.mean(axis=0)
        bv = x.var(axis=0)
        self.mean = ((1.0 - self.momentum) * self.mean + self.momentum * bm).astype(self.mean.dtype)
        self.var = ((1.0 - self.momentum) * self.var + self.momentum * bv).astype(self.var.dtype)
        inv = 1.0 / np.sqrt(bv + self.eps)
        xhat = (x - bm) * inv
        return xhat, ("batch", xhat, inv)

    def backward(self, dout: np.ndarray, cache):
        if cache[0] == "frozen":
            return dout * cache[1]
        _, xhat, inv = cache
        n = dout.shape[0]
        return (inv / n) * (n * dout - dout.sum(axis=0) - xhat * (dout * xhat).sum(axis=0))

    def state(self) -> dict:
        return {"mean": self.mean, "var": self.var}

    def load_state(self, state: dict) -> None:
        self.mean = np.asarray(state["mean"], dtype=self.mean.dtype)
        self.var = np.asarray(state["var"], dtype=self.var.dtype)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


BCE_EPS = 1e-7


def bce_loss(score, label):
    """Elementwise binary cross-entropy with scores clipped to [eps, 1-eps]."""
    s = np.clip(np.asarray(score, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(label, dtype=np.float64)
    return -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))


def sigmoid_bce_forward(z: np.ndarray, y: np.ndarray):
    """Fused sigmoid + mean BCE. Returns (loss, scores, cache)."""
    s = sigmoid(z)
    loss = float(np.mean(bce_loss(s, y)))
    return loss, s, (s, y)


def sigmoid_bce_backward(cache):
    s, y = cache
    return ((s - y) / len(y)).astype(s.dtype)
