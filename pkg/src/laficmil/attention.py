"""Nyström-approximated multi-head self-attention with a depth-wise conv skip.

Shapes follow the usual convention: ``q, k`` are ``n x d_q``, ``v`` is
``n x d_v``; heads are 2-D slices, batched along a leading axis.  The
Nyström path never forms an ``n x n`` matrix; :class:`ElementCounter` lets
callers confirm that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .linalg import (
    as_matrix,
    as_stack,
    pinv_iterative,
    pinv_iterative_backward,
    softmax_rows,
    softmax_rows_backward,
)


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int = 64
    head_count: int = 8
    landmark_count: int = 8
    pinv_iterations: int = 6
    dconv_kernel: int = 3

    def __post_init__(self):
        if self.head_count < 1 or self.model_dim % self.head_count:
            raise ValueError(
                f"model_dim {self.model_dim} is not divisible by head_count {self.head_count}"
            )
        if self.landmark_count < 1:
            raise ValueError("landmark_count must be >= 1")
        if self.pinv_iterations < 1:
            raise ValueError("pinv_iterations must be >= 1")
        if self.dconv_kernel < 1 or self.dconv_kernel % 2 == 0:
            raise ValueError("dconv_kernel must be a positive odd number")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.head_count


@dataclass
class HeadWeights:
    """Projections of one head plus its depth-wise conv kernel (``kernel x d_v``)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    dconv: np.ndarray

    @classmethod
    def zeros(cls, cfg: AttentionConfig) -> "HeadWeights":
        d, dh = cfg.model_dim, cfg.head_dim
        return cls(np.zeros((d, dh)), np.zeros((d, dh)), np.zeros((d, dh)),
                   np.zeros((cfg.dconv_kernel, dh)))


class ElementCounter:
    """Tracks live and peak element counts of intermediates a kernel allocates."""

    def __init__(self):
        self.live = 0
        self.peak = 0

    def alloc(self, *arrays):
        for a in arrays:
            self.live += a.size
        self.peak = max(self.peak, self.live)

    def free(self, *arrays):
        for a in arrays:
            self.live -= a.size


class _NullCounter:
    def alloc(self, *arrays):
        pass

    def free(self, *arrays):
        pass


_NULL = _NullCounter()


def exact_attention(q, k, v, *, counter: ElementCounter | None = None) -> np.ndarray:
    """Full ``softmax(q k^T / sqrt(d_q)) v``; quadratic in n, used as an oracle."""
    q, k, v = as_stack(q, "q"), as_stack(k, "k"), as_stack(v, "v")
    if q.shape != k.shape or v.shape[-2] != q.shape[-2]:
        raise ShapeError(f"incompatible q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    c = counter or _NULL
    logits = q @ k.mT / math.sqrt(q.shape[-1])
    c.alloc(logits)
    s = softmax_rows(logits)
    c.alloc(s)
    c.free(logits)
    out = s @ v
    c.alloc(out)
    c.free(s)
    return out


def segment_sizes(n: int, m: int) -> np.ndarray:
    if m < 1:
        raise DegenerateInputError("landmark count must be >= 1")
    if m > n:
        raise DegenerateInputError(f"landmark count {m} exceeds row count {n}")
    base, extra = divmod(n, m)
    return np.array([base + 1 if i < extra else base for i in range(m)])


def segment_mean_landmarks(x, m: int) -> np.ndarray:
    """Means of ``m`` contiguous row segments; the first ``n mod m`` segments get one extra row."""
    x = as_stack(x, "x")
    sizes = segment_sizes(x.shape[-2], m)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    return np.add.reduceat(x, starts, axis=-2) / sizes[:, None]


def segment_mean_backward(grad: np.ndarray, n: int) -> np.ndarray:
    sizes = segment_sizes(n, grad.shape[-2])
    return np.repeat(grad / sizes[:, None], sizes, axis=-2)


@dataclass
class NystromCache:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    q_land: np.ndarray
    k_land: np.ndarray
    f: np.ndarray       # softmax(q k_land^T s), n x m
    a: np.ndarray       # softmax(q_land k_land^T s), m x m
    b: np.ndarray       # softmax(q_land k^T s), m x n
    z: np.ndarray
    pinv_report: object
    bv: np.ndarray
    zbv: np.ndarray
    scale: float


def _nystrom_forward(q, k, v, cfg: AttentionConfig, counter=None):
    q, k, v = as_stack(q, "q"), as_stack(k, "k"), as_stack(v, "v")
    if q.shape != k.shape or v.shape[-2] != q.shape[-2]:
        raise ShapeError(f"incompatible q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    c = counter or _NULL
    n = q.shape[-2]
    m = min(cfg.landmark_count, n)
    scale = 1.0 / math.sqrt(q.shape[-1])

    q_land = segment_mean_landmarks(q, m)
    k_land = segment_mean_landmarks(k, m)
    c.alloc(q_land, k_land)

    # Right-to-left so that nothing n x n is built.
    b = softmax_rows(q_land @ k.mT * scale)
    c.alloc(b, b)  # logits and softmax output coexist briefly
    c.free(b)
    bv = b @ v
    c.alloc(bv)

    a = softmax_rows(q_land @ k_land.mT * scale)
    c.alloc(a)
    z, report = pinv_iterative(a, cfg.pinv_iterations)
    c.alloc(z, z, z)  # z, a @ z and the polynomial temporary
    c.free(z, z)
    zbv = z @ bv
    c.alloc(zbv)

    f = softmax_rows(q @ k_land.mT * scale)
    c.alloc(f, f)
    c.free(f)
    out = f @ zbv
    c.alloc(out)
    c.free(q_land, k_land, b, bv, a, z, zbv, f)
    cache = NystromCache(q, k, v, q_land, k_land, f, a, b, z, report, bv, zbv, scale)
    return out, cache


def nystrom_attention(q, k, v, cfg: AttentionConfig, *, counter: ElementCounter | None = None) -> np.ndarray:
    """Linear-memory approximation of softmax attention using segment-mean landmarks.

    Computes ``softmax(q K~^T s) Z* softmax(Q~ k^T s) v`` with ``Z*`` the
    iterative pseudoinverse of ``softmax(Q~ K~^T s)`` and ``s = 1/sqrt(d_q)``.
    The landmark count is clamped to the number of rows.  Leading axes, if
    any, are treated as independent heads.
    """
    out, _ = _nystrom_forward(q, k, v, cfg, counter)
    return out


def nystrom_matrix(q, k, cfg: AttentionConfig) -> np.ndarray:
    """Materialize the approximated ``n x n`` attention matrix (tests and small n only)."""
    n = np.asarray(q).shape[-2]
    return nystrom_attention(q, k, np.eye(n), cfg)


def nystrom_attention_backward(cache: NystromCache, grad_out: np.ndarray):
    """Returns (grad_q, grad_k, grad_v)."""
    s = cache.scale
    n = cache.q.shape[-2]

    grad_f = grad_out @ cache.zbv.mT
    grad_zbv = cache.f.mT @ grad_out
    grad_z = grad_zbv @ cache.bv.mT
    grad_bv = cache.z.mT @ grad_zbv
    grad_b = grad_bv @ cache.v.mT
    grad_v = cache.b.mT @ grad_bv
    grad_a = pinv_iterative_backward(cache.a, cache.pinv_report, grad_z)

    gl_f = softmax_rows_backward(cache.f, grad_f) * s
    gl_a = softmax_rows_backward(cache.a, grad_a) * s
    gl_b = softmax_rows_backward(cache.b, grad_b) * s

    grad_q = gl_f @ cache.k_land
    grad_k_land = gl_f.mT @ cache.q + gl_a.mT @ cache.q_land
    grad_q_land = gl_a @ cache.k_land + gl_b @ cache.k
    grad_k = gl_b.mT @ cache.q_land

    grad_q = grad_q + segment_mean_backward(grad_q_land, n)
    grad_k = grad_k + segment_mean_backward(grad_k_land, n)
    return grad_q, grad_k, grad_v


def _pad_rows(v: np.ndarray, r: int) -> np.ndarray:
    return np.pad(v, [(0, 0)] * (v.ndim - 2) + [(r, r), (0, 0)])


def depthwise_conv_skip(v, kernel, kernel_size: int | None = None) -> np.ndarray:
    """Per-channel 1-D convolution along rows with zero padding; output has v's shape.

    ``kernel`` is ``kernel_size x channels``; tap ``j`` multiplies row ``t + j - r``.
    """
    v = as_stack(v, "v")
    kernel = as_stack(kernel, "kernel")
    ks = kernel.shape[-2] if kernel_size is None else kernel_size
    if ks % 2 == 0:
        raise ValueError(f"kernel_size must be odd, got {ks}")
    if kernel.shape[-2:] != (ks, v.shape[-1]):
        raise ShapeError(f"kernel shape {kernel.shape} != ({ks}, {v.shape[-1]})")
    n, r = v.shape[-2], ks // 2
    padded = _pad_rows(v, r)
    out = np.zeros(np.broadcast_shapes(v.shape, kernel.shape[:-2] + (1, 1)))
    for j in range(ks):
        out += kernel[..., j:j + 1, :] * padded[..., j:j + n, :]
    return out


def depthwise_conv_backward(v: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_v, grad_kernel)."""
    ks = kernel.shape[-2]
    n, r = v.shape[-2], ks // 2
    padded = _pad_rows(v, r)
    grad_padded = np.zeros_like(padded)
    grad_kernel = np.zeros_like(kernel)
    for j in range(ks):
        grad_padded[..., j:j + n, :] += kernel[..., j:j + 1, :] * grad_out
        grad_kernel[..., j, :] = np.sum(grad_out * padded[..., j:j + n, :], axis=-2)
    return grad_padded[..., r:r + n, :], grad_kernel


@dataclass
class MultiHeadCache:
    x: np.ndarray
    w_q: np.ndarray     # stacked per head: h x d x d_h
    w_k: np.ndarray
    w_v: np.ndarray
    dconv: np.ndarray   # h x kernel x d_h
    v: np.ndarray
    nystrom: NystromCache
    concat: np.ndarray


def _multi_head_forward(x, heads: list[HeadWeights], w_o, cfg: AttentionConfig):
    x = as_matrix(x, "x")
    if x.shape[1] != cfg.model_dim:
        raise ShapeError(f"input width {x.shape[1]} != model_dim {cfg.model_dim}")
    if len(heads) != cfg.head_count:
        raise ShapeError(f"expected {cfg.head_count} heads, got {len(heads)}")
    w_q = np.stack([hw.w_q for hw in heads])
    w_k = np.stack([hw.w_k for hw in heads])
    w_v = np.stack([hw.w_v for hw in heads])
    dconv = np.stack([hw.dconv for hw in heads])
    q, k, v = x @ w_q, x @ w_k, x @ w_v
    out, nc = _nystrom_forward(q, k, v, cfg)
    out = out + depthwise_conv_skip(v, dconv)
    n, h, dh = x.shape[0], len(heads), cfg.head_dim
    concat = out.transpose(1, 0, 2).reshape(n, h * dh)
    return concat @ w_o, MultiHeadCache(x, w_q, w_k, w_v, dconv, v, nc, concat)


def multi_head_attention(x, heads: list[HeadWeights], w_o, cfg: AttentionConfig) -> np.ndarray:
    """Concatenate per-head Nyström outputs (plus conv skip on V) and project by ``w_o``."""
    out, _ = _multi_head_forward(x, heads, w_o, cfg)
    return out


def multi_head_attention_backward(cache: MultiHeadCache, w_o: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_x, per-head HeadWeights of gradients, grad_w_o)."""
    x = cache.x
    n = x.shape[0]
    h, _, dh = cache.w_q.shape
    grad_w_o = cache.concat.T @ grad_out
    grad_heads = (grad_out @ w_o.T).reshape(n, h, dh).transpose(1, 0, 2)
    gq, gk, gv = nystrom_attention_backward(cache.nystrom, grad_heads)
    gv_conv, g_kernel = depthwise_conv_backward(cache.v, cache.dconv, grad_heads)
    gv = gv + gv_conv
    grad_x = np.sum(gq @ cache.w_q.mT + gk @ cache.w_k.mT + gv @ cache.w_v.mT, axis=0)
    xt = x.T
    head_grads = [HeadWeights(xt @ gq[i], xt @ gk[i], xt @ gv[i], g_kernel[i]) for i in range(h)]
    return grad_x, head_grads, grad_w_o
