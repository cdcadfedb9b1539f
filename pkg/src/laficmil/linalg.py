"""Dense kernels used by the attention head.

Every function takes and returns 2-D float64 arrays; softmax and the
pseudoinverse also accept stacks ``(..., rows, cols)`` so heads can be
batched.  Forward kernels on the differentiable path have a matching
``*_backward`` that maps an upstream gradient to gradients of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ShapeError


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_stack(x, name: str = "matrix") -> np.ndarray:
    """Like :func:`as_matrix` but also accepts stacks ``(..., rows, cols)``."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim < 2:
        raise ShapeError(f"{name} must be at least 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(x) -> np.ndarray:
    """Row-wise softmax, shifted by the row max so large logits cannot overflow."""
    x = as_stack(x, "x")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(s: np.ndarray, grad_s: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output ``s``."""
    return s * (grad_s - np.sum(grad_s * s, axis=-1, keepdims=True))


@dataclass
class LayerNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def layer_norm(x, gamma, beta, eps: float = 1e-5, *, return_cache: bool = False):
    x = as_matrix(x, "x")
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if gamma.shape[0] != x.shape[1] or beta.shape[0] != x.shape[1]:
        raise ShapeError(
            f"gamma/beta length {gamma.shape[0]}/{beta.shape[0]} != {x.shape[1]} columns"
        )
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gamma + beta
    if return_cache:
        return out, LayerNormCache(xhat, inv_std, gamma)
    return out


def layer_norm_backward(cache: LayerNormCache, grad_out: np.ndarray):
    """Returns (grad_x, grad_gamma, grad_beta)."""
    xhat, inv_std = cache.xhat, cache.inv_std
    d = xhat.shape[1]
    grad_gamma = np.sum(grad_out * xhat, axis=0)
    grad_beta = np.sum(grad_out, axis=0)
    g = grad_out * cache.gamma
    grad_x = inv_std / d * (
        d * g - g.sum(axis=1, keepdims=True) - xhat * np.sum(g * xhat, axis=1, keepdims=True)
    )
    return grad_x, grad_gamma, grad_beta


@dataclass
class PinvReport:
    """Per-iteration diagnostics; residual is ``max-row-sum |I - A Z_j|``.

    For a stack of matrices the residual is the worst one in the stack.
    """

    iterations_run: int = 0
    residual_history: list[float] = field(default_factory=list)
    # Z_0 .. Z_final, kept for the unrolled backward pass.
    trajectory: list[np.ndarray] = field(default_factory=list, repr=False)


def _norms(a: np.ndarray):
    col_sums = np.abs(a).sum(axis=-2)
    row_sums = np.abs(a).sum(axis=-1)
    return col_sums, row_sums


def pinv_initial(a: np.ndarray) -> np.ndarray:
    col_sums, row_sums = _norms(a)
    norm_1 = col_sums.max(axis=-1)[..., None, None]
    norm_inf = row_sums.max(axis=-1)[..., None, None]
    if np.any(norm_1 == 0.0):
        raise DegenerateInputError("all-zero matrix has no initial pseudoinverse guess")
    return a.mT / (norm_1 * norm_inf)


def pinv_iterative(a, iterations: int = 6) -> tuple[np.ndarray, PinvReport]:
    """Approximate the Moore-Penrose inverse of a square matrix (or a stack of them).

    Runs ``Z <- Z (13I - AZ (15I - AZ (7I - AZ))) / 4`` starting from
    ``A^T / (|A|_1 |A|_inf)``.  Convergence is cubic once ``|I - AZ| < 1``;
    before that, small singular directions only grow by about 3.25x per
    step, so ill-conditioned inputs need more than the default 6 iterations.
    """
    a = as_stack(a, "a")
    m = a.shape[-1]
    if a.shape[-2] != m:
        raise ShapeError(f"pinv_iterative needs square matrices, got {a.shape}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    eye = np.eye(m)
    z = pinv_initial(a)
    report = PinvReport(trajectory=[z])
    for _ in range(iterations):
        az = a @ z
        z = 0.25 * z @ (13 * eye - az @ (15 * eye - az @ (7 * eye - az)))
        report.iterations_run += 1
        report.residual_history.append(float(np.abs(eye - a @ z).sum(axis=-1).max()))
        report.trajectory.append(z)
    return z, report


def pinv_iterative_backward(a: np.ndarray, report: PinvReport, grad_z: np.ndarray) -> np.ndarray:
    """Reverse-mode through the unrolled iteration, including the initial guess."""
    m = a.shape[-1]
    eye = np.eye(m)
    grad_a = np.zeros_like(a)
    g = grad_z
    a_t = a.mT
    for z in reversed(report.trajectory[:-1]):
        # Z' = Z poly(P) with P = A Z, poly(P) = (13I - 15P + 7P^2 - P^3) / 4
        p = a @ z
        p2 = p @ p
        p_t, p2_t = p.mT, p2.mT
        poly = 0.25 * (13 * eye - 15 * p + 7 * p2 - p2 @ p)
        gp = z.mT @ g
        grad_p = 0.25 * (
            -15 * gp
            + 7 * (gp @ p_t + p_t @ gp)
            - (gp @ p2_t + p_t @ gp @ p_t + p2_t @ gp)
        )
        grad_a += grad_p @ z.mT
        g = g @ poly.mT + a_t @ grad_p

    # Z_0 = A^T * c, c = 1 / (|A|_1 |A|_inf); each max selects one column / row.
    col_sums, row_sums = _norms(a)
    j = np.argmax(col_sums, axis=-1)[..., None]
    i = np.argmax(row_sums, axis=-1)[..., None]
    norm_1 = np.take_along_axis(col_sums, j, axis=-1)[..., None]
    norm_inf = np.take_along_axis(row_sums, i, axis=-1)[..., None]
    c = 1.0 / (norm_1 * norm_inf)
    grad_a += c * g.mT
    grad_c = np.sum(g * a_t, axis=(-2, -1), keepdims=True)
    col_mask = (np.arange(m) == j)[..., None, :]
    row_mask = (np.arange(m) == i)[..., :, None]
    sign = np.sign(a)
    grad_a -= (grad_c * c / norm_1) * sign * col_mask
    grad_a -= (grad_c * c / norm_inf) * sign * row_mask
    return grad_a


def frobenius_rel_error(a, b) -> float:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    ref = np.linalg.norm(b)
    if ref == 0.0:
        raise DegenerateInputError("reference matrix has zero Frobenius norm")
    return float(np.linalg.norm(a - b) / ref)
