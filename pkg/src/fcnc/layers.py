"""Forward/backward kernels for the convolutional body of the network.

Every kernel is a pure function; one that needs intermediate state for its
backward pass returns ``(output, cache)`` and the matching ``*_vjp`` takes the
cache back.  Gradients are returned, never accumulated here; the model
assembler owns accumulation into parameter buffers.

Activations are (batch, time, channels) arrays.  Variable-length batches carry
a LengthMask; padded positions are inert by construction (zero embedding row,
causal left padding, masked pooling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, ShapeError, VocabularyError


@dataclass(frozen=True)
class LrnParams:
    """Divisive normalization across a channel window (bias k, size n)."""

    n: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ConfigError(f"normalization window must be odd and positive, got {self.n}")
        if self.k <= 0 or self.beta <= 0:
            raise ConfigError("normalization bias and exponent must be positive")


@dataclass(frozen=True)
class LengthMask:
    """Per-row valid lengths for a padded (batch, time, ...) block."""

    lengths: np.ndarray
    max_time: int

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=np.int64)
        object.__setattr__(self, "lengths", lengths)
        if lengths.ndim != 1:
            raise InputError(f"lengths must be one-dimensional, got shape {lengths.shape}")
        if lengths.size and int(lengths.min()) < 1:
            raise InputError("every sequence must have length >= 1")
        if lengths.size and int(lengths.max()) > self.max_time:
            raise InputError(
                f"length {int(lengths.max())} exceeds padded time {self.max_time}"
            )

    @property
    def batch(self) -> int:
        return int(self.lengths.shape[0])

    def valid(self) -> np.ndarray:
        """Boolean (batch, max_time) grid, True at real positions."""
        return np.arange(self.max_time)[None, :] < self.lengths[:, None]


def _flat_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    b, t, ci = x.shape
    return (x.reshape(b * t, ci) @ w).reshape(b, t, w.shape[1])


def delay(x: np.ndarray, steps: int) -> np.ndarray:
    """y[:, t] = x[:, t - steps], zero where that runs off the front."""
    if steps == 0:
        return x
    y = np.zeros_like(x)
    y[:, steps:] = x[:, :-steps]
    return y


def advance(x: np.ndarray, steps: int) -> np.ndarray:
    """y[:, t] = x[:, t + steps], zero where that runs off the end."""
    if steps == 0:
        return x
    y = np.zeros_like(x)
    y[:, :-steps] = x[:, steps:]
    return y


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------

PAD_ID = 0


def embed(ids: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Look up one table row per id; row PAD_ID is the all-zero pad vector."""
    vocab_size = table.shape[0]
    if ids.size:
        lo, hi = int(ids.min()), int(ids.max())
        if lo < 0 or hi >= vocab_size:
            offender = lo if lo < 0 else hi
            raise VocabularyError(
                f"character id {offender} outside vocabulary of size {vocab_size}"
            )
    return table[ids]


def embed_vjp(dy: np.ndarray, ids: np.ndarray, vocab_size: int) -> np.ndarray:
    """Gradient for the table; the frozen pad row receives none."""
    dtable = np.zeros((vocab_size, dy.shape[-1]), dtype=dy.dtype)
    np.add.at(dtable, ids.reshape(-1), dy.reshape(-1, dy.shape[-1]))
    dtable[PAD_ID] = 0.0
    return dtable


# ---------------------------------------------------------------------------
# Causal dilated convolution
# ---------------------------------------------------------------------------


def causal_dilated_conv(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, dilation: int
) -> np.ndarray:
    """Convolution over time with taps spaced ``dilation`` apart, left-zero-padded.

    kernel has shape (k, c_in, c_out); tap j reads x at offset -j*dilation, so
    output position t depends only on inputs at positions <= t.
    """
    if x.shape[2] != kernel.shape[1]:
        raise ShapeError(f"input channels {x.shape} do not match kernel {kernel.shape}")
    y = np.broadcast_to(bias, x.shape[:2] + (kernel.shape[2],)).copy()
    for j in range(kernel.shape[0]):
        y += _flat_matmul(delay(x, j * dilation), kernel[j])
    return y


def causal_dilated_conv_vjp(
    dy: np.ndarray, x: np.ndarray, kernel: np.ndarray, dilation: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    b, t, ci = x.shape
    dx = np.zeros_like(x)
    dkernel = np.zeros_like(kernel)
    dy_flat = dy.reshape(b * t, -1)
    for j in range(kernel.shape[0]):
        dx += _flat_matmul(advance(dy, j * dilation), kernel[j].T)
        dkernel[j] = delay(x, j * dilation).reshape(b * t, ci).T @ dy_flat
    dbias = dy.sum(axis=(0, 1))
    return dx, dkernel, dbias


# ---------------------------------------------------------------------------
# Local response normalization + ReLU
# ---------------------------------------------------------------------------


def _window_sum(x: np.ndarray, n: int) -> np.ndarray:
    """Sum over a size-n window centered per channel, clipped at the edges."""
    half = (n - 1) // 2
    c = x.shape[-1]
    zeros = np.zeros(x.shape[:-1] + (1,), dtype=x.dtype)
    cs = np.concatenate([zeros, np.cumsum(x, axis=-1)], axis=-1)
    hi = np.minimum(np.arange(c) + half, c - 1) + 1
    lo = np.maximum(np.arange(c) - half, 0)
    return cs[..., hi] - cs[..., lo]


def lrn_relu(x: np.ndarray, p: LrnParams) -> tuple[np.ndarray, tuple]:
    """x / (k + (alpha/n) * windowed sum of squares)^beta, then ReLU."""
    denom = p.k + (p.alpha / p.n) * _window_sum(x * x, p.n)
    denom_pow = denom ** (-p.beta)
    z = x * denom_pow
    y = np.maximum(z, 0.0)
    return y, (x, denom, denom_pow, z)


def lrn_relu_vjp(dy: np.ndarray, cache: tuple, p: LrnParams) -> np.ndarray:
    x, denom, denom_pow, z = cache
    dz = np.where(z > 0, dy, 0.0)
    # d z_c / d x_m has a diagonal term and a window term through the sum of
    # squares; the window relation is symmetric, so the second term is again a
    # clipped window sum.
    g = _window_sum(dz * x * denom_pow / denom, p.n)
    return dz * denom_pow - (2.0 * p.alpha * p.beta / p.n) * x * g


# ---------------------------------------------------------------------------
# Residual dilated block
# ---------------------------------------------------------------------------


def residual_dilated_block(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    dilation: int,
    lrn: LrnParams,
    proj_w: np.ndarray,
    proj_b: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, tuple]:
    """Dilated conv + normalization in one branch, linear projection in the other.

    Returns (residual_out, skip_out, cache): the normalized conv branch is the
    skip output and is also added to the projection to form the residual output.
    """
    h = causal_dilated_conv(x, kernel, bias, dilation)
    d, lrn_cache = lrn_relu(h, lrn)
    residual = d + pointwise_conv(x, proj_w, proj_b)
    return residual, d, (x, lrn_cache)


def residual_dilated_block_vjp(
    dres: np.ndarray,
    dskip: np.ndarray,
    cache: tuple,
    kernel: np.ndarray,
    dilation: int,
    lrn: LrnParams,
    proj_w: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    x, lrn_cache = cache
    dd = dres + dskip
    dh = lrn_relu_vjp(dd, lrn_cache, lrn)
    dx_conv, dkernel, dbias = causal_dilated_conv_vjp(dh, x, kernel, dilation)
    dx_proj, dproj_w, dproj_b = pointwise_conv_vjp(dres, x, proj_w)
    return dx_conv + dx_proj, dkernel, dbias, dproj_w, dproj_b


# ---------------------------------------------------------------------------
# Skip aggregation
# ---------------------------------------------------------------------------


def skip_aggregate(skips: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """ReLU of the elementwise sum of all skip tensors."""
    if not skips:
        raise InputError("need at least one skip tensor")
    shape = skips[0].shape
    for s in skips[1:]:
        if s.shape != shape:
            raise ShapeError(f"skip shapes differ: {shape} vs {s.shape}")
    total = skips[0].copy()
    for s in skips[1:]:
        total += s
    active = total > 0
    return np.where(active, total, 0.0), active


def skip_aggregate_vjp(dy: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. each addend (identical for all of them)."""
    return np.where(active, dy, 0.0)


# ---------------------------------------------------------------------------
# Pointwise (1x1) convolution
# ---------------------------------------------------------------------------


def pointwise_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-position affine map over channels."""
    if x.shape[2] != w.shape[0]:
        raise ShapeError(f"input channels {x.shape} do not match weights {w.shape}")
    return _flat_matmul(x, w) + b


def pointwise_conv_vjp(
    dy: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    b, t, ci = x.shape
    dy_flat = dy.reshape(b * t, -1)
    dx = _flat_matmul(dy, w.T)
    dw = x.reshape(b * t, ci).T @ dy_flat
    db = dy.sum(axis=(0, 1))
    return dx, dw, db


# ---------------------------------------------------------------------------
# Spatial dropout
# ---------------------------------------------------------------------------


def spatial_dropout(
    x: np.ndarray, p: float, training: bool, rng: np.random.Generator | None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Drop whole (batch, channel) columns across all time steps.

    Survivors are scaled by 1/(1-p) so evaluation is an exact identity.
    The cache is the scaled mask, or None when the op was an identity.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"drop probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    if rng is None:
        raise InputError("training-mode dropout needs an explicit seeded generator")
    b, _, c = x.shape
    keep = rng.random((b, 1, c)) >= p
    mask = keep.astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def spatial_dropout_vjp(dy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return dy if mask is None else dy * mask


# ---------------------------------------------------------------------------
# Global masked max pooling
# ---------------------------------------------------------------------------


def global_masked_max_pool(
    x: np.ndarray, mask: LengthMask
) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel maximum over each row's valid time prefix.

    Returns (pooled (batch, channels), argmax positions).  Ties resolve to the
    earliest time index, which is also where the gradient is routed.
    """
    b, t, c = x.shape
    if mask.batch != b or mask.max_time != t:
        raise ShapeError(f"mask for ({mask.batch}, {mask.max_time}) does not fit {x.shape}")
    neg = np.where(mask.valid()[:, :, None], x, -np.inf)
    argmax = np.argmax(neg, axis=1)
    pooled = np.take_along_axis(x, argmax[:, None, :], axis=1)[:, 0, :]
    return pooled, argmax


def global_masked_max_pool_vjp(
    dy: np.ndarray, argmax: np.ndarray, shape: tuple[int, int, int]
) -> np.ndarray:
    dx = np.zeros(shape, dtype=dy.dtype)
    np.put_along_axis(dx, argmax[:, None, :], dy[:, None, :], axis=1)
    return dx
