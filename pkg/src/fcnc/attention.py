"""Self-attention over the time axis: scaled dot-product, simplified, local.

All three share the multi-head recipe: project the input into h independent
d_head-wide subspaces, attend per head, concatenate, and apply an output
projection.  Heads must divide the model width exactly.

Attention runs per sequence on the valid time slice only, so padded positions
neither influence valid outputs nor receive non-zero output themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, ShapeError
from .layers import LengthMask
from .tensor import softmax, softmax_vjp

VARIANTS = ("none", "scaled_dot", "simplified", "local")

# Run-level codes for the seven model variants.
VARIANT_CODES = {
    "none": ("none", 1),
    "dot1": ("scaled_dot", 1),
    "dot8": ("scaled_dot", 8),
    "simp1": ("simplified", 1),
    "simp8": ("simplified", 8),
    "local1": ("local", 1),
    "local8": ("local", 8),
}


@dataclass
class AttentionParams:
    """Parameter bundle for one attention sublayer.

    Per-head projections are stacked on a leading head axis.  Groups that the
    chosen variant does not use must be None; shapes are validated eagerly so a
    malformed checkpoint or config fails at build time, not mid-forward.
    """

    variant: str
    heads: int
    d_model: int
    w_q: np.ndarray | None = None  # (h, d_model, d_head)
    w_k: np.ndarray | None = None  # (h, d_model, d_head)
    w_v: np.ndarray | None = None  # (h, d_model, d_head)
    w_o: np.ndarray | None = None  # (h*d_head, d_model)
    w_s: np.ndarray | None = None  # (h, d_model, d_head), simplified weight map
    b_s: np.ndarray | None = None  # (h, d_head)
    kernel: np.ndarray | None = None  # (h, k_loc, d_model, d_head), local weight map
    b_loc: np.ndarray | None = None  # (h, d_head)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown attention variant {self.variant!r}")
        if self.variant == "none":
            self._require(())
            return
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigError(
                f"heads ({self.heads}) must divide model width ({self.d_model}) exactly"
            )
        if self.variant == "scaled_dot":
            self._require(("w_q", "w_k", "w_v", "w_o"))
        elif self.variant == "simplified":
            self._require(("w_v", "w_o", "w_s", "b_s"))
        else:
            self._require(("w_v", "w_o", "kernel", "b_loc"))
            if self.kernel.shape[1] % 2 == 0:
                raise ConfigError(
                    f"local window must be odd, got {self.kernel.shape[1]}"
                )
        dh = self.d_head
        per_head = {"w_q": (self.heads, self.d_model, dh),
                    "w_k": (self.heads, self.d_model, dh),
                    "w_v": (self.heads, self.d_model, dh),
                    "w_s": (self.heads, self.d_model, dh),
                    "b_s": (self.heads, dh),
                    "b_loc": (self.heads, dh),
                    "w_o": (self.heads * dh, self.d_model)}
        for name, want in per_head.items():
            arr = getattr(self, name)
            if arr is not None and arr.shape != want:
                raise ShapeError(f"attention {name} has shape {arr.shape}, expected {want}")
        if self.kernel is not None and (
            self.kernel.ndim != 4
            or self.kernel.shape[0] != self.heads
            or self.kernel.shape[2:] != (self.d_model, dh)
        ):
            raise ShapeError(
                f"attention kernel has shape {self.kernel.shape}, "
                f"expected ({self.heads}, k, {self.d_model}, {dh})"
            )

    def _require(self, needed: tuple[str, ...]):
        groups = ("w_q", "w_k", "w_v", "w_o", "w_s", "b_s", "kernel", "b_loc")
        for name in groups:
            have = getattr(self, name) is not None
            if have and name not in needed:
                raise ConfigError(f"variant {self.variant!r} must not carry {name}")
            if not have and name in needed:
                raise ConfigError(f"variant {self.variant!r} is missing {name}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def k_loc(self) -> int:
        return 0 if self.kernel is None else int(self.kernel.shape[1])

    def arrays(self) -> dict[str, np.ndarray]:
        """Present parameter groups, keyed by field name, in a fixed order."""
        out = {}
        for name in ("w_q", "w_k", "w_v", "w_o", "w_s", "b_s", "kernel", "b_loc"):
            arr = getattr(self, name)
            if arr is not None:
                out[name] = arr
        return out


def init_attention_params(
    variant: str,
    heads: int,
    d_model: int,
    k_loc: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> AttentionParams:
    """Allocate a fresh parameter bundle: Glorot-uniform maps, zero biases."""

    def glorot(shape, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape).astype(dtype)

    if variant == "none":
        return AttentionParams("none", heads=1, d_model=d_model)
    if heads < 1 or d_model % heads != 0:
        raise ConfigError(f"heads ({heads}) must divide model width ({d_model}) exactly")
    dh = d_model // heads
    w_v = glorot((heads, d_model, dh), d_model, dh)
    w_o = glorot((heads * dh, d_model), heads * dh, d_model)
    if variant == "scaled_dot":
        return AttentionParams(
            "scaled_dot", heads, d_model,
            w_q=glorot((heads, d_model, dh), d_model, dh),
            w_k=glorot((heads, d_model, dh), d_model, dh),
            w_v=w_v, w_o=w_o,
        )
    if variant == "simplified":
        return AttentionParams(
            "simplified", heads, d_model,
            w_v=w_v, w_o=w_o,
            w_s=glorot((heads, d_model, dh), d_model, dh),
            b_s=np.zeros((heads, dh), dtype=dtype),
        )
    if variant == "local":
        return AttentionParams(
            "local", heads, d_model,
            w_v=w_v, w_o=w_o,
            kernel=glorot((heads, k_loc, d_model, dh), k_loc * d_model, dh),
            b_loc=np.zeros((heads, dh), dtype=dtype),
        )
    raise ConfigError(f"unknown attention variant {variant!r}")


# ---------------------------------------------------------------------------
# Scaled dot-product attention on single matrices
# ---------------------------------------------------------------------------


def scaled_dot_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    key_valid: np.ndarray | None = None,
) -> tuple[np.ndarray, tuple]:
    """softmax(q k^T / sqrt(d_k)) v with optional key masking.

    key_valid marks which key/value rows are real; masked rows get score -inf
    and therefore zero weight.  Returns (output, cache); cache[-1] holds the
    attention weight matrix.
    """
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query width {q.shape} does not match key width {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key rows {k.shape} do not match value rows {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[1])
    scores = (q @ k.T) * scale
    if key_valid is not None:
        key_valid = np.asarray(key_valid, dtype=bool)
        if not key_valid.any():
            raise InputError("every key position is masked")
        scores = np.where(key_valid[None, :], scores, -np.inf)
    weights = softmax(scores, axis=-1)
    out = weights @ v
    return out, (q, k, v, scale, weights)


def scaled_dot_attention_vjp(
    dout: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q, k, v, scale, weights = cache
    dweights = dout @ v.T
    dv = weights.T @ dout
    dscores = softmax_vjp(dweights, weights, axis=-1) * scale
    dq = dscores @ k
    dk = dscores.T @ q
    return dq, dk, dv


# ---------------------------------------------------------------------------
# Per-sequence variant bodies (operate on the valid slice, one head at a time)
# ---------------------------------------------------------------------------


def _slide(xs: np.ndarray, steps: int) -> np.ndarray:
    """y[t] = xs[t + steps] where defined, else zero rows (2-d, time-major)."""
    if steps == 0:
        return xs
    y = np.zeros_like(xs)
    if steps > 0:
        if steps < xs.shape[0]:
            y[:-steps] = xs[steps:]
    else:
        if -steps < xs.shape[0]:
            y[-steps:] = xs[:steps]
    return y


def _local_logits(xs: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded symmetric conv over the valid slice; outside rows count as zero."""
    half = kernel.shape[0] // 2
    logits = np.broadcast_to(bias, (xs.shape[0], bias.shape[0])).copy()
    for j in range(kernel.shape[0]):
        logits += _slide(xs, j - half) @ kernel[j]
    return logits


def _local_logits_vjp(
    dlogits: np.ndarray, xs: np.ndarray, kernel: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    half = kernel.shape[0] // 2
    dxs = np.zeros_like(xs)
    dkernel = np.zeros_like(kernel)
    for j in range(kernel.shape[0]):
        dxs += _slide(dlogits, half - j) @ kernel[j].T
        dkernel[j] = _slide(xs, j - half).T @ dlogits
    return dxs, dkernel, dlogits.sum(axis=0)


def _attend_row(xs: np.ndarray, p: AttentionParams) -> tuple[np.ndarray, tuple]:
    heads_out = []
    head_caches = []
    for i in range(p.heads):
        if p.variant == "scaled_dot":
            head, cache = scaled_dot_attention(xs @ p.w_q[i], xs @ p.w_k[i], xs @ p.w_v[i])
        else:
            v = xs @ p.w_v[i]
            if p.variant == "simplified":
                logits = xs @ p.w_s[i] + p.b_s[i]
            else:
                logits = _local_logits(xs, p.kernel[i], p.b_loc[i])
            weights = softmax(logits, axis=-1)
            head = weights * v
            cache = (v, weights)
        heads_out.append(head)
        head_caches.append(cache)
    concat = np.concatenate(heads_out, axis=1)
    return concat @ p.w_o, (xs, concat, head_caches)


def _attend_row_vjp(
    dy: np.ndarray, cache: tuple, p: AttentionParams, grads: dict[str, np.ndarray]
) -> np.ndarray:
    xs, concat, head_caches = cache
    grads["w_o"] += concat.T @ dy
    dconcat = dy @ p.w_o.T
    dh = p.d_head
    dxs = np.zeros_like(xs)
    for i in range(p.heads):
        dhead = dconcat[:, i * dh:(i + 1) * dh]
        if p.variant == "scaled_dot":
            dq, dk, dv = scaled_dot_attention_vjp(dhead, head_caches[i])
            dxs += dq @ p.w_q[i].T + dk @ p.w_k[i].T + dv @ p.w_v[i].T
            grads["w_q"][i] += xs.T @ dq
            grads["w_k"][i] += xs.T @ dk
            grads["w_v"][i] += xs.T @ dv
        else:
            v, weights = head_caches[i]
            dweights = dhead * v
            dv = dhead * weights
            dlogits = softmax_vjp(dweights, weights, axis=-1)
            dxs += dv @ p.w_v[i].T
            grads["w_v"][i] += xs.T @ dv
            if p.variant == "simplified":
                dxs += dlogits @ p.w_s[i].T
                grads["w_s"][i] += xs.T @ dlogits
                grads["b_s"][i] += dlogits.sum(axis=0)
            else:
                dxs_loc, dkernel, dbias = _local_logits_vjp(dlogits, xs, p.kernel[i])
                dxs += dxs_loc
                grads["kernel"][i] += dkernel
                grads["b_loc"][i] += dbias
    return dxs


# ---------------------------------------------------------------------------
# Batched entry points
# ---------------------------------------------------------------------------


def self_attention(
    x: np.ndarray, p: AttentionParams, mask: LengthMask
) -> tuple[np.ndarray, tuple]:
    if p.variant != "scaled_dot":
        raise ConfigError(f"self_attention needs scaled_dot parameters, got {p.variant!r}")
    return _apply_rows(x, p, mask)


def simplified_attention(
    x: np.ndarray, p: AttentionParams, mask: LengthMask
) -> tuple[np.ndarray, tuple]:
    if p.variant != "simplified":
        raise ConfigError(f"simplified_attention needs simplified parameters, got {p.variant!r}")
    return _apply_rows(x, p, mask)


def local_attention(
    x: np.ndarray, p: AttentionParams, mask: LengthMask
) -> tuple[np.ndarray, tuple]:
    if p.variant != "local":
        raise ConfigError(f"local_attention needs local parameters, got {p.variant!r}")
    return _apply_rows(x, p, mask)


def _apply_rows(x, p, mask):
    if x.shape[2] != p.d_model:
        raise ShapeError(f"input width {x.shape} does not match attention width {p.d_model}")
    y = np.zeros_like(x)
    row_caches = []
    for b in range(x.shape[0]):
        length = int(mask.lengths[b])
        row_y, row_cache = _attend_row(x[b, :length], p)
        y[b, :length] = row_y
        row_caches.append(row_cache)
    return y, row_caches


def apply_attention(
    x: np.ndarray, p: AttentionParams, mask: LengthMask
) -> tuple[np.ndarray, tuple | None]:
    """Dispatch on the configured variant; identity when attention is off."""
    if p.variant == "none":
        return x, None
    return _apply_rows(x, p, mask)


def apply_attention_vjp(
    dy: np.ndarray, cache: tuple | None, p: AttentionParams, mask: LengthMask
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Input gradient plus one gradient array per parameter group."""
    if p.variant == "none":
        return dy, {}
    grads = {name: np.zeros_like(arr) for name, arr in p.arrays().items()}
    dx = np.zeros_like(dy)
    for b in range(dy.shape[0]):
        length = int(mask.lengths[b])
        dx[b, :length] = _attend_row_vjp(dy[b, :length], cache[b], p, grads)
    return dx, grads
