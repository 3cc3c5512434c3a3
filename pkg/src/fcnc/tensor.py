"""Dense-array primitives: precision mode, matmul, softmax, finite-difference checks.

Activations are plain numpy arrays: rank 3 (batch, time, channels) through the
network body, rank 2 for per-sequence matrices.  Everything runs in float32 for
training and inference; gradient checking switches the whole build to float64
so central differences are meaningful.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import GradCheckError, ShapeError

_default_dtype = np.float32


def default_dtype() -> np.dtype:
    """Dtype newly allocated parameters and activations use."""
    return np.dtype(_default_dtype)


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    global _default_dtype
    _default_dtype = dt.type


@contextmanager
def precision(dtype):
    """Temporarily switch the global precision mode (e.g. float64 for grad checks)."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape diagnostic on mismatch."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax along ``axis`` (max-subtracted before exponentiation)."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_vjp(dy: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    """Backward of softmax given its output ``y``."""
    inner = np.sum(dy * y, axis=axis, keepdims=True)
    return y * (dy - inner)


# A differentiable op handle for grad_check: fn(*arrays) -> (outputs, vjp) where
# outputs is an array or tuple of arrays and vjp(cotangents) returns one
# gradient array per input, in order.
DifferentiableOp = Callable[..., tuple]


def _as_tuple(x) -> tuple:
    return x if isinstance(x, tuple) else (x,)


def grad_check(
    fn: DifferentiableOp,
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    The op is scalarized against a fixed random cotangent G: s = sum(G * y).
    The analytic gradient of s comes from the op's own vjp; the numeric one
    perturbs every input coordinate by +/-eps.  Relative error per coordinate
    is |analytic - numeric| / max(1, |analytic|, |numeric|).  Run under
    ``precision("float64")`` for meaningful tolerances.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]

    outputs, vjp = fn(*inputs)
    cotangents = tuple(
        rng.standard_normal(np.shape(y)) if np.ndim(y) else float(rng.standard_normal())
        for y in _as_tuple(outputs)
    )
    analytic = vjp(cotangents if isinstance(outputs, tuple) else cotangents[0])
    if len(analytic) != len(inputs):
        raise ValueError("vjp returned a gradient count different from the input count")

    def scalar_at(args) -> float:
        ys, _ = fn(*args)
        total = 0.0
        for g, y in zip(cotangents, _as_tuple(ys)):
            total += float(np.sum(g * y))
        return total

    worst = 0.0
    for idx, (x, ga) in enumerate(zip(inputs, analytic)):
        ga = np.asarray(ga, dtype=np.float64)
        if ga.shape != x.shape:
            raise ValueError(f"gradient {idx} has shape {ga.shape}, input has {x.shape}")
        flat = x.reshape(-1)
        for coord in range(flat.size):
            original = flat[coord]
            flat[coord] = original + eps
            plus = scalar_at(inputs)
            flat[coord] = original - eps
            minus = scalar_at(inputs)
            flat[coord] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = float(ga.reshape(-1)[coord])
            if not (np.isfinite(numeric) and np.isfinite(a)):
                raise GradCheckError(
                    f"non-finite gradient at input {idx}, coordinate {coord}: "
                    f"analytic={a!r} numeric={numeric!r}"
                )
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
