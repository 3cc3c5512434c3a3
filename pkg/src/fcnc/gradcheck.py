"""Finite-difference audit of every backward pass, at 64-bit precision.

Each check builds tiny tensors, runs one op (or a whole tiny model) through
its forward/vjp pair, and compares against central differences.  ReLU-style
kinks can land within eps of zero by bad luck, so every check may retry up to
three times with fresh draws; an implementation error fails all three.

Ops are referenced through their modules (``layers.foo``), not imported names,
so tests can inject a broken backward and watch the suite catch it.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from . import attention as attention_mod
from . import layers
from . import training
from .layers import LengthMask, LrnParams
from .model import Model, ModelConfig, attention_config_from_code
from .tensor import grad_check, precision, softmax, softmax_vjp

TOLERANCE = 1e-4
ATTEMPTS = 3


def _signed_away_from_zero(rng, shape, low=0.2, high=1.2):
    """Uniform magnitudes in [low, high] with random signs; keeps ReLU inputs
    clear of the kink so central differences stay valid."""
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def check_matmul(rng) -> float:
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))

    def fn(a, b):
        y = a @ b
        return y, lambda dy: (dy @ b.T, a.T @ dy)

    return grad_check(fn, [a, b], rng=rng)


def check_softmax(rng) -> float:
    x = rng.standard_normal((4, 6))

    def fn(x):
        y = softmax(x, axis=-1)
        return y, lambda dy: (softmax_vjp(dy, y, axis=-1),)

    return grad_check(fn, [x], rng=rng)


def check_embed(rng) -> float:
    vocab = 12
    ids = rng.integers(1, vocab, size=(2, 7))
    table = rng.standard_normal((vocab, 4))

    def fn(table):
        y = layers.embed(ids, table)
        return y, lambda dy: (layers.embed_vjp(dy, ids, vocab),)

    return grad_check(fn, [table], rng=rng)


def check_causal_dilated_conv(rng) -> float:
    x = rng.standard_normal((2, 9, 3))
    kernel = rng.standard_normal((3, 3, 4))
    bias = rng.standard_normal(4)

    def fn(x, kernel, bias):
        y = layers.causal_dilated_conv(x, kernel, bias, dilation=2)
        return y, lambda dy: layers.causal_dilated_conv_vjp(dy, x, kernel, dilation=2)

    return grad_check(fn, [x, kernel, bias], rng=rng)


def check_lrn_relu(rng) -> float:
    p = LrnParams()
    x = _signed_away_from_zero(rng, (2, 5, 8))

    def fn(x):
        y, cache = layers.lrn_relu(x, p)
        return y, lambda dy: (layers.lrn_relu_vjp(dy, cache, p),)

    return grad_check(fn, [x], rng=rng)


def check_residual_dilated_block(rng) -> float:
    p = LrnParams()
    x = rng.standard_normal((2, 8, 4))
    kernel = rng.standard_normal((3, 4, 4))
    bias = rng.standard_normal(4)
    proj_w = rng.standard_normal((4, 4))
    proj_b = rng.standard_normal(4)

    def fn(x, kernel, bias, proj_w, proj_b):
        res, skip, cache = layers.residual_dilated_block(
            x, kernel, bias, 2, p, proj_w, proj_b)

        def vjp(cot):
            dres, dskip = cot
            return layers.residual_dilated_block_vjp(
                dres, dskip, cache, kernel, 2, p, proj_w)

        return (res, skip), vjp

    return grad_check(fn, [x, kernel, bias, proj_w, proj_b], rng=rng)


def check_skip_aggregate(rng) -> float:
    skips = [rng.standard_normal((2, 5, 4)) for _ in range(3)]

    def fn(s0, s1, s2):
        y, active = layers.skip_aggregate([s0, s1, s2])

        def vjp(dy):
            d = layers.skip_aggregate_vjp(dy, active)
            return d, d, d

        return y, vjp

    return grad_check(fn, skips, rng=rng)


def check_pointwise_conv(rng) -> float:
    x = rng.standard_normal((2, 5, 4))
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)

    def fn(x, w, b):
        y = layers.pointwise_conv(x, w, b)
        return y, lambda dy: layers.pointwise_conv_vjp(dy, x, w)

    return grad_check(fn, [x, w, b], rng=rng)


def check_spatial_dropout(rng) -> float:
    x = rng.standard_normal((2, 5, 4))
    mask_seed = int(rng.integers(1 << 31))

    def fn(x):
        # Re-seeding makes the drawn mask identical on every call, so the op
        # is a fixed linear map and central differences apply.
        y, mask = layers.spatial_dropout(
            x, 0.4, training=True, rng=np.random.default_rng(mask_seed))
        return y, lambda dy: (layers.spatial_dropout_vjp(dy, mask),)

    return grad_check(fn, [x], rng=rng)


def check_global_masked_max_pool(rng) -> float:
    x = rng.standard_normal((3, 6, 4))
    mask = LengthMask(np.array([6, 3, 1]), 6)

    def fn(x):
        y, argmax = layers.global_masked_max_pool(x, mask)
        return y, lambda dy: (layers.global_masked_max_pool_vjp(dy, argmax, x.shape),)

    return grad_check(fn, [x], rng=rng)


def check_loss(rng) -> float:
    logits = rng.standard_normal((4, 5))
    labels = np.array([1, 4, 0, 2])

    def fn(logits):
        value, dlogits = training.softmax_cross_entropy(logits, labels)
        return np.float64(value), lambda dy: (dlogits * dy,)

    return grad_check(fn, [logits], rng=rng)


def _make_attention_check(variant: str, heads: int):
    def check(rng) -> float:
        d_model = 8
        p = attention_mod.init_attention_params(
            variant, heads, d_model, k_loc=3, rng=rng, dtype=np.float64)
        names = list(p.arrays())
        mask = LengthMask(np.array([5, 3]), 5)
        x = rng.standard_normal((2, 5, d_model))

        def fn(x, *arrays):
            bound = replace(p, **dict(zip(names, arrays)))
            y, cache = attention_mod.apply_attention(x, bound, mask)

            def vjp(dy):
                dx, grads = attention_mod.apply_attention_vjp(dy, cache, bound, mask)
                return (dx, *(grads[n] for n in names))

            return y, vjp

        return grad_check(fn, [x, *(p.arrays()[n] for n in names)], rng=rng)

    return check


def _make_model_check(code: str):
    def check(rng) -> float:
        cfg = ModelConfig(
            vocab_size=12, embed_dim=4, init_kernel=3, stack_layers=2,
            stack_kernel=7, stack_channels=8, num_classes=3,
            attention=attention_config_from_code(code),
            dropout_p=0.0, l2_scale=0.01,
            seed=int(rng.integers(1 << 31)),
        )
        model = Model.build(cfg)
        ps = model.params
        names = ps.names()
        ids = rng.integers(2, cfg.vocab_size, size=(2, 7))
        lengths = np.array([7, 4])
        ids[1, 4:] = layers.PAD_ID
        mask = LengthMask(lengths, 7)
        labels = np.array([1, 2])

        def fn(*arrays):
            for name, arr in zip(names, arrays):
                np.copyto(ps[name].value, arr)
            logits, cache = model.forward_with_cache(ids, mask, training=False)
            ce, dlogits = training.softmax_cross_entropy(logits, labels)
            value = ce + cfg.l2_scale * ps.squared_weight_sum()

            def vjp(dy):
                ps.zero_grads()
                model.backward(dlogits * dy, cache)
                for p in ps:
                    if p.penalized:
                        p.grad += dy * (2.0 * cfg.l2_scale) * p.value
                return tuple(p.grad.copy() for p in ps)

            return np.float64(value), vjp

        return grad_check(fn, [ps[name].value.copy() for name in names], rng=rng)

    return check


CHECKS: list[tuple[str, callable]] = [
    ("matmul", check_matmul),
    ("softmax", check_softmax),
    ("embed", check_embed),
    ("causal_dilated_conv", check_causal_dilated_conv),
    ("lrn_relu", check_lrn_relu),
    ("residual_dilated_block", check_residual_dilated_block),
    ("skip_aggregate", check_skip_aggregate),
    ("pointwise_conv", check_pointwise_conv),
    ("spatial_dropout", check_spatial_dropout),
    ("global_masked_max_pool", check_global_masked_max_pool),
    ("loss", check_loss),
]
for _variant in ("scaled_dot", "simplified", "local"):
    for _heads in (1, 8):
        CHECKS.append(
            (f"attention.{_variant}.h{_heads}", _make_attention_check(_variant, _heads)))
for _code in ("none", "dot1", "dot8", "simp1", "simp8", "local1", "local8"):
    CHECKS.append((f"model.{_code}", _make_model_check(_code)))


def run_suite(seed: int = 0, tolerance: float = TOLERANCE):
    """Run every check; returns ([(name, max_rel_err)], elapsed_seconds)."""
    started = time.perf_counter()
    results = []
    for index, (name, check) in enumerate(CHECKS):
        best = np.inf
        for attempt in range(ATTEMPTS):
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, 4, index, attempt]))
            with precision(np.float64):
                err = check(rng)
            best = min(best, err)
            if best <= tolerance:
                break
        results.append((name, best))
    return results, time.perf_counter() - started
