"""Attention variants against hand-rolled loop oracles and closed forms."""

import math

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcnc.attention import (
    VARIANT_CODES,
    AttentionParams,
    apply_attention,
    init_attention_params,
    local_attention,
    scaled_dot_attention,
    self_attention,
    simplified_attention,
)
from fcnc.errors import ConfigError, InputError, ShapeError
from fcnc.layers import LengthMask


def _params(variant, heads, d_model, k_loc=3, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    p = init_attention_params(variant, heads, d_model, k_loc, rng, dtype=dtype)
    if variant == "simplified":
        p = dataclasses.replace(p, b_s=rng.standard_normal(p.b_s.shape).astype(dtype))
    if variant == "local":
        p = dataclasses.replace(p, b_loc=rng.standard_normal(p.b_loc.shape).astype(dtype))
    return p


# -- AttentionParams validation ---------------------------------------------


def test_params_require_exact_head_division(rng):
    with pytest.raises(ConfigError):
        init_attention_params("scaled_dot", 3, 8, 3, rng)


def test_params_reject_irrelevant_groups():
    w = np.zeros((1, 4, 4))
    with pytest.raises(ConfigError):
        AttentionParams("scaled_dot", 1, 4, w_q=w, w_k=w, w_v=w,
                        w_o=np.zeros((4, 4)), w_s=w)


def test_params_reject_missing_groups():
    with pytest.raises(ConfigError):
        AttentionParams("scaled_dot", 1, 4)


def test_params_reject_even_local_window(rng):
    with pytest.raises(ConfigError):
        init_attention_params("local", 1, 4, k_loc=2, rng=rng)


def test_variant_codes_cover_the_seven_settings():
    assert set(VARIANT_CODES) == {
        "none", "dot1", "dot8", "simp1", "simp8", "local1", "local8"}
    assert VARIANT_CODES["dot8"] == ("scaled_dot", 8)
    assert VARIANT_CODES["local1"] == ("local", 1)


# -- scaled_dot_attention on plain matrices ---------------------------------


def test_dot_single_key_returns_value_row(rng):
    v = rng.standard_normal((1, 3))
    for _ in range(5):
        q = rng.standard_normal((4, 2))
        out, _ = scaled_dot_attention(q, rng.standard_normal((1, 2)), v)
        assert np.allclose(out, np.broadcast_to(v, (4, 3)), atol=1e-12)


def test_dot_zero_query_averages_values(rng):
    k = rng.standard_normal((6, 4))
    v = rng.standard_normal((6, 3))
    out, _ = scaled_dot_attention(np.zeros((2, 4)), k, v)
    assert np.allclose(out, np.broadcast_to(v.mean(axis=0), (2, 3)), atol=1e-9)


def test_dot_two_key_closed_form():
    q = np.array([[1.0, 0.0]])
    k = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = np.array([[10.0, 0.0], [0.0, 10.0]])
    out, _ = scaled_dot_attention(q, k, v)
    w0 = 1.0 / (1.0 + math.exp(-1.0 / math.sqrt(2.0)))
    assert np.allclose(out, [[10.0 * w0, 10.0 * (1.0 - w0)]], atol=1e-9)
    assert np.allclose(out, [[6.70, 3.30]], atol=5e-3)


def test_dot_matches_loop_oracle(rng):
    q = rng.standard_normal((4, 3))
    k = rng.standard_normal((6, 3))
    v = rng.standard_normal((6, 5))
    out, _ = scaled_dot_attention(q, k, v)
    for i in range(4):
        scores = np.array([q[i] @ k[j] / math.sqrt(3.0) for j in range(6)])
        w = np.exp(scores - scores.max())
        w /= w.sum()
        assert np.allclose(out[i], sum(w[j] * v[j] for j in range(6)), atol=1e-9)


def test_dot_weight_rows_are_distributions(rng):
    q = rng.standard_normal((5, 4))
    k = rng.standard_normal((7, 4))
    v = rng.standard_normal((7, 4))
    _, cache = scaled_dot_attention(q, k, v)
    weights = cache[-1]
    assert np.all(weights > 0)
    assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-6)


def test_dot_output_is_convex_combination(rng):
    q = rng.standard_normal((5, 4))
    k = rng.standard_normal((7, 4))
    v = rng.standard_normal((7, 3))
    out, _ = scaled_dot_attention(q, k, v)
    assert np.all(out <= v.max(axis=0) + 1e-9)
    assert np.all(out >= v.min(axis=0) - 1e-9)


def test_dot_masked_keys_get_zero_weight(rng):
    q = rng.standard_normal((3, 4))
    k = rng.standard_normal((5, 4))
    v = rng.standard_normal((5, 2))
    valid = np.array([True, True, False, True, False])
    out, cache = scaled_dot_attention(q, k, v, key_valid=valid)
    assert np.all(cache[-1][:, ~valid] == 0.0)
    ref, _ = scaled_dot_attention(q, k[valid], v[valid])
    assert np.allclose(out, ref, atol=1e-9)


def test_dot_all_keys_masked_is_an_error(rng):
    with pytest.raises(InputError):
        scaled_dot_attention(rng.standard_normal((2, 3)),
                             rng.standard_normal((4, 3)),
                             rng.standard_normal((4, 2)),
                             key_valid=np.zeros(4, dtype=bool))


def test_dot_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        scaled_dot_attention(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        scaled_dot_attention(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros((5, 2)))


# -- self attention (scaled dot over a batch) -------------------------------


def test_self_attention_single_position_is_value_path(rng):
    p = _params("scaled_dot", 2, 6)
    x = rng.standard_normal((3, 1, 6))
    mask = LengthMask(np.array([1, 1, 1]), 1)
    y, _ = self_attention(x, p, mask)
    for b in range(3):
        heads = [x[b] @ p.w_v[i] for i in range(2)]
        want = np.concatenate(heads, axis=1) @ p.w_o
        assert np.allclose(y[b], want, atol=1e-9)


def test_self_attention_identity_projections_reduce_to_primitive(rng):
    d = 5
    eye = np.eye(d)[None]
    p = AttentionParams("scaled_dot", 1, d, w_q=eye, w_k=eye, w_v=eye,
                        w_o=np.eye(d))
    x = rng.standard_normal((1, 6, d))
    y, _ = self_attention(x, p, LengthMask(np.array([6]), 6))
    want, _ = scaled_dot_attention(x[0], x[0], x[0])
    assert np.allclose(y[0], want, atol=1e-12)


def test_self_attention_eight_heads_match_head_loop_oracle(rng):
    d_model, heads = 128, 8
    dh = d_model // heads
    p = _params("scaled_dot", heads, d_model, seed=3)
    x = rng.standard_normal((2, 9, d_model))
    mask = LengthMask(np.array([9, 4]), 9)
    y, _ = self_attention(x, p, mask)
    for b, length in enumerate([9, 4]):
        xs = x[b, :length]
        cols = []
        for i in range(heads):
            q, k, v = xs @ p.w_q[i], xs @ p.w_k[i], xs @ p.w_v[i]
            scores = q @ k.T / math.sqrt(dh)
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            cols.append((e / e.sum(axis=1, keepdims=True)) @ v)
        want = np.concatenate(cols, axis=1) @ p.w_o
        assert np.allclose(y[b, :length], want, atol=1e-9)
        assert np.array_equal(y[b, length:], np.zeros((9 - length, d_model)))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20, deadline=None)
def test_self_attention_permutation_equivariance(seed):
    r = np.random.default_rng(seed)
    p = _params("scaled_dot", 1, 4, seed=seed)
    x = r.standard_normal((1, 6, 4))
    mask = LengthMask(np.array([6]), 6)
    perm = r.permutation(6)
    y, _ = self_attention(x, p, mask)
    y_perm, _ = self_attention(x[:, perm], p, mask)
    assert np.allclose(y_perm[0], y[0, perm], atol=1e-9)


def test_self_attention_rejects_wrong_variant(rng):
    p = _params("simplified", 1, 4)
    with pytest.raises(ConfigError):
        self_attention(np.zeros((1, 2, 4)), p, LengthMask(np.array([2]), 2))


# -- simplified attention ---------------------------------------------------


def test_simplified_head_width_one_ignores_weight_map(rng):
    # d_head = 1 means the channel softmax is over a single value: w == 1.
    d = 4
    p = _params("simplified", d, d, seed=1)
    p2 = dataclasses.replace(
        p, w_s=rng.standard_normal(p.w_s.shape), b_s=rng.standard_normal(p.b_s.shape))
    x = rng.standard_normal((1, 5, d))
    mask = LengthMask(np.array([5]), 5)
    y1, _ = simplified_attention(x, p, mask)
    y2, _ = simplified_attention(x, p2, mask)
    assert np.allclose(y1, y2, atol=1e-12)
    heads = [(x[0] @ p.w_v[i]) for i in range(d)]
    want = np.concatenate(heads, axis=1) @ p.w_o
    assert np.allclose(y1[0], want, atol=1e-9)


def test_simplified_constant_logits_give_uniform_weights(rng):
    d = 6
    p = _params("simplified", 1, d, seed=2)
    p = dataclasses.replace(p, w_s=np.zeros_like(p.w_s),
                            b_s=np.full_like(p.b_s, 0.7))
    x = rng.standard_normal((1, 4, d))
    y, _ = simplified_attention(x, p, LengthMask(np.array([4]), 4))
    want = ((x[0] @ p.w_v[0]) / d) @ p.w_o
    assert np.allclose(y[0], want, atol=1e-9)


def test_simplified_matches_scalar_oracle(rng):
    d = 4
    p = _params("simplified", 1, d, seed=3)
    x = rng.standard_normal((1, 5, d))
    y, _ = simplified_attention(x, p, LengthMask(np.array([5]), 5))
    for t in range(5):
        v = x[0, t] @ p.w_v[0]
        logits = x[0, t] @ p.w_s[0] + p.b_s[0]
        e = np.exp(logits - logits.max())
        w = e / e.sum()
        assert abs(w.sum() - 1.0) < 1e-6
        assert np.allclose(y[0, t], (w * v) @ p.w_o, atol=1e-9)


# -- local attention --------------------------------------------------------


def test_local_window_one_equals_simplified_bitwise(rng):
    d, heads = 8, 2
    p_loc = _params("local", heads, d, k_loc=1, seed=4)
    p_simp = AttentionParams(
        "simplified", heads, d,
        w_v=p_loc.w_v, w_o=p_loc.w_o,
        w_s=p_loc.kernel[:, 0], b_s=p_loc.b_loc)
    x = rng.standard_normal((2, 6, d))
    mask = LengthMask(np.array([6, 3]), 6)
    y_loc, _ = local_attention(x, p_loc, mask)
    y_simp, _ = simplified_attention(x, p_simp, mask)
    assert np.array_equal(y_loc, y_simp)


def test_local_zero_kernel_gives_uniform_weights(rng):
    d = 6
    p = _params("local", 1, d, seed=5)
    p = dataclasses.replace(p, kernel=np.zeros_like(p.kernel),
                            b_loc=np.full_like(p.b_loc, -1.3))
    x = rng.standard_normal((1, 5, d))
    y, _ = local_attention(x, p, LengthMask(np.array([5]), 5))
    want = ((x[0] @ p.w_v[0]) / d) @ p.w_o
    assert np.allclose(y[0], want, atol=1e-9)


def test_local_matches_windowed_loop_oracle(rng):
    d, k_loc = 4, 3
    p = _params("local", 1, d, k_loc=k_loc, seed=6)
    x = rng.standard_normal((1, 6, d))
    length = 6
    y, _ = local_attention(x, p, LengthMask(np.array([length]), length))
    half = k_loc // 2
    for t in range(length):
        logits = p.b_loc[0].copy()
        for j in range(k_loc):
            src = t + j - half  # symmetric window centred on t
            if 0 <= src < length:
                logits = logits + x[0, src] @ p.kernel[0, j]
        e = np.exp(logits - logits.max())
        w = e / e.sum()
        v = x[0, t] @ p.w_v[0]
        assert np.allclose(y[0, t], (w * v) @ p.w_o, atol=1e-9)


# -- apply_attention dispatch -----------------------------------------------


def test_apply_none_returns_input_object(rng):
    x = rng.standard_normal((2, 3, 4))
    p = AttentionParams("none", 1, 4)
    y, cache = apply_attention(x, p, LengthMask(np.array([3, 2]), 3))
    assert y is x and cache is None


def test_apply_all_seven_settings_preserve_shape(rng):
    x = rng.standard_normal((2, 7, 8)).astype(np.float64)
    mask = LengthMask(np.array([7, 3]), 7)
    for code, (variant, heads) in VARIANT_CODES.items():
        p = _params(variant, heads, 8, seed=hash(code) % 1000)
        y, _ = apply_attention(x, p, mask)
        assert y.shape == x.shape, code


def test_apply_padded_positions_do_not_leak(rng):
    mask = LengthMask(np.array([4, 7]), 7)
    x = rng.standard_normal((2, 7, 8))
    for code, (variant, heads) in VARIANT_CODES.items():
        p = _params(variant, heads, 8, seed=11)
        y, _ = apply_attention(x, p, mask)
        poked = x.copy()
        poked[0, 4:] = rng.standard_normal((3, 8)) * 50.0
        y2, _ = apply_attention(poked, p, mask)
        assert np.array_equal(y[0, :4], y2[0, :4]), code
        if variant != "none":
            assert np.array_equal(y[0, 4:], np.zeros((3, 8))), code


def test_apply_rejects_width_mismatch(rng):
    p = _params("scaled_dot", 1, 4)
    with pytest.raises(ShapeError):
        apply_attention(np.zeros((1, 2, 5)), p, LengthMask(np.array([2]), 2))
