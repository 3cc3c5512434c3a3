"""The full classifier: configuration, assembly, forward/backward, checkpoints.

Graph: embedding -> initial causal conv -> stack of residual dilated blocks
(dilation 2^l, skip outputs collected) -> ReLU over the skip sum -> spatial
dropout -> attention sublayer -> 1x1 conv to class channels -> masked global
max pool.  The backward pass retraces the same graph from per-call caches and
accumulates into the ParamSet gradient buffers.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import attention as attn_mod
from . import layers
from .attention import AttentionParams, apply_attention, apply_attention_vjp
from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    InputError,
)
from .layers import LengthMask, LrnParams
from .params import ParamSet
from .tensor import default_dtype

CHECKPOINT_MAGIC = b"FCNC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AttentionConfig:
    """Which attention sublayer to build and where it sits in the graph.

    after_output moves it past the class-channel conv, where it operates on
    num_classes channels instead of stack_channels; that width is rarely
    divisible by 8, so the flag is realistic only for single-head variants.
    """

    variant: str = "none"
    heads: int = 1
    k_loc: int = 3
    after_output: bool = False

    def __post_init__(self):
        if self.variant not in attn_mod.VARIANTS:
            raise ConfigError(f"unknown attention variant {self.variant!r}")
        if self.heads < 1:
            raise ConfigError(f"heads must be positive, got {self.heads}")
        if self.k_loc < 1 or self.k_loc % 2 == 0:
            raise ConfigError(f"local window must be odd and positive, got {self.k_loc}")


def attention_config_from_code(code: str) -> AttentionConfig:
    """Expand a run-level variant code (none, dot1, dot8, ...) into a config."""
    if code not in attn_mod.VARIANT_CODES:
        known = ", ".join(sorted(attn_mod.VARIANT_CODES))
        raise ConfigError(f"unknown variant code {code!r}; expected one of {known}")
    variant, heads = attn_mod.VARIANT_CODES[code]
    return AttentionConfig(variant=variant, heads=heads)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 16
    init_kernel: int = 3
    stack_layers: int = 9
    stack_kernel: int = 7
    stack_channels: int = 128
    num_classes: int = 25
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    dropout_p: float = 0.1
    l2_scale: float = 1e-4
    lrn: LrnParams = field(default_factory=LrnParams)
    # The initial conv is linear by default; flip to run it through LRN+ReLU
    # like the stack convolutions.
    init_conv_activation: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "init_kernel", "stack_kernel",
                     "stack_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.stack_layers < 0:
            raise ConfigError(f"stack_layers must be >= 0, got {self.stack_layers}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.l2_scale < 0:
            raise ConfigError(f"l2_scale must be >= 0, got {self.l2_scale}")
        width = self.attention_width
        if self.attention.variant != "none" and width % self.attention.heads != 0:
            raise ConfigError(
                f"attention heads ({self.attention.heads}) must divide "
                f"the attended width ({width}) exactly"
            )

    @property
    def attention_width(self) -> int:
        return self.num_classes if self.attention.after_output else self.stack_channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        kwargs = dict(raw)
        if "attention" in kwargs and isinstance(kwargs["attention"], dict):
            kwargs["attention"] = _sub_config(AttentionConfig, kwargs["attention"])
        if "lrn" in kwargs and isinstance(kwargs["lrn"], dict):
            kwargs["lrn"] = _sub_config(LrnParams, kwargs["lrn"])
        return cls(**kwargs)


def _sub_config(cls, raw: dict):
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    return cls(**raw)


def reference_config(vocab_size: int, variant_code: str = "none", seed: int = 0) -> ModelConfig:
    """The full-width default architecture with the chosen attention setting."""
    return ModelConfig(
        vocab_size=vocab_size,
        attention=attention_config_from_code(variant_code),
        seed=seed,
    )


def receptive_field(cfg: ModelConfig) -> int:
    """How many trailing input positions one output position can see."""
    span = 1 + (cfg.init_kernel - 1)
    for layer in range(cfg.stack_layers):
        span += (cfg.stack_kernel - 1) * 2 ** layer
    return span


class Model:
    """A built network: config, parameters, and the forward/backward engine."""

    def __init__(self, cfg: ModelConfig, params: ParamSet, attn: AttentionParams):
        self.cfg = cfg
        self.params = params
        self.attn = attn

    # -- assembly -----------------------------------------------------------

    @classmethod
    def build(cls, cfg: ModelConfig) -> "Model":
        """Allocate and initialize all parameters from cfg.seed.

        Weight maps feeding the conv body are He-uniform over fan-in,
        attention projections Glorot-uniform, biases zero, embeddings
        uniform(-0.05, 0.05) with the pad row pinned to zero.
        """
        dtype = default_dtype()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        ps = ParamSet()

        def he(shape, fan_in):
            limit = math.sqrt(6.0 / fan_in)
            return rng.uniform(-limit, limit, size=shape).astype(dtype)

        table = rng.uniform(-0.05, 0.05, size=(cfg.vocab_size, cfg.embed_dim)).astype(dtype)
        table[layers.PAD_ID] = 0.0
        ps.add("embed.table", table, penalized=False)

        ch = cfg.stack_channels
        ps.add("init_conv.kernel",
               he((cfg.init_kernel, cfg.embed_dim, ch), cfg.init_kernel * cfg.embed_dim))
        ps.add("init_conv.bias", np.zeros(ch, dtype=dtype), penalized=False)
        for layer in range(cfg.stack_layers):
            ps.add(f"block{layer}.conv.kernel",
                   he((cfg.stack_kernel, ch, ch), cfg.stack_kernel * ch))
            ps.add(f"block{layer}.conv.bias", np.zeros(ch, dtype=dtype), penalized=False)
            ps.add(f"block{layer}.proj.weight", he((ch, ch), ch))
            ps.add(f"block{layer}.proj.bias", np.zeros(ch, dtype=dtype), penalized=False)

        attn_init = attn_mod.init_attention_params(
            cfg.attention.variant, cfg.attention.heads, cfg.attention_width,
            cfg.attention.k_loc, rng, dtype=dtype,
        )
        for name, arr in attn_init.arrays().items():
            ps.add(f"attn.{name}", arr, penalized=not name.startswith("b_"))

        ps.add("out_conv.weight", he((ch, cfg.num_classes), ch))
        ps.add("out_conv.bias", np.zeros(cfg.num_classes, dtype=dtype), penalized=False)

        # Rebind the attention bundle to the registered buffers so in-place
        # optimizer updates and checkpoint loads stay visible to it.
        attn = replace(
            attn_init,
            **{name: ps[f"attn.{name}"].value for name in attn_init.arrays()},
        )
        return cls(cfg, ps, attn)

    def param_count(self) -> int:
        return self.params.total_size()

    # -- forward ------------------------------------------------------------

    def forward(self, ids, mask: LengthMask, training: bool = False,
                dropout_rng: np.random.Generator | None = None) -> np.ndarray:
        logits, _ = self.forward_with_cache(ids, mask, training, dropout_rng)
        return logits

    def forward_with_cache(self, ids, mask: LengthMask, training: bool = False,
                           dropout_rng: np.random.Generator | None = None):
        cfg = self.cfg
        p = self.params
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise InputError(f"ids must be (batch, time>=1), got shape {ids.shape}")

        x = layers.embed(ids, p["embed.table"].value)
        h = layers.causal_dilated_conv(
            x, p["init_conv.kernel"].value, p["init_conv.bias"].value, dilation=1)
        init_lrn_cache = None
        if cfg.init_conv_activation:
            h, init_lrn_cache = layers.lrn_relu(h, cfg.lrn)
        init_out = h
        skips = []
        block_caches = []
        for layer in range(cfg.stack_layers):
            h, skip, cache = layers.residual_dilated_block(
                h,
                p[f"block{layer}.conv.kernel"].value,
                p[f"block{layer}.conv.bias"].value,
                2 ** layer,
                cfg.lrn,
                p[f"block{layer}.proj.weight"].value,
                p[f"block{layer}.proj.bias"].value,
            )
            skips.append(skip)
            block_caches.append(cache)
        agg, active = layers.skip_aggregate(skips if skips else [init_out])
        dropped, drop_mask = layers.spatial_dropout(
            agg, cfg.dropout_p, training, dropout_rng)

        if cfg.attention.after_output:
            conv_in = dropped
            conv_out = layers.pointwise_conv(
                conv_in, p["out_conv.weight"].value, p["out_conv.bias"].value)
            features, attn_cache = apply_attention(conv_out, self.attn, mask)
        else:
            conv_in, attn_cache = apply_attention(dropped, self.attn, mask)
            features = layers.pointwise_conv(
                conv_in, p["out_conv.weight"].value, p["out_conv.bias"].value)
        logits, argmax = layers.global_masked_max_pool(features, mask)
        cache = {
            "ids": ids, "mask": mask, "embedded": x, "init_out": init_out,
            "init_lrn_cache": init_lrn_cache, "block_caches": block_caches,
            "active": active, "drop_mask": drop_mask, "attn_cache": attn_cache,
            "conv_in": conv_in, "features": features, "argmax": argmax,
        }
        return logits, cache

    def activations(self, ids, mask: LengthMask) -> dict[str, np.ndarray]:
        """Named intermediate tensors of an evaluation-mode pass."""
        cfg = self.cfg
        p = self.params
        ids = np.asarray(ids)
        out = {}
        x = layers.embed(ids, p["embed.table"].value)
        out["embedded"] = x
        h = layers.causal_dilated_conv(
            x, p["init_conv.kernel"].value, p["init_conv.bias"].value, dilation=1)
        if cfg.init_conv_activation:
            h, _ = layers.lrn_relu(h, cfg.lrn)
        out["init_conv"] = h
        skips = []
        for layer in range(cfg.stack_layers):
            h, skip, _ = layers.residual_dilated_block(
                h,
                p[f"block{layer}.conv.kernel"].value,
                p[f"block{layer}.conv.bias"].value,
                2 ** layer,
                cfg.lrn,
                p[f"block{layer}.proj.weight"].value,
                p[f"block{layer}.proj.bias"].value,
            )
            out[f"block{layer}.residual"] = h
            out[f"block{layer}.skip"] = skip
            skips.append(skip)
        agg, _ = layers.skip_aggregate(skips if skips else [out["init_conv"]])
        out["skip_sum"] = agg
        if cfg.attention.after_output:
            conv_out = layers.pointwise_conv(
                agg, p["out_conv.weight"].value, p["out_conv.bias"].value)
            features, _ = apply_attention(conv_out, self.attn, mask)
        else:
            attended, _ = apply_attention(agg, self.attn, mask)
            out["attended"] = attended
            features = layers.pointwise_conv(
                attended, p["out_conv.weight"].value, p["out_conv.bias"].value)
        out["features"] = features
        logits, _ = layers.global_masked_max_pool(features, mask)
        out["logits"] = logits
        return out

    # -- backward -----------------------------------------------------------

    def backward(self, dlogits: np.ndarray, cache: dict) -> np.ndarray:
        """Accumulate parameter gradients; returns the embedded-input gradient."""
        dfeatures = layers.global_masked_max_pool_vjp(
            dlogits, cache["argmax"], cache["features"].shape)
        return self.backward_from_features(dfeatures, cache)

    def backward_from_features(self, dfeatures: np.ndarray, cache: dict) -> np.ndarray:
        cfg = self.cfg
        p = self.params
        mask = cache["mask"]

        if cfg.attention.after_output:
            dconv_out, attn_grads = apply_attention_vjp(
                dfeatures, cache["attn_cache"], self.attn, mask)
            dconv_in, dw_out, db_out = layers.pointwise_conv_vjp(
                dconv_out, cache["conv_in"], p["out_conv.weight"].value)
            ddropped = dconv_in
        else:
            dconv_in, dw_out, db_out = layers.pointwise_conv_vjp(
                dfeatures, cache["conv_in"], p["out_conv.weight"].value)
            ddropped, attn_grads = apply_attention_vjp(
                dconv_in, cache["attn_cache"], self.attn, mask)
        p["out_conv.weight"].grad += dw_out
        p["out_conv.bias"].grad += db_out
        for name, g in attn_grads.items():
            p[f"attn.{name}"].grad += g

        dagg = layers.spatial_dropout_vjp(ddropped, cache["drop_mask"])
        dskip_each = layers.skip_aggregate_vjp(dagg, cache["active"])

        if cfg.stack_layers == 0:
            dh = dskip_each
        else:
            dh = np.zeros_like(dskip_each)
            for layer in reversed(range(cfg.stack_layers)):
                dh, dkernel, dbias, dproj_w, dproj_b = layers.residual_dilated_block_vjp(
                    dh, dskip_each, cache["block_caches"][layer],
                    p[f"block{layer}.conv.kernel"].value, 2 ** layer, cfg.lrn,
                    p[f"block{layer}.proj.weight"].value,
                )
                p[f"block{layer}.conv.kernel"].grad += dkernel
                p[f"block{layer}.conv.bias"].grad += dbias
                p[f"block{layer}.proj.weight"].grad += dproj_w
                p[f"block{layer}.proj.bias"].grad += dproj_b

        if cache["init_lrn_cache"] is not None:
            dh = layers.lrn_relu_vjp(dh, cache["init_lrn_cache"], cfg.lrn)
        dx, dinit_k, dinit_b = layers.causal_dilated_conv_vjp(
            dh, cache["embedded"], p["init_conv.kernel"].value, dilation=1)
        p["init_conv.kernel"].grad += dinit_k
        p["init_conv.bias"].grad += dinit_b
        p["embed.table"].grad += layers.embed_vjp(dx, cache["ids"], cfg.vocab_size)
        return dx


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def config_json(cfg: ModelConfig) -> bytes:
    """Canonical (key-sorted, no-whitespace) UTF-8 encoding of the config."""
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def save(model: Model, path) -> None:
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_bytes = config_json(model.cfg)
    body += struct.pack("<I", len(cfg_bytes))
    body += cfg_bytes
    body += struct.pack("<I", len(model.params))
    for param in model.params:
        name = param.name.encode("utf-8")
        body += struct.pack("<H", len(name))
        body += name
        value = np.ascontiguousarray(param.value, dtype="<f4")
        body += struct.pack("<B", value.ndim)
        for dim in value.shape:
            body += struct.pack("<I", dim)
        body += value.tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(body))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(
                f"checkpoint ends early: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def load(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(
            f"not a model checkpoint: bad magic {blob[:4]!r}")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(version, CHECKPOINT_VERSION)
    cfg_raw = r.take(r.u32())
    try:
        cfg = ModelConfig.from_dict(json.loads(cfg_raw.decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"unreadable checkpoint config: {exc}") from exc
    count = r.u32()
    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(r.take(size * 4), dtype="<f4").reshape(shape)
        loaded[name] = values
    stored_crc = r.u32()
    actual_crc = zlib.crc32(blob[:r.pos - 4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointChecksumError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes after checksum")

    model = Model.build(cfg)
    want = set(model.params.names())
    have = set(loaded)
    if want != have:
        raise CheckpointError(
            f"parameter names do not match config: missing {sorted(want - have)}, "
            f"unexpected {sorted(have - want)}")
    for param in model.params:
        stored = loaded[param.name]
        if stored.shape != param.value.shape:
            raise CheckpointError(
                f"parameter {param.name} has shape {stored.shape}, "
                f"expected {param.value.shape}")
        np.copyto(param.value, stored.astype(param.value.dtype, copy=False))
    return model
