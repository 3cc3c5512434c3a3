"""Loss, Adam, length-bucketed batching, and the epoch loop."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import metrics as metrics_mod
from .errors import ConfigError, DivergenceError, InputError
from .layers import PAD_ID, LengthMask
from .model import Model
from .params import ParamSet


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_scale: float = 1e-4
    shuffle_seed: int = 0
    bucket_width: int = 16

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        # 0 is tolerated so a zero-rate step can be shown to be a no-op.
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.l2_scale < 0:
            raise ConfigError(f"l2_scale must be >= 0, got {self.l2_scale}")
        if self.bucket_width < 1:
            raise ConfigError(f"bucket_width must be >= 1, got {self.bucket_width}")


@dataclass
class Batch:
    """One padded minibatch; indices point back into the source dataset."""

    ids: np.ndarray  # (B, T_pad) int
    mask: LengthMask
    labels: np.ndarray  # (B,) int
    indices: np.ndarray  # (B,) positions in the dataset this batch was cut from

    def __len__(self) -> int:
        return int(self.ids.shape[0])


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its logits gradient (already / batch)."""
    batch, num_classes = logits.shape
    labels = np.asarray(labels)
    if labels.size and (int(labels.min()) < 0 or int(labels.max()) >= num_classes):
        raise InputError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    value = float(-log_probs[rows, labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    dlogits /= batch
    return value, dlogits


def l2_penalty(params: ParamSet, l2_scale: float) -> float:
    """l2_scale times the squared sum over weight matrices/kernels only."""
    return l2_scale * params.squared_weight_sum()


def loss(logits: np.ndarray, labels: np.ndarray, params: ParamSet, l2_scale: float) -> float:
    ce, _ = softmax_cross_entropy(logits, labels)
    return ce + l2_penalty(params, l2_scale)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class OptState:
    """First/second moment buffers plus the completed-step counter."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet) -> "OptState":
        state = cls()
        for p in params:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        return state


def adam_update(params: ParamSet, opt: OptState, tc: TrainConfig) -> None:
    """One bias-corrected Adam step, applied in place to every parameter."""
    opt.step += 1
    t = opt.step
    corr1 = 1.0 - tc.adam_beta1 ** t
    corr2 = 1.0 - tc.adam_beta2 ** t
    for p in params:
        m = opt.m[p.name]
        v = opt.v[p.name]
        m *= tc.adam_beta1
        m += (1.0 - tc.adam_beta1) * p.grad
        v *= tc.adam_beta2
        v += (1.0 - tc.adam_beta2) * np.square(p.grad)
        p.value -= tc.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + tc.adam_eps)


def train_step(
    model: Model,
    batch: Batch,
    opt: OptState,
    tc: TrainConfig,
    dropout_rng: np.random.Generator | None = None,
) -> float:
    """Forward, loss, backward, l2 gradients, Adam; grads are zeroed afterwards."""
    model.params.zero_grads()
    logits, cache = model.forward_with_cache(
        batch.ids, batch.mask, training=True, dropout_rng=dropout_rng)
    ce, dlogits = softmax_cross_entropy(logits, batch.labels)
    value = ce + l2_penalty(model.params, tc.l2_scale)
    if not np.isfinite(value):
        raise DivergenceError(opt.step, value)
    model.backward(dlogits, cache)
    if tc.l2_scale:
        for p in model.params:
            if p.penalized:
                p.grad += (2.0 * tc.l2_scale) * p.value
    adam_update(model.params, opt, tc)
    model.params.zero_grads()
    return value


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def _cut_batch(dataset, idx: np.ndarray) -> Batch:
    rows = [dataset[i] for i in idx]
    t_pad = max(len(ids) for ids, _ in rows)
    ids = np.full((len(rows), t_pad), PAD_ID, dtype=np.int64)
    lengths = np.empty(len(rows), dtype=np.int64)
    labels = np.empty(len(rows), dtype=np.int64)
    for r, (seq, label) in enumerate(rows):
        ids[r, : len(seq)] = seq
        lengths[r] = len(seq)
        labels[r] = label
    return Batch(ids, LengthMask(lengths, t_pad), labels, np.asarray(idx))


def make_batches(
    dataset, tc: TrainConfig, rng: np.random.Generator | None = None
) -> list[Batch]:
    """Shuffle, group by coarse length bucket, chunk, shuffle the chunks.

    The stable sort on bucket keys keeps similar lengths together (bounding
    padding waste) while the two shuffles keep batch composition and order
    random from epoch to epoch.  Every sample appears in exactly one batch;
    a final partial batch is kept.
    """
    if len(dataset) == 0:
        raise InputError("cannot batch an empty dataset")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([tc.shuffle_seed, 1]))
    order = rng.permutation(len(dataset))
    buckets = np.asarray([len(dataset[i][0]) for i in order]) // tc.bucket_width
    order = order[np.argsort(buckets, kind="stable")]
    chunks = [order[i:i + tc.batch_size] for i in range(0, len(order), tc.batch_size)]
    return [_cut_batch(dataset, chunks[ci]) for ci in rng.permutation(len(chunks))]


def make_eval_batches(dataset, batch_size: int) -> list[Batch]:
    """Deterministic length-sorted batches for scoring."""
    if len(dataset) == 0:
        raise InputError("cannot batch an empty dataset")
    lengths = np.asarray([len(ids) for ids, _ in dataset])
    order = np.argsort(lengths, kind="stable")
    return [
        _cut_batch(dataset, order[i:i + batch_size])
        for i in range(0, len(order), batch_size)
    ]


# ---------------------------------------------------------------------------
# Evaluation and the epoch loop
# ---------------------------------------------------------------------------


def evaluate(
    model: Model, dataset, batch_size: int = 64, threads: int = 1
) -> "metrics_mod.ConfusionMatrix":
    """Score a dataset into a confusion matrix (optionally batch-parallel)."""
    batches = make_eval_batches(dataset, batch_size)

    def score(batch: Batch) -> metrics_mod.ConfusionMatrix:
        cm = metrics_mod.ConfusionMatrix(model.cfg.num_classes)
        logits = model.forward(batch.ids, batch.mask)
        cm.accumulate_many(batch.labels, np.argmax(logits, axis=1))
        return cm

    total = metrics_mod.ConfusionMatrix(model.cfg.num_classes)
    if threads <= 1:
        for batch in batches:
            total.merge(score(batch))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for cm in pool.map(score, batches):
                total.merge(cm)
    return total


def fit(
    model: Model,
    train_set,
    val_set,
    tc: TrainConfig,
    clock=time.perf_counter,
    batch_hook=None,
) -> list[dict]:
    """Run tc.epochs epochs; return per-epoch records.

    Each record holds epoch, train_loss, val_macro_f1, val_micro_f1, seconds.
    The parameters with the best validation macro-F1 are restored into the
    model before returning.  Setting FCN_FIXED_TIME pins the seconds field to
    that value, making history files byte-reproducible.
    """
    opt = OptState.for_params(model.params)
    history: list[dict] = []
    best_macro = -1.0
    best_values: dict[str, np.ndarray] | None = None
    fixed_time = os.environ.get("FCN_FIXED_TIME")
    for epoch in range(tc.epochs):
        started = clock()
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence([tc.shuffle_seed, 1, epoch]))
        dropout_rng = np.random.default_rng(
            np.random.SeedSequence([tc.shuffle_seed, 2, epoch]))
        seen = 0
        total = 0.0
        for batch in make_batches(train_set, tc, shuffle_rng):
            value = train_step(model, batch, opt, tc, dropout_rng)
            if batch_hook is not None:
                batch_hook(epoch, batch)
            total += value * len(batch)
            seen += len(batch)
        cm = evaluate(model, val_set, tc.batch_size)
        macro = metrics_mod.macro_f1(cm)
        micro = metrics_mod.micro_f1(cm)
        seconds = float(fixed_time) if fixed_time is not None else clock() - started
        history.append({
            "epoch": epoch,
            "train_loss": total / seen,
            "val_macro_f1": macro,
            "val_micro_f1": micro,
            "seconds": seconds,
        })
        if macro > best_macro:
            best_macro = macro
            best_values = {p.name: p.value.copy() for p in model.params}
    if best_values is not None:
        for p in model.params:
            np.copyto(p.value, best_values[p.name])
    return history


def write_history(history: list[dict], path) -> None:
    """History as JSON lines, one epoch record per line, keys sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
