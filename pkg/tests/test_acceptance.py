"""Acceptance gate: nine criteria, one test (and one PASS/FAIL line) each.

Run with `pytest -v tests/test_acceptance.py` to get a per-criterion verdict.
Each test also prints its own `PASS criterion N: ...` line so the verdicts
survive in captured output.
"""

import hashlib
import time

import numpy as np

import fcnc.gradcheck as gradcheck_mod
from fcnc.attention import (
    AttentionParams,
    apply_attention,
    init_attention_params,
    local_attention,
    scaled_dot_attention,
    simplified_attention,
)
from fcnc.cli import main
from fcnc.data import EMOJI_LABELS, Vocab, encode_dataset, save_jsonl, synth_dataset
from fcnc.errors import CheckpointChecksumError
from fcnc.layers import LengthMask
from fcnc.metrics import ConfusionMatrix, macro_f1, micro_f1
from fcnc.model import (
    Model,
    ModelConfig,
    attention_config_from_code,
    load,
    reference_config,
    receptive_field,
    save,
)
from fcnc.training import OptState, TrainConfig, evaluate, make_batches, train_step

VARIANT_ORDER = ("none", "dot1", "dot8", "simp1", "simp8", "local1", "local8")


def _report(num: int, description: str, ok: bool, detail: str = ""):
    verdict = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"{verdict} criterion {num}: {description}{suffix}")
    assert ok, f"criterion {num}: {description}{suffix}"


def test_criterion_1_gradient_fidelity():
    results, elapsed = gradcheck_mod.run_suite(seed=0)
    worst_name, worst = max(results, key=lambda r: r[1])
    ok = all(err <= 1e-4 for _, err in results) and elapsed < 60.0
    _report(1, "all layers and attention variants pass 64-bit gradient checks",
            ok, f"{len(results)} checks, worst {worst_name} {worst:.2e}, "
                f"{elapsed:.1f}s")


def test_criterion_2_causality():
    cfg = ModelConfig(vocab_size=12, embed_dim=4, stack_layers=2,
                      stack_channels=8, num_classes=3, dropout_p=0.0,
                      attention=attention_config_from_code("none"), seed=0)
    model = Model.build(cfg)
    rng = np.random.default_rng(2024)
    watched = ("embedded", "init_conv", "block0.residual", "block0.skip",
               "block1.residual", "block1.skip", "skip_sum", "features")
    for trial in range(20):
        t_total = int(rng.integers(8, 41))
        t_cut = int(rng.integers(0, t_total - 1))
        ids = rng.integers(1, 12, size=(1, t_total))
        mask = LengthMask(np.array([t_total]), t_total)
        base = model.activations(ids, mask)
        poked = ids.copy()
        poked[0, t_cut + 1:] = rng.integers(1, 12, size=t_total - t_cut - 1)
        after = model.activations(poked, mask)
        for key in watched:
            if not np.array_equal(base[key][0, :t_cut + 1],
                                  after[key][0, :t_cut + 1]):
                _report(2, "future positions never alter past activations",
                        False, f"trial {trial}, {key}, cut {t_cut}")
    _report(2, "future positions never alter past activations", True,
            "20 trials, exact equality")


def test_criterion_3_receptive_field():
    cfg = reference_config(vocab_size=50)
    rf = receptive_field(cfg)
    if rf != 3069:
        _report(3, "receptive field formula and gradient sparsity", False,
                f"formula gave {rf}")
    model = Model.build(cfg)
    rng = np.random.default_rng(3)
    t_total = 3200
    ids = rng.integers(1, 50, size=(1, t_total))
    mask = LengthMask(np.array([t_total]), t_total)
    _, cache = model.forward_with_cache(ids, mask)
    dfeat = np.zeros_like(cache["features"])
    dfeat[0, t_total - 1] = rng.standard_normal(cfg.num_classes)
    d_emb = model.backward_from_features(dfeat, cache)
    reach = np.abs(d_emb[0]).sum(axis=1)
    first = t_total - rf  # 131: first position inside the window
    ok = bool(np.all(reach[:first] == 0.0)) and bool(np.any(reach[first:] != 0.0))
    _report(3, "receptive field is 3069 with exactly-zero gradient outside it",
            ok, f"zero for t < {first} on T={t_total}")


def test_criterion_4_any_length_and_masking():
    lengths = (7, 40, 300)
    rng = np.random.default_rng(4)
    rows = [rng.integers(1, 30, size=n) for n in lengths]
    worst = 0.0
    for code in ("none", "dot8"):
        cfg = ModelConfig(vocab_size=30, embed_dim=8, stack_layers=3,
                          stack_channels=16, num_classes=5, dropout_p=0.0,
                          attention=attention_config_from_code(code), seed=1)
        model = Model.build(cfg)
        t_pad = max(lengths)
        ids = np.zeros((3, t_pad), dtype=np.int64)
        for r, row in enumerate(rows):
            ids[r, :len(row)] = row
        batched = model.forward(ids, LengthMask(np.array(lengths), t_pad))
        for r, row in enumerate(rows):
            alone = model.forward(row[None],
                                  LengthMask(np.array([len(row)]), len(row)))
            worst = max(worst, float(np.max(np.abs(batched[r] - alone[0]))))
    _report(4, "mixed-length batch rows match each sequence scored alone",
            worst <= 1e-6, f"worst |diff| {worst:.2e} over lengths {lengths}")


def test_criterion_5_attention_algebra():
    rng = np.random.default_rng(5)
    problems = []

    q = rng.standard_normal((6, 8))
    k = rng.standard_normal((9, 8))
    v = rng.standard_normal((9, 8))
    _, cache = scaled_dot_attention(q, k, v)
    if not np.allclose(cache[-1].sum(axis=1), 1.0, atol=1e-6):
        problems.append("weight rows do not sum to 1")

    valid = np.array([True, False, True, True, False, True, True, False, True])
    out, _ = scaled_dot_attention(np.zeros((4, 8)), k, v, key_valid=valid)
    if not np.allclose(out, np.broadcast_to(v[valid].mean(axis=0), (4, 8)),
                       atol=1e-6):
        problems.append("zero-query output is not the unmasked value mean")

    x = rng.standard_normal((2, 11, 16))
    mask = LengthMask(np.array([11, 6]), 11)
    for code in ("simp8", "local8"):
        acfg = attention_config_from_code(code)
        p = init_attention_params(acfg.variant, acfg.heads, 16, acfg.k_loc,
                                  np.random.default_rng(55), dtype=np.float64)
        _, row_caches = apply_attention(x, p, mask)
        for b, row_cache in enumerate(row_caches):
            for head_cache in row_cache[2]:
                weights = head_cache[1]
                if not np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6):
                    problems.append(f"{code} channel weights row {b}")

    p_loc = init_attention_params("local", 2, 16, 1,
                                  np.random.default_rng(56), dtype=np.float64)
    p_simp = AttentionParams("simplified", 2, 16, w_v=p_loc.w_v, w_o=p_loc.w_o,
                             w_s=p_loc.kernel[:, 0], b_s=p_loc.b_loc)
    y_loc, _ = local_attention(x, p_loc, mask)
    y_simp, _ = simplified_attention(x, p_simp, mask)
    if not np.array_equal(y_loc, y_simp):
        problems.append("local k_loc=1 differs from simplified")

    _report(5, "attention weight normalization, zero-query mean, local/simplified"
               " degeneracy", not problems, "; ".join(problems))


def test_criterion_6_overfit_sanity():
    train_samples, _ = synth_dataset(25, 8, seed=11)
    vocab = Vocab.build(train_samples, min_count=1)
    train = encode_dataset(train_samples, vocab)
    tc = TrainConfig(batch_size=25, epochs=150, learning_rate=2e-3,
                     l2_scale=1e-4, shuffle_seed=5)
    outcomes = []
    ok = True
    for code in VARIANT_ORDER:
        cfg = ModelConfig(vocab_size=vocab.size, embed_dim=16, stack_layers=4,
                          stack_channels=32, num_classes=25, dropout_p=0.0,
                          l2_scale=tc.l2_scale,
                          attention=attention_config_from_code(code), seed=5)
        model = Model.build(cfg)
        opt = OptState.for_params(model.params)
        started = time.perf_counter()
        reached = None
        acc = 0.0
        for epoch in range(tc.epochs):
            rng = np.random.default_rng(
                np.random.SeedSequence([tc.shuffle_seed, 1, epoch]))
            for batch in make_batches(train, tc, rng):
                train_step(model, batch, opt, tc)
            acc = micro_f1(evaluate(model, train, tc.batch_size))
            if acc >= 0.99:
                reached = epoch + 1
                break
        elapsed = time.perf_counter() - started
        outcomes.append(f"{code}:{reached}ep/{elapsed:.0f}s")
        if reached is None or elapsed > 300.0:
            ok = False
    _report(6, "every variant overfits 25x8 synthetic data to 99% within "
               "150 epochs", ok, " ".join(outcomes))


def test_criterion_7_metrics_oracle():
    counts = [round(pct * 100) for _, pct in EMOJI_LABELS]
    if sum(counts) != 10_000:
        _report(7, "metrics oracle", False,
                f"class priors sum to {sum(counts)} samples, not 10000")
    cm = ConfusionMatrix(25)
    for label_id, n in enumerate(counts):
        cm.counts[label_id, 0] = n  # constant majority-class predictor
    assert cm.total == 10_000
    micro = micro_f1(cm)
    macro = macro_f1(cm)
    p = counts[0] / 10_000
    want_macro = (2 * p * 1.0 / (p + 1.0)) / 25
    ok = abs(micro - 0.2028) <= 1e-4 and abs(macro - 0.01349) <= 1e-4 \
        and abs(macro - want_macro) < 1e-12

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 400))
        c = int(rng.integers(2, 26))
        gold = rng.integers(0, c, size=n)
        pred = rng.integers(0, c, size=n)
        got = ConfusionMatrix(c).accumulate_many(gold, pred)
        f1s = []
        for cls in range(c):
            tp = int(np.sum((gold == cls) & (pred == cls)))
            fp = int(np.sum((gold != cls) & (pred == cls)))
            fn = int(np.sum((gold == cls) & (pred != cls)))
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        worst = max(worst,
                    abs(macro_f1(got) - sum(f1s) / c),
                    abs(micro_f1(got) - float(np.mean(gold == pred))))
    ok = ok and worst < 1e-12
    _report(7, "majority-class scores match Table-1 arithmetic; F1 matches "
               "per-sample oracle", ok,
            f"micro {micro:.4f} macro {macro:.5f}, oracle diff {worst:.1e}")


def test_criterion_8_reproducibility(tmp_path, monkeypatch):
    monkeypatch.delenv("FCN_SEED", raising=False)
    monkeypatch.setenv("FCN_FIXED_TIME", "0.0")
    train, val = synth_dataset(4, 6, seed=2)
    train_path, val_path = tmp_path / "t.jsonl", tmp_path / "v.jsonl"
    save_jsonl(train, train_path)
    save_jsonl(val, val_path)

    def run(name):
        ckpt = str(tmp_path / name)
        code = main(["train", "--embed-dim", "4", "--stack-layers", "2",
                     "--stack-channels", "8", "--num-classes", "4",
                     "--dropout-p", "0.1", "--min-count", "1",
                     "--epochs", "2", "--batch-size", "6", "--seed", "3",
                     "--train-data", str(train_path), "--val-data",
                     str(val_path), "--checkpoint", ckpt])
        assert code == 0
        digest = {}
        for suffix in ("", ".history.jsonl"):
            with open(ckpt + suffix, "rb") as fh:
                digest[suffix or "ckpt"] = hashlib.sha256(fh.read()).hexdigest()
        return digest

    first, second = run("a.fcnc"), run("b.fcnc")
    _report(8, "same config and seed give byte-identical checkpoint and "
               "history", first == second,
            f"sha256 {first['ckpt'][:12]}...")


def test_criterion_9_serialization(tmp_path):
    model = Model.build(ModelConfig(
        vocab_size=20, embed_dim=4, stack_layers=2, stack_channels=8,
        num_classes=5, attention=attention_config_from_code("dot1"), seed=6))
    path = tmp_path / "model.fcnc"
    save(model, path)
    clone = load(path)
    round_trip = all(
        np.array_equal(a.value, b.value) and a.name == b.name
        for a, b in zip(model.params, clone.params)) and clone.cfg == model.cfg

    blob = bytearray(path.read_bytes())
    blob[len(blob) - 9] ^= 0x40  # one bit inside the last parameter payload
    corrupt_path = tmp_path / "corrupt.fcnc"
    corrupt_path.write_bytes(bytes(blob))
    try:
        load(corrupt_path)
        caught = False
    except CheckpointChecksumError:
        caught = True
    _report(9, "checkpoints round-trip bit-exactly and CRC-32 catches "
               "single-byte corruption", round_trip and caught)
