"""Overfit a reduced model on a small synthetic corpus, once per attention
variant, and print the epochs/time each one needed to reach the target
training accuracy.  A quick end-to-end sanity run for the whole stack.

Usage:
    python3 scripts/overfit_variants.py [--samples-per-class 8] [--target 0.99]
"""

import argparse
import time

import numpy as np

from fcnc.data import Vocab, encode_dataset, synth_dataset
from fcnc.metrics import micro_f1
from fcnc.model import Model, ModelConfig, attention_config_from_code
from fcnc.training import OptState, TrainConfig, evaluate, make_batches, train_step

VARIANTS = ("none", "dot1", "dot8", "simp1", "simp8", "local1", "local8")


def run_variant(code, train, vocab_size, args):
    cfg = ModelConfig(
        vocab_size=vocab_size,
        embed_dim=16,
        stack_layers=args.stack_layers,
        stack_channels=args.stack_channels,
        num_classes=args.num_classes,
        dropout_p=0.0,
        l2_scale=args.l2_scale,
        attention=attention_config_from_code(code),
        seed=args.model_seed,
    )
    tc = TrainConfig(batch_size=args.batch_size, epochs=args.max_epochs,
                     learning_rate=args.learning_rate, l2_scale=args.l2_scale,
                     shuffle_seed=args.shuffle_seed)
    model = Model.build(cfg)
    opt = OptState.for_params(model.params)
    started = time.perf_counter()
    accuracy = 0.0
    for epoch in range(tc.epochs):
        rng = np.random.default_rng(
            np.random.SeedSequence([tc.shuffle_seed, 1, epoch]))
        for batch in make_batches(train, tc, rng):
            train_step(model, batch, opt, tc)
        accuracy = micro_f1(evaluate(model, train, tc.batch_size))
        if accuracy >= args.target:
            return epoch + 1, accuracy, time.perf_counter() - started
    return None, accuracy, time.perf_counter() - started


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--num-classes", type=int, default=25)
    parser.add_argument("--samples-per-class", type=int, default=8)
    parser.add_argument("--data-seed", type=int, default=11)
    parser.add_argument("--model-seed", type=int, default=5)
    parser.add_argument("--shuffle-seed", type=int, default=5)
    parser.add_argument("--stack-layers", type=int, default=4)
    parser.add_argument("--stack-channels", type=int, default=32)
    parser.add_argument("--batch-size", type=int, default=25)
    parser.add_argument("--learning-rate", type=float, default=2e-3)
    parser.add_argument("--l2-scale", type=float, default=1e-4)
    parser.add_argument("--max-epochs", type=int, default=150)
    parser.add_argument("--target", type=float, default=0.99)
    args = parser.parse_args()

    train_samples, _ = synth_dataset(args.num_classes, args.samples_per_class,
                                     args.data_seed)
    vocab = Vocab.build(train_samples, min_count=1)
    train = encode_dataset(train_samples, vocab)
    print(f"{len(train)} training samples, vocab {vocab.size}, "
          f"target accuracy {args.target:.2f}")
    print(f"{'variant':8s} {'epochs':>7s} {'accuracy':>9s} {'seconds':>8s}")
    for code in VARIANTS:
        epochs, accuracy, seconds = run_variant(code, train, vocab.size, args)
        shown = str(epochs) if epochs is not None else f">{args.max_epochs}"
        print(f"{code:8s} {shown:>7s} {accuracy:9.3f} {seconds:8.1f}")


if __name__ == "__main__":
    main()
