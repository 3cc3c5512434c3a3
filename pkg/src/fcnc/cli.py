"""Command-line entry point: train, eval, predict, gradcheck, inspect.

Every RunConfig field is reachable both as a JSON config-file key and as a
command-line flag (flag wins).  The FCN_SEED environment variable overrides
the config-file seed but yields to an explicit --seed flag.

Exit codes: 0 success, 1 configuration error, 2 data/input/checkpoint error,
3 training divergence, 4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import data as data_mod
from . import gradcheck as gradcheck_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import training as training_mod
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    InputError,
    VocabularyError,
)
from .layers import LengthMask, LrnParams
from .tensor import softmax


@dataclass
class RunConfig:
    """Flat run description: architecture + optimization + paths.

    Defaults are the full-width reference architecture (embed 16, init conv 3/128,
    nine dilated layers of 128 size-7 filters, dropout 0.1, l2 1e-4).
    """

    # run identity
    variant: str = "none"  # none | dot1 | dot8 | simp1 | simp8 | local1 | local8
    seed: int = 0
    # architecture
    embed_dim: int = 16
    init_kernel: int = 3
    stack_layers: int = 9
    stack_kernel: int = 7
    stack_channels: int = 128
    num_classes: int = 25
    dropout_p: float = 0.1
    l2_scale: float = 1e-4
    k_loc: int = 3
    attention_after_output: bool = False
    lrn_n: int = 5
    lrn_k: float = 2.0
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    init_conv_activation: bool = False
    # optimization
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    bucket_width: int = 16
    min_count: int = 2
    threads: int = 1
    # paths
    train_data: str | None = None
    val_data: str | None = None
    test_data: str | None = None
    vocab: str | None = None
    checkpoint: str | None = None
    history: str | None = None
    report: str | None = None

    def model_config(self, vocab_size: int) -> model_mod.ModelConfig:
        attention = replace(
            model_mod.attention_config_from_code(self.variant),
            k_loc=self.k_loc,
            after_output=self.attention_after_output,
        )
        return model_mod.ModelConfig(
            vocab_size=vocab_size,
            embed_dim=self.embed_dim,
            init_kernel=self.init_kernel,
            stack_layers=self.stack_layers,
            stack_kernel=self.stack_kernel,
            stack_channels=self.stack_channels,
            num_classes=self.num_classes,
            attention=attention,
            dropout_p=self.dropout_p,
            l2_scale=self.l2_scale,
            lrn=LrnParams(self.lrn_n, self.lrn_k, self.lrn_alpha, self.lrn_beta),
            init_conv_activation=self.init_conv_activation,
            seed=self.seed,
        )

    def train_config(self) -> training_mod.TrainConfig:
        return training_mod.TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            l2_scale=self.l2_scale,
            shuffle_seed=self.seed,
            bucket_width=self.bucket_width,
        )


def _flag_type(default):
    if isinstance(default, bool):
        return bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _add_runconfig_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = _flag_type(f.default)
        if kind is bool:
            parser.add_argument(flag, dest=f.name, default=None,
                                action=argparse.BooleanOptionalAction)
        else:
            parser.add_argument(flag, dest=f.name, default=None, type=kind,
                                metavar=f.name.upper())


def load_runconfig(args: argparse.Namespace) -> RunConfig:
    """Defaults <- config file <- FCN_SEED <- explicit flags, in that order."""
    merged = asdict(RunConfig())
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config {config_path} must be a JSON object")
        unknown = set(file_values) - set(merged)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    env_seed = os.environ.get("FCN_SEED")
    if env_seed is not None:
        try:
            merged["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"FCN_SEED must be an integer, got {env_seed!r}") from None
    for f in fields(RunConfig):
        override = getattr(args, f.name, None)
        if override is not None:
            merged[f.name] = override
    try:
        rc = RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad run config: {exc}") from exc
    model_mod.attention_config_from_code(rc.variant)  # validate the selector early
    return rc


def _require(rc: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(rc, name) is None:
            raise ConfigError(f"missing required setting {name!r} "
                              f"(flag --{name.replace('_', '-')} or config key)")


def _class_names(num_classes: int) -> list[str]:
    if num_classes == len(data_mod.REGISTRY):
        return list(data_mod.REGISTRY.names)
    return [f"class_{i}" for i in range(num_classes)]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    rc = load_runconfig(args)
    _require(rc, "train_data", "val_data", "checkpoint")
    vocab_path = rc.vocab or rc.checkpoint + ".vocab.json"
    history_path = rc.history or rc.checkpoint + ".history.jsonl"
    report_path = rc.report or rc.checkpoint + ".report.json"

    train_samples = data_mod.load_jsonl(rc.train_data)
    val_samples = data_mod.load_jsonl(rc.val_data)
    vocab = data_mod.Vocab.build(train_samples, min_count=rc.min_count)
    vocab.save(vocab_path)
    train_set = data_mod.encode_dataset(train_samples, vocab)
    val_set = data_mod.encode_dataset(val_samples, vocab)

    model = model_mod.Model.build(rc.model_config(vocab.size))
    history = training_mod.fit(model, train_set, val_set, rc.train_config())
    model_mod.save(model, rc.checkpoint)
    training_mod.write_history(history, history_path)

    cm = training_mod.evaluate(model, val_set, rc.batch_size)
    rep = metrics_mod.report(cm, _class_names(model.cfg.num_classes))
    best = max(history, key=lambda r: r["val_macro_f1"]) if history else None
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({
            "config": asdict(rc),
            "param_count": model.param_count(),
            "vocab_size": vocab.size,
            "best_epoch": None if best is None else best["epoch"],
            "val": rep,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {len(history)} epochs on {len(train_set)} samples; "
          f"val macro_f1 {rep['macro_f1']:.4f} micro_f1 {rep['micro_f1']:.4f}")
    print(f"checkpoint: {rc.checkpoint}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    rc = load_runconfig(args)
    _require(rc, "checkpoint", "test_data", "vocab")
    model = model_mod.load(rc.checkpoint)
    vocab = data_mod.Vocab.load(rc.vocab)
    samples = data_mod.load_jsonl(rc.test_data)
    dataset = data_mod.encode_dataset(samples, vocab)
    cm = training_mod.evaluate(model, dataset, rc.batch_size, threads=rc.threads)
    rep = metrics_mod.report(cm, _class_names(model.cfg.num_classes))
    print(metrics_mod.format_report(rep))
    if rc.report:
        with open(rc.report, "w", encoding="utf-8") as fh:
            json.dump({"config": asdict(rc), **rep}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    rc = load_runconfig(args)
    _require(rc, "checkpoint", "vocab")
    model = model_mod.load(rc.checkpoint)
    vocab = data_mod.Vocab.load(rc.vocab)
    names = _class_names(model.cfg.num_classes)
    for lineno, line in enumerate(args.input, start=1):
        text = line.rstrip("\n")
        if text == "":
            print(f"line {lineno}: empty line skipped", file=sys.stderr)
            continue
        ids = vocab.encode(text)[None, :]
        mask = LengthMask(np.array([ids.shape[1]]), ids.shape[1])
        probs = softmax(model.forward(ids, mask)[0])
        top = int(np.argmax(probs))
        if args.full:
            print(json.dumps({
                "label": names[top],
                "probability": float(probs[top]),
                "distribution": {names[i]: float(probs[i]) for i in range(len(names))},
            }, ensure_ascii=False))
        else:
            print(f"{names[top]}\t{probs[top]:.6f}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rc = load_runconfig(args)
    results, elapsed = gradcheck_mod.run_suite(seed=rc.seed)
    width = max(len(name) for name, _ in results)
    failures = []
    for name, err in results:
        ok = err <= gradcheck_mod.TOLERANCE
        print(f"{name:<{width}}  {err:12.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failures.append(name)
    print(f"{len(results)} checks in {elapsed:.1f}s "
          f"(tolerance {gradcheck_mod.TOLERANCE:g})")
    if failures:
        print(f"gradient check failed for: {', '.join(failures)}", file=sys.stderr)
        return 4
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    rc = load_runconfig(args)
    _require(rc, "checkpoint")
    model = model_mod.load(rc.checkpoint)
    print(f"format version: {model_mod.CHECKPOINT_VERSION}")
    print("config:")
    print(json.dumps(model.cfg.to_dict(), indent=2, sort_keys=True))
    print("parameters:")
    for param in model.params:
        shape = "x".join(str(d) for d in param.value.shape)
        print(f"  {param.name:<24} {shape:>12} {param.value.size:>10}")
    print(f"total parameters: {model.param_count()}")
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, metavar="RUN_JSON",
                        help="JSON file of RunConfig keys; flags override it")
    _add_runconfig_flags(common)

    parser = argparse.ArgumentParser(
        prog="fcnc",
        description="Fully convolutional character-level text classifier",
    )
    parser.add_argument("--print-default-config", action="store_true",
                        help="emit the default run config as JSON and exit")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("train", parents=[common],
                   help="fit a model and write checkpoint/history/report"
                   ).set_defaults(func=cmd_train)
    sub.add_parser("eval", parents=[common],
                   help="score a JSONL dataset with a checkpoint"
                   ).set_defaults(func=cmd_eval)
    predict = sub.add_parser("predict", parents=[common],
                             help="read text lines on stdin, write predictions")
    predict.add_argument("--full", action="store_true",
                         help="emit the full 25-way distribution as JSON per line")
    predict.set_defaults(func=cmd_predict)
    sub.add_parser("gradcheck", parents=[common],
                   help="finite-difference audit of all backward passes"
                   ).set_defaults(func=cmd_gradcheck)
    sub.add_parser("inspect", parents=[common],
                   help="print a checkpoint's header and parameter shapes"
                   ).set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        print(json.dumps(asdict(RunConfig()), indent=2, sort_keys=True))
        return 0
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    if not hasattr(args, "input"):
        args.input = sys.stdin
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (DataError, InputError, VocabularyError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
