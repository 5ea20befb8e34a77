"""Command-line interface: count, train, eval, gradcheck and bench.

Exit codes: 0 on success, 1 for configuration or validation problems
(including a failing gradient check), 2 for runtime failures such as
unreadable dataset or checkpoint files.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import accounting, dataio, gradcheck
from .errors import ConfigError, LruNetError
from .network import NetworkSpec, build_network
from .training import TrainConfig, evaluate, train

ENV_DATA_DIR = "LRUNET_DATA_DIR"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; the contract here is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _add_spec_args(p, unrolled_flag=True):
    p.add_argument("--dataset", choices=sorted(dataio.DATASETS), default="cifar10",
                   help="dataset preset fixing input shape and class count")
    p.add_argument("--reuse", type=int, default=1, metavar="N",
                   help="times each block is applied (default 1)")
    p.add_argument("--width", type=float, default=1.0, metavar="ALPHA",
                   help="width multiplier (default 1)")
    p.add_argument("--dropout", type=float, default=None,
                   help="dropout rate before the last pointwise conv "
                        "(default 0.5, or 0.7 for cifar100)")
    if unrolled_flag:
        p.add_argument("--unrolled", action="store_true",
                       help="fresh conv weights at every application instead of sharing")


def _spec_from_args(args) -> NetworkSpec:
    meta = dataio.DATASETS[args.dataset]
    dropout = args.dropout
    if dropout is None:
        dropout = 0.7 if args.dataset == "cifar100" else 0.5
    return NetworkSpec(
        reuse_count=args.reuse,
        width_multiplier=args.width,
        num_classes=meta["num_classes"],
        input_shape=meta["input_shape"],
        reuse_mode="unrolled" if getattr(args, "unrolled", False) else "shared",
        dropout_rate=dropout,
    )


def _resolve_data_dir(args) -> str:
    if args.data_dir:
        return args.data_dir
    base = os.environ.get(ENV_DATA_DIR, "data")
    return os.path.join(base, args.dataset)


def _parse_schedule(text: str):
    """'200:0.1,50:0.01' -> ((200, 0.1), (50, 0.01))."""
    phases = []
    for part in text.split(","):
        try:
            epochs, lr = part.split(":")
            phases.append((int(epochs), float(lr)))
        except ValueError:
            raise ConfigError(
                f"bad schedule fragment {part!r}; expected EPOCHS:LR[,EPOCHS:LR...]"
            ) from None
    return tuple(phases)


# ---------------------------------------------------------------------------
# subcommands


def cmd_count(args) -> int:
    report = accounting.build_report(_spec_from_args(args))
    if args.format == "records":
        print("\n".join(report.records()))
    else:
        print(report.text_table())
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _spec_from_args(args)
    if args.schedule:
        schedule = _parse_schedule(args.schedule)
    elif args.epochs:
        schedule = ((args.epochs, args.lr),)
    else:
        schedule = tuple(TrainConfig().lr_schedule)

    data_dir = _resolve_data_dir(args)
    train_set, test_set = dataio.DATASETS[args.dataset]["loader"](data_dir)
    out_root = args.out_dir or os.path.join("runs", spec.name)

    accs = []
    for trial in range(args.trials):
        cfg = TrainConfig(
            batch_size=args.batch_size,
            lr_schedule=schedule,
            seed=args.seed + trial,
            augment=not args.no_augment,
            max_steps=args.max_steps,
        )
        out_dir = out_root if args.trials == 1 else os.path.join(out_root, f"trial{trial}")
        os.makedirs(out_dir, exist_ok=True)
        net, norm_stats, history = train(
            spec, cfg, train_set.images, train_set.labels,
            test_set.images, test_set.labels,
            metrics_path=os.path.join(out_dir, "metrics.txt"),
            checkpoint_dir=out_dir, log=print,
        )
        acc = history[-1].val_acc if history else 0.0
        accs.append(acc)
        print(f"trial={trial} seed={cfg.seed} val_acc={acc:.4f} out={out_dir}")
    if args.trials > 1:
        print(f"trials={args.trials} mean_val_acc={np.mean(accs):.4f} "
              f"std_val_acc={np.std(accs):.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, norm_stats = dataio.restore_network(args.checkpoint)
    if norm_stats is None:
        raise ConfigError(f"checkpoint {args.checkpoint} has no normalization statistics")
    data_dir = _resolve_data_dir(args)
    train_set, test_set = dataio.DATASETS[args.dataset]["loader"](data_dir)
    split = train_set if args.split == "train" else test_set
    acc = evaluate(net, split.images, split.labels, norm_stats, args.batch_size)
    print(f"accuracy {100.0 * acc:.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.corrupt:
        gradcheck.CORRUPT_SHUFFLE_BACKWARD = True
    try:
        results = gradcheck.run_op_checks(seeds=tuple(range(args.seeds)), step=args.step)
        if not args.ops_only:
            results.append(gradcheck.run_network_check(step=args.step))
    finally:
        gradcheck.CORRUPT_SHUFFLE_BACKWARD = False
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"gradcheck: {'PASS' if ok else 'FAIL'} ({len(results)} checks)")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_bench(args) -> int:
    reuse_counts = [int(v) for v in args.reuse_list.split(",")]
    meta = dataio.DATASETS[args.dataset]
    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.batch, *meta["input_shape"])).astype(np.float32)
    for n in reuse_counts:
        spec = NetworkSpec(n, args.width, num_classes=meta["num_classes"],
                           input_shape=meta["input_shape"], dropout_rate=0.0)
        net = build_network(spec)
        net.init_parameters(0)
        net.forward(x)  # warm caches before timing
        t0 = time.perf_counter()
        for _ in range(args.repeat):
            net.forward(x)
        ms = 1000.0 * (time.perf_counter() - t0) / args.repeat
        flops = accounting.build_report(spec).mflops
        print(f"reuse={n} forward_ms={ms:.2f} mflops={flops:.2f} name={spec.name}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lrunet",
                     description="Layer-reuse network training, inference and accounting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="parameter and FLOP accounting without training",
                       parents=[], add_help=True)
    _add_spec_args(p)
    p.add_argument("--format", choices=("text", "records"), default="text")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("train", help="train a network and write metrics + checkpoints")
    _add_spec_args(p)
    p.add_argument("--data-dir", default=None,
                   help=f"dataset directory (default ${ENV_DATA_DIR}/<dataset> or data/<dataset>)")
    p.add_argument("--out-dir", default=None, help="output directory (default runs/<name>)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--epochs", type=int, default=0,
                   help="single-phase schedule of this many epochs at --lr")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--schedule", default=None,
                   help="EPOCHS:LR[,EPOCHS:LR...]; default 200:0.1,50:0.01,50:0.001")
    p.add_argument("--trials", type=int, default=1,
                   help="repeat with consecutive seeds and report mean/std accuracy")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--max-steps", type=int, default=0,
                   help="stop after this many optimizer steps (0 = run the schedule)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--dataset", choices=sorted(dataio.DATASETS), default="cifar10")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all backwards")
    p.add_argument("--seeds", type=int, default=5, help="random seeds per op (default 5)")
    p.add_argument("--step", type=float, default=gradcheck.STEP)
    p.add_argument("--ops-only", action="store_true", help="skip the whole-network check")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="measure forward wall time against reuse count")
    p.add_argument("--dataset", choices=sorted(dataio.DATASETS), default="cifar10")
    p.add_argument("--reuse-list", default="1,2,4,8")
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--repeat", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (LruNetError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
