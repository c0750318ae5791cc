"""Command-line surface: train, sweep, count-params, gradcheck, synth-data.

The data root defaults to the QUATCNN_DATA environment variable when
--data is omitted. All outputs are UTF-8 CSV/JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness, layers, train as training


def _data_root(args) -> Path:
    if args.data:
        return Path(args.data)
    env = os.environ.get("QUATCNN_DATA")
    if env:
        return Path(env)
    raise SystemExit("no dataset directory: pass --data or set QUATCNN_DATA")


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("--data", help="dataset directory (default: $QUATCNN_DATA)")
    p.add_argument("--manifest-mode", choices=("filename", "csv"),
                   default="filename",
                   help="label source: filename convention (Im001_1.ext) or manifest.csv")


def _add_train_args(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--input-size", type=int, default=100,
                   help="images are resized to this square size before encoding")
    p.add_argument("--no-augment", action="store_true",
                   help="skip the x4 flip expansion of the training split")
    p.add_argument("--no-stratify", action="store_true",
                   help="plain random split instead of per-class stratification")


def cmd_train(args) -> int:
    manifest = harness.load_manifest(_data_root(args), args.manifest_mode)
    plan = harness.ExperimentPlan(
        configs=(args.config,), fractions=(args.test_fraction,), runs=1,
        epochs=args.epochs, base_seed=args.seed, batch_size=args.batch_size,
        input_size=args.input_size, augment=not args.no_augment,
        stratify=not args.no_stratify,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    config = layers.config_from_name(args.config, args.input_size)
    seed = harness.derive_seed(args.seed, args.config, args.test_fraction, 0)
    decoded = harness.load_decoded_images(manifest, args.input_size)
    train_ids, test_ids = harness.split(
        manifest, args.test_fraction, seed, stratify=plan.stratify
    )
    _, train_inputs, test_inputs = harness.build_run_inputs(
        config, decoded, train_ids, test_ids, augment=plan.augment
    )

    model, metrics = training.train_model(
        config, train_inputs, epochs=args.epochs, batch_size=args.batch_size,
        seed=seed, metrics_path=out / "metrics.csv",
    )
    layers.save_model(out / "model.bin", model)
    test_acc = harness.evaluate(model, test_inputs)
    result = {
        "config": args.config, "test_fraction": args.test_fraction,
        "seed": seed, "epochs": args.epochs,
        "train_accuracy": metrics[-1].train_acc if metrics else None,
        "test_accuracy": test_acc,
        "n_train": len(train_inputs), "n_test": len(test_inputs),
    }
    (out / "result.json").write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"test accuracy {test_acc:.4f} "
          f"(train {result['train_accuracy']}, model -> {out / 'model.bin'})")
    return 0


def cmd_sweep(args) -> int:
    manifest = harness.load_manifest(_data_root(args), args.manifest_mode)
    fractions = tuple(float(f) for f in args.fractions.split(","))
    plan = harness.ExperimentPlan(
        configs=tuple(args.configs), fractions=fractions, runs=args.runs,
        epochs=args.epochs, base_seed=args.seed, batch_size=args.batch_size,
        input_size=args.input_size, augment=not args.no_augment,
        stratify=not args.no_stratify, jobs=args.jobs,
    )
    report = harness.run_experiment(plan, manifest, args.out)
    print(f"\n{report.n_executed} runs executed, {report.n_skipped} resumed; "
          f"reports in {args.out}")
    print(f"{'config':<12} {'fraction':>8} {'mean':>8} {'std':>8} {'q25':>8} {'q75':>8}")
    for s in report.stats:
        print(f"{s.config:<12} {s.fraction:>8} {s.mean:>8.4f} {s.std:>8.4f} "
              f"{s.q25:>8.4f} {s.q75:>8.4f}")
    return 0


def cmd_count_params(args) -> int:
    for maker in (layers.rvcnn_config, layers.qvcnn_config):
        config = maker(input_size=args.input_size)
        counts, total = layers.count_parameters(config)
        names = [s.kind for s in config.layers if s.kind in ("conv", "qconv", "dense")]
        print(f"{config.name} (input {args.input_size}x{args.input_size}):")
        for name, count in zip(names, counts):
            print(f"  {name:<8} {count:>10,}")
        print(f"  {'total':<8} {total:>10,}")
    return 0


def cmd_gradcheck(args) -> int:
    rows = training.run_gradient_verification(seed=args.seed)
    worst = 0.0
    for name, err in rows:
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"{name:<22} max rel err {err:.3e}  {status}")
        worst = max(worst, err)
    print(f"worst {worst:.3e} (bound 1e-4)")
    return 0 if worst < 1e-4 else 1


def cmd_synth_data(args) -> int:
    value = (args.fixed_value, args.fixed_value) if args.fixed_value else (0.65, 0.85)
    paths = harness.generate_synthetic_dataset(
        args.out, n=args.n, size=args.size, seed=args.seed,
        healthy_hue=args.healthy_hue, blast_hue=args.blast_hue, value=value,
    )
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quatcnn",
        description="quaternion vs real convolutional network experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model on one split")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--config", required=True, choices=layers.CONFIG_NAMES)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="repeated-split experiment over configurations")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--configs", nargs="+", default=list(layers.CONFIG_NAMES),
                   choices=layers.CONFIG_NAMES)
    p.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5",
                   help="comma-separated test fractions")
    p.add_argument("--runs", type=int, default=100, help="simulations per cell")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    p.add_argument("--seed", type=int, default=0, help="base seed of the sweep")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("count-params", help="print per-layer parameter counts")
    p.add_argument("--input-size", type=int, default=100)
    p.set_defaults(fn=cmd_count_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synth-data", help="generate the synthetic fixture dataset")
    p.add_argument("--n", type=int, default=260)
    p.add_argument("--size", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--healthy-hue", type=float, default=330.0)
    p.add_argument("--blast-hue", type=float, default=270.0)
    p.add_argument("--fixed-value", type=float, default=None,
                   help="pin the HSV value channel (hue-separable task)")
    p.set_defaults(fn=cmd_synth_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
