"""Command line entry point: train, eval, attack, defend, experiment."""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import mnist
from .attack import AttackConfig, craft_targeted
from .errors import AdvrotError
from .experiment import (emit_sweep_csv, load_config, run_experiment, train_from_data_dir,
                         write_experiment)
from .model import TrainConfig, evaluate, load_checkpoint, save_checkpoint
from .rotation import RotationConfig, defend

log = logging.getLogger("advrot")


def cmd_train(args):
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.learning_rate, seed=args.seed,
                         validation_target_accuracy=args.validation_target)
    model, report = train_from_data_dir(args.data_dir, config)
    save_checkpoint(model, args.checkpoint_out)
    print(f"final validation accuracy {report.final_validation_accuracy:.4f} "
          f"(target {config.validation_target_accuracy}: {'met' if report.target_met else 'missed'})")
    print(f"checkpoint written to {args.checkpoint_out}")


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    test = mnist.load_test(args.data_dir)
    print(f"test accuracy {evaluate(model, test):.4f} on {len(test)} images")


def cmd_attack(args):
    model = load_checkpoint(args.checkpoint)
    test = mnist.load_test(args.data_dir)
    if args.index is not None:
        image, label = test.by_index(args.index)
        index = args.index
    else:
        pool = test.of_class(args.source_class)
        preds = np.atleast_1d(model.predict(pool.images))
        eligible = np.flatnonzero(preds == args.source_class)
        if eligible.size == 0:
            raise AdvrotError(f"no correctly classified test image of class {args.source_class}")
        pos = np.random.default_rng(args.seed).choice(eligible)
        image, label, index = pool.images[pos], int(pool.labels[pos]), int(pool.indices[pos])
    result = craft_targeted(model, image, AttackConfig(args.target, args.epsilon_step,
                                                       args.iterations), true_class=label)
    os.makedirs(args.output_dir, exist_ok=True)
    np.save(os.path.join(args.output_dir, f"adversarial_{index}.npy"), result.adversarial)
    metrics = {
        "image_index": index, "true_label": label, "target_label": args.target,
        "success": bool(result.success),
        "final_target_conf": result.trace[-1][0], "final_true_conf": result.trace[-1][1],
        "l0": result.metrics.l0, "l2": result.metrics.l2, "linf": result.metrics.linf,
        "trace": [list(t) for t in result.trace],
    }
    with open(os.path.join(args.output_dir, f"attack_{index}.json"), "w", encoding="utf-8") as f:
        json.dump(metrics, f, indent=2)
        f.write("\n")
    print(f"image {index}: label {label} -> target {args.target}, "
          f"success={result.success}, target conf {result.trace[-1][0]:.3f}, "
          f"linf {result.metrics.linf:.3f}")


def cmd_defend(args):
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    image = np.load(args.image)
    config = RotationConfig(args.angle_min, args.angle_max, args.angle_step)
    recovered, record = defend(model, image, args.true_label, config)
    emit_sweep_csv(record, args.output)
    print(f"best angle {record.best_angle}, true-class confidence {record.best_confidence:.4f}, "
          f"recovered={recovered}")


def cmd_experiment(args):
    config = load_config(args.config)
    overrides = {k: v for k, v in (("data_dir", args.data_dir), ("checkpoint", args.checkpoint),
                                   ("output_dir", args.output_dir)) if v is not None}
    for key, value in overrides.items():
        setattr(config, key, value)
    result = run_experiment(config)
    write_experiment(result, config.output_dir)
    s = result.summary
    print(f"{s['count']} images: recovery rate {s['recovery_rate']:.2f}, "
          f"mean best angle {s['mean_best_angle']:.1f}, "
          f"mean changing rate {s['mean_changing_rate']:.2f}")
    print(f"outputs written to {config.output_dir}")


def build_parser():
    parser = argparse.ArgumentParser(prog="advrot", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train LeNet-5 on MNIST")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--seed", type=int, default=TrainConfig.seed)
    p.add_argument("--validation-target", type=float, default=TrainConfig.validation_target_accuracy)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report test accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="craft a targeted FGSM example from a test image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--index", type=int, help="MNIST test-set index")
    which.add_argument("--source-class", type=int, help="sample a correctly classified image")
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--epsilon-step", type=float, default=0.01)
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="sweep rotations over a saved image (.npy)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--true-label", type=int, required=True)
    p.add_argument("--angle-min", type=int, default=0)
    p.add_argument("--angle-max", type=int, default=90)
    p.add_argument("--angle-step", type=int, default=1)
    p.add_argument("--output", required=True, help="sweep CSV path")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("experiment", help="run the full attack/defense protocol from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--checkpoint")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (AdvrotError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
