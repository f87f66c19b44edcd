"""Train -> attack -> defend orchestration and CSV/summary emitters."""
import csv
import json
import logging
import os
from dataclasses import dataclass, field, fields
from decimal import Decimal

import numpy as np

from . import mnist
from .attack import AttackConfig, craft_targeted
from .errors import ValidationError
from .model import TrainConfig, build_model, load_checkpoint, train
from .rotation import RotationConfig, defend

log = logging.getLogger(__name__)

RECORD_HEADER = ["image_index", "true_label", "target_label", "orig_conf", "adv_conf_target",
                 "adv_conf_true", "best_angle", "rot_conf_true", "changing_rate", "recovered"]
SWEEP_HEADER = ["angle"] + [f"p{i}" for i in range(10)]


@dataclass
class ExperimentConfig:
    seed: int = 42
    source_class: int = 1
    target_class: int = 8
    sample_count: int = 10
    epsilon_step: float = 0.01
    iterations: int = 20
    angle_min: int = 0
    angle_max: int = 90
    angle_step: int = 1
    data_dir: str = "data/mnist"
    checkpoint: str = "lenet5.ckpt"
    output_dir: str = "results"

    def __post_init__(self):
        for name in ("source_class", "target_class"):
            if not 0 <= getattr(self, name) <= 9:
                raise ValidationError(f"{name} must be in 0..9")
        if self.source_class == self.target_class:
            raise ValidationError("source_class and target_class must differ")
        if self.sample_count < 1:
            raise ValidationError(f"sample_count must be >= 1, got {self.sample_count}")

    @property
    def attack(self):
        return AttackConfig(self.target_class, self.epsilon_step, self.iterations)

    @property
    def rotation(self):
        return RotationConfig(self.angle_min, self.angle_max, self.angle_step)


def parse_config_text(text):
    """Parse `key = value` lines (with `#` comments) into an ExperimentConfig."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    casts = {"int": int, "float": float, "str": str, int: int, float: float, str: str}
    values, unknown = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            unknown.append(key)
            continue
        try:
            values[key] = casts[types[key]](value)
        except ValueError:
            raise ValidationError(f"line {lineno}: bad value {value!r} for {key}") from None
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read())


@dataclass
class ExperimentRecord:
    """One Table I row; confidences are percentages."""
    image_index: int
    true_label: int
    target_label: int
    orig_conf: float
    adv_conf_target: float
    adv_conf_true: float
    best_angle: int
    rot_conf_true: float
    recovered: bool
    attack_success: bool = True

    @property
    def changing_rate(self):
        # signed: positive means the rotated image is less confident than the original
        return self.orig_conf - self.rot_conf_true


@dataclass
class ExperimentResult:
    records: list
    sweeps: list
    summary: dict = field(default_factory=dict)


def summarize(records):
    n = len(records)
    if n == 0:
        return {"count": 0}
    return {
        "count": n,
        "attack_success_rate": sum(r.attack_success for r in records) / n,
        "recovery_rate": sum(r.recovered for r in records) / n,
        "mean_best_angle": float(np.mean([r.best_angle for r in records])),
        "mean_changing_rate": float(np.mean([r.changing_rate for r in records])),
        "best_angles": [r.best_angle for r in records],
        "rows_below_90pct": [r.image_index for r in records if r.rot_conf_true < 90.0],
    }


def train_from_data_dir(data_dir, config=None, progress=None):
    """Build a model seeded like the split and fit it; returns (model, TrainReport)."""
    config = config or TrainConfig()
    train_set, val_set = mnist.load_train_validation(data_dir, config.seed)
    model = build_model(config.seed)
    report = train(model, train_set, val_set, config, progress)
    return model, report


def attack_and_defend(model, image, true_class, attack_config, rotation_config):
    """Attack one image, sweep its adversarial version, return (AttackResult, SweepRecord)."""
    result = craft_targeted(model, image, attack_config, true_class=true_class)
    _, record = defend(model, result.adversarial, true_class, rotation_config)
    return result, record


def run_experiment(config, model=None, test_set=None):
    """Sample correctly classified test images of the source class, attack them toward
    the target class and sweep rotations over each adversarial image."""
    if model is None:
        if not os.path.exists(config.checkpoint):
            raise FileNotFoundError(f"checkpoint not found: {config.checkpoint}")
        model = load_checkpoint(config.checkpoint)
    if test_set is None:
        test_set = mnist.load_test(config.data_dir)

    candidates = test_set.of_class(config.source_class)
    preds = model.predict(candidates.images)
    eligible = np.flatnonzero(np.atleast_1d(preds) == config.source_class)
    if len(eligible) < config.sample_count:
        raise ValidationError(
            f"only {len(eligible)} correctly classified images of class {config.source_class}, "
            f"need {config.sample_count}")
    rng = np.random.default_rng(config.seed)
    picks = candidates.subset(rng.choice(eligible, size=config.sample_count, replace=False))

    records, sweeps = [], []
    for image, index in zip(picks.images, picks.indices):
        orig = model.predict_proba(image)
        attack, sweep_record = attack_and_defend(
            model, image, config.source_class, config.attack, config.rotation)
        adv = model.predict_proba(attack.adversarial)
        records.append(ExperimentRecord(
            image_index=int(index),
            true_label=config.source_class,
            target_label=config.target_class,
            orig_conf=100.0 * float(orig[config.source_class]),
            adv_conf_target=100.0 * float(adv[config.target_class]),
            adv_conf_true=100.0 * float(adv[config.source_class]),
            best_angle=sweep_record.best_angle,
            rot_conf_true=100.0 * sweep_record.best_confidence,
            recovered=sweep_record.recovered,
            attack_success=attack.success,
        ))
        sweeps.append(sweep_record)
        log.info("image %d: adv target %.1f%%, best angle %d, rotated %.1f%%", index,
                 records[-1].adv_conf_target, sweep_record.best_angle, records[-1].rot_conf_true)
    return ExperimentResult(records, sweeps, summarize(records))


def _pct(value):
    return f"{value:.1f}"


def emit_records_csv(records, path):
    """Write Table I style rows. changing_rate is computed from the printed
    one-decimal operands so the file's own arithmetic is exact."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RECORD_HEADER)
        for r in records:
            orig, rot = _pct(r.orig_conf), _pct(r.rot_conf_true)
            writer.writerow([r.image_index, r.true_label, r.target_label, orig,
                             _pct(r.adv_conf_target), _pct(r.adv_conf_true), r.best_angle, rot,
                             f"{Decimal(orig) - Decimal(rot):.1f}",
                             "true" if r.recovered else "false"])


def read_records_csv(path):
    """Parse a records CSV back into dicts; numeric columns become Decimal/int/bool."""
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != RECORD_HEADER:
            raise ValidationError(f"unexpected header {reader.fieldnames}")
        for row in reader:
            rows.append({
                "image_index": int(row["image_index"]),
                "true_label": int(row["true_label"]),
                "target_label": int(row["target_label"]),
                "orig_conf": Decimal(row["orig_conf"]),
                "adv_conf_target": Decimal(row["adv_conf_target"]),
                "adv_conf_true": Decimal(row["adv_conf_true"]),
                "best_angle": int(row["best_angle"]),
                "rot_conf_true": Decimal(row["rot_conf_true"]),
                "changing_rate": Decimal(row["changing_rate"]),
                "recovered": row["recovered"] == "true",
            })
    return rows


def emit_sweep_csv(record, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for angle, probs in zip(record.angles, record.curves):
            writer.writerow([angle] + [f"{p:.6f}" for p in probs])


def read_sweep_csv(path):
    """Return (angles, probabilities array) from a sweep CSV."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != SWEEP_HEADER:
            raise ValidationError(f"unexpected header {header}")
        rows = list(reader)
    angles = [int(r[0]) for r in rows]
    probs = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), 10)
    return angles, probs


def write_experiment(result, output_dir):
    """records.csv, one sweep_<index>.csv per image, and summary.json."""
    os.makedirs(output_dir, exist_ok=True)
    emit_records_csv(result.records, os.path.join(output_dir, "records.csv"))
    for rec, sw in zip(result.records, result.sweeps):
        emit_sweep_csv(sw, os.path.join(output_dir, f"sweep_{rec.image_index}.csv"))
    with open(os.path.join(output_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(result.summary, f, indent=2, sort_keys=True)
        f.write("\n")


def random_pair_study(model, test_set, n, seed, attack_epsilon=0.01, iterations=20,
                      rotation_config=None):
    """Attack `n` random correctly classified test images, each toward a random
    other class, and sweep every adversarial image.

    Returns a list of (index, true, target, AttackResult, SweepRecord).
    """
    rng = np.random.default_rng(seed)
    preds = model.predict(test_set.images)
    eligible = np.flatnonzero(preds == test_set.labels)
    picks = rng.choice(eligible, size=n, replace=False)
    out = []
    for pos in picks:
        true = int(test_set.labels[pos])
        target = int(rng.choice([c for c in range(10) if c != true]))
        attack, record = attack_and_defend(
            model, test_set.images[pos], true,
            AttackConfig(target, attack_epsilon, iterations), rotation_config or RotationConfig())
        out.append((int(test_set.indices[pos]), true, target, attack, record))
    return out
