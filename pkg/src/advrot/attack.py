"""White-box targeted iterative FGSM."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tensor import PerturbationMetrics, lp_metrics


@dataclass(frozen=True)
class AttackConfig:
    target_class: int
    epsilon_step: float = 0.01
    iterations: int = 20

    def __post_init__(self):
        if not 0 <= self.target_class <= 9:
            raise ValidationError(f"target_class must be in 0..9, got {self.target_class}")
        if not self.epsilon_step >= 0:
            raise ValidationError(f"epsilon_step must be >= 0, got {self.epsilon_step}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class AttackResult:
    original: np.ndarray
    adversarial: np.ndarray
    true_class: int
    target_class: int
    # (target confidence, true-class confidence) after each iteration
    trace: list = field(default_factory=list)
    metrics: PerturbationMetrics = None
    success: bool = False


def fgsm_step(model, image, target_class, epsilon_step):
    """One targeted step: move against the gradient of the target-class loss, then clip to [0, 1]."""
    grad = model.input_gradient(image, target_class)
    return np.clip(image - epsilon_step * np.sign(grad), 0.0, 1.0)


def craft_targeted(model, image, config, true_class=None):
    """Run `config.iterations` FGSM steps toward `config.target_class`.

    `true_class` only labels the trace; it defaults to the model's prediction
    on the clean image. There is no early stop on success.
    """
    image = np.asarray(image, dtype=np.float64)
    clean_pred = model.predict(image)
    if clean_pred == config.target_class:
        raise ValidationError(f"image already classified as target {config.target_class}")
    true_class = clean_pred if true_class is None else int(true_class)

    x = image.copy()
    trace = []
    for _ in range(config.iterations):
        x = fgsm_step(model, x, config.target_class, config.epsilon_step)
        probs = model.predict_proba(x)
        trace.append((float(probs[config.target_class]), float(probs[true_class])))
    return AttackResult(
        original=image,
        adversarial=x,
        true_class=true_class,
        target_class=config.target_class,
        trace=trace,
        metrics=lp_metrics(x, image),
        success=model.predict(x) == config.target_class,
    )


def batch_attack(model, dataset, config):
    """Attack every sample of a single-class dataset slice, preserving order."""
    labels = np.unique(dataset.labels)
    if labels.size > 1:
        raise ValidationError(f"batch attack needs one true class, got {labels.tolist()}")
    if labels.size and labels[0] == config.target_class:
        raise ValidationError("true class equals target class")
    return [craft_targeted(model, img, config, true_class=int(lbl))
            for img, lbl in zip(dataset.images, dataset.labels)]
