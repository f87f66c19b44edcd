"""LeNet-5 style classifier: construction, training, gradients, checkpoints."""
import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ArchitectureError, DimensionError, FormatError, TrainingError, TruncationError, ValidationError

log = logging.getLogger(__name__)

IMAGE_SIZE = 28
INPUT_SIZE = 32
PAD = (INPUT_SIZE - IMAGE_SIZE) // 2

# (name, shape) in forward order; conv kernels are (C_out, C_in, k, k)
ROSTER = (
    ("c1.weight", (6, 1, 5, 5)),
    ("c1.bias", (6,)),
    ("c3.weight", (16, 6, 5, 5)),
    ("c3.bias", (16,)),
    ("c5.weight", (120, 16, 5, 5)),
    ("c5.bias", (120,)),
    ("f6.weight", (84, 120)),
    ("f6.bias", (84,)),
    ("out.weight", (10, 84)),
    ("out.bias", (10,)),
)

CHECKPOINT_MAGIC = b"LN5CKPT"
CHECKPOINT_VERSION = 1


def architecture_fingerprint():
    roster = ";".join(f"{name}:{'x'.join(map(str, shape))}" for name, shape in ROSTER)
    return hashlib.sha256(roster.encode("ascii")).digest()


def pad_images(images):
    """Zero-pad (N, 28, 28) images to the (N, 1, 32, 32) network input."""
    out = np.zeros((images.shape[0], 1, INPUT_SIZE, INPUT_SIZE))
    out[:, 0, PAD:PAD + IMAGE_SIZE, PAD:PAD + IMAGE_SIZE] = images
    return out


def _to_input(images):
    """Normalize accepted image layouts to a padded batch.

    Returns the batch and a flag telling whether a single image was given.
    Accepted: (28,28), (1,28,28), (N,28,28), (N,1,28,28) and the same with 32
    in place of 28 for inputs that are already padded.
    """
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 2 or (x.ndim == 3 and x.shape[0] == 1)
    if x.ndim == 2:
        x = x[None]
    elif x.ndim == 4:
        if x.shape[1] != 1:
            raise DimensionError(f"channel axis must be 1, got shape {x.shape}")
        x = x[:, 0]
    elif x.ndim != 3:
        raise DimensionError(f"cannot interpret shape {x.shape} as image(s)")
    if x.shape[1:] == (IMAGE_SIZE, IMAGE_SIZE):
        return pad_images(x), single
    if x.shape[1:] == (INPUT_SIZE, INPUT_SIZE):
        return x[:, None].copy(), single
    raise DimensionError(f"height/width axes must be 28x28 or 32x32, got {x.shape[1:]}")


class LeNet5:
    """C1 conv 6@5x5 -> S2 pool -> C3 conv 16@5x5 -> S4 pool -> C5 conv 120@5x5
    -> F6 dense 84 -> dense 10, tanh after every conv and F6.

    `params` maps roster names to float64 arrays; training updates them in place.
    """

    def __init__(self, params):
        missing = [name for name, _ in ROSTER if name not in params]
        if missing:
            raise ArchitectureError(f"missing parameters: {missing}")
        for name, shape in ROSTER:
            if params[name].shape != shape:
                raise ArchitectureError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.params = {name: np.array(params[name], dtype=np.float64) for name, _ in ROSTER}

    def forward(self, images):
        """Logits for one image or a batch, plus the cache needed by `backward`."""
        x, single = _to_input(images)
        p = self.params
        c = {"x": x}
        c["a1"] = T.tanh_forward(T.conv2d_forward(x, p["c1.weight"], p["c1.bias"]))
        c["p2"] = T.avgpool2_forward(c["a1"])
        c["a3"] = T.tanh_forward(T.conv2d_forward(c["p2"], p["c3.weight"], p["c3.bias"]))
        c["p4"] = T.avgpool2_forward(c["a3"])
        c["a5"] = T.tanh_forward(T.conv2d_forward(c["p4"], p["c5.weight"], p["c5.bias"]))
        c["h5"] = c["a5"].reshape(len(x), -1)
        c["a6"] = T.tanh_forward(T.dense_forward(c["h5"], p["f6.weight"], p["f6.bias"]))
        logits = T.dense_forward(c["a6"], p["out.weight"], p["out.bias"])
        c["single"] = single
        return (logits[0] if single else logits), c

    def backward(self, cache, grad_logits, need_input_grad=True):
        """Parameter gradients and (optionally) the gradient w.r.t. the 32x32 input."""
        p = self.params
        g = np.atleast_2d(grad_logits)
        grads = {}
        g, grads["out.weight"], grads["out.bias"] = T.dense_backward(g, cache["a6"], p["out.weight"])
        g = T.tanh_backward(g, cache["a6"])
        g, grads["f6.weight"], grads["f6.bias"] = T.dense_backward(g, cache["h5"], p["f6.weight"])
        g = T.tanh_backward(g.reshape(cache["a5"].shape), cache["a5"])
        g, grads["c5.weight"], grads["c5.bias"] = T.conv2d_backward(g, cache["p4"], p["c5.weight"])
        g = T.tanh_backward(T.avgpool2_backward(g), cache["a3"])
        g, grads["c3.weight"], grads["c3.bias"] = T.conv2d_backward(g, cache["p2"], p["c3.weight"])
        g = T.tanh_backward(T.avgpool2_backward(g), cache["a1"])
        g, grads["c1.weight"], grads["c1.bias"] = T.conv2d_backward(
            g, cache["x"], p["c1.weight"], need_input_grad=need_input_grad)
        return grads, g

    def logits(self, images):
        return self.forward(images)[0]

    def predict_proba(self, images, batch_size=1000):
        x = np.asarray(images, dtype=np.float64)
        if x.ndim <= 2 or (x.ndim == 3 and x.shape[0] == 1) or len(x) <= batch_size:
            return T.softmax(self.logits(x))
        return np.concatenate([np.atleast_2d(T.softmax(self.logits(x[i:i + batch_size])))
                               for i in range(0, len(x), batch_size)])

    def predict(self, images):
        """Argmax class; ties go to the smallest index."""
        probs = self.predict_proba(images)
        out = np.argmax(probs, axis=-1)
        return int(out) if np.ndim(out) == 0 else out

    def loss_and_grads(self, images, labels):
        """Mean cross-entropy over a batch and its parameter gradients."""
        labels = np.atleast_1d(labels)
        logits, cache = self.forward(images)
        logits = np.atleast_2d(logits)
        y = T.one_hot(labels)
        loss = T.cross_entropy(y, T.softmax(logits))
        grad_logits = T.softmax_xent_grad(y, logits) / len(labels)
        grads, _ = self.backward(cache, grad_logits, need_input_grad=False)
        return loss, grads

    def input_gradient(self, image, label):
        """d cross_entropy(onehot(label), softmax(f(x))) / dx, same shape as `image`."""
        if not 0 <= int(label) <= 9:
            raise ValidationError(f"label must be in 0..9, got {label}")
        image = np.asarray(image, dtype=np.float64)
        logits, cache = self.forward(image)
        grad_logits = T.softmax_xent_grad(T.one_hot(int(label)), logits)
        _, g = self.backward(cache, grad_logits)
        g = g[0, 0]
        if image.shape[-1] == IMAGE_SIZE:
            g = g[PAD:PAD + IMAGE_SIZE, PAD:PAD + IMAGE_SIZE]
        return g.reshape(image.shape)

    def describe(self):
        """Per-layer output shape, trainable parameter count and connection count."""
        shapes = [("C1", (6, 28, 28), 5 * 5 * 1), ("S2", (6, 14, 14), 4),
                  ("C3", (16, 10, 10), 5 * 5 * 6), ("S4", (16, 5, 5), 4),
                  ("C5", (120, 1, 1), 5 * 5 * 16), ("F6", (84,), 120), ("OUT", (10,), 84)]
        names = {"C1": "c1", "C3": "c3", "C5": "c5", "F6": "f6", "OUT": "out"}
        rows = []
        for layer, shape, fan_in in shapes:
            units = math.prod(shape)
            key = names.get(layer)
            n_params = 0 if key is None else (self.params[f"{key}.weight"].size
                                              + self.params[f"{key}.bias"].size)
            connections = units * (fan_in + (1 if key else 0))
            rows.append({"layer": layer, "shape": shape, "params": n_params,
                         "connections": connections})
        return rows


def build_model(seed=42, zero_init=False):
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in ROSTER:
        if name.endswith(".bias") or zero_init:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(math.prod(shape[1:]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return LeNet5(params)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 42
    validation_target_accuracy: float = 0.98

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if not 0 < self.validation_target_accuracy <= 1:
            raise ValidationError("validation_target_accuracy must be in (0, 1]")


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    validation_accuracies: list = field(default_factory=list)
    final_validation_accuracy: float = float("nan")
    target_met: bool = False


def evaluate(model, dataset, batch_size=1000):
    """Fraction of `dataset` classified correctly."""
    if len(dataset) == 0:
        return float("nan")
    preds = np.argmax(model.predict_proba(dataset.images, batch_size), axis=-1)
    return float(np.mean(preds == dataset.labels))


def train(model, train_set, validation_set, config, progress=None):
    """Plain minibatch SGD on mean cross-entropy; mutates `model.params`."""
    rng = np.random.default_rng((config.seed, 1))
    report = TrainReport()
    n = len(train_set)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                loss, grads = model.loss_and_grads(train_set.images[idx], train_set.labels[idx])
            except ValidationError:
                loss = float("nan")
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            for name, g in grads.items():
                model.params[name] -= config.learning_rate * g
            total += loss
            batches += 1
        report.epoch_losses.append(total / batches)
        acc = evaluate(model, validation_set) if validation_set is not None else float("nan")
        report.validation_accuracies.append(acc)
        log.info("epoch %d: train loss %.4f, validation accuracy %.4f",
                 epoch + 1, report.epoch_losses[-1], acc)
        if progress is not None:
            progress(epoch + 1, report.epoch_losses[-1], acc)
    report.final_validation_accuracy = report.validation_accuracies[-1]
    report.target_met = bool(report.final_validation_accuracy >= config.validation_target_accuracy)
    return report


def checkpoint_bytes(model):
    out = [CHECKPOINT_MAGIC, struct.pack(">I", CHECKPOINT_VERSION), architecture_fingerprint()]
    for name, _ in ROSTER:
        arr = model.params[name]
        encoded = name.encode("utf-8")
        out.append(struct.pack(">H", len(encoded)) + encoded)
        out.append(struct.pack(">B", arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=">f8").tobytes())
    return b"".join(out)


def save_checkpoint(model, path):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncationError(
                f"checkpoint truncated reading {what}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def model_from_bytes(data):
    r = _Reader(data)
    if r.take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not a LeNet checkpoint (bad magic)")
    (version,) = struct.unpack(">I", r.take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if r.take(32, "fingerprint") != architecture_fingerprint():
        raise ArchitectureError("checkpoint architecture fingerprint does not match")
    params = {}
    while r.pos < len(data):
        (name_len,) = struct.unpack(">H", r.take(2, "name length"))
        name = r.take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack(">B", r.take(1, f"{name} rank"))
        dims = struct.unpack(f">{rank}I", r.take(4 * rank, f"{name} dims"))
        payload = r.take(8 * math.prod(dims), f"{name} payload")
        params[name] = np.frombuffer(payload, dtype=">f8").astype(np.float64).reshape(dims)
    extra = set(params) - {name for name, _ in ROSTER}
    if extra:
        raise ArchitectureError(f"unexpected parameters in checkpoint: {sorted(extra)}")
    return LeNet5(params)


def load_checkpoint(path):
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
