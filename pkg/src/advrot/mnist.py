"""MNIST IDX parsing and train/validation/test splits."""
import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TruncationError, ValidationError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DEFAULT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
TRAIN_SIZE = 50000
VALIDATION_SIZE = 10000


def _read_header(data, n_fields, magic, kind):
    need = 4 * n_fields
    if len(data) < need:
        raise TruncationError(f"{kind} header needs {need} bytes, got {len(data)}")
    fields = struct.unpack(f">{n_fields}I", data[:need])
    if fields[0] != magic:
        raise FormatError(f"{kind} file has magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields[1:], need


def parse_idx_images(data):
    """Decode an IDX3 image file into a uint8 array of shape (count, rows, cols)."""
    (count, rows, cols), offset = _read_header(data, 4, IMAGE_MAGIC, "image")
    expected = count * rows * cols
    actual = len(data) - offset
    if actual < expected:
        raise TruncationError(f"image payload: expected {expected} bytes, got {actual}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset)
    return pixels.reshape(count, rows, cols).copy()


def parse_idx_labels(data):
    """Decode an IDX1 label file into a uint8 array of class ids."""
    (count,), offset = _read_header(data, 2, LABEL_MAGIC, "label")
    actual = len(data) - offset
    if actual < count:
        raise TruncationError(f"label payload: expected {count} bytes, got {actual}")
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset).copy()
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise ValidationError(f"label value {labels[bad[0]]} at index {bad[0]} is not a digit")
    return labels


def serialize_idx_images(images):
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    return struct.pack(">4I", IMAGE_MAGIC, count, rows, cols) + images.tobytes()


def serialize_idx_labels(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, labels.size) + labels.tobytes()


def normalize(raw):
    """Map byte intensities 0..255 onto [0, 1]."""
    return np.asarray(raw, dtype=np.float64) / 255.0


@dataclass(frozen=True)
class LabeledDataset:
    """Normalized images with their labels.

    `indices` records each sample's position in the IDX file it came from,
    so a sample can always be traced back to its MNIST index.
    """
    images: np.ndarray
    labels: np.ndarray
    split_name: str
    indices: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValidationError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if self.split_name not in ("train", "validation", "test"):
            raise ValidationError(f"unknown split {self.split_name!r}")
        labels = np.asarray(self.labels)
        if labels.size and (labels.min() < 0 or labels.max() > 9):
            raise ValidationError("labels must lie in 0..9")
        if self.indices is None:
            object.__setattr__(self, "indices", np.arange(len(self.labels)))

    def __len__(self):
        return len(self.labels)

    def subset(self, positions, split_name=None):
        positions = np.asarray(positions, dtype=np.int64)
        return LabeledDataset(self.images[positions], self.labels[positions],
                              split_name or self.split_name, self.indices[positions])

    def of_class(self, label):
        return self.subset(np.flatnonzero(self.labels == label))

    def by_index(self, index):
        """Image and label of the sample whose file index is `index`."""
        pos = np.flatnonzero(self.indices == index)
        if pos.size == 0:
            raise ValidationError(f"index {index} not in the {self.split_name} split")
        return self.images[pos[0]], int(self.labels[pos[0]])


def _read_file(data_dir, name):
    path = os.path.join(data_dir, name)
    if os.path.exists(path):
        with open(path, "rb") as f:
            return f.read()
    if os.path.exists(path + ".gz"):
        with gzip.open(path + ".gz", "rb") as f:
            return f.read()
    raise FileNotFoundError(f"MNIST file not found: {path}")


def load_idx_pair(data_dir, image_file, label_file, split_name):
    raw = parse_idx_images(_read_file(data_dir, image_file))
    labels = parse_idx_labels(_read_file(data_dir, label_file))
    if len(raw) != len(labels):
        raise ValidationError(f"{image_file} has {len(raw)} images, {label_file} has {len(labels)} labels")
    return LabeledDataset(normalize(raw), labels.astype(np.int64), split_name)


def split_train_validation(dataset, seed):
    """Seeded shuffle of the 60000-image training file into 50000/10000."""
    if len(dataset) != TRAIN_SIZE + VALIDATION_SIZE:
        raise ValidationError(
            f"expected {TRAIN_SIZE + VALIDATION_SIZE} training-file samples, got {len(dataset)}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return (dataset.subset(order[:TRAIN_SIZE], "train"),
            dataset.subset(order[TRAIN_SIZE:], "validation"))


def load_test(data_dir, image_file=None, label_file=None):
    images, labels = DEFAULT_FILES["test"]
    return load_idx_pair(data_dir, image_file or images, label_file or labels, "test")


def load_train_validation(data_dir, seed, image_file=None, label_file=None):
    images, labels = DEFAULT_FILES["train"]
    full = load_idx_pair(data_dir, image_file or images, label_file or labels, "train")
    return split_train_validation(full, seed)
