"""Rotation defense: rotate an image over an angle grid and track class confidences."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError


INTERPOLATIONS = ("bilinear",)


@dataclass(frozen=True)
class RotationConfig:
    angle_min: int = 0
    angle_max: int = 90
    angle_step: int = 1
    interpolation: str = "bilinear"
    fill_value: float = 0.0

    def __post_init__(self):
        if not 0 <= self.angle_min <= self.angle_max <= 359:
            raise ValidationError(
                f"need 0 <= angle_min <= angle_max <= 359, got {self.angle_min}..{self.angle_max}")
        if self.angle_step < 1:
            raise ValidationError(f"angle_step must be >= 1, got {self.angle_step}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValidationError(f"unsupported interpolation {self.interpolation!r}")
        if not 0.0 <= self.fill_value <= 1.0:
            raise ValidationError("fill_value must lie in [0, 1]")

    def angles(self):
        return list(range(self.angle_min, self.angle_max + 1, self.angle_step))


def rotation_matrix(angle_degrees):
    a = math.radians(angle_degrees)
    return np.array([[math.cos(a), -math.sin(a)],
                     [math.sin(a), math.cos(a)]])


def rotate_many(image, angles, fill_value=0.0, interpolation="bilinear"):
    """Counterclockwise rotations of a 2-D image about its center, one per angle.

    Coordinates are Cartesian around ((W-1)/2, (H-1)/2) with y pointing up, so
    positive angles turn the picture counterclockwise as displayed. Each output
    pixel samples the source at the inverse-rotated position; samples outside
    the frame read `fill_value`.
    """
    if interpolation not in INTERPOLATIONS:
        raise ValidationError(f"unsupported interpolation {interpolation!r}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"rotate expects a 2-D image, got shape {img.shape}")
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                             indexing="ij")
    x = cols - cx
    y = cy - rows

    rad = np.radians(np.asarray(angles, dtype=np.float64))[:, None, None]
    cos, sin = np.cos(rad), np.sin(rad)
    # inverse rotation R(-a) applied to the destination coordinates
    src_x = x * cos + y * sin
    src_y = y * cos - x * sin
    src_c = src_x + cx
    src_r = cy - src_y

    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0

    border = 1
    padded = np.full((h + 2 * border, w + 2 * border), float(fill_value))
    padded[border:-border, border:-border] = img

    def tap(r, c):
        # anything beyond the border reads the fill value as well
        r = np.clip(r + border, 0, h + 2 * border - 1)
        c = np.clip(c + border, 0, w + 2 * border - 1)
        return padded[r, c]

    out = ((1 - fr) * (1 - fc) * tap(r0, c0)
           + (1 - fr) * fc * tap(r0, c0 + 1)
           + fr * (1 - fc) * tap(r0 + 1, c0)
           + fr * fc * tap(r0 + 1, c0 + 1))
    return np.clip(out, 0.0, 1.0)


def rotate(image, angle_degrees, fill_value=0.0, interpolation="bilinear"):
    return rotate_many(image, [angle_degrees], fill_value, interpolation)[0]


@dataclass
class SweepRecord:
    angles: list
    curves: np.ndarray  # (len(angles), 10) class probabilities
    true_class: int
    best_angle: int
    best_confidence: float
    recovered: bool

    def curve_at(self, angle):
        return self.curves[self.angles.index(angle)]


def sweep(model, image, true_class, config=None):
    """Classify every rotation in the grid; pick the angle with the highest true-class
    probability (first one on ties)."""
    config = config or RotationConfig()
    if not 0 <= true_class <= 9:
        raise ValidationError(f"true_class must be in 0..9, got {true_class}")
    angles = config.angles()
    rotated = rotate_many(image, angles, config.fill_value, config.interpolation)
    curves = np.atleast_2d(model.predict_proba(rotated))
    best = int(np.argmax(curves[:, true_class]))
    return SweepRecord(
        angles=angles,
        curves=curves,
        true_class=int(true_class),
        best_angle=angles[best],
        best_confidence=float(curves[best, true_class]),
        recovered=int(np.argmax(curves[best])) == true_class,
    )


def defend(model, adversarial_image, true_class, config=None):
    record = sweep(model, adversarial_image, true_class, config)
    return record.recovered, record
