"""Shared domain types and elementary probability utilities.

Every other module builds on these: the three addressee classes, the
per-frame observation types (face crop + pose keypoints), and the
classifier's estimate record.  All types are immutable after construction
and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

FRAME_PERIOD_MS = 80          # 12.5 Hz sampling
N_CLASSES = 3
N_KEYPOINTS = 18              # COCO-18 layout used by the upstream pose tool
FACE_SIDE = 24                # fixed square grayscale face crop

# COCO-18 keypoint indices used elsewhere in the package.
KP_NOSE = 0
KP_NECK = 1
KP_RSHOULDER = 2
KP_LSHOULDER = 5


class AddresseeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(AddresseeError):
    """Input violates a documented precondition."""


class ConfigError(AddresseeError):
    """Configuration is inconsistent or out of range."""


class NumericError(AddresseeError):
    """A computation produced non-finite values."""


class FormatError(AddresseeError):
    """A file or record does not match its declared format."""


class SequencingError(AddresseeError):
    """Frame stream violated the sequencer's single-utterance contract."""


class ProtocolError(AddresseeError):
    """Control event stream violated the START/END protocol."""


class TrainingError(AddresseeError):
    """Training diverged or was given an unusable split."""


class AddresseeClass(IntEnum):
    """Where the addressee is, from the robot's first-person view."""

    ROBOT = 0
    LEFT = 1
    RIGHT = 2


def _frozen_array(a, shape, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.shape != shape:
        raise InvalidInputError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name}: non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FaceCrop:
    """Square single-channel face crop with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        side = np.asarray(self.pixels).shape[0] if np.ndim(self.pixels) == 2 else FACE_SIDE
        arr = _frozen_array(self.pixels, (side, side), "FaceCrop.pixels")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidInputError("FaceCrop.pixels: values outside [0, 1]")
        object.__setattr__(self, "pixels", arr)

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, FaceCrop) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class PoseKeypoints:
    """18 COCO-ordered keypoints as rows of (x, y, confidence).

    Missing keypoints are encoded as (0, 0, 0); whenever confidence is
    positive, x and y are normalized image coordinates in [0, 1].
    """

    points: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.points, (N_KEYPOINTS, 3), "PoseKeypoints.points")
        present = arr[:, 2] > 0.0
        if arr[present, :2].size and (arr[present, :2].min() < 0.0 or arr[present, :2].max() > 1.0):
            raise InvalidInputError("PoseKeypoints: x,y outside [0, 1] for a visible keypoint")
        if (arr[:, 2] < 0.0).any() or (arr[:, 2] > 1.0).any():
            raise InvalidInputError("PoseKeypoints: confidence outside [0, 1]")
        if not present.all() and not np.array_equal(arr[~present], np.zeros_like(arr[~present])):
            raise InvalidInputError("PoseKeypoints: missing keypoints must be (0, 0, 0)")
        object.__setattr__(self, "points", arr)

    def present(self, index: int) -> bool:
        return self.points[index, 2] > 0.0

    def __eq__(self, other):
        return isinstance(other, PoseKeypoints) and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class Frame:
    """One timestamped observation of the tracked speaker."""

    utterance_id: str
    t_ms: int
    face: FaceCrop
    pose: PoseKeypoints

    def __post_init__(self):
        if self.t_ms < 0 or self.t_ms % FRAME_PERIOD_MS != 0:
            raise InvalidInputError(
                f"Frame.t_ms must be a non-negative multiple of {FRAME_PERIOD_MS}, got {self.t_ms}")


@dataclass(frozen=True, eq=False)
class Estimate:
    """A 3-class log-probability estimate with its argmax decision."""

    logp: np.ndarray
    predicted: AddresseeClass
    confidence: float
    t_emit_ms: int

    def __post_init__(self):
        arr = _frozen_array(self.logp, (N_CLASSES,), "Estimate.logp")
        total = float(np.exp(arr).sum())
        if abs(total - 1.0) > 1e-6:
            raise InvalidInputError(f"Estimate.logp: exp(logp) sums to {total}, not 1")
        object.__setattr__(self, "logp", arr)

    @classmethod
    def from_logp(cls, logp, t_emit_ms: int = 0) -> "Estimate":
        arr = np.asarray(logp, dtype=np.float64)
        probs = probs_from_log(arr)
        return cls(logp=arr, predicted=argmax_class(probs),
                   confidence=float(probs.max()), t_emit_ms=t_emit_ms)

    def probs(self) -> np.ndarray:
        return probs_from_log(self.logp)

    def __eq__(self, other):
        return (isinstance(other, Estimate)
                and np.array_equal(self.logp, other.logp)
                and self.predicted == other.predicted
                and self.confidence == other.confidence
                and self.t_emit_ms == other.t_emit_ms)


def probs_from_log(logp) -> np.ndarray:
    """Invert a log-probability vector into a probability vector.

    The result is renormalized so it sums to 1 even if the input carries
    small numerical drift.
    """
    arr = np.asarray(logp, dtype=np.float64)
    if arr.shape != (N_CLASSES,) or not np.isfinite(arr).all():
        raise InvalidInputError("probs_from_log: expected a finite 3-vector")
    probs = np.exp(arr)
    total = probs.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise InvalidInputError("probs_from_log: degenerate log-probabilities")
    return probs / total


def argmax_class(probs) -> AddresseeClass:
    """Pick the most probable class; ties go to the lowest class code."""
    arr = np.asarray(probs, dtype=np.float64)
    if arr.shape != (N_CLASSES,) or not np.isfinite(arr).all():
        raise InvalidInputError("argmax_class: expected a finite 3-vector")
    if (arr < 0.0).any() or arr.sum() <= 0.0:
        raise InvalidInputError("argmax_class: not a valid (unnormalized) distribution")
    return AddresseeClass(int(np.argmax(arr)))
