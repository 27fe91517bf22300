"""Synthetic multi-party speaker-behavior generation.

Produces labeled utterances whose head-gaze and body-pose statistics mirror
a desk-scale triadic scenario: a speaker standing 1.5 to 2.5 meters in
front of the robot addresses either the robot or a bystander at its left
or right, occasionally glancing at objects placed between them.  Every
utterance is rendered into per-frame face crops and COCO-18 keypoints, so
the generated files are drop-in stand-ins for a real extractor's output.

Generation is fully deterministic given (config, seed): each utterance
draws from an independently spawned RNG stream, so utterances could also
be generated in parallel without changing the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np

from .core import (
    FRAME_PERIOD_MS,
    AddresseeClass,
    ConfigError,
    FaceCrop,
    Frame,
    InvalidInputError,
    PoseKeypoints,
)

# Fixed scene constants (meters). Bystanders flank the speaker at the same
# depth; objects sit on the desk between the robot and the humans.
BYSTANDER_LATERAL_M = 1.5
SPEAKER_LATERAL_JITTER_M = 0.2
OBJECT_POSITIONS_M = ((-0.8, 1.0), (0.0, 0.9), (0.8, 1.0))

# Torso follows the addressee direction at half the head angle, with its
# own (halved) noise, so the pose branch carries correlated but not
# duplicated signal.
TORSO_YAW_RATIO = 0.5

_CONFIG_FIELDS = {
    "n_utterances", "class_mix", "utterance_len_ms", "yaw_noise_deg",
    "object_glance_prob", "glance_len_ms", "keypoint_dropout",
    "speaker_depth_m", "pixel_noise", "seed",
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs for one synthetic scenario."""

    n_utterances: int = 100
    class_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    utterance_len_ms: tuple[int, int] = (1000, 6000)
    yaw_noise_deg: float = 5.0
    object_glance_prob: float = 0.3
    glance_len_ms: tuple[int, int] = (200, 500)
    keypoint_dropout: float = 0.05
    speaker_depth_m: tuple[float, float] = (1.5, 2.5)
    pixel_noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_utterances < 1:
            raise ConfigError("n_utterances must be >= 1")
        mix = tuple(float(p) for p in self.class_mix)
        if len(mix) != 3 or any(p < 0 for p in mix):
            raise ConfigError("class_mix must be three non-negative proportions")
        if abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(f"class_mix must sum to 1, got {sum(mix)}")
        object.__setattr__(self, "class_mix", mix)
        for name in ("utterance_len_ms", "glance_len_ms", "speaker_depth_m"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: empty range ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        if self.utterance_len_ms[0] < FRAME_PERIOD_MS:
            raise ConfigError(f"utterance_len_ms must allow at least one {FRAME_PERIOD_MS} ms frame")
        if self.speaker_depth_m[0] <= 0:
            raise ConfigError("speaker_depth_m must be positive")
        for name in ("object_glance_prob", "keypoint_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.yaw_noise_deg < 0 or self.pixel_noise < 0:
            raise ConfigError("noise magnitudes must be non-negative")
        if not -(2**63) <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        unknown = set(d) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown scenario config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for name in ("class_mix", "utterance_len_ms", "glance_len_ms", "speaker_depth_m"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "n_utterances": self.n_utterances,
            "class_mix": list(self.class_mix),
            "utterance_len_ms": list(self.utterance_len_ms),
            "yaw_noise_deg": self.yaw_noise_deg,
            "object_glance_prob": self.object_glance_prob,
            "glance_len_ms": list(self.glance_len_ms),
            "keypoint_dropout": self.keypoint_dropout,
            "speaker_depth_m": list(self.speaker_depth_m),
            "pixel_noise": self.pixel_noise,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SceneGeometry:
    """Positions in meters, robot camera at the origin looking along +depth.

    Lateral coordinates are signed from the robot's first-person view:
    negative is the robot's left, positive its right.
    """

    speaker: tuple[float, float]
    left_bystander: tuple[float, float]
    right_bystander: tuple[float, float]
    objects: tuple[tuple[float, float], ...] = OBJECT_POSITIONS_M

    def __post_init__(self):
        if self.speaker[1] <= 0:
            raise InvalidInputError("speaker depth must be positive")
        if not (self.left_bystander[0] < 0 < self.right_bystander[0]):
            raise InvalidInputError("bystanders must flank the robot's view axis")


@dataclass(frozen=True)
class Utterance:
    """A labeled span of consecutive frames from one speaker."""

    id: str
    label: AddresseeClass
    frames: tuple[Frame, ...]
    speaker_id: str

    def __post_init__(self):
        if len(self.frames) < 1:
            raise InvalidInputError(f"utterance {self.id}: needs at least one frame")
        for k, fr in enumerate(self.frames):
            if fr.utterance_id != self.id:
                raise InvalidInputError(f"utterance {self.id}: frame {k} belongs to {fr.utterance_id}")
            if fr.t_ms != k * FRAME_PERIOD_MS:
                raise InvalidInputError(
                    f"utterance {self.id}: frame {k} at t={fr.t_ms}, expected {k * FRAME_PERIOD_MS}")
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def camera_azimuth_deg(position: tuple[float, float]) -> float:
    """Azimuth of a scene position in the robot camera frame, degrees.

    Sign convention: positions at the robot's left (negative lateral) get
    positive azimuth. The robot's own position maps to 0.
    """
    lateral, depth = position
    return -math.degrees(math.atan2(lateral, depth))


def addressee_position(label: AddresseeClass, geometry: SceneGeometry) -> tuple[float, float]:
    if label == AddresseeClass.ROBOT:
        return (0.0, 0.0)
    if label == AddresseeClass.LEFT:
        return geometry.left_bystander
    return geometry.right_bystander


def sample_geometry(config: ScenarioConfig, rng: np.random.Generator) -> SceneGeometry:
    lateral = rng.uniform(-SPEAKER_LATERAL_JITTER_M, SPEAKER_LATERAL_JITTER_M)
    depth = rng.uniform(*config.speaker_depth_m)
    return SceneGeometry(
        speaker=(lateral, depth),
        left_bystander=(-BYSTANDER_LATERAL_M, depth),
        right_bystander=(BYSTANDER_LATERAL_M, depth),
    )


def head_yaw_trajectory(
    label: AddresseeClass,
    geometry: SceneGeometry,
    n_frames: int,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-frame head yaw in degrees (camera frame, camera-left positive).

    Base yaw is the addressee's camera-frame azimuth, plus Gaussian noise;
    with probability ``object_glance_prob`` one contiguous glance segment
    is overridden to point at a sampled object instead.
    """
    base = camera_azimuth_deg(addressee_position(label, geometry))
    yaw = base + rng.normal(0.0, config.yaw_noise_deg, n_frames)
    if rng.random() < config.object_glance_prob:
        glance_ms = int(rng.integers(config.glance_len_ms[0], config.glance_len_ms[1] + 1))
        g = min(n_frames, max(1, glance_ms // FRAME_PERIOD_MS))
        start = int(rng.integers(0, n_frames - g + 1))
        target = geometry.objects[int(rng.integers(len(geometry.objects)))]
        yaw[start:start + g] = (camera_azimuth_deg(target)
                                + rng.normal(0.0, config.yaw_noise_deg, g))
    return yaw


# Face-pattern constants, in head-centered units of half the crop side.
_HEAD_RX, _HEAD_RY = 0.72, 0.88
_FEATURE_SWING = 0.45          # horizontal feature offset per unit sin(yaw)
_EYE_DX, _EYE_Y, _EYE_SIGMA = 0.28, -0.25, 0.11
_MOUTH_Y, _MOUTH_SIGMA = 0.30, 0.14


def render_face(yaw_deg: float, config: ScenarioConfig, rng: np.random.Generator) -> FaceCrop:
    """Parametric face crop: elliptical head with eye/mouth blobs that
    slide horizontally with sin(yaw), plus optional pixel noise.

    Values are quantized to 3 decimals so serialized datasets stay compact.
    """
    side = 24
    half = (side - 1) / 2.0
    idx = (np.arange(side) - half) / (side / 2.0)
    xc = idx[np.newaxis, :]
    yc = idx[:, np.newaxis]

    r2 = (xc / _HEAD_RX) ** 2 + (yc / _HEAD_RY) ** 2
    img = 0.75 * np.clip(1.0 - r2, 0.0, 1.0)

    shift = -_FEATURE_SWING * math.sin(math.radians(yaw_deg))
    for fx, fy, sigma, gain in (
        (shift - _EYE_DX, _EYE_Y, _EYE_SIGMA, 0.45),
        (shift + _EYE_DX, _EYE_Y, _EYE_SIGMA, 0.45),
        (1.2 * shift, _MOUTH_Y, _MOUTH_SIGMA, 0.35),
    ):
        d2 = (xc - fx) ** 2 + (yc - fy) ** 2
        img = img - gain * np.exp(-d2 / (2.0 * sigma ** 2))

    if config.pixel_noise > 0.0:
        img = img + rng.normal(0.0, config.pixel_noise, (side, side))
    img = np.round(np.clip(img, 0.0, 1.0), 3)
    return FaceCrop(img)


# Stick-figure skeleton in normalized image coordinates.  Scale follows
# 1/depth so nearer speakers appear larger.
def render_pose(
    head_yaw_deg: float,
    torso_yaw_deg: float,
    depth_m: float,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> PoseKeypoints:
    s = 2.0 / depth_m
    head = math.radians(head_yaw_deg)
    torso = math.radians(torso_yaw_deg)
    head_dx = -0.10 * s * math.sin(head)
    torso_dx = -0.05 * s * math.sin(torso)
    half_sh = 0.16 * s * math.cos(torso)
    half_hip = 0.10 * s * math.cos(torso)

    cx, neck_y = 0.5, 0.40
    nose = (cx + head_dx, neck_y - 0.12 * s)
    pts = np.zeros((18, 3))
    coords = {
        0: nose,                                        # nose
        1: (cx, neck_y),                                # neck
        2: (cx - half_sh + torso_dx, 0.46),             # right shoulder
        3: (cx - half_sh + torso_dx - 0.03 * s, 0.62),  # right elbow
        4: (cx - half_sh + torso_dx - 0.04 * s, 0.76),  # right wrist
        5: (cx + half_sh + torso_dx, 0.46),             # left shoulder
        6: (cx + half_sh + torso_dx + 0.03 * s, 0.62),  # left elbow
        7: (cx + half_sh + torso_dx + 0.04 * s, 0.76),  # left wrist
        8: (cx - half_hip + 0.5 * torso_dx, 0.78),      # right hip
        9: (cx - half_hip + 0.5 * torso_dx, 0.90),      # right knee
        10: (cx - half_hip + 0.5 * torso_dx, 0.99),     # right ankle
        11: (cx + half_hip + 0.5 * torso_dx, 0.78),     # left hip
        12: (cx + half_hip + 0.5 * torso_dx, 0.90),     # left knee
        13: (cx + half_hip + 0.5 * torso_dx, 0.99),     # left ankle
        14: (nose[0] - 0.04 * s, nose[1] - 0.03 * s),   # right eye
        15: (nose[0] + 0.04 * s, nose[1] - 0.03 * s),   # left eye
        16: (cx - 0.07 * s + 0.5 * head_dx, nose[1]),   # right ear
        17: (cx + 0.07 * s + 0.5 * head_dx, nose[1]),   # left ear
    }
    for k, (x, y) in coords.items():
        pts[k] = (x, y, 1.0)

    if config.keypoint_dropout > 0.0:
        drop = rng.random(18) < config.keypoint_dropout
        pts[drop] = 0.0
    pts[:, :2] = np.round(np.clip(pts[:, :2], 0.0, 1.0), 4)
    pts[pts[:, 2] == 0.0] = 0.0
    return PoseKeypoints(pts)


def render_frame(
    yaw_deg: float,
    config: ScenarioConfig,
    rng: np.random.Generator,
    torso_yaw_deg: float | None = None,
    depth_m: float = 2.0,
) -> tuple[FaceCrop, PoseKeypoints]:
    """Render one frame's observables for a given head yaw.

    ``torso_yaw_deg`` defaults to half the head yaw; the generator passes
    the glance-free torso trajectory explicitly so object glances move the
    head but not the body.
    """
    if abs(yaw_deg) > 90.0:
        raise InvalidInputError(f"|yaw| must be <= 90 degrees, got {yaw_deg}")
    if torso_yaw_deg is None:
        torso_yaw_deg = TORSO_YAW_RATIO * yaw_deg
    face = render_face(yaw_deg, config, rng)
    pose = render_pose(yaw_deg, torso_yaw_deg, depth_m, config, rng)
    return face, pose


def _label_counts(n: int, mix: Seq[float]) -> list[int]:
    # Largest-remainder rounding: exact totals, each class within +-1 of n*p.
    raw = [n * p for p in mix]
    counts = [int(math.floor(v)) for v in raw]
    remainders = sorted(range(3), key=lambda c: (-(raw[c] - counts[c]), c))
    for c in remainders[: n - sum(counts)]:
        counts[c] += 1
    return counts


def generate(config: ScenarioConfig) -> list[Utterance]:
    """Generate the configured number of labeled utterances."""
    ss = np.random.SeedSequence(config.seed)
    children = ss.spawn(config.n_utterances + 1)
    label_rng = np.random.Generator(np.random.PCG64(children[0]))

    counts = _label_counts(config.n_utterances, config.class_mix)
    labels = ([AddresseeClass.ROBOT] * counts[0]
              + [AddresseeClass.LEFT] * counts[1]
              + [AddresseeClass.RIGHT] * counts[2])
    order = label_rng.permutation(config.n_utterances)
    labels = [labels[i] for i in order]

    utterances = []
    for i, label in enumerate(labels):
        rng = np.random.Generator(np.random.PCG64(children[i + 1]))
        utt_id = f"u{i:05d}"
        len_ms = int(rng.integers(config.utterance_len_ms[0], config.utterance_len_ms[1] + 1))
        n_frames = max(1, len_ms // FRAME_PERIOD_MS)
        geometry = sample_geometry(config, rng)
        speaker_id = f"speaker-{int(rng.integers(2))}"

        head = head_yaw_trajectory(label, geometry, n_frames, config, rng)
        base = camera_azimuth_deg(addressee_position(label, geometry))
        torso = (TORSO_YAW_RATIO * base
                 + rng.normal(0.0, TORSO_YAW_RATIO * config.yaw_noise_deg, n_frames))

        depth = geometry.speaker[1]
        frames = []
        for k in range(n_frames):
            yaw = float(np.clip(head[k], -90.0, 90.0))
            face, pose = render_frame(yaw, config, rng,
                                      torso_yaw_deg=float(torso[k]), depth_m=depth)
            frames.append(Frame(utterance_id=utt_id, t_ms=k * FRAME_PERIOD_MS,
                                face=face, pose=pose))
        utterances.append(Utterance(id=utt_id, label=label,
                                    frames=tuple(frames), speaker_id=speaker_id))
    return utterances
