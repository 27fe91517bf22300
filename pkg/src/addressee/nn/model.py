"""Multimodal CNN+LSTM classifier, implemented from scratch in float64.

Architecture (all sizes configurable through ModelConfig):

  face branch   conv 3x3 (valid, stride 1) -> ReLU -> 2x2 max-pool, repeated
                per conv layer, then dense -> ReLU to the face embedding
  pose branch   dense -> ReLU stack over the flattened keypoint vector
  fusion        concat(face, pose) -> dense -> ReLU, one vector per frame
  temporal      LSTM over the 10 fused frame vectors; the final hidden
                state feeds a dense layer + LogSoftMax over the 3 classes

Forward and backward are exact analytic computations (including
backpropagation through time), which is what makes strict finite-difference
gradient checking possible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from ..core import (
    FRAME_PERIOD_MS,
    KP_LSHOULDER,
    KP_NECK,
    KP_RSHOULDER,
    N_CLASSES,
    ConfigError,
    Estimate,
    NumericError,
)
from ..sequencer import SEQUENCE_LEN, Sequence
from . import kernels

KERNEL_SIZE = 3


@dataclass(frozen=True)
class ModelConfig:
    """Layer sizes for the classifier stack."""

    face_size: int = 24
    conv_channels: tuple[int, ...] = (8, 16)
    face_embed: int = 32
    n_keypoints: int = 18
    pose_hidden: tuple[int, ...] = (32, 32)
    fused_dim: int = 32
    lstm_hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "pose_hidden", tuple(int(h) for h in self.pose_hidden))
        for name in ("face_size", "face_embed", "n_keypoints", "fused_dim", "lstm_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.conv_channels or any(c < 1 for c in self.conv_channels):
            raise ConfigError("conv_channels must be a non-empty tuple of positive counts")
        if not self.pose_hidden or any(h < 1 for h in self.pose_hidden):
            raise ConfigError("pose_hidden must be a non-empty tuple of positive sizes")
        self.conv_output_hw()  # validates the conv chain fits the face size

    def conv_output_hw(self) -> int:
        """Spatial side after the conv/pool stack; raises if it collapses."""
        side = self.face_size
        for li in range(len(self.conv_channels)):
            side = side - (KERNEL_SIZE - 1)
            if side < 1:
                raise ConfigError(f"face_size {self.face_size} too small for conv layer {li}")
            side //= 2
            if side < 1:
                raise ConfigError(f"face_size {self.face_size} too small for pool layer {li}")
        return side

    @property
    def face_flat(self) -> int:
        s = self.conv_output_hw()
        return self.conv_channels[-1] * s * s

    @property
    def pose_input(self) -> int:
        return 3 * self.n_keypoints

    def to_dict(self) -> dict:
        return {
            "face_size": self.face_size,
            "conv_channels": list(self.conv_channels),
            "face_embed": self.face_embed,
            "n_keypoints": self.n_keypoints,
            "pose_hidden": list(self.pose_hidden),
            "fused_dim": self.fused_dim,
            "lstm_hidden": self.lstm_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {"face_size", "conv_channels", "face_embed", "n_keypoints",
                 "pose_hidden", "fused_dim", "lstm_hidden"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for name in ("conv_channels", "pose_hidden"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)

    def config_hash(self) -> bytes:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).digest()


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map; its order is the serialization order."""
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 1
    for li, c_out in enumerate(config.conv_channels):
        shapes[f"face.conv{li}.w"] = (c_out, c_in, KERNEL_SIZE, KERNEL_SIZE)
        shapes[f"face.conv{li}.b"] = (c_out,)
        c_in = c_out
    shapes["face.fc.w"] = (config.face_embed, config.face_flat)
    shapes["face.fc.b"] = (config.face_embed,)
    d_in = config.pose_input
    for li, d_out in enumerate(config.pose_hidden):
        shapes[f"pose.fc{li}.w"] = (d_out, d_in)
        shapes[f"pose.fc{li}.b"] = (d_out,)
        d_in = d_out
    shapes["fuse.fc.w"] = (config.fused_dim, config.face_embed + config.pose_hidden[-1])
    shapes["fuse.fc.b"] = (config.fused_dim,)
    h = config.lstm_hidden
    shapes["lstm.wx"] = (4 * h, config.fused_dim)
    shapes["lstm.wh"] = (4 * h, h)
    shapes["lstm.b"] = (4 * h,)
    shapes["head.w"] = (N_CLASSES, h)
    shapes["head.b"] = (N_CLASSES,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...], config: ModelConfig) -> int:
    if name.startswith("face.conv"):
        layer = int(name.split(".")[1][4:])
        c_in = 1 if layer == 0 else config.conv_channels[layer - 1]
        return c_in * KERNEL_SIZE * KERNEL_SIZE
    if name.startswith("lstm"):
        return config.fused_dim if name == "lstm.wx" else config.lstm_hidden
    if name == "head.w" or name == "head.b":
        return config.lstm_hidden
    # dense weights/biases: the layer's input width
    base = name.rsplit(".", 1)[0]
    w_shape = parameter_shapes(config)[base + ".w"]
    return w_shape[1]


def init_weights(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for every tensor."""
    weights = {}
    for name, shape in parameter_shapes(config).items():
        bound = 1.0 / np.sqrt(_fan_in(name, shape, config))
        weights[name] = rng.uniform(-bound, bound, shape)
    return weights


def zero_weights(config: ModelConfig) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in parameter_shapes(config).items()}


def normalize_pose(points: np.ndarray) -> np.ndarray:
    """Flatten (K,3) keypoints, centered on the neck and scaled by shoulder
    distance when those joints are visible; raw coordinates otherwise.

    Missing keypoints stay exactly (0,0,0) so the model can tell absence
    from a joint that sits at the reference point.
    """
    pts = np.array(points, dtype=np.float64)
    present = pts[:, 2] > 0.0
    k = pts.shape[0]
    if k > KP_NECK and present[KP_NECK]:
        pts[present, :2] -= pts[KP_NECK, :2]
    if k > KP_LSHOULDER and present[KP_RSHOULDER] and present[KP_LSHOULDER]:
        dist = float(np.hypot(*(pts[KP_RSHOULDER, :2] - pts[KP_LSHOULDER, :2])))
        if dist > 1e-9:
            pts[present, :2] /= dist
    return pts.ravel()


def features_from_sequences(
    seqs: list[Sequence], config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into model input arrays (N,T,S,S) and (N,T,3K)."""
    n = len(seqs)
    s = config.face_size
    faces = np.empty((n, SEQUENCE_LEN, s, s))
    poses = np.empty((n, SEQUENCE_LEN, config.pose_input))
    for i, seq in enumerate(seqs):
        for t, fr in enumerate(seq.frames):
            if fr.face.side != s:
                raise ConfigError(f"face crop side {fr.face.side} does not match config {s}")
            if fr.pose.points.shape[0] != config.n_keypoints:
                raise ConfigError("keypoint count does not match config")
            faces[i, t] = fr.face.pixels
            poses[i, t] = normalize_pose(fr.pose.points)
    return faces, poses


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(arr: np.ndarray, layer: str):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite activation in {layer}")


class Model:
    """A ModelConfig plus its parameter tensors, with forward/backward."""

    def __init__(self, config: ModelConfig, weights: dict[str, np.ndarray]):
        shapes = parameter_shapes(config)
        if set(weights) != set(shapes):
            missing = sorted(set(shapes) - set(weights))
            extra = sorted(set(weights) - set(shapes))
            raise ConfigError(f"weight names do not match config (missing {missing}, extra {extra})")
        self.config = config
        self.weights = {}
        for name, shape in shapes.items():
            arr = np.asarray(weights[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.weights[name] = arr

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "Model":
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(config, init_weights(config, rng))

    # -- forward ---------------------------------------------------------

    def forward_batch(self, faces: np.ndarray, poses: np.ndarray) -> np.ndarray:
        """Log-probabilities (N,3) for batched sequence features."""
        logp, _ = self._forward(faces, poses, need_cache=False)
        return logp

    def forward_sequence(self, seq: Sequence) -> np.ndarray:
        faces, poses = features_from_sequences([seq], self.config)
        return self.forward_batch(faces, poses)[0]

    def estimate_sequence(self, seq: Sequence) -> Estimate:
        logp = self.forward_sequence(seq)
        return Estimate.from_logp(logp, t_emit_ms=seq.t_end_ms + FRAME_PERIOD_MS)

    def _forward(self, faces: np.ndarray, poses: np.ndarray, need_cache: bool):
        cfg = self.config
        w = self.weights
        n, t = faces.shape[0], faces.shape[1]
        if t != SEQUENCE_LEN or faces.shape[2:] != (cfg.face_size, cfg.face_size):
            raise ConfigError(f"faces shape {faces.shape} does not match config")
        if poses.shape != (n, t, cfg.pose_input):
            raise ConfigError(f"poses shape {poses.shape} does not match config")
        m = n * t

        cache: dict = {"n": n, "t": t}
        x = np.ascontiguousarray(faces.reshape(m, 1, cfg.face_size, cfg.face_size))
        conv_caches = []
        for li in range(len(cfg.conv_channels)):
            z = kernels.conv2d_forward(x, w[f"face.conv{li}.w"], w[f"face.conv{li}.b"])
            a = np.maximum(z, 0.0)
            pooled, idx = kernels.maxpool2_forward(a)
            if need_cache:
                conv_caches.append((x, z > 0.0, idx, a.shape))
            x = pooled
        flat = x.reshape(m, -1)
        face_z = flat @ w["face.fc.w"].T + w["face.fc.b"]
        face_a = np.maximum(face_z, 0.0)
        _check_finite(face_a, "face.fc")

        p = poses.reshape(m, cfg.pose_input)
        pose_caches = []
        for li in range(len(cfg.pose_hidden)):
            z = p @ w[f"pose.fc{li}.w"].T + w[f"pose.fc{li}.b"]
            a = np.maximum(z, 0.0)
            if need_cache:
                pose_caches.append((p, z > 0.0))
            p = a
        _check_finite(p, "pose.fc")

        cat = np.concatenate([face_a, p], axis=1)
        fuse_z = cat @ w["fuse.fc.w"].T + w["fuse.fc.b"]
        fused = np.maximum(fuse_z, 0.0)
        _check_finite(fused, "fuse.fc")

        h_dim = cfg.lstm_hidden
        xproj = fused @ w["lstm.wx"].T + w["lstm.b"]      # (M, 4H)
        xproj = xproj.reshape(n, t, 4 * h_dim)
        h = np.zeros((n, h_dim))
        c = np.zeros((n, h_dim))
        steps = []
        for step in range(t):
            z4 = xproj[:, step, :] + h @ w["lstm.wh"].T
            i_g = _sigmoid(z4[:, 0 * h_dim:1 * h_dim])
            f_g = _sigmoid(z4[:, 1 * h_dim:2 * h_dim])
            g_g = np.tanh(z4[:, 2 * h_dim:3 * h_dim])
            o_g = _sigmoid(z4[:, 3 * h_dim:4 * h_dim])
            c_new = f_g * c + i_g * g_g
            tc = np.tanh(c_new)
            h_new = o_g * tc
            if need_cache:
                steps.append((h, c, i_g, f_g, g_g, o_g, tc))
            h, c = h_new, c_new
        _check_finite(h, "lstm")

        logits = h @ w["head.w"].T + w["head.b"]
        _check_finite(logits, "head")
        mx = logits.max(axis=1, keepdims=True)
        logp = logits - (mx + np.log(np.exp(logits - mx).sum(axis=1, keepdims=True)))

        if need_cache:
            cache.update(conv_caches=conv_caches, flat=flat, face_z=face_z > 0.0,
                         pose_caches=pose_caches, cat=cat, fuse_z=fuse_z > 0.0,
                         fused=fused, steps=steps, h_final=h, logp=logp)
        return logp, cache

    # -- backward --------------------------------------------------------

    def loss_and_grads(self, faces: np.ndarray, poses: np.ndarray, labels: np.ndarray):
        """Mean NLL over the batch and its exact gradients."""
        logp, cache = self._forward(faces, poses, need_cache=True)
        labels = np.asarray(labels, dtype=np.int64)
        n = labels.shape[0]
        loss = float(-logp[np.arange(n), labels].mean())
        grads = self._backward(cache, labels)
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {name}")
        return loss, grads

    def _backward(self, cache: dict, labels: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.config
        w = self.weights
        n, t = cache["n"], cache["t"]
        m = n * t
        h_dim = cfg.lstm_hidden
        grads = {name: np.zeros_like(arr) for name, arr in self.weights.items()}

        dlogits = np.exp(cache["logp"])
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n

        grads["head.w"] = dlogits.T @ cache["h_final"]
        grads["head.b"] = dlogits.sum(axis=0)
        dh = dlogits @ w["head.w"]

        dz4_all = np.empty((n, t, 4 * h_dim))
        dc = np.zeros((n, h_dim))
        for step in range(t - 1, -1, -1):
            h_prev, c_prev, i_g, f_g, g_g, o_g, tc = cache["steps"][step]
            do = dh * tc
            dc = dc + dh * o_g * (1.0 - tc * tc)
            di = dc * g_g
            df = dc * c_prev
            dg = dc * i_g
            dz4 = dz4_all[:, step, :]
            dz4[:, 0 * h_dim:1 * h_dim] = di * i_g * (1.0 - i_g)
            dz4[:, 1 * h_dim:2 * h_dim] = df * f_g * (1.0 - f_g)
            dz4[:, 2 * h_dim:3 * h_dim] = dg * (1.0 - g_g * g_g)
            dz4[:, 3 * h_dim:4 * h_dim] = do * o_g * (1.0 - o_g)
            grads["lstm.wh"] += dz4[:, :].T @ h_prev
            dh = dz4 @ w["lstm.wh"]
            dc = dc * f_g

        dz4_flat = dz4_all.reshape(m, 4 * h_dim)
        grads["lstm.wx"] = dz4_flat.T @ cache["fused"]
        grads["lstm.b"] = dz4_flat.sum(axis=0)
        dfused = dz4_flat @ w["lstm.wx"]

        dfuse_z = dfused * cache["fuse_z"]
        grads["fuse.fc.w"] = dfuse_z.T @ cache["cat"]
        grads["fuse.fc.b"] = dfuse_z.sum(axis=0)
        dcat = dfuse_z @ w["fuse.fc.w"]
        dface_a = dcat[:, :cfg.face_embed]
        dpose_a = dcat[:, cfg.face_embed:]

        for li in range(len(cfg.pose_hidden) - 1, -1, -1):
            p_in, mask = cache["pose_caches"][li]
            dz = dpose_a * mask
            grads[f"pose.fc{li}.w"] = dz.T @ p_in
            grads[f"pose.fc{li}.b"] = dz.sum(axis=0)
            dpose_a = dz @ w[f"pose.fc{li}.w"]

        dface_z = dface_a * cache["face_z"]
        grads["face.fc.w"] = dface_z.T @ cache["flat"]
        grads["face.fc.b"] = dface_z.sum(axis=0)
        dflat = dface_z @ w["face.fc.w"]

        s = cfg.conv_output_hw()
        dx = dflat.reshape(m, cfg.conv_channels[-1], s, s)
        for li in range(len(cfg.conv_channels) - 1, -1, -1):
            x_in, relu_mask, pool_idx, a_shape = cache["conv_caches"][li]
            da = kernels.maxpool2_backward(pool_idx, np.ascontiguousarray(dx),
                                           a_shape[2], a_shape[3])
            dz = da * relu_mask
            dx, dw_, db_ = kernels.conv2d_backward(x_in, w[f"face.conv{li}.w"],
                                                   np.ascontiguousarray(dz))
            grads[f"face.conv{li}.w"] = dw_
            grads[f"face.conv{li}.b"] = db_
        return grads


def nll_loss(logp: np.ndarray, label: int) -> float:
    """Negative log-likelihood of one log-probability vector."""
    arr = np.asarray(logp, dtype=np.float64)
    return float(-arr[int(label)])
