"""Mini-batch Adam training over windowed utterances.

Everything is deterministic for a given seed: initialization draws from a
PCG64 stream, the per-epoch shuffle comes from the same stream, and all
arithmetic is float64 on one thread.  Two runs with identical data and
config produce identical weight files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ConfigError, NumericError, TrainingError
from ..sequencer import window_utterance
from ..synthgen import Utterance
from .model import Model, ModelConfig, features_from_sequences, init_weights


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    patience: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be positive and finite")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0 (0 disables early stopping)")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "patience": self.patience,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {"learning_rate", "batch_size", "epochs", "patience", "seed",
                 "beta1", "beta2", "eps"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def sequence_dataset(utterances: list[Utterance], config: ModelConfig):
    """Window utterances and stack their features; labels repeat per window."""
    seqs = []
    labels = []
    for utt in utterances:
        windows = window_utterance(utt)
        seqs.extend(windows)
        labels.extend([int(utt.label)] * len(windows))
    faces, poses = features_from_sequences(seqs, config)
    return faces, poses, np.asarray(labels, dtype=np.int64)


def evaluate_loss(model: Model, faces, poses, labels, chunk: int = 256):
    """Mean NLL and accuracy without touching gradients."""
    n = labels.shape[0]
    total = 0.0
    correct = 0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        logp = model.forward_batch(faces[lo:hi], poses[lo:hi])
        idx = np.arange(hi - lo)
        total += float(-logp[idx, labels[lo:hi]].sum())
        correct += int((logp.argmax(axis=1) == labels[lo:hi]).sum())
    return total / n, correct / n


def train(
    train_utts: list[Utterance],
    val_utts: list[Utterance],
    model_config: ModelConfig,
    train_config: TrainConfig,
    progress=None,
) -> tuple[Model, list[dict]]:
    """Train from scratch, returning the best-validation-loss model.

    With an empty validation set, the final-epoch weights are returned and
    the val columns in the history stay None.
    """
    if not train_utts:
        raise TrainingError("training set is empty")
    tc = train_config
    faces, poses, labels = sequence_dataset(train_utts, model_config)
    has_val = bool(val_utts)
    if has_val:
        vfaces, vposes, vlabels = sequence_dataset(val_utts, model_config)

    rng = np.random.Generator(np.random.PCG64(tc.seed))
    model = Model(model_config, init_weights(model_config, rng))
    m_state = {k: np.zeros_like(v) for k, v in model.weights.items()}
    v_state = {k: np.zeros_like(v) for k, v in model.weights.items()}
    step = 0

    history: list[dict] = []
    best_loss = np.inf
    best_weights = {k: v.copy() for k, v in model.weights.items()}
    since_best = 0
    n = labels.shape[0]

    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for lo in range(0, n, tc.batch_size):
            sel = order[lo:lo + tc.batch_size]
            try:
                loss, grads = model.loss_and_grads(faces[sel], poses[sel], labels[sel])
            except NumericError as exc:
                raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch} (non-finite loss)")
            running += loss * sel.shape[0]
            step += 1
            bc1 = 1.0 - tc.beta1 ** step
            bc2 = 1.0 - tc.beta2 ** step
            for name, g in grads.items():
                m_ = m_state[name]
                v_ = v_state[name]
                m_ *= tc.beta1
                m_ += (1.0 - tc.beta1) * g
                v_ *= tc.beta2
                v_ += (1.0 - tc.beta2) * (g * g)
                model.weights[name] -= (tc.learning_rate * (m_ / bc1)
                                        / (np.sqrt(v_ / bc2) + tc.eps))
        train_loss = running / n

        row = {"epoch": epoch, "train_loss": train_loss,
               "val_loss": None, "val_accuracy": None}
        if has_val:
            val_loss, val_acc = evaluate_loss(model, vfaces, vposes, vlabels)
            if not np.isfinite(val_loss):
                raise TrainingError(f"training diverged at epoch {epoch} (non-finite val loss)")
            row["val_loss"] = val_loss
            row["val_accuracy"] = val_acc
            if val_loss < best_loss:
                best_loss = val_loss
                best_weights = {k: v.copy() for k, v in model.weights.items()}
                since_best = 0
            else:
                since_best += 1
        history.append(row)
        if progress is not None:
            progress(row)
        if has_val and tc.patience and since_best >= tc.patience:
            break

    if has_val:
        model = Model(model_config, best_weights)
    return model, history
