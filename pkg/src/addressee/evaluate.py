"""Scoring: utterance aggregation, F1 metrics, and cross-validation.

Reports come at three granularities:

  sequence        every 10-frame window scored independently
  utterance       per-sequence probability vectors averaged into one
                  estimate per utterance
  first_sequence  only each utterance's first window (what a listener
                  knows 0.8 s in)

Aggregation defaults to the equal-weight mean of probability vectors; a
confidence-weighted variant is available behind the `method` switch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    N_CLASSES,
    AddresseeClass,
    ConfigError,
    Estimate,
    InvalidInputError,
)
from .nn.model import Model, ModelConfig
from .nn.train import TrainConfig, train
from .sequencer import window_utterance
from .synthgen import Utterance

AGGREGATION_METHODS = ("mean", "confidence_weighted")
GRANULARITIES = ("sequence", "utterance", "first_sequence")


def aggregate_utterance(estimates: list[Estimate], method: str = "mean") -> Estimate:
    """Combine per-sequence estimates into one utterance-level estimate.

    "mean" averages the probability vectors with equal weight;
    "confidence_weighted" weights each vector by its own max probability.
    The result is renormalized and carries the latest emission time.
    """
    if not estimates:
        raise InvalidInputError("aggregate_utterance needs at least one estimate")
    if method not in AGGREGATION_METHODS:
        raise ConfigError(f"unknown aggregation method {method!r}")
    probs = np.stack([est.probs() for est in estimates])
    if method == "confidence_weighted":
        weights = probs.max(axis=1)
        combined = (probs * weights[:, None]).sum(axis=0) / weights.sum()
    else:
        combined = probs.mean(axis=0)
    combined = combined / combined.sum()
    t_emit = max(est.t_emit_ms for est in estimates)
    # floor keeps log finite when a class probability underflowed to zero
    return Estimate.from_logp(np.log(np.maximum(combined, 1e-300)), t_emit_ms=t_emit)


def confusion_matrix(pairs: list[tuple[int, int]]) -> np.ndarray:
    """3x3 count matrix, rows = true class, columns = predicted class."""
    matrix = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for true, pred in pairs:
        matrix[int(true), int(pred)] += 1
    return matrix


def f1_scores(matrix: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Per-class F1, macro F1, and support-weighted F1 from a count matrix.

    Zero-division conventions: a precision or recall with a zero
    denominator counts as 0, and F1 is 0 when precision + recall is 0.
    """
    matrix = np.asarray(matrix)
    if matrix.shape != (N_CLASSES, N_CLASSES) or (matrix < 0).any():
        raise InvalidInputError("confusion matrix must be 3x3 non-negative counts")
    total = int(matrix.sum())
    if total == 0:
        raise InvalidInputError("cannot score an empty confusion matrix")
    per_class = np.zeros(N_CLASSES)
    support = matrix.sum(axis=1)
    for c in range(N_CLASSES):
        col = int(matrix[:, c].sum())
        row = int(support[c])
        precision = matrix[c, c] / col if col else 0.0
        recall = matrix[c, c] / row if row else 0.0
        if precision + recall > 0.0:
            per_class[c] = 2.0 * precision * recall / (precision + recall)
    macro = float(per_class.mean())
    weighted = float((support / total * per_class).sum())
    return per_class, macro, weighted


@dataclass(frozen=True)
class EvalReport:
    """Metrics at one granularity."""

    granularity: str
    confusion: np.ndarray
    per_class_f1: tuple[float, float, float]
    macro_f1: float
    weighted_f1: float
    support: tuple[int, int, int]

    @classmethod
    def from_pairs(cls, granularity: str, pairs: list[tuple[int, int]]) -> "EvalReport":
        if granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {granularity!r}")
        matrix = confusion_matrix(pairs)
        per_class, macro, weighted = f1_scores(matrix)
        matrix.setflags(write=False)
        return cls(granularity=granularity, confusion=matrix,
                   per_class_f1=tuple(float(v) for v in per_class),
                   macro_f1=macro, weighted_f1=weighted,
                   support=tuple(int(s) for s in matrix.sum(axis=1)))

    @property
    def n_items(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "granularity": self.granularity,
            "n_items": self.n_items,
            "per_class_f1": {cls.name: self.per_class_f1[cls.value] for cls in AddresseeClass},
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "support": {cls.name: self.support[cls.value] for cls in AddresseeClass},
            "confusion_matrix": self.confusion.tolist(),
        }


def predict_utterances(model: Model, utterances: list[Utterance]) -> list[list[Estimate]]:
    """Per-utterance lists of sequence estimates.

    Each sequence goes through its own forward pass, the same call the
    streaming pipeline makes, so batch and streaming log-probabilities are
    bitwise identical (BLAS reductions are not stable across batch sizes,
    so a batched pass here would break that).
    """
    out: list[list[Estimate]] = []
    for utt in utterances:
        out.append([model.estimate_sequence(seq) for seq in window_utterance(utt)])
    return out


def evaluate(
    model: Model, utterances: list[Utterance], method: str = "mean"
) -> dict[str, EvalReport]:
    """The full protocol: one report per granularity, sharing forward passes."""
    if not utterances:
        raise InvalidInputError("cannot evaluate an empty utterance list")
    per_utt = predict_utterances(model, utterances)
    seq_pairs = []
    first_pairs = []
    utt_pairs = []
    for utt, estimates in zip(utterances, per_utt):
        label = int(utt.label)
        for est in estimates:
            seq_pairs.append((label, int(est.predicted)))
        first_pairs.append((label, int(estimates[0].predicted)))
        agg = aggregate_utterance(estimates, method=method)
        utt_pairs.append((label, int(agg.predicted)))
    return {
        "sequence": EvalReport.from_pairs("sequence", seq_pairs),
        "utterance": EvalReport.from_pairs("utterance", utt_pairs),
        "first_sequence": EvalReport.from_pairs("first_sequence", first_pairs),
    }


@dataclass(frozen=True)
class FoldSplit:
    """Assignment of every utterance id to one of k folds."""

    k: int
    fold_of: dict[str, int]

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("k-fold needs k >= 2")
        sizes = np.bincount(list(self.fold_of.values()), minlength=self.k)
        if len(sizes) != self.k or sizes.max() - sizes.min() > 1 or sizes.min() < 1:
            raise ConfigError("fold sizes must differ by at most one utterance")

    def test_ids(self, fold: int) -> set[str]:
        return {uid for uid, f in self.fold_of.items() if f == fold}


def kfold_split(utterances: list[Utterance], k: int = 10, seed: int = 0) -> FoldSplit:
    """Shuffle utterances (never frames) and deal them into k near-equal folds."""
    ids = [utt.id for utt in utterances]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("duplicate utterance ids in dataset")
    if k < 2:
        raise ConfigError("k-fold needs k >= 2")
    if len(ids) < k:
        raise ConfigError(f"need at least {k} utterances for {k}-fold splitting")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(ids))
    fold_of = {}
    for pos, idx in enumerate(order):
        fold_of[ids[idx]] = pos % k
    return FoldSplit(k=k, fold_of=fold_of)


@dataclass(frozen=True)
class CrossValResult:
    """Per-fold reports plus mean and sample SD for every scalar metric."""

    k: int
    fold_reports: tuple[dict[str, EvalReport], ...]
    summary: dict = field(default_factory=dict)

    def metric_values(self, granularity: str, metric: str) -> np.ndarray:
        vals = []
        for reports in self.fold_reports:
            rep = reports[granularity]
            if metric == "weighted_f1":
                vals.append(rep.weighted_f1)
            elif metric == "macro_f1":
                vals.append(rep.macro_f1)
            elif metric.startswith("f1_"):
                cls = AddresseeClass[metric[3:]]
                vals.append(rep.per_class_f1[cls.value])
            else:
                raise ConfigError(f"unknown metric {metric!r}")
        return np.asarray(vals)


def mean_sd(values) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; SD is 0 for one value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("mean_sd of empty sequence")
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def cross_validate(
    utterances: list[Utterance],
    model_config: ModelConfig,
    train_config: TrainConfig,
    k: int = 10,
    seed: int = 0,
    val_fraction: float = 0.1,
    method: str = "mean",
    progress=None,
) -> CrossValResult:
    """k-fold protocol: train on k-1 folds, score the held-out fold.

    A slice of each fold's training utterances becomes the early-stopping
    validation set; the test fold is never seen during training.
    """
    split = kfold_split(utterances, k=k, seed=seed)
    fold_reports = []
    for fold in range(k):
        test_ids = split.test_ids(fold)
        test_utts = [u for u in utterances if u.id in test_ids]
        rest = [u for u in utterances if u.id not in test_ids]
        rng = np.random.Generator(np.random.PCG64([seed, fold]))
        order = rng.permutation(len(rest))
        n_val = max(1, int(round(val_fraction * len(rest)))) if val_fraction > 0 else 0
        val_utts = [rest[i] for i in order[:n_val]]
        train_utts = [rest[i] for i in order[n_val:]]
        model, _ = train(train_utts, val_utts, model_config, train_config)
        reports = evaluate(model, test_utts, method=method)
        fold_reports.append(reports)
        if progress is not None:
            progress(fold, reports)

    summary: dict[str, dict[str, dict[str, float]]] = {}
    metrics = ["weighted_f1", "macro_f1"] + [f"f1_{cls.name}" for cls in AddresseeClass]
    result = CrossValResult(k=k, fold_reports=tuple(fold_reports))
    for gran in GRANULARITIES:
        summary[gran] = {}
        for metric in metrics:
            mean, sd = mean_sd(result.metric_values(gran, metric))
            summary[gran][metric] = {"mean": mean, "sd": sd}
    result.summary.update(summary)
    return result
