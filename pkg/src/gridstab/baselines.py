"""Comparison systems: previous-day label averaging, boundary-expansion SVM,
a plain MLP, and the union ensemble."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .features import FeaturizedDataset
from .grid import STABLE, UNSTABLE
from .model import ModelConfig, TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

PREV_DAY_THRESHOLD = 0.03


@dataclass
class PrevDayIndex:
    """Per-element label history over one day's slots."""

    day: int
    labels: dict[int, list[int]] = field(default_factory=dict)

    @classmethod
    def from_faults(cls, faults, day: int) -> "PrevDayIndex":
        index = cls(day=day)
        for fs in faults:
            if fs.day == day:
                index.labels.setdefault(fs.element_id, []).append(int(fs.label))
        return index

    def mean_label(self, element_id: int) -> float:
        history = self.labels.get(element_id)
        return float(np.mean(history)) if history else 0.0


def prev_day_predict(index: PrevDayIndex, element_id: int,
                     threshold: float = PREV_DAY_THRESHOLD) -> int:
    """Unstable iff yesterday's label mean exceeds the threshold."""
    if element_id not in index.labels:
        log.debug("element %d absent from day %d history; predicting stable",
                  element_id, index.day)
        return STABLE
    return UNSTABLE if index.mean_label(element_id) > threshold else STABLE


def prev_day_scores(index: PrevDayIndex, faults) -> np.ndarray:
    """Yesterday's per-element label mean as a score for each fault sample."""
    return np.array([index.mean_label(fs.element_id) for fs in faults])


# ------------------------------------------------------------------- SVM

@dataclass
class LinearSvmParams:
    weights: np.ndarray
    bias: float
    penalty: float
    feature_mu: np.ndarray
    feature_sd: np.ndarray

    def margins(self, features: np.ndarray) -> np.ndarray:
        x = (features - self.feature_mu) / self.feature_sd
        return x @ self.weights + self.bias


def _hinge_fit(x: np.ndarray, y_signed: np.ndarray, sample_weight: np.ndarray,
               penalty: float, iters: int = 400) -> tuple[np.ndarray, float]:
    """Deterministic averaged full-batch subgradient descent on the primal
    weighted hinge objective  lam/2 |w|^2 + mean(cw * hinge),
    with lam = 1 / (penalty * n)."""
    n, d = x.shape
    lam = 1.0 / (penalty * n)
    w = np.zeros(d)
    b = 0.0
    w_sum = np.zeros(d)
    b_sum = 0.0
    averaged = 0
    for t in range(1, iters + 1):
        margin = y_signed * (x @ w + b)
        active = margin < 1.0
        coeff = sample_weight * active * y_signed
        grad_w = lam * w - (coeff[:, None] * x).mean(axis=0)
        grad_b = -coeff.mean()
        step = 1.0 / np.sqrt(t)
        w -= step * grad_w
        b -= step * grad_b
        if t > iters // 2:
            w_sum += w
            b_sum += b
            averaged += 1
    return w_sum / averaged, b_sum / averaged


def svm_train_expanded(features: np.ndarray, labels: np.ndarray,
                       penalty: float = 20000.0):
    """Two-stage boundary-expansion training of a linear hinge classifier.

    Stage 1 trains on everything (class-weighted), then grows the unstable
    side with its support vectors (|margin| <= 1) and the stable samples it
    misflagged.  Stage 2 retrains on the expanded unstable set against the
    equally many stable samples closest to the boundary.

    Returns (LinearSvmParams, accounting dict).
    """
    labels = np.asarray(labels, dtype=float)
    features = np.asarray(features, dtype=float)
    if labels.min() == labels.max():
        raise ValueError("boundary expansion needs both classes present")
    n = labels.size
    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    x = (features - mu) / sd
    y_signed = np.where(labels > 0.5, 1.0, -1.0)

    n_pos = int((labels > 0.5).sum())
    n_neg = n - n_pos
    class_weight = np.where(labels > 0.5, n / (2.0 * n_pos), n / (2.0 * n_neg))

    w1, b1 = _hinge_fit(x, y_signed, class_weight, penalty)
    margin = x @ w1 + b1

    truly_unstable = set(np.where(labels > 0.5)[0])
    support = set(np.where(np.abs(margin) <= 1.0)[0])
    false_pos = set(np.where((labels < 0.5) & (margin >= 0.0))[0])
    expanded = truly_unstable | support | false_pos
    accounting = {
        "truly_unstable": len(truly_unstable),
        "support_vectors": len(support),
        "false_positives": len(false_pos),
        "expanded": len(expanded),
    }

    stable_rest = np.array(sorted(set(range(n)) - expanded - truly_unstable), dtype=int)
    w_norm = float(np.linalg.norm(w1))
    distance = np.abs(margin[stable_rest]) / max(w_norm, 1e-12)
    take = min(len(expanded), stable_rest.size)
    nearest = stable_rest[np.argsort(distance, kind="stable")[:take]]

    idx2 = np.concatenate([np.array(sorted(expanded), dtype=int), nearest])
    y2 = np.concatenate([np.ones(len(expanded)), -np.ones(len(nearest))])
    x2 = x[idx2]
    weight2 = np.ones(idx2.size)
    w2, b2 = _hinge_fit(x2, y2, weight2, penalty, iters=800)

    params = LinearSvmParams(weights=w2, bias=b2, penalty=penalty,
                             feature_mu=mu, feature_sd=sd)
    accounting["stage2_stable"] = int(len(nearest))
    accounting["stage2_total"] = int(idx2.size)
    return params, accounting


def expansion_accounting(truly_unstable: set, support: set, false_pos: set) -> int:
    """Size of the expanded unstable set by plain set union."""
    return len(truly_unstable | support | false_pos)


def svm_dataset_features(dataset: FeaturizedDataset) -> np.ndarray:
    return np.stack([s.global_vec for s in dataset.samples])


def mlp_baseline(train_set: FeaturizedDataset, val_set: FeaturizedDataset,
                 model_config: ModelConfig | None = None,
                 train_config: TrainConfig | None = None) -> TrainResult:
    """Three-layer perceptron over the global statistic vector."""
    return train("MlpOnly", train_set, val_set, model_config, train_config)


def combine_union(pred_a, pred_b) -> np.ndarray:
    """Unstable iff either input flags the sample."""
    a = np.asarray(pred_a)
    b = np.asarray(pred_b)
    if a.shape != b.shape:
        raise ValueError(f"prediction length mismatch: {a.shape} vs {b.shape}")
    return ((a > 0.5) | (b > 0.5)).astype(int)
