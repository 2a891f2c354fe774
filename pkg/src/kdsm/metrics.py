"""Ranking metrics, evaluation splits and the evaluation report.

Anomalies are the positive class (label 1) and larger scores mean
"more anomalous". Rankings break score ties by original index so every
metric is deterministic.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError

TEST_CAP = 50_000


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise InvalidInputError(f"X must be 2-D, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise InvalidInputError("label count must match the number of rows")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise InvalidInputError("labels must be 0 (normal) or 1 (anomaly)")

    @property
    def n_anomalies(self):
        return int(self.y.sum())


@dataclass
class EvalReport:
    auc_roc: float
    auc_pr: float
    f1: float
    n_test: int
    n_anomalies: int
    seed: int | None = None
    split: str | None = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise InvalidInputError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores contain NaN or Inf")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be binary 0/1")
    return s, y.astype(np.int64)


def ranking(scores):
    """Indices ordered by score descending, ties by index ascending."""
    s = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(s.size), -s))


def auc_roc(scores, labels):
    """Mann-Whitney AUC: P(anomaly outscores normal), ties counted as 1/2."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("AUC-ROC needs both classes")
    # midranks handle ties exactly
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scores, labels):
    """Step-wise average precision: mean of precision@rank over the positives."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise InvalidInputError("AUC-PR needs at least one anomaly")
    hits = y[ranking(s)]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    return float(precision[hits == 1].sum() / n_pos)


def f1_top_k(scores, labels):
    """F1 when the top-k scores are flagged, k = number of true anomalies.

    With this k precision and recall coincide, so F1 = TP / k.
    """
    s, y = _scores_labels(scores, labels)
    k = int(y.sum())
    if k == 0:
        raise InvalidInputError("F1 needs at least one anomaly")
    tp = int(y[ranking(s)[:k]].sum())
    precision = tp / k
    recall = tp / k
    if tp == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def evaluate(scores, labels, seed=None, split=None):
    s, y = _scores_labels(scores, labels)
    return EvalReport(auc_roc=auc_roc(s, y), auc_pr=auc_pr(s, y), f1=f1_top_k(s, y),
                      n_test=int(y.size), n_anomalies=int(y.sum()), seed=seed, split=split)


def _require_both_classes(ds):
    n_anom = ds.n_anomalies
    n_norm = len(ds.y) - n_anom
    if n_norm < 2 or n_anom < 1:
        raise InvalidInputError(
            f"need >= 2 normals and >= 1 anomaly, got {n_norm} and {n_anom}")


def semi_supervised_split(ds, seed, cap=TEST_CAP):
    """Train on a random half of the normals; test on the rest plus all anomalies.

    Returns ``(X_train, test_dataset)``. The test set keeps original row
    order; if it exceeds ``cap`` rows, normals are subsampled so that every
    anomaly is kept (anomalies are only subsampled when they alone exceed it).
    """
    _require_both_classes(ds)
    rng = np.random.default_rng(seed)
    normals = np.flatnonzero(ds.y == 0)
    anomalies = np.flatnonzero(ds.y == 1)
    perm = rng.permutation(normals)
    n_train = len(normals) // 2
    train_idx = np.sort(perm[:n_train])
    held_out = perm[n_train:]
    if len(held_out) + len(anomalies) > cap:
        if len(anomalies) >= cap:
            anomalies = rng.choice(anomalies, size=cap, replace=False)
            held_out = held_out[:0]
        else:
            held_out = rng.choice(held_out, size=cap - len(anomalies), replace=False)
    test_idx = np.sort(np.concatenate([held_out, anomalies]))
    test = LabeledDataset(ds.X[test_idx], ds.y[test_idx], name=f"{ds.name}:test")
    return ds.X[train_idx], test


def semi_supervised_indices(ds, seed, cap=TEST_CAP):
    """Like :func:`semi_supervised_split` but returns ``(train_idx, test_idx)``."""
    marker = LabeledDataset(np.arange(len(ds.y), dtype=np.float64)[:, None], ds.y)
    train, test = semi_supervised_split(marker, seed, cap)
    return train[:, 0].astype(np.int64), test.X[:, 0].astype(np.int64)


def unsupervised_split(ds, seed):
    """Bootstrap ``n`` rows (labels dropped) for training; test on the full dataset."""
    _require_both_classes(ds)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(ds.y), size=len(ds.y))
    return ds.X[idx], LabeledDataset(ds.X, ds.y, name=f"{ds.name}:full")
