from typing import Tuple

import numpy as np
from scipy.special import log_softmax


P_FLOOR = 1e-8


def metric_macro_prf(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> Tuple[float, float, float]:
    """
    Macro precision, recall and F1 over the classes present in y_true.
    0/0 counts as 0.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    classes = np.unique(y_true)
    classes = classes[(classes >= 0) & (classes < n_classes)]
    if classes.size == 0:
        return 0.0, 0.0, 0.0

    precision, recall, f1 = [], [], []
    for c in classes:
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    return float(np.mean(precision)), float(np.mean(recall)), float(np.mean(f1))


def clamp_distribution(p: np.ndarray) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=np.float64), P_FLOOR)
    return p / p.sum(axis=-1, keepdims=True)


def metric_distribution(p: np.ndarray, q: np.ndarray) -> Tuple[float, float, float]:
    """
    (KL(q || p), mean absolute bin difference, max absolute bin difference)
    for one predicted distribution p and target q. Bins with q = 0 add
    nothing to KL; p is floored at 1e-8 and renormalized for KL only.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    pc = clamp_distribution(p)
    support = q > 0
    kl = float(np.sum(q[support] * (np.log(q[support]) - np.log(pc[support]))))
    diff = np.abs(p - q)
    return kl, float(diff.mean()), float(diff.max())


def mean_distribution_metrics(p: np.ndarray, q: np.ndarray) -> Tuple[float, float, float]:
    """Per-region metric_distribution averaged over regions"""
    rows = np.array([metric_distribution(pi, qi) for pi, qi in zip(p, q)])
    return tuple(float(v) for v in rows.mean(axis=0))


def cross_entropy_labels(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-softmax probability of the true class"""
    logp = log_softmax(logits, axis=1)
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


def cross_entropy_distribution(logits: np.ndarray, q: np.ndarray) -> float:
    """Mean of -q^T log softmax(logits)"""
    return float(-np.mean(np.sum(q * log_softmax(logits, axis=1), axis=1)))
