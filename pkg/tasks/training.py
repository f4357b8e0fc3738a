import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax

from nn.optimizer import AdamWState, adamw_step
from nn.seeding import keyed_rng
from tasks.heads import TaskHead, head_predict, head_predict_backward, head_predict_cached
from tasks.metrics import (cross_entropy_distribution, cross_entropy_labels, mean_distribution_metrics,
                           metric_macro_prf)
from tasks.splits import Split, random_split, stratified_split


logger = logging.getLogger(__name__)

# classification scores as percent, divergences x1000 (l1 x100)
TABLE_SCALE = {'f1': 100.0, 'precision': 100.0, 'recall': 100.0,
               'kl': 1000.0, 'l1': 100.0, 'chebyshev': 1000.0}


class TaskError(ValueError):
    pass


@dataclass
class TaskHeadConfig:
    hidden: int = 64
    learning_rate: float = 1e-3
    patience: int = 20
    max_epochs: int = 500

    def validate(self) -> 'TaskHeadConfig':
        if self.hidden < 0 or self.patience < 1 or self.max_epochs < 1 or not self.learning_rate > 0:
            raise TaskError(f"invalid task head config {self}")
        return self


@dataclass
class EvalReport:
    """Mean and (population) standard deviation of each metric over seeds"""
    metrics: Dict[str, Tuple[float, float]]
    seeds: List[int]
    split: str
    per_seed: List[Dict[str, float]] = field(default_factory=list)

    @classmethod
    def aggregate(cls, per_seed: List[Dict[str, float]], seeds: Sequence[int], split: str) -> 'EvalReport':
        if not per_seed:
            raise TaskError("cannot aggregate an empty set of runs")
        names = list(per_seed[0])
        metrics = {}
        for name in names:
            values = np.array([run[name] for run in per_seed], dtype=np.float64)
            metrics[name] = (float(values.mean()), float(values.std()))
        return cls(metrics, list(seeds), split, list(per_seed))

    def mean(self, name: str) -> float:
        return self.metrics[name][0]

    def std(self, name: str) -> float:
        return self.metrics[name][1]

    def to_frame(self, label: str, scaled: bool = False) -> pd.DataFrame:
        rows = []
        for name, (mean, std) in self.metrics.items():
            factor = TABLE_SCALE.get(name, 1.0) if scaled else 1.0
            rows.append({'embedding': label, 'metric': name, 'mean': mean * factor,
                         'std': std * factor, 'n_seeds': len(self.seeds), 'split': self.split})
        return pd.DataFrame(rows, columns=['embedding', 'metric', 'mean', 'std', 'n_seeds', 'split'])


def standardize(x: np.ndarray, train: np.ndarray) -> np.ndarray:
    """z-score features with statistics of the training rows"""
    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0)
    return (x - mu) / np.where(sd > 1e-12, sd, 1.0)


LossFn = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]]


def _labels_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    p = softmax(logits, axis=1)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(labels)), labels] = 1.0
    return cross_entropy_labels(logits, labels), (p - onehot) / len(labels)


def _distribution_loss(logits: np.ndarray, q: np.ndarray) -> Tuple[float, np.ndarray]:
    p = softmax(logits, axis=1)
    return cross_entropy_distribution(logits, q), (p - q) / len(q)


def _mse_loss(pred: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = pred - y
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def fit_head(head: TaskHead, x: np.ndarray, y: np.ndarray, split: Split, loss_fn: LossFn,
             cfg: TaskHeadConfig) -> Tuple[TaskHead, int]:
    """
    Full-batch Adam with early stopping on validation loss.
    Returns the parameters with the best validation loss and that epoch.
    """
    state = AdamWState(learning_rate=cfg.learning_rate, weight_decay=0.0)
    monitor = split.val if len(split.val) else split.train
    best, best_loss, best_epoch, wait = head.copy(), math.inf, 0, 0
    for epoch in range(cfg.max_epochs):
        logits, cache = head_predict_cached(head, x[split.train])
        _, glogits = loss_fn(logits, y[split.train])
        adamw_step(state, head.parameters(), head_predict_backward(head, cache, glogits))

        val_loss, _ = loss_fn(head_predict(head, x[monitor]), y[monitor])
        if val_loss < best_loss:
            best, best_loss, best_epoch, wait = head.copy(), val_loss, epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                logger.debug("early stop at epoch %d (best %d, val loss %.6f)", epoch, best_epoch, best_loss)
                break
    return best, best_epoch


@dataclass(eq=False)
class TaskResult:
    head: TaskHead
    report: EvalReport
    predictions: np.ndarray


def train_luc(embeddings: np.ndarray, labels: np.ndarray, split: Split, cfg: TaskHeadConfig,
              n_classes: int = None) -> TaskResult:
    """Land-use classification head; macro P/R/F1 on the test rows"""
    cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    present = np.unique(labels[split.train])
    if present.size < 2:
        raise TaskError(f"training split has {present.size} class(es), need at least 2")
    absent = sorted(set(np.unique(labels).tolist()) - set(present.tolist()))
    if absent:
        logger.warning("classes %s are absent from the training split", absent)

    x = standardize(np.asarray(embeddings, dtype=np.float64), split.train)
    head = TaskHead.init(keyed_rng(split.seed, 'task', 'luc'), x.shape[1], cfg.hidden, n_classes)
    head, _ = fit_head(head, x, labels, split, _labels_loss, cfg)

    pred = np.argmax(head_predict(head, x[split.test]), axis=1)
    precision, recall, f1 = metric_macro_prf(labels[split.test], pred, n_classes)
    metrics = {'f1': f1, 'precision': precision, 'recall': recall}
    return TaskResult(head, EvalReport.aggregate([metrics], [split.seed], split.describe()), pred)


def train_sdm(embeddings: np.ndarray, targets: np.ndarray, split: Split, cfg: TaskHeadConfig) -> TaskResult:
    """Distribution regression head; KL, L1 and Chebyshev averaged over test regions"""
    cfg.validate()
    q = np.asarray(targets, dtype=np.float64)
    if (q < 0).any() or np.abs(q.sum(axis=1) - 1.0).max() > 1e-6:
        raise TaskError("targets must be normalized histograms")
    if len(split.train) == 0 or len(split.test) == 0:
        raise TaskError("split needs training and test regions")

    x = standardize(np.asarray(embeddings, dtype=np.float64), split.train)
    head = TaskHead.init(keyed_rng(split.seed, 'task', 'sdm'), x.shape[1], cfg.hidden, q.shape[1],
                         mode='distribution')
    head, _ = fit_head(head, x, q, split, _distribution_loss, cfg)

    p = softmax(head_predict(head, x[split.test]), axis=1)
    kl, l1, chebyshev = mean_distribution_metrics(p, q[split.test])
    metrics = {'kl': kl, 'l1': l1, 'chebyshev': chebyshev}
    return TaskResult(head, EvalReport.aggregate([metrics], [split.seed], split.describe()), p)


def train_regression(embeddings: np.ndarray, targets: np.ndarray, split: Split,
                     cfg: TaskHeadConfig) -> TaskResult:
    """Scalar regression head: MSE on standardized targets, metrics in original units"""
    cfg.validate()
    y = np.asarray(targets, dtype=np.float64)
    y = y[:, None] if y.ndim == 1 else y
    mu, sd = y[split.train].mean(axis=0), y[split.train].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)

    x = standardize(np.asarray(embeddings, dtype=np.float64), split.train)
    head = TaskHead.init(keyed_rng(split.seed, 'task', 'regression'), x.shape[1], cfg.hidden, y.shape[1],
                         mode='regression')
    head, _ = fit_head(head, x, (y - mu) / sd, split, _mse_loss, cfg)

    pred = head_predict(head, x[split.test]) * sd + mu
    err = pred - y[split.test]
    ss_tot = np.sum((y[split.test] - y[split.test].mean(axis=0)) ** 2)
    metrics = {'mae': float(np.mean(np.abs(err))), 'rmse': float(np.sqrt(np.mean(err ** 2))),
               'r2': float(1.0 - np.sum(err ** 2) / ss_tot) if ss_tot > 0 else 0.0}
    return TaskResult(head, EvalReport.aggregate([metrics], [split.seed], split.describe()), pred)


def evaluate_luc(embeddings: np.ndarray, labels: np.ndarray, seeds: Sequence[int], cfg: TaskHeadConfig,
                 n_classes: int = None, threads: int = 1) -> EvalReport:
    """train_luc over a stratified split per seed"""
    labels = np.asarray(labels, dtype=np.int64)

    def run(seed):
        return train_luc(embeddings, labels, stratified_split(labels, seed), cfg, n_classes).report

    reports = _map(run, seeds, threads)
    return EvalReport.aggregate([r.per_seed[0] for r in reports], seeds, 'stratified 70/15/15')


def evaluate_sdm(embeddings: np.ndarray, targets: np.ndarray, seeds: Sequence[int], cfg: TaskHeadConfig,
                 threads: int = 1) -> EvalReport:
    """train_sdm over a random split per seed"""
    def run(seed):
        return train_sdm(embeddings, targets, random_split(len(targets), seed), cfg).report

    reports = _map(run, seeds, threads)
    return EvalReport.aggregate([r.per_seed[0] for r in reports], seeds, 'random 70/15/15')


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]
