from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from nn.seeding import keyed_rng


DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)


@dataclass(frozen=True, eq=False)
class Split:
    """Index sets of one train/val/test partition"""
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    kind: str

    def describe(self) -> str:
        return (f"{self.kind} {len(self.train)}/{len(self.val)}/{len(self.test)} "
                f"seed={self.seed}")


def _cut(n: int, fractions: Sequence[float]) -> Tuple[int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n_train + n_val > n:
        n_val = n - n_train
    return n_train, n_val


def random_split(n: int, seed: int, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> Split:
    order = keyed_rng(seed, 'split', 'random').permutation(n)
    n_train, n_val = _cut(n, fractions)
    return Split(np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_val]),
                 np.sort(order[n_train + n_val:]), seed, 'random')


def stratified_split(labels: np.ndarray, seed: int,
                     fractions: Sequence[float] = DEFAULT_FRACTIONS) -> Split:
    """Per-class random partition so every split keeps the class balance"""
    labels = np.asarray(labels)
    rng = keyed_rng(seed, 'split', 'stratified')
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_train, n_val = _cut(idx.size, fractions)
        train.append(idx[:n_train])
        val.append(idx[n_train:n_train + n_val])
        test.append(idx[n_train + n_val:])
    return Split(np.sort(np.concatenate(train)), np.sort(np.concatenate(val)),
                 np.sort(np.concatenate(test)), seed, 'stratified')
