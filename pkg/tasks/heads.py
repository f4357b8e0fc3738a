from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from nn.functional import check_finite, kaiming_uniform, relu
from nn.optimizer import ShapeMismatchError


MODES = ('classification', 'distribution', 'regression')


@dataclass(eq=False)
class TaskHead:
    """
    Downstream MLP: logits = W2 ReLU(W1 r + b1) + b2.
    With no hidden layer (w1 is None) it is the linear head W2 r + b2.
    """
    w2: np.ndarray
    b2: np.ndarray
    w1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    mode: str = 'classification'

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown task head mode {self.mode!r}")
        if self.w1 is not None and self.w1.shape[1] != self.w2.shape[0]:
            raise ShapeMismatchError(f"w1 {self.w1.shape} does not chain into w2 {self.w2.shape}")

    @property
    def linear(self) -> bool:
        return self.w1 is None

    @property
    def in_dim(self) -> int:
        return (self.w2 if self.linear else self.w1).shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int,
             mode: str = 'classification') -> 'TaskHead':
        """hidden = 0 gives the linear head"""
        if hidden == 0:
            return cls(kaiming_uniform(rng, in_dim, (in_dim, out_dim)) / np.sqrt(2.0),
                       np.zeros(out_dim), mode=mode)
        return cls(w2=kaiming_uniform(rng, hidden, (hidden, out_dim)) / np.sqrt(2.0),
                   b2=np.zeros(out_dim),
                   w1=kaiming_uniform(rng, in_dim, (in_dim, hidden)),
                   b1=np.zeros(hidden), mode=mode)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {'w2': self.w2, 'b2': self.b2}
        if not self.linear:
            params.update({'w1': self.w1, 'b1': self.b1})
        return params

    def copy(self) -> 'TaskHead':
        return TaskHead(self.w2.copy(), self.b2.copy(),
                        None if self.linear else self.w1.copy(),
                        None if self.linear else self.b1.copy(), self.mode)


def head_predict_cached(head: TaskHead, r: np.ndarray) -> Tuple[np.ndarray, tuple]:
    squeeze = r.ndim == 1
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    if r.shape[1] != head.in_dim:
        raise ShapeMismatchError(f"input has dim {r.shape[1]}, head expects {head.in_dim}")
    if head.linear:
        h, pre = r, None
    else:
        pre = r @ head.w1 + head.b1
        h = relu(pre)
    logits = h @ head.w2 + head.b2
    check_finite('task logits', logits)
    return (logits[0] if squeeze else logits), (r, pre, h)


def head_predict(head: TaskHead, r: np.ndarray) -> np.ndarray:
    """Logits for one embedding or a batch of rows"""
    logits, _ = head_predict_cached(head, r)
    return logits


def head_predict_backward(head: TaskHead, cache: tuple, glogits: np.ndarray) -> Dict[str, np.ndarray]:
    r, pre, h = cache
    glogits = np.atleast_2d(glogits)
    grads = {'w2': h.T @ glogits, 'b2': glogits.sum(axis=0)}
    if not head.linear:
        gpre = (glogits @ head.w2.T) * (pre > 0)
        grads['w1'] = r.T @ gpre
        grads['b1'] = gpre.sum(axis=0)
    return grads
