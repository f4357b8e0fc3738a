from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from nn.functional import (check_finite, kaiming_uniform, normalize_rows,
                           normalize_rows_backward, relu, sigmoid)


HEAD_TENSORS = ['w_in', 'mlp_w1', 'mlp_b1', 'mlp_w2', 'mlp_b2', 'gate_w', 'gate_b', 'w_out']
HEAD_BIASES = {'mlp_b1', 'mlp_b2', 'gate_b'}


@dataclass(eq=False)
class AeProjectionHead:
    """
    Gated-residual projection head for AE vectors:
    x0 = a W_in, m = ReLU(x0 W1 + b1) W2 + b2, g = sigmoid(x0 Wg + bg),
    x1 = x0 + g * m, z = normalize(x1 W_out)
    """
    w_in: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray
    w_out: np.ndarray

    def __post_init__(self):
        in_dim, hidden = self.w_in.shape
        expected = {
            'mlp_w1': (hidden, hidden), 'mlp_b1': (hidden,),
            'mlp_w2': (hidden, hidden), 'mlp_b2': (hidden,),
            'gate_w': (hidden, hidden), 'gate_b': (hidden,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.w_out.ndim != 2 or self.w_out.shape[0] != hidden:
            raise ValueError(f"w_out has shape {self.w_out.shape}, expected ({hidden}, d)")

    @property
    def in_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_in.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w_out.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int = 64, hidden: int = 256,
             out_dim: int = 128) -> 'AeProjectionHead':
        """Kaiming-uniform weights, zero biases"""
        return cls(
            w_in=kaiming_uniform(rng, in_dim, (in_dim, hidden)),
            mlp_w1=kaiming_uniform(rng, hidden, (hidden, hidden)),
            mlp_b1=np.zeros(hidden),
            mlp_w2=kaiming_uniform(rng, hidden, (hidden, hidden)),
            mlp_b2=np.zeros(hidden),
            gate_w=kaiming_uniform(rng, hidden, (hidden, hidden)),
            gate_b=np.zeros(hidden),
            w_out=kaiming_uniform(rng, hidden, (hidden, out_dim)),
        )

    def parameters(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in HEAD_TENSORS}

    def copy(self) -> 'AeProjectionHead':
        return AeProjectionHead(**{k: v.copy() for k, v in self.parameters().items()})


@dataclass
class HeadCache:
    """Intermediates kept from the forward pass for backprop"""
    a: np.ndarray
    x0: np.ndarray
    pre: np.ndarray
    h: np.ndarray
    m: np.ndarray
    g: np.ndarray
    x1: np.ndarray
    v: np.ndarray
    norms: np.ndarray
    z: np.ndarray
    squeeze: bool = field(default=False)


def head_forward_cached(head: AeProjectionHead, a: np.ndarray) -> Tuple[np.ndarray, HeadCache]:
    squeeze = a.ndim == 1
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    check_finite('input', a)

    x0 = a @ head.w_in
    check_finite('w_in', x0)
    pre = x0 @ head.mlp_w1 + head.mlp_b1
    h = relu(pre)
    m = h @ head.mlp_w2 + head.mlp_b2
    check_finite('mlp', m)
    g = sigmoid(x0 @ head.gate_w + head.gate_b)
    check_finite('gate', g)
    x1 = x0 + g * m
    v = x1 @ head.w_out
    check_finite('w_out', v)
    z, norms = normalize_rows(v)

    cache = HeadCache(a, x0, pre, h, m, g, x1, v, norms, z, squeeze)
    return (z[0] if squeeze else z), cache


def head_forward(head: AeProjectionHead, a: np.ndarray) -> np.ndarray:
    """Project one AE vector (or a batch of rows) to the unit sphere"""
    z, _ = head_forward_cached(head, a)
    return z


def head_backward(head: AeProjectionHead, a: np.ndarray, upstream: np.ndarray,
                  cache: HeadCache = None) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Reverse-mode gradients of head_forward.
    Returns parameter gradients keyed by tensor name and the input gradient.
    """
    if cache is None:
        _, cache = head_forward_cached(head, a)
    gz = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    check_finite('upstream', gz)

    gv = normalize_rows_backward(cache.v, cache.z, cache.norms, gz)
    grads = {'w_out': cache.x1.T @ gv}
    gx1 = gv @ head.w_out.T

    # x1 = x0 + g * m
    gx0 = gx1.copy()
    gg = gx1 * cache.m
    gm = gx1 * cache.g

    gs = gg * cache.g * (1.0 - cache.g)
    grads['gate_w'] = cache.x0.T @ gs
    grads['gate_b'] = gs.sum(axis=0)
    gx0 += gs @ head.gate_w.T

    grads['mlp_w2'] = cache.h.T @ gm
    grads['mlp_b2'] = gm.sum(axis=0)
    gh = gm @ head.mlp_w2.T
    gpre = gh * (cache.pre > 0)
    grads['mlp_w1'] = cache.x0.T @ gpre
    grads['mlp_b1'] = gpre.sum(axis=0)
    gx0 += gpre @ head.mlp_w1.T

    grads['w_in'] = cache.a.T @ gx0
    ga = gx0 @ head.w_in.T

    for name, g in grads.items():
        check_finite(f"grad {name}", g)
    grads = {name: grads[name] for name in head.parameters()}
    return grads, (ga[0] if cache.squeeze else ga)
