from dataclasses import dataclass, field
from typing import Dict, Iterable, Tuple

import numpy as np

from nn.functional import check_finite


class ShapeMismatchError(ValueError):
    pass


@dataclass
class AdamWState:
    """
    AdamW hyperparameters plus per-tensor moment buffers.
    Weight decay is decoupled and skips tensors not listed in `decay`.
    """
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> 'AdamWState':
        return AdamWState(self.learning_rate, self.beta1, self.beta2, self.epsilon,
                          self.weight_decay, self.step,
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()})


def adamw_step(state: AdamWState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
               decay: Iterable[str] = ()) -> Tuple[Dict[str, np.ndarray], AdamWState]:
    """
    One AdamW update, applied in place to `params`.
    Decayable tensors are first scaled by (1 - lr * weight_decay), then moved
    by the bias-corrected Adam step.
    """
    for name, p in params.items():
        if name not in grads:
            raise ShapeMismatchError(f"no gradient for {name}")
        if grads[name].shape != p.shape:
            raise ShapeMismatchError(f"gradient for {name} has shape {grads[name].shape}, "
                                     f"parameter has {p.shape}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ShapeMismatchError(f"moment buffer for {name} has shape {state.m[name].shape}")
        check_finite(f"grad {name}", grads[name])

    decay = set(decay)
    state.step += 1
    lr = state.learning_rate
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step

    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g

        if state.weight_decay and name in decay:
            p *= 1.0 - lr * state.weight_decay
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        check_finite(name, p)
    return params, state
