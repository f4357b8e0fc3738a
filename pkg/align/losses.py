import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax


class EmptyBatchError(ValueError):
    pass


@dataclass(eq=False)
class AlignmentBatch:
    """Triplets of base-view, augmented-view and POI embeddings, one per row"""
    z_base: np.ndarray
    z_aug: Optional[np.ndarray]
    z_poi: np.ndarray

    def __post_init__(self):
        mats = {'z_base': self.z_base, 'z_poi': self.z_poi}
        if self.z_aug is not None:
            mats['z_aug'] = self.z_aug
        shapes = {m.shape for m in mats.values()}
        if len(shapes) != 1:
            raise ValueError(f"batch matrices disagree on shape: "
                             f"{ {k: m.shape for k, m in mats.items()} }")
        for name, m in mats.items():
            norms = np.linalg.norm(m, axis=1)
            if m.size and np.abs(norms - 1.0).max() > 1e-5:
                raise ValueError(f"{name} rows are not unit-norm")

    @property
    def size(self) -> int:
        return self.z_base.shape[0]


@dataclass
class LossResult:
    value: float
    grads: Dict[str, np.ndarray]


def info_nce(x: np.ndarray, y: np.ndarray, tau: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Symmetric InfoNCE between matched rows of x and y:
    1/(2N) sum_i [ -log softmax_row(S)_ii - log softmax_col(S)_ii ], S = x y^T / tau.
    Returns the loss and its gradients w.r.t. x and y.
    """
    n = x.shape[0]
    if n == 0:
        raise EmptyBatchError("contrastive loss needs at least one pair")
    s = (x @ y.T) / tau
    diag = np.diagonal(s)
    row_terms = logsumexp(s, axis=1) - diag
    col_terms = logsumexp(s, axis=0) - diag
    value = (math.fsum(row_terms) + math.fsum(col_terms)) / (2 * n)

    eye = np.eye(n)
    gs = (softmax(s, axis=1) - eye + softmax(s, axis=0) - eye) / (2 * n)
    gx = gs @ y / tau
    gy = gs.T @ x / tau
    return value, gx, gy


def loss_intra(batch: AlignmentBatch, tau_ae: float) -> LossResult:
    """Scale-consistency loss between base and augmented views"""
    if batch.z_aug is None:
        raise ValueError("intra-modal loss needs augmented-view embeddings")
    value, g_base, g_aug = info_nce(batch.z_base, batch.z_aug, tau_ae)
    return LossResult(value, {'z_base': g_base, 'z_aug': g_aug})


def loss_cross(batch: AlignmentBatch, tau_poi: float) -> LossResult:
    """Cross-modal loss between base-view AE and POI embeddings"""
    value, g_base, g_poi = info_nce(batch.z_base, batch.z_poi, tau_poi)
    return LossResult(value, {'z_base': g_base, 'z_poi': g_poi})


@dataclass
class TotalLoss:
    value: float
    l_ae: float
    l_ap: float
    grads: Dict[str, np.ndarray]


def loss_total(batch: AlignmentBatch, cfg) -> TotalLoss:
    """
    lambda * L_AE + (1 - lambda) * L_AP.
    With cfg.use_augmented off the objective is L_AP alone and l_ae is 0.
    """
    cross = loss_cross(batch, cfg.tau_poi)
    if not getattr(cfg, 'use_augmented', True):
        return TotalLoss(cross.value, 0.0, cross.value, dict(cross.grads))

    lam = cfg.lam
    intra = loss_intra(batch, cfg.tau_ae)
    grads = {
        'z_base': lam * intra.grads['z_base'] + (1.0 - lam) * cross.grads['z_base'],
        'z_aug': lam * intra.grads['z_aug'],
        'z_poi': (1.0 - lam) * cross.grads['z_poi'],
    }
    value = lam * intra.value + (1.0 - lam) * cross.value
    return TotalLoss(value, intra.value, cross.value, grads)
