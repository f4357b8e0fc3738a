from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from nn.functional import check_finite, kaiming_uniform, normalize_rows, normalize_rows_backward


@dataclass(eq=False)
class PoiProjector:
    """Linear map from text space to the shared space, no bias. w is (d, d_t)"""
    w: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def text_dim(self) -> int:
        return self.w.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, text_dim: int, out_dim: int = 128) -> 'PoiProjector':
        return cls(kaiming_uniform(rng, text_dim, (out_dim, text_dim)))

    def parameters(self) -> Dict[str, np.ndarray]:
        return {'poi_w': self.w}

    def copy(self) -> 'PoiProjector':
        return PoiProjector(self.w.copy())


def poi_project_cached(proj: PoiProjector, t: np.ndarray):
    squeeze = t.ndim == 1
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    check_finite('text', t)
    if t.shape[1] != proj.text_dim:
        raise ValueError(f"text vectors have dim {t.shape[1]}, projector expects {proj.text_dim}")
    v = t @ proj.w.T
    z, norms = normalize_rows(v)
    return (z[0] if squeeze else z), (t, v, norms, z, squeeze)


def poi_project(proj: PoiProjector, t: np.ndarray) -> np.ndarray:
    """normalize(W t) for one text vector or a batch of rows"""
    z, _ = poi_project_cached(proj, t)
    return z


def poi_project_backward(proj: PoiProjector, t: np.ndarray, upstream: np.ndarray,
                         cache=None) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    if cache is None:
        _, cache = poi_project_cached(proj, t)
    t2, v, norms, z, squeeze = cache
    gz = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    gv = normalize_rows_backward(v, z, norms, gz)
    gt = gv @ proj.w
    return {'poi_w': gv.T @ t2}, (gt[0] if squeeze else gt)
