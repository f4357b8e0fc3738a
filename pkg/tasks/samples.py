import logging
from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd


logger = logging.getLogger(__name__)


class SampleFormatError(ValueError):
    pass


def _read_csv(path: str, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise SampleFormatError(f"{path}: not a readable CSV ({e})") from e


@dataclass(frozen=True)
class LucSample:
    x: float
    y: float
    label: int


@dataclass(frozen=True, eq=False)
class DistributionTarget:
    """Normalized histogram over B bins for one region"""
    region_id: str
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if (q < 0).any() or abs(q.sum() - 1.0) > 1e-6:
            raise SampleFormatError(f"region {self.region_id}: target is not a distribution")
        object.__setattr__(self, 'q', q)


def load_luc_samples(path: str, n_classes: int = None) -> List[LucSample]:
    """x,y,label rows; labels must be non-negative (and below n_classes if given)"""
    frame = _read_csv(path)
    missing = [c for c in ('x', 'y', 'label') if c not in frame.columns]
    if missing:
        raise SampleFormatError(f"{path}: missing column(s) {', '.join(missing)}")
    samples = []
    for i, row in enumerate(frame.itertuples(index=False), start=1):
        label = int(row.label)
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise SampleFormatError(f"{path}: row {i} has label {label} out of range")
        samples.append(LucSample(float(row.x), float(row.y), label))
    return samples


def save_luc_samples(samples: List[LucSample], path: str):
    frame = pd.DataFrame({'x': [s.x for s in samples], 'y': [s.y for s in samples],
                          'label': [s.label for s in samples]})
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


def load_sdm_targets(path: str) -> List[DistributionTarget]:
    """region_id,q1..qB rows"""
    frame = _read_csv(path, dtype={'region_id': str})
    if 'region_id' not in frame.columns:
        raise SampleFormatError(f"{path}: missing column region_id")
    bins = [c for c in frame.columns if c.startswith('q')]
    if not bins:
        raise SampleFormatError(f"{path}: no q1..qB columns")
    q = frame[bins].to_numpy(np.float64)
    return [DistributionTarget(rid, qi) for rid, qi in zip(frame['region_id'], q)]


def save_sdm_targets(targets: List[DistributionTarget], path: str):
    q = np.stack([t.q for t in targets])
    frame = pd.DataFrame(q, columns=[f'q{i + 1}' for i in range(q.shape[1])])
    frame.insert(0, 'region_id', [t.region_id for t in targets])
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
