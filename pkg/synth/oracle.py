import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.stats import chisquare

from fieldgrid.pooling import BufferQuery, pool_buffer, pool_points
from tasks.metrics import mean_distribution_metrics, metric_macro_prf
from tasks.training import EvalReport, TaskHeadConfig, evaluate_luc, evaluate_sdm
from synth.world import SynthWorld


logger = logging.getLogger(__name__)

PROBE_CONFIG = TaskHeadConfig(hidden=0)


@dataclass
class CategoryCheck:
    """Observed level-1 POI counts against the latent proportions at their cells"""
    observed: np.ndarray
    expected: np.ndarray
    statistic: float
    p_value: float

    @property
    def all_present(self) -> bool:
        return bool((self.observed > 0).all())


@dataclass(eq=False)
class OracleReport:
    self_luc_f1: float
    self_sdm_kl: float
    latent_luc: EvalReport
    latent_sdm: EvalReport
    raw_luc: EvalReport
    raw_sdm: EvalReport
    categories: Optional[CategoryCheck] = None

    def summary(self) -> Dict[str, float]:
        return {
            'self_luc_f1': self.self_luc_f1,
            'self_sdm_kl': self.self_sdm_kl,
            'latent_luc_f1': self.latent_luc.mean('f1'),
            'latent_sdm_kl': self.latent_sdm.mean('kl'),
            'raw_luc_f1': self.raw_luc.mean('f1'),
            'raw_sdm_kl': self.raw_sdm.mean('kl'),
        }


def category_check(world: SynthWorld) -> CategoryCheck:
    names = world.category_names
    index = {n: i for i, n in enumerate(names)}
    observed = np.bincount([index[p.category_l1] for p in world.pois], minlength=len(names)).astype(np.float64)
    rows, cols = world.poi_cells[:, 0], world.poi_cells[:, 1]
    expected = world.latent.data[rows, cols].astype(np.float64).sum(axis=0)
    expected *= observed.sum() / expected.sum()
    result = chisquare(observed, expected)
    logger.info("category chi-square %.3f (p = %.4f)", result.statistic, result.pvalue)
    return CategoryCheck(observed, expected, float(result.statistic), float(result.pvalue))


def _region_means(world: SynthWorld, source) -> np.ndarray:
    return np.stack([pool_buffer(source, BufferQuery(r.centroid_x, r.centroid_y, r.radius)).values
                     for r in world.regions])


def oracle_best_possible(world: SynthWorld, seeds: Sequence[int] = (0, 1, 2, 3, 4),
                         cfg: TaskHeadConfig = PROBE_CONFIG, luc_radius: float = 50.0,
                         threads: int = 1) -> OracleReport:
    """
    Reference lines for reports: the generating labels and distributions
    scored against themselves, and linear heads fit on the ground-truth
    rasters versus on raw AE, on the same samples and splits.
    """
    labels = np.array([s.label for s in world.luc], dtype=np.int64)
    q = np.stack([t.q for t in world.targets])
    k = world.config.K

    self_f1 = metric_macro_prf(labels, labels, k)[2]
    self_kl = mean_distribution_metrics(q, q)[0]

    xs = np.array([s.x for s in world.luc])
    ys = np.array([s.y for s in world.luc])
    latent_points, _ = pool_points(world.latent, xs, ys, luc_radius, threads=threads)
    raw_points, _ = pool_points(world.field, xs, ys, luc_radius, threads=threads)

    latent_regions = np.concatenate([_region_means(world, world.latent),
                                     _region_means(world, world.social)], axis=1)
    raw_regions = _region_means(world, world.field)

    report = OracleReport(
        self_luc_f1=self_f1,
        self_sdm_kl=self_kl,
        latent_luc=evaluate_luc(latent_points, labels, seeds, cfg, n_classes=k, threads=threads),
        latent_sdm=evaluate_sdm(latent_regions, q, seeds, cfg, threads=threads),
        raw_luc=evaluate_luc(raw_points, labels, seeds, cfg, n_classes=k, threads=threads),
        raw_sdm=evaluate_sdm(raw_regions, q, seeds, cfg, threads=threads),
        categories=category_check(world),
    )
    logger.info("oracle: %s", ', '.join(f"{n}={v:.4f}" for n, v in report.summary().items()))
    return report
