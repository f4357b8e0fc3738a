import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from align.trainer import AlignmentConfig, pretrain
from tasks.downstream import DownstreamData, embed_downstream, score_downstream
from tasks.training import TaskHeadConfig


logger = logging.getLogger(__name__)

AXES = ('lambda', 'buffers', 'fraction')
LAMBDA_GRID = [round(0.1 * i, 1) for i in range(10)]
FRACTION_GRID = [round(0.1 * i, 1) for i in range(1, 11)]
SWEEP_COLUMNS = ['axis', 'setting', 'lambda', 'r_b', 'r_a', 'fraction', 'n_pairs',
                 'luc_f1', 'luc_f1_std', 'sdm_kl', 'sdm_kl_std', 'status']


def buffer_grid(base_radii: Sequence[float] = (25.0, 50.0),
                offsets: Sequence[float] = (25.0, 50.0, 75.0)) -> List[Tuple[float, float]]:
    """(r_b, r_a) pairs with r_a = r_b + offset"""
    return [(float(rb), float(rb + off)) for rb in base_radii for off in offsets]


@dataclass(frozen=True)
class SweepSetting:
    axis: str
    label: str
    overrides: Tuple[Tuple[str, float], ...]

    def apply(self, cfg: AlignmentConfig) -> AlignmentConfig:
        return replace(cfg, **dict(self.overrides)).validate()


def sweep_settings(axis: str, grid: Optional[Sequence] = None) -> List[SweepSetting]:
    """One setting per grid value; only the swept factor changes"""
    if axis == 'lambda':
        return [SweepSetting(axis, f"lambda={lam:g}", (('lam', float(lam)),))
                for lam in (LAMBDA_GRID if grid is None else grid)]
    if axis == 'buffers':
        settings = []
        for r_b, r_a in (buffer_grid() if grid is None else grid):
            if not r_a > r_b:
                raise ValueError(f"buffer pair ({r_b}, {r_a}) needs r_a > r_b")
            settings.append(SweepSetting(axis, f"r_b={r_b:g},r_a={r_a:g}",
                                         (('r_b', float(r_b)), ('r_a', float(r_a)))))
        return settings
    if axis == 'fraction':
        return [SweepSetting(axis, f"fraction={f:g}", (('train_fraction', float(f)),))
                for f in (FRACTION_GRID if grid is None else grid)]
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")


def run_setting(setting: SweepSetting, data: DownstreamData, base_cfg: AlignmentConfig,
                task_cfg: TaskHeadConfig, seeds: Sequence[int], threads: int = 1) -> Dict:
    cfg = setting.apply(base_cfg)
    row = {'axis': setting.axis, 'setting': setting.label, 'lambda': cfg.lam, 'r_b': cfg.r_b,
           'r_a': cfg.r_a, 'fraction': cfg.train_fraction}
    result = pretrain(data.field, data.pois, data.text, cfg, threads=threads)
    emb = embed_downstream(result.head, data, cfg.r_b, threads=threads)
    luc, sdm = score_downstream(emb, seeds, task_cfg, n_classes=data.n_classes)
    row.update({'n_pairs': result.n_pairs,
                'luc_f1': luc.mean('f1'), 'luc_f1_std': luc.std('f1'),
                'sdm_kl': sdm.mean('kl'), 'sdm_kl_std': sdm.std('kl'), 'status': 'ok'})
    logger.info("%s: luc_f1=%.4f sdm_kl=%.4f", setting.label, row['luc_f1'], row['sdm_kl'])
    return row


def sweep(axis: str, data: DownstreamData, base_cfg: AlignmentConfig, task_cfg: TaskHeadConfig,
          seeds: Sequence[int], grid: Optional[Sequence] = None, threads: int = 1,
          workers: int = 1) -> pd.DataFrame:
    """
    Pretrain and evaluate once per setting, varying one factor at a time.
    A failing setting is recorded with its error and the sweep moves on.
    Rows come out in grid order whatever the number of workers.
    """
    settings = sweep_settings(axis, grid)

    def run(setting):
        try:
            return run_setting(setting, data, base_cfg, task_cfg, seeds, threads=threads)
        except Exception as e:
            logger.error("setting %s failed: %s", setting.label, e)
            row = {'axis': axis, 'setting': setting.label, 'status': f"failed: {e}"}
            for key, value in setting.overrides:
                row[{'lam': 'lambda', 'train_fraction': 'fraction'}.get(key, key)] = value
            return row

    if workers > 1 and len(settings) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, settings))
    else:
        rows = [run(s) for s in settings]
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def write_sweep(frame: pd.DataFrame, path: str):
    frame.to_csv(path, index=False, float_format='%.10g', lineterminator='\n')
