import json
import logging
import math
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from align.trainer import load_state, pretrain, save_state, write_training_log
from cli.config import ConfigError, PipelineConfig
from fieldgrid.field import read_field
from fieldgrid.pooling import BufferQuery, buffer_members
from infer.regions import (RegionSpec, load_region_mask, load_regions_csv, point_embed, region_embed,
                           read_embeddings_csv, region_embeddings_to_csv, write_embeddings_csv)
from nn.checkpoint import load_models, save_models
from poi.records import load_pois
from poi.text_embeddings import load_text_embeddings
from synth.world import generate, write_bundle
from tasks.downstream import LUC_RADIUS, DownstreamData
from tasks.samples import load_luc_samples, load_sdm_targets
from tasks.sweep import sweep, write_sweep
from tasks.training import EvalReport, TaskError, evaluate_luc, evaluate_sdm


logger = logging.getLogger(__name__)

TASKS = ('luc', 'sdm')
STATE_SUFFIX = '.state.npz'
CONFIG_SUFFIX = '.json'


def _out(cfg: PipelineConfig, *parts: str) -> str:
    path = os.path.join(cfg.output_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def embeddings_path(cfg: PipelineConfig, task: str, kind: str) -> str:
    return os.path.join(cfg.output_dir, 'embeddings', f'{task}_{kind}.csv')


def load_regions(cfg: PipelineConfig) -> List[RegionSpec]:
    if cfg.paths.region_mask is not None:
        cfg.require('region_mask')
        return load_region_mask(cfg.paths.region_mask)
    cfg.require('regions')
    return load_regions_csv(cfg.path('regions'))


def align_targets(region_ids: Sequence[str], targets_path: str) -> np.ndarray:
    """Target rows in region order; every region needs a target"""
    targets = {t.region_id: t.q for t in load_sdm_targets(targets_path)}
    missing = [rid for rid in region_ids if rid not in targets]
    if missing:
        raise TaskError(f"{len(missing)} region(s) have no target in {targets_path}, first {missing[0]!r}")
    return np.stack([targets[rid] for rid in region_ids])


def load_downstream_data(cfg: PipelineConfig) -> DownstreamData:
    cfg.require('field', 'pois', 'text', 'luc', 'sdm_targets')
    field = read_field(cfg.path('field'))
    pois = load_pois(cfg.path('pois'))
    text = load_text_embeddings(cfg.path('text'), pois)
    samples = load_luc_samples(cfg.path('luc'))
    regions = load_regions(cfg)
    return DownstreamData(
        field=field, pois=pois, text=text,
        luc_xy=np.array([[s.x, s.y] for s in samples], dtype=np.float64).reshape(-1, 2),
        luc_labels=np.array([s.label for s in samples], dtype=np.int64),
        regions=regions,
        targets=align_targets([r.region_id for r in regions], cfg.path('sdm_targets')),
    )


def cmd_synth(cfg: PipelineConfig) -> int:
    world = generate(cfg.synth)
    manifest = write_bundle(world, cfg.synth_dir)
    print(manifest)
    return 0


def cmd_pretrain(cfg: PipelineConfig, resume_from: Optional[str] = None, plots: bool = True) -> int:
    cfg.require('field', 'pois', 'text')
    field = read_field(cfg.path('field'))
    pois = load_pois(cfg.path('pois'))
    text = load_text_embeddings(cfg.path('text'), pois)

    resume = None
    if resume_from is not None:
        state_path = resume_from + STATE_SUFFIX
        if not os.path.exists(state_path):
            raise ConfigError(f"no resume state next to {resume_from} (expected {state_path})")
        resume = load_state(state_path)
        logger.info("resuming from %s at epoch %d", resume_from, resume.next_epoch)

    result = pretrain(field, pois, text, cfg.alignment, threads=cfg.threads, resume=resume)

    checkpoint = cfg.path('checkpoint')
    os.makedirs(os.path.dirname(checkpoint) or '.', exist_ok=True)
    save_models(checkpoint, result.head, result.projector)
    save_state(result.state, checkpoint + STATE_SUFFIX)
    with open(checkpoint + CONFIG_SUFFIX, 'w') as f:
        json.dump({'alignment': cfg.alignment.to_dict(), 'best_epoch': result.best_epoch,
                   'best_l_ap': result.best_l_ap if math.isfinite(result.best_l_ap) else None,
                   'n_pairs': result.n_pairs, 'n_dropped': result.n_dropped}, f, indent=2, sort_keys=True)
        f.write('\n')

    log_dir = os.path.dirname(checkpoint) or '.'
    write_training_log(result.log, result.best_epoch, os.path.join(log_dir, 'training_log.csv'))
    if plots and result.log:
        from visualization.plots import plot_training_log
        plot_training_log(result.log, result.best_epoch, os.path.join(log_dir, 'training_curve.png'))

    if result.best_epoch is None:
        print(f"no epochs run; checkpoint {checkpoint}")
    else:
        print(f"best epoch {result.best_epoch} L_AP {result.best_l_ap:.6f}")
    return 0


def checkpoint_r_b(checkpoint: str, default: float) -> float:
    """Base radius the checkpoint was trained with, from its sidecar if present"""
    sidecar = checkpoint + CONFIG_SUFFIX
    if not os.path.exists(sidecar):
        logger.warning("no %s, using r_b = %g from the config", sidecar, default)
        return default
    with open(sidecar) as f:
        return float(json.load(f)['alignment']['r_b'])


def _point_counts(field, xy: np.ndarray, radius: float) -> np.ndarray:
    return np.array([buffer_members(field, BufferQuery(float(x), float(y), radius))[0].size for x, y in xy],
                    dtype=np.int64)


def cmd_embed(cfg: PipelineConfig, raw_pixel: bool = False) -> int:
    """LUC point and SDM region embeddings, aligned and raw-AE, under <out>/embeddings"""
    cfg.require('checkpoint', 'field', 'luc')
    head, _ = load_models(cfg.path('checkpoint'))
    r_b = checkpoint_r_b(cfg.path('checkpoint'), cfg.alignment.r_b)
    field = read_field(cfg.path('field'))
    samples = load_luc_samples(cfg.path('luc'))
    regions = load_regions(cfg)

    xy = np.array([[s.x, s.y] for s in samples], dtype=np.float64).reshape(-1, 2)
    counts = _point_counts(field, xy, LUC_RADIUS)
    ids = [str(i) for i in range(1, len(samples) + 1)]
    for kind, model in (('aligned', head), ('raw', None)):
        vectors, ok = point_embed(model, field, xy[:, 0], xy[:, 1], LUC_RADIUS, threads=cfg.threads)
        if not ok.all():
            logger.warning("%d LUC samples have empty buffers and are left out", int((~ok).sum()))
        keep = np.flatnonzero(ok)
        write_embeddings_csv([ids[i] for i in keep], vectors[keep], counts[keep],
                             _out(cfg, 'embeddings', f'luc_{kind}.csv'))

        embedded = region_embed(model, field, regions, r_b, threads=cfg.threads,
                                raw_pixel=raw_pixel and model is not None)
        region_embeddings_to_csv(embedded, _out(cfg, 'embeddings', f'sdm_{kind}.csv'))

    print(os.path.join(cfg.output_dir, 'embeddings'))
    return 0


def _luc_block(path: str, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ids, vectors, _ = read_embeddings_csv(path)
    try:
        rows = np.array([int(i) - 1 for i in ids], dtype=np.int64)
    except ValueError:
        raise TaskError(f"{path}: sample ids must be row numbers of the label file")
    if rows.size and (rows.min() < 0 or rows.max() >= len(labels)):
        raise TaskError(f"{path}: sample ids do not match the {len(labels)} rows of the label file")
    return vectors, labels[rows]


def default_blocks(cfg: PipelineConfig, task: str) -> List[Tuple[str, str]]:
    return [(label, embeddings_path(cfg, task, kind))
            for label, kind in (('raw_ae', 'raw'), ('aligned', 'aligned'))]


def cmd_eval(cfg: PipelineConfig, task: str, blocks: Optional[List[Tuple[str, str]]] = None,
             scaled: bool = False) -> int:
    """One report block per embedding file, all scored over the configured seeds"""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    blocks = blocks or default_blocks(cfg, task)
    for _, path in blocks:
        if not os.path.exists(path):
            raise ConfigError(f"embeddings not found: {path}")

    frames = []
    if task == 'luc':
        cfg.require('luc')
        labels = np.array([s.label for s in load_luc_samples(cfg.path('luc'))], dtype=np.int64)
        n_classes = int(labels.max()) + 1
        for label, path in blocks:
            x, y = _luc_block(path, labels)
            report = evaluate_luc(x, y, cfg.seeds, cfg.task_head, n_classes=n_classes, threads=cfg.threads)
            frames.append(_log_block(report, label, scaled))
    else:
        cfg.require('sdm_targets')
        for label, path in blocks:
            ids, x, _ = read_embeddings_csv(path)
            q = align_targets(ids, cfg.path('sdm_targets'))
            report = evaluate_sdm(x, q, cfg.seeds, cfg.task_head, threads=cfg.threads)
            frames.append(_log_block(report, label, scaled))

    out = _out(cfg, 'eval', f'{task}_report{"_scaled" if scaled else ""}.csv')
    pd.concat(frames, ignore_index=True).to_csv(out, index=False, float_format='%.10g', lineterminator='\n')
    print(out)
    return 0


def _log_block(report: EvalReport, label: str, scaled: bool) -> pd.DataFrame:
    logger.info("%s: %s", label, ', '.join(f"{n}={m:.4f}±{s:.4f}" for n, (m, s) in report.metrics.items()))
    return report.to_frame(label, scaled=scaled)


def cmd_sweep(cfg: PipelineConfig, axis: str, plots: bool = True) -> int:
    data = load_downstream_data(cfg)
    frame = sweep(axis, data, cfg.alignment, cfg.task_head, cfg.seeds, grid=cfg.sweep.grid(axis),
                  threads=cfg.threads, workers=cfg.sweep.workers)
    out = _out(cfg, 'sweep', f'sweep_{axis}.csv')
    write_sweep(frame, out)
    if plots:
        from visualization.plots import plot_sweep
        plot_sweep(frame, axis, _out(cfg, 'sweep', f'sweep_{axis}.png'))
    print(out)
    failed = int((frame['status'] != 'ok').sum())
    if failed:
        logger.error("%d of %d settings failed", failed, len(frame))
        return 1
    return 0
