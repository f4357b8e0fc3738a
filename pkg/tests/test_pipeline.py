"""End-to-end checks on the full synthetic city (run with -m slow)"""
import time
from dataclasses import replace

import numpy as np
import pytest

from align.trainer import AlignmentConfig, pretrain
from synth.world import SynthConfig, generate
from tasks.downstream import DownstreamData, embed_downstream, score_downstream
from tasks.training import TaskHeadConfig

SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture(scope='module')
def city():
    world = generate(SynthConfig(social_gain=0.6))
    return DownstreamData(
        field=world.field, pois=world.pois, text=world.text,
        luc_xy=np.array([[s.x, s.y] for s in world.luc]),
        luc_labels=np.array([s.label for s in world.luc]),
        regions=world.regions, targets=np.stack([t.q for t in world.targets]),
        n_classes=world.config.K)


def aligned_scores(data, cfg, seeds=SEEDS):
    result = pretrain(data.field, data.pois, data.text, cfg)
    emb = embed_downstream(result.head, data, cfg.r_b)
    return result, score_downstream(emb, seeds, TaskHeadConfig(), n_classes=data.n_classes)


@pytest.mark.slow
def test_aligned_embeddings_beat_raw_ae(city):
    result, (luc, sdm) = aligned_scores(city, AlignmentConfig())
    raw_luc, raw_sdm = score_downstream(embed_downstream(None, city, 50.0), SEEDS, TaskHeadConfig(),
                                        n_classes=city.n_classes)

    assert result.log[-1].l_ap < result.log[0].l_ap
    assert sdm.mean('kl') <= 0.9 * raw_sdm.mean('kl')
    assert luc.mean('f1') >= raw_luc.mean('f1') - raw_luc.std('f1')


@pytest.mark.slow
def test_heavy_intra_modal_weight_hurts_sdm(city):
    kl = {}
    for lam in (0.2, 0.9):
        runs = [aligned_scores(city, AlignmentConfig(lam=lam, seed=seed), seeds=[seed])[1][1].mean('kl')
                for seed in range(3)]
        kl[lam] = np.mean(runs)
    assert kl[0.9] > kl[0.2]


@pytest.mark.slow
def test_short_pipeline_is_reproducible(city):
    cfg = AlignmentConfig(epochs=20)
    a = pretrain(city.field, city.pois, city.text, cfg, threads=1)
    b = pretrain(city.field, city.pois, city.text, replace(cfg), threads=4)
    for name, p in a.head.parameters().items():
        assert np.array_equal(p, b.head.parameters()[name])
    ea = embed_downstream(a.head, city, cfg.r_b, threads=1)
    eb = embed_downstream(b.head, city, cfg.r_b, threads=4)
    assert np.array_equal(ea.sdm, eb.sdm)
    assert np.array_equal(ea.luc, eb.luc)


@pytest.mark.slow
def test_city_scale_epoch_fits_budget():
    world = generate(SynthConfig(n_pois=340_000, n_regions=5, n_luc=10, d_t=32))
    start = time.perf_counter()
    result = pretrain(world.field, world.pois, world.text, AlignmentConfig(epochs=1), threads=8)
    elapsed = time.perf_counter() - start
    assert result.n_pairs == 340_000
    assert elapsed < 60.0, f"{elapsed:.1f} s"
