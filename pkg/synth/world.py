"""
Synthetic city with known latent structure.

Two smooth archetype rasters drive everything:
- latent (K channels): land function. Shapes the AE field linearly, picks
  the level-1 POI category and the land-use label.
- social (3 channels): activity tier. Picks the level-2 POI category and
  shifts the socioeconomic targets. By default it never reaches the AE
  field (AE = mixing . latent + noise). With social_gain > 0 the AE also
  carries a tier signature that flips sign on a block checkerboard, so it
  survives a 50 m buffer but cancels in a plain 300 m average of raw AE.
"""
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import softmax

from fieldgrid.field import EmbeddingField, write_field
from fieldgrid.pooling import BufferQuery, pool_buffer
from infer.regions import RegionSpec, save_regions_csv
from nn.seeding import keyed_rng
from poi.records import PoiRecord, render_description, save_pois
from poi.text_embeddings import TextEmbedding, fallback_embed, write_text_embeddings
from tasks.samples import DistributionTarget, LucSample, save_luc_samples, save_sdm_targets


logger = logging.getLogger(__name__)

L1_NAMES = ['residential', 'retail', 'office', 'industrial', 'leisure',
            'education', 'health', 'transport', 'hospitality', 'civic']
TIERS = ['budget', 'standard', 'premium']
NAME_WORDS = ['Oak', 'Harbour', 'Station', 'Market', 'Bridge', 'Park', 'Mill', 'Crown',
              'River', 'Hill', 'Kings', 'Abbey', 'Elm', 'Canal', 'Victoria', 'Garden']
NAME_SUFFIXES = ['House', 'Place', 'Works', 'Corner', 'Yard', 'Court', 'Hall', 'Centre']

BUNDLE_FILES = {
    'field': 'field.aef',
    'latent': 'latent.aef',
    'pois': 'pois.csv',
    'text': 'text.tev',
    'luc': 'luc.csv',
    'regions': 'regions.csv',
    'sdm_targets': 'sdm_targets.csv',
}


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    grid_size: int = 128
    n_pois: int = 2000
    n_regions: int = 100
    K: int = 6
    noise_sigma: float = 0.05
    seed: int = 0
    d_t: int = 384
    channels: int = 64
    cell_size: float = 10.0
    n_luc: int = 600
    n_bins: int = 9
    region_radius: float = 300.0
    sharpness: float = 5.0
    social_gain: float = 0.0
    social_block: int = 8
    social_weight: float = 0.5
    text_noise: float = 0.1
    hermetic: bool = False

    def validate(self) -> 'SynthConfig':
        checks = [
            ('grid_size', self.grid_size >= 32, '>= 32'),
            ('K', self.K >= 2, '>= 2'),
            ('noise_sigma', self.noise_sigma >= 0, '>= 0'),
            ('n_pois', self.n_pois >= 1, '>= 1'),
            ('n_regions', self.n_regions >= 1, '>= 1'),
            ('n_luc', self.n_luc >= 1, '>= 1'),
            ('n_bins', self.n_bins >= 2, '>= 2'),
            ('d_t', self.d_t >= 8, '>= 8'),
            ('channels', self.channels >= self.K + len(TIERS), f'>= K + {len(TIERS)}'),
            ('cell_size', self.cell_size > 0, '> 0'),
            ('region_radius', self.region_radius > 0, '> 0'),
            ('social_block', self.social_block >= 1, '>= 1'),
            ('text_noise', self.text_noise >= 0, '>= 0'),
            ('social_gain', self.social_gain >= 0, '>= 0'),
        ]
        for name, ok, rule in checks:
            if not ok:
                raise SynthConfigError(f"{name} must be {rule}, got {getattr(self, name)}")
        return self


@dataclass(eq=False)
class SynthWorld:
    config: SynthConfig
    field: EmbeddingField
    latent: EmbeddingField
    social: EmbeddingField
    mixing: np.ndarray
    social_mixing: np.ndarray
    pois: List[PoiRecord]
    text: List[TextEmbedding]
    luc: List[LucSample]
    regions: List[RegionSpec]
    targets: List[DistributionTarget]
    sdm_matrix: np.ndarray
    poi_cells: Optional[np.ndarray] = None

    @property
    def category_names(self) -> List[str]:
        return level1_names(self.config.K)


def level1_names(k: int) -> List[str]:
    return [L1_NAMES[i] if i < len(L1_NAMES) else f"function {i}" for i in range(k)]


def _archetypes(cfg: SynthConfig, tag: str, channels: int) -> np.ndarray:
    """Softmax over blurred, standardized noise; shape (grid, grid, channels)"""
    g = cfg.grid_size
    noise = keyed_rng(cfg.seed, tag).standard_normal((channels, g, g))
    # sigma g/16 truncated at 2 sigma gives a blur radius of g/8
    smooth = np.stack([gaussian_filter(n, sigma=g / 16.0, mode='wrap', truncate=2.0) for n in noise])
    smooth = (smooth - smooth.mean(axis=(1, 2), keepdims=True)) / smooth.std(axis=(1, 2), keepdims=True)
    return softmax(cfg.sharpness * smooth, axis=0).transpose(1, 2, 0)


def _checkerboard(cfg: SynthConfig) -> np.ndarray:
    idx = np.arange(cfg.grid_size) // cfg.social_block
    return np.where((idx[:, None] + idx[None, :]) % 2 == 0, 1.0, -1.0)


def generate(cfg: SynthConfig) -> SynthWorld:
    """Deterministic synthetic world for cfg (all draws keyed by seed and purpose)"""
    cfg.validate()
    g, cs = cfg.grid_size, cfg.cell_size
    origin_x, origin_y = cs / 2.0, g * cs - cs / 2.0

    latent = _archetypes(cfg, 'latent', cfg.K)
    social = _archetypes(cfg, 'social', len(TIERS))

    basis, _ = np.linalg.qr(keyed_rng(cfg.seed, 'mixing').standard_normal((cfg.channels, cfg.K + len(TIERS))))
    mixing, social_mixing = basis[:, :cfg.K], basis[:, cfg.K:]
    ae = latent @ mixing.T
    if cfg.social_gain:
        ae += cfg.social_gain * _checkerboard(cfg)[:, :, None] * (social @ social_mixing.T)
    ae += cfg.noise_sigma * keyed_rng(cfg.seed, 'ae-noise').standard_normal(ae.shape)

    geo = dict(origin_x=origin_x, origin_y=origin_y, cell_size=cs)
    field_ = EmbeddingField(ae.astype(np.float32), **geo)
    latent_field = EmbeddingField(latent.astype(np.float32), **geo)
    social_field = EmbeddingField(social.astype(np.float32), **geo)

    pois, cells = _sample_pois(cfg, latent, social, origin_x, origin_y)
    text = _text_vectors(cfg, pois)
    luc = _sample_luc(cfg, latent, origin_x, origin_y)
    regions, targets, sdm_matrix = _sdm_regions(cfg, latent_field, social_field, origin_x, origin_y)

    logger.info("generated %dx%d world: %d POIs, %d LUC samples, %d regions",
                g, g, len(pois), len(luc), len(regions))
    return SynthWorld(cfg, field_, latent_field, social_field, mixing, social_mixing,
                      pois, text, luc, regions, targets, sdm_matrix, cells)


def _draw_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of a (n, k) probability matrix"""
    u = rng.random(probs.shape[0])[:, None]
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u > cdf).sum(axis=1), probs.shape[1] - 1)


def _sample_pois(cfg: SynthConfig, latent: np.ndarray, social: np.ndarray, origin_x: float,
                 origin_y: float):
    g, cs = cfg.grid_size, cfg.cell_size
    rng = keyed_rng(cfg.seed, 'pois')
    rows = rng.integers(0, g, cfg.n_pois)
    cols = rng.integers(0, g, cfg.n_pois)
    jitter = rng.uniform(-cs / 2.0, cs / 2.0, size=(cfg.n_pois, 2))
    l1 = _draw_categorical(keyed_rng(cfg.seed, 'poi-l1'), latent[rows, cols])
    l2 = _draw_categorical(keyed_rng(cfg.seed, 'poi-l2'), social[rows, cols])
    words = keyed_rng(cfg.seed, 'poi-names').integers(0, [len(NAME_WORDS), len(NAME_SUFFIXES)],
                                                       size=(cfg.n_pois, 2))
    names = level1_names(cfg.K)

    pois = []
    for i in range(cfg.n_pois):
        l1_name = names[l1[i]]
        pois.append(PoiRecord(
            id=i + 1,
            x=float(origin_x + cols[i] * cs + jitter[i, 0]),
            y=float(origin_y - rows[i] * cs + jitter[i, 1]),
            name=f"{NAME_WORDS[words[i, 0]]} {NAME_SUFFIXES[words[i, 1]]}",
            category_l1=l1_name,
            category_l2=f"{TIERS[l2[i]]} {l1_name}",
        ))
    return pois, np.stack([rows, cols], axis=1)


def _text_vectors(cfg: SynthConfig, pois: List[PoiRecord]) -> List[TextEmbedding]:
    """Category prototype plus small noise, or the hermetic token embedder"""
    if cfg.hermetic:
        return [TextEmbedding(p.id, fallback_embed(render_description(p), cfg.d_t)) for p in pois]

    names = level1_names(cfg.K)
    l1_index = {n: i for i, n in enumerate(names)}
    proto_rng = keyed_rng(cfg.seed, 'text-prototypes')
    l1_proto = proto_rng.standard_normal((cfg.K, cfg.d_t))
    tier_proto = proto_rng.standard_normal((len(TIERS), cfg.d_t))
    noise = keyed_rng(cfg.seed, 'text-noise').standard_normal((len(pois), cfg.d_t))
    # noise vector norm is about text_noise
    noise *= cfg.text_noise / np.sqrt(cfg.d_t)

    vectors = []
    for i, p in enumerate(pois):
        tier = TIERS.index(p.category_l2.split(' ', 1)[0])
        proto = l1_proto[l1_index[p.category_l1]] + tier_proto[tier]
        vectors.append(TextEmbedding(p.id, proto / np.linalg.norm(proto) + noise[i]))
    return vectors


def _sample_luc(cfg: SynthConfig, latent: np.ndarray, origin_x: float, origin_y: float) -> List[LucSample]:
    rng = keyed_rng(cfg.seed, 'luc')
    rows = rng.integers(0, cfg.grid_size, cfg.n_luc)
    cols = rng.integers(0, cfg.grid_size, cfg.n_luc)
    labels = np.argmax(latent[rows, cols], axis=1)
    return [LucSample(float(origin_x + c * cfg.cell_size), float(origin_y - r * cfg.cell_size), int(k))
            for r, c, k in zip(rows, cols, labels)]


def _sdm_regions(cfg: SynthConfig, latent: EmbeddingField, social: EmbeddingField, origin_x: float,
                 origin_y: float):
    g, cs = cfg.grid_size, cfg.cell_size
    rng = keyed_rng(cfg.seed, 'regions')
    rows = rng.integers(0, g, cfg.n_regions)
    cols = rng.integers(0, g, cfg.n_regions)
    link = keyed_rng(cfg.seed, 'sdm-link')
    a_latent = 1.5 * link.standard_normal((cfg.n_bins, cfg.K))
    a_social = 6.0 * link.standard_normal((cfg.n_bins, len(TIERS)))

    regions, targets = [], []
    for i, (r, c) in enumerate(zip(rows, cols)):
        x, y = origin_x + c * cs, origin_y - r * cs
        query = BufferQuery(x, y, cfg.region_radius)
        lat = pool_buffer(latent, query).values
        soc = pool_buffer(social, query).values
        q = softmax(a_latent @ lat + cfg.social_weight * (a_social @ soc))
        region_id = f"R{i + 1:04d}"
        regions.append(RegionSpec.buffer(region_id, x, y, cfg.region_radius))
        targets.append(DistributionTarget(region_id, q))
    return regions, targets, np.concatenate([a_latent, a_social], axis=1)


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_bundle(world: SynthWorld, out_dir: str) -> str:
    """Write every artifact plus a manifest of config and content hashes; returns the manifest path"""
    os.makedirs(out_dir, exist_ok=True)
    paths = bundle_paths(out_dir)
    write_field(world.field, paths['field'])
    write_field(world.latent, paths['latent'])
    save_pois(world.pois, paths['pois'])
    write_text_embeddings(world.text, paths['text'])
    save_luc_samples(world.luc, paths['luc'])
    save_regions_csv(world.regions, paths['regions'])
    save_sdm_targets(world.targets, paths['sdm_targets'])

    manifest = {
        'config': asdict(world.config),
        'files': {BUNDLE_FILES[k]: _sha256(p) for k, p in paths.items()},
    }
    manifest_path = os.path.join(out_dir, 'manifest.json')
    with open(manifest_path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    return manifest_path


def bundle_paths(out_dir: str) -> Dict[str, str]:
    return {k: os.path.join(out_dir, v) for k, v in BUNDLE_FILES.items()}
