import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from align.losses import AlignmentBatch, loss_total
from fieldgrid.field import EmbeddingField
from fieldgrid.pooling import pool_points
from nn.functional import NonFiniteError
from nn.head import HEAD_BIASES, AeProjectionHead, head_backward, head_forward_cached
from nn.optimizer import AdamWState, adamw_step
from nn.projector import PoiProjector, poi_project_backward, poi_project_cached
from nn.seeding import keyed_rng
from poi.records import PoiRecord
from poi.text_embeddings import TextEmbedding


logger = logging.getLogger(__name__)


class AlignmentConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class AlignmentConfig:
    """Pretraining settings; the defaults are the reference setup"""
    lam: float = 0.2
    tau_ae: float = 0.07
    tau_poi: float = 0.07
    batch_size: int = 512
    epochs: int = 100
    seed: int = 0
    r_b: float = 50.0
    r_a: float = 100.0
    hidden: int = 256
    out_dim: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    use_augmented: bool = True
    train_fraction: float = 1.0

    def validate(self) -> 'AlignmentConfig':
        if not 0.0 <= self.lam < 1.0:
            raise AlignmentConfigError(f"lambda must lie in [0, 1), got {self.lam}")
        if not (self.tau_ae > 0 and self.tau_poi > 0):
            raise AlignmentConfigError("temperatures must be > 0")
        if not self.r_b > 0:
            raise AlignmentConfigError(f"r_b must be > 0, got {self.r_b}")
        if self.use_augmented and not self.r_a > self.r_b:
            raise AlignmentConfigError(f"r_a ({self.r_a}) must exceed r_b ({self.r_b})")
        if self.batch_size < 2:
            raise AlignmentConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise AlignmentConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.hidden < 1 or self.out_dim < 1:
            raise AlignmentConfigError("hidden and out_dim must be >= 1")
        if not 0.0 < self.train_fraction <= 1.0:
            raise AlignmentConfigError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    l_ae: float
    l_ap: float
    l_total: float


@dataclass(eq=False)
class PairCache:
    """Pooled base/augmented views and text vectors of the POIs kept for training"""
    base: np.ndarray
    aug: Optional[np.ndarray]
    text: np.ndarray
    poi_ids: np.ndarray
    n_dropped: int

    @property
    def size(self) -> int:
        return self.base.shape[0]


@dataclass(eq=False)
class TrainerState:
    """Everything needed to continue a run after its last completed epoch"""
    head: AeProjectionHead
    projector: PoiProjector
    optimizer: AdamWState
    next_epoch: int = 0
    best_head: Optional[AeProjectionHead] = None
    best_projector: Optional[PoiProjector] = None
    best_epoch: Optional[int] = None
    best_l_ap: float = math.inf
    log: List[EpochRecord] = field(default_factory=list)


@dataclass(eq=False)
class PretrainResult:
    head: AeProjectionHead
    projector: PoiProjector
    log: List[EpochRecord]
    best_epoch: Optional[int]
    best_l_ap: float
    n_pairs: int
    n_dropped: int
    state: TrainerState


def decayable(names) -> List[str]:
    """Weights decay, biases do not"""
    return [n for n in names if n not in HEAD_BIASES]


def fraction_subset(n: int, fraction: float, seed: int) -> np.ndarray:
    """
    Sorted indices of a uniform subset of size ceil(fraction * n).
    Subsets for the same seed are nested as the fraction grows.
    """
    order = keyed_rng(seed, 'fraction').permutation(n)
    k = min(n, max(1, math.ceil(round(fraction * n, 9))))
    return np.sort(order[:k])


def prepare_pairs(field: EmbeddingField, pois: List[PoiRecord], text: List[TextEmbedding],
                  cfg: AlignmentConfig, threads: int = 1) -> PairCache:
    """Pool both buffer views once and drop POIs whose buffers are empty"""
    if len(text) != len(pois) or any(t.poi_id != p.id for t, p in zip(text, pois)):
        raise TrainingError("text embeddings are not aligned with the POI list")
    xs = np.array([p.x for p in pois], dtype=np.float64)
    ys = np.array([p.y for p in pois], dtype=np.float64)

    base, ok = pool_points(field, xs, ys, cfg.r_b, threads=threads)
    aug = None
    if cfg.use_augmented:
        aug, ok_aug = pool_points(field, xs, ys, cfg.r_a, threads=threads)
        ok &= ok_aug

    n_dropped = int((~ok).sum())
    if n_dropped:
        logger.info("dropped %d POIs with empty buffers", n_dropped)
    keep = np.flatnonzero(ok)
    if cfg.train_fraction < 1.0:
        keep = keep[fraction_subset(keep.size, cfg.train_fraction, cfg.seed)]
        logger.info("training on %d POIs (fraction %.2f)", keep.size, cfg.train_fraction)
    if keep.size == 0:
        raise TrainingError("no POIs left after dropping empty buffers")

    text_matrix = np.stack([text[i].vector for i in keep]).astype(np.float64)
    return PairCache(base=base[keep], aug=None if aug is None else aug[keep], text=text_matrix,
                     poi_ids=np.array([pois[i].id for i in keep], dtype=np.uint64),
                     n_dropped=n_dropped)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """Shuffled batches for one epoch; a trailing batch of one joins the batch before it"""
    order = keyed_rng(seed, 'epoch', epoch).permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def init_state(cfg: AlignmentConfig, in_dim: int, text_dim: int) -> TrainerState:
    rng = keyed_rng(cfg.seed, 'init')
    head = AeProjectionHead.init(rng, in_dim=in_dim, hidden=cfg.hidden, out_dim=cfg.out_dim)
    projector = PoiProjector.init(rng, text_dim, cfg.out_dim)
    optimizer = AdamWState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay)
    return TrainerState(head, projector, optimizer)


def _train_batch(state: TrainerState, pairs: PairCache, idx: np.ndarray, cfg: AlignmentConfig):
    head, projector = state.head, state.projector
    z_base, cache_base = head_forward_cached(head, pairs.base[idx])
    z_aug, cache_aug = None, None
    if cfg.use_augmented:
        z_aug, cache_aug = head_forward_cached(head, pairs.aug[idx])
    z_poi, cache_poi = poi_project_cached(projector, pairs.text[idx])

    loss = loss_total(AlignmentBatch(z_base, z_aug, z_poi), cfg)
    if not math.isfinite(loss.value):
        raise NonFiniteError(f"loss is {loss.value}")

    grads, _ = head_backward(head, None, loss.grads['z_base'], cache_base)
    if cfg.use_augmented:
        grads_aug, _ = head_backward(head, None, loss.grads['z_aug'], cache_aug)
        for name in grads:
            grads[name] = grads[name] + grads_aug[name]
    grads_poi, _ = poi_project_backward(projector, None, loss.grads['z_poi'], cache_poi)
    grads.update(grads_poi)

    params = dict(head.parameters())
    params.update(projector.parameters())
    adamw_step(state.optimizer, params, grads, decay=decayable(params))
    return loss


def run_epochs(state: TrainerState, pairs: PairCache, cfg: AlignmentConfig) -> TrainerState:
    """Train from state.next_epoch up to cfg.epochs, tracking the best-on-train snapshot"""
    for epoch in range(state.next_epoch, cfg.epochs):
        sums = np.zeros(3)
        for b, idx in enumerate(epoch_batches(pairs.size, cfg.batch_size, cfg.seed, epoch)):
            try:
                loss = _train_batch(state, pairs, idx, cfg)
            except NonFiniteError as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from e
            sums += idx.size * np.array([loss.l_ae, loss.l_ap, loss.value])

        l_ae, l_ap, l_total = (sums / pairs.size).tolist()
        state.log.append(EpochRecord(epoch, l_ae, l_ap, l_total))
        logger.info("epoch %d: l_ae=%.6f l_ap=%.6f l_total=%.6f", epoch, l_ae, l_ap, l_total)
        if l_ap < state.best_l_ap:
            state.best_l_ap = l_ap
            state.best_epoch = epoch
            state.best_head = state.head.copy()
            state.best_projector = state.projector.copy()
            logger.info("new best cross-modal loss %.6f at epoch %d", l_ap, epoch)
        state.next_epoch = epoch + 1
    return state


def pretrain(field: EmbeddingField, pois: List[PoiRecord], text: List[TextEmbedding],
             cfg: AlignmentConfig, threads: int = 1,
             resume: Optional[TrainerState] = None) -> PretrainResult:
    """
    Contrastive pretraining of the AE head and POI projector.
    Returns the parameters of the epoch with the lowest mean cross-modal loss.
    """
    cfg.validate()
    pairs = prepare_pairs(field, pois, text, cfg, threads=threads)
    state = resume if resume is not None else init_state(cfg, field.channels, pairs.text.shape[1])
    if state.head.in_dim != field.channels:
        raise TrainingError(f"head expects {state.head.in_dim} channels, field has {field.channels}")
    run_epochs(state, pairs, cfg)

    head = state.best_head if state.best_head is not None else state.head.copy()
    projector = state.best_projector if state.best_projector is not None else state.projector.copy()
    return PretrainResult(head, projector, list(state.log), state.best_epoch, state.best_l_ap,
                          pairs.size, pairs.n_dropped, state)


def write_training_log(log: List[EpochRecord], best_epoch: Optional[int], path: str):
    frame = pd.DataFrame({
        'epoch': [r.epoch for r in log],
        'l_ae': [r.l_ae for r in log],
        'l_ap': [r.l_ap for r in log],
        'l_total': [r.l_total for r in log],
        'is_best': [int(r.epoch == best_epoch) for r in log],
    }, columns=['epoch', 'l_ae', 'l_ap', 'l_total', 'is_best'])
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


def save_state(state: TrainerState, path: str):
    """Resume bundle: current and best parameters, AdamW moments, the log"""
    arrays = {}
    for prefix, head, proj in (('cur', state.head, state.projector),
                               ('best', state.best_head, state.best_projector)):
        if head is None:
            continue
        for name, a in head.parameters().items():
            arrays[f'{prefix}/{name}'] = a
        arrays[f'{prefix}/poi_w'] = proj.w
    for name, a in state.optimizer.m.items():
        arrays[f'adam_m/{name}'] = a
    for name, a in state.optimizer.v.items():
        arrays[f'adam_v/{name}'] = a
    opt = state.optimizer
    arrays['scalars'] = np.array([opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon,
                                  opt.weight_decay, opt.step, state.next_epoch,
                                  -1 if state.best_epoch is None else state.best_epoch,
                                  state.best_l_ap], dtype=np.float64)
    arrays['log'] = np.array([[r.epoch, r.l_ae, r.l_ap, r.l_total] for r in state.log],
                             dtype=np.float64).reshape(-1, 4)
    with open(path, 'wb') as f:
        np.savez(f, **arrays)


def load_state(path: str) -> TrainerState:
    with np.load(path) as bundle:
        arrays = {k: bundle[k] for k in bundle.files}

    def models(prefix):
        names = [k.split('/', 1)[1] for k in arrays if k.startswith(prefix + '/')]
        if not names:
            return None, None
        head = AeProjectionHead(**{n: arrays[f'{prefix}/{n}'] for n in names if n != 'poi_w'})
        return head, PoiProjector(arrays[f'{prefix}/poi_w'])

    head, projector = models('cur')
    best_head, best_projector = models('best')
    lr, b1, b2, eps, wd, step, next_epoch, best_epoch, best_l_ap = arrays['scalars'].tolist()
    optimizer = AdamWState(lr, b1, b2, eps, wd, int(step),
                           {k.split('/', 1)[1]: a for k, a in arrays.items() if k.startswith('adam_m/')},
                           {k.split('/', 1)[1]: a for k, a in arrays.items() if k.startswith('adam_v/')})
    log = [EpochRecord(int(e), a, p, t) for e, a, p, t in arrays['log'].tolist()]
    return TrainerState(head, projector, optimizer, int(next_epoch), best_head, best_projector,
                        None if best_epoch < 0 else int(best_epoch), best_l_ap, log)
