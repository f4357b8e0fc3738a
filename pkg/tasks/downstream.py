import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fieldgrid.field import EmbeddingField
from infer.regions import RegionSpec, point_embed, region_embed
from nn.head import AeProjectionHead
from poi.records import PoiRecord
from poi.text_embeddings import TextEmbedding
from tasks.training import EvalReport, TaskHeadConfig, evaluate_luc, evaluate_sdm


logger = logging.getLogger(__name__)

LUC_RADIUS = 50.0


@dataclass(eq=False)
class DownstreamData:
    """Everything the pretrain -> embed -> evaluate chain needs"""
    field: EmbeddingField
    pois: List[PoiRecord]
    text: List[TextEmbedding]
    luc_xy: np.ndarray
    luc_labels: np.ndarray
    regions: List[RegionSpec]
    targets: np.ndarray
    n_classes: Optional[int] = None
    luc_radius: float = LUC_RADIUS


@dataclass(eq=False)
class DownstreamEmbeddings:
    luc: np.ndarray
    luc_labels: np.ndarray
    sdm: np.ndarray
    sdm_targets: np.ndarray
    sdm_ids: List[str]


def embed_downstream(head: Optional[AeProjectionHead], data: DownstreamData, r_b: float,
                     threads: int = 1) -> DownstreamEmbeddings:
    """
    LUC point and SDM region embeddings. head=None gives the raw-AE
    counterparts. Points with empty buffers and regions with no members
    are dropped together with their labels.
    """
    luc, ok = point_embed(head, data.field, data.luc_xy[:, 0], data.luc_xy[:, 1], data.luc_radius,
                          threads=threads)
    if not ok.all():
        logger.warning("dropped %d LUC samples with empty buffers", int((~ok).sum()))
    regions = region_embed(head, data.field, data.regions, r_b, threads=threads)
    index = {r.region_id: i for i, r in enumerate(data.regions)}
    kept = [index[e.region_id] for e in regions]
    return DownstreamEmbeddings(luc[ok], np.asarray(data.luc_labels)[ok],
                                np.stack([e.vector for e in regions]) if regions else np.empty((0, 0)),
                                np.asarray(data.targets)[kept], [e.region_id for e in regions])


def score_downstream(emb: DownstreamEmbeddings, seeds: Sequence[int], cfg: TaskHeadConfig,
                     n_classes: int = None, threads: int = 1) -> Tuple[EvalReport, EvalReport]:
    luc = evaluate_luc(emb.luc, emb.luc_labels, seeds, cfg, n_classes=n_classes, threads=threads)
    sdm = evaluate_sdm(emb.sdm, emb.sdm_targets, seeds, cfg, threads=threads)
    return luc, sdm
