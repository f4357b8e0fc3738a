import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from fieldgrid.field import EmbeddingField, read_field
from fieldgrid.pooling import BufferQuery, buffer_members, pool_buffer, pool_points
from nn.head import AeProjectionHead, head_forward


logger = logging.getLogger(__name__)

Cell = Tuple[int, int]
DEFAULT_TILE = 256


class RegionError(ValueError):
    pass


def _read_csv(path: str, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise RegionError(f"{path}: not a readable CSV ({e})") from e


@dataclass(frozen=True, eq=False)
class RegionSpec:
    """A spatial unit: either a buffer around a centroid or an explicit cell list"""
    region_id: str
    centroid_x: Optional[float] = None
    centroid_y: Optional[float] = None
    radius: Optional[float] = None
    cells: Optional[Tuple[Cell, ...]] = None

    def __post_init__(self):
        if self.cells is None:
            if self.centroid_x is None or self.centroid_y is None or self.radius is None:
                raise RegionError(f"region {self.region_id}: needs a centroid and radius or a cell list")
            if not self.radius > 0:
                raise RegionError(f"region {self.region_id}: radius must be > 0, got {self.radius}")
        elif len(self.cells) == 0:
            raise RegionError(f"region {self.region_id}: member list is empty")

    @classmethod
    def buffer(cls, region_id: str, x: float, y: float, radius: float) -> 'RegionSpec':
        return cls(str(region_id), float(x), float(y), float(radius))

    @classmethod
    def from_cells(cls, region_id: str, cells: Sequence[Cell]) -> 'RegionSpec':
        return cls(str(region_id), cells=tuple((int(r), int(c)) for r, c in cells))


@dataclass(frozen=True, eq=False)
class RegionEmbedding:
    region_id: str
    vector: np.ndarray
    pixel_count: int


def region_members(field: EmbeddingField, region: RegionSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Member cells of a region as (rows, cols), sorted row-major, nodata excluded"""
    if region.cells is None:
        return buffer_members(field, BufferQuery(region.centroid_x, region.centroid_y, region.radius))
    cells = np.array(sorted(set(region.cells)), dtype=np.intp).reshape(-1, 2)
    rows, cols = cells[:, 0], cells[:, 1]
    out = (rows < 0) | (rows >= field.height) | (cols < 0) | (cols >= field.width)
    if out.any():
        r, c = cells[np.argmax(out)]
        raise RegionError(f"region {region.region_id}: cell ({r}, {c}) is out of bounds")
    keep = field.valid[rows, cols]
    return rows[keep], cols[keep]


def _check_head(head: AeProjectionHead, field: EmbeddingField):
    if head.in_dim != field.channels:
        raise RegionError(f"checkpoint expects {head.in_dim} channels, field has {field.channels}")


def _embed_rows(head: AeProjectionHead, pooled: np.ndarray) -> np.ndarray:
    # row by row: the output is independent of tile grouping
    out = np.empty((pooled.shape[0], head.out_dim))
    for i, a in enumerate(pooled):
        out[i] = head_forward(head, a)
    return out


def _embed_chunk(head: AeProjectionHead, field: EmbeddingField, rows: np.ndarray,
                 cols: np.ndarray, r_b: float, raw_pixel: bool) -> np.ndarray:
    if raw_pixel:
        pooled = field.data[rows, cols].astype(np.float64)
    else:
        pooled = np.empty((rows.size, field.channels))
        for i, (r, c) in enumerate(zip(rows.tolist(), cols.tolist())):
            x, y = field.cell_center(r, c)
            pooled[i] = pool_buffer(field, BufferQuery(x, y, r_b)).values
    return _embed_rows(head, pooled)


def embed_pixels(head: AeProjectionHead, field: EmbeddingField, cells: Sequence[Cell], r_b: float,
                 threads: int = 1, tile: int = DEFAULT_TILE, raw_pixel: bool = False) -> np.ndarray:
    """
    Base-view embedding of each cell: pool a radius-r_b buffer on the cell
    center, then apply the head. With raw_pixel the head sees the cell's own
    vector instead. Work is split into tile x tile blocks; output rows follow
    the input order.
    """
    _check_head(head, field)
    cells = np.asarray(cells, dtype=np.intp).reshape(-1, 2)
    rows, cols = cells[:, 0], cells[:, 1]
    if ((rows < 0) | (rows >= field.height) | (cols < 0) | (cols >= field.width)).any():
        raise RegionError("cell list contains out-of-bounds cells")
    if not field.valid[rows, cols].all():
        raise RegionError("cell list contains nodata cells")

    tile_ids = (rows // tile) * ((field.width + tile - 1) // tile) + cols // tile
    groups = [np.flatnonzero(tile_ids == t) for t in np.unique(tile_ids)]

    def work(idx):
        return idx, _embed_chunk(head, field, rows[idx], cols[idx], r_b, raw_pixel)

    out = np.empty((len(cells), head.out_dim))
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(idx) for idx in groups]
    for idx, z in results:
        out[idx] = z
    return out


def region_embed(head: Optional[AeProjectionHead], field: EmbeddingField, regions: List[RegionSpec],
                 r_b: float, threads: int = 1, tile: int = DEFAULT_TILE,
                 raw_pixel: bool = False) -> List[RegionEmbedding]:
    """
    Mean of member-cell base-view embeddings per region (no re-normalization).
    With head=None the raw field vectors are averaged instead.
    Regions without members are logged and skipped.
    """
    seen = set()
    for region in regions:
        if region.region_id in seen:
            raise RegionError(f"duplicate region id {region.region_id}")
        seen.add(region.region_id)

    members: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for region in regions:
        rows, cols = region_members(field, region)
        if rows.size == 0:
            logger.warning("region %s has no member cells, skipped", region.region_id)
            continue
        members[region.region_id] = (rows, cols)
    if not members:
        return []

    # every distinct cell is embedded once, even when regions overlap
    flat = np.unique(np.concatenate([r * field.width + c for r, c in members.values()]))
    cells = np.stack([flat // field.width, flat % field.width], axis=1)
    if head is None:
        table = field.data[cells[:, 0], cells[:, 1]].astype(np.float64)
    else:
        table = embed_pixels(head, field, cells, r_b, threads=threads, tile=tile, raw_pixel=raw_pixel)

    results = []
    for region in regions:
        if region.region_id not in members:
            continue
        rows, cols = members[region.region_id]
        idx = np.searchsorted(flat, rows * field.width + cols)
        results.append(RegionEmbedding(region.region_id, table[idx].sum(axis=0) / idx.size, int(idx.size)))
    return results


def point_embed(head: Optional[AeProjectionHead], field: EmbeddingField, xs: np.ndarray,
                ys: np.ndarray, radius: float, threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    One pooled vector per sample point (radius buffer), then one head pass.
    With head=None the pooled raw vectors are returned. Also returns the mask
    of points whose buffer was non-empty.
    """
    pooled, ok = pool_points(field, xs, ys, radius, threads=threads)
    if head is None:
        return pooled, ok
    _check_head(head, field)
    out = np.full((pooled.shape[0], head.out_dim), np.nan)
    if ok.any():
        out[ok] = _embed_rows(head, pooled[ok])
    return out, ok


def load_regions_csv(path: str) -> List[RegionSpec]:
    """Buffer regions from a CSV with header region_id,cx,cy,radius"""
    frame = _read_csv(path, dtype={'region_id': str})
    missing = [c for c in ('region_id', 'cx', 'cy', 'radius') if c not in frame.columns]
    if missing:
        raise RegionError(f"{path}: missing column(s) {', '.join(missing)}")
    return [RegionSpec.buffer(r.region_id, r.cx, r.cy, r.radius) for r in frame.itertuples(index=False)]


def load_region_mask(path: str) -> List[RegionSpec]:
    """Regions from a single-channel AEF1 mask whose cell values are region ids"""
    mask = read_field(path)
    if mask.channels != 1:
        raise RegionError(f"{path}: region mask must have one channel, has {mask.channels}")
    values = mask.data[:, :, 0]
    regions = []
    for region_id in np.unique(values[~np.isnan(values)]):
        rows, cols = np.nonzero(values == region_id)
        label = str(int(region_id)) if float(region_id).is_integer() else str(region_id)
        regions.append(RegionSpec.from_cells(label, list(zip(rows.tolist(), cols.tolist()))))
    return regions


def write_embeddings_csv(ids: Sequence[str], vectors: np.ndarray, counts: Sequence[int], path: str):
    """region_id,pixel_count,e0..e{d-1}"""
    vectors = np.atleast_2d(vectors)
    frame = pd.DataFrame(vectors, columns=[f'e{i}' for i in range(vectors.shape[1])])
    frame.insert(0, 'pixel_count', list(counts))
    frame.insert(0, 'region_id', [str(i) for i in ids])
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


def read_embeddings_csv(path: str) -> Tuple[List[str], np.ndarray, np.ndarray]:
    frame = _read_csv(path, dtype={'region_id': str})
    columns = [c for c in frame.columns if c.startswith('e')]
    missing = [c for c in ('region_id', 'pixel_count') if c not in frame.columns]
    if missing or not columns:
        raise RegionError(f"{path}: expected region_id,pixel_count,e0..e{{d-1}} columns")
    return frame['region_id'].tolist(), frame[columns].to_numpy(np.float64), frame['pixel_count'].to_numpy()


def region_embeddings_to_csv(embeddings: List[RegionEmbedding], path: str):
    if not embeddings:
        raise RegionError("no region embeddings to write")
    write_embeddings_csv([e.region_id for e in embeddings], np.stack([e.vector for e in embeddings]),
                         [e.pixel_count for e in embeddings], path)


def save_regions_csv(regions: List[RegionSpec], path: str):
    """Inverse of load_regions_csv; buffer regions only"""
    if any(r.cells is not None for r in regions):
        raise RegionError("cell-list regions cannot be written as region_id,cx,cy,radius rows")
    frame = pd.DataFrame({'region_id': [r.region_id for r in regions],
                          'cx': [r.centroid_x for r in regions],
                          'cy': [r.centroid_y for r in regions],
                          'radius': [r.radius for r in regions]})
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
