import logging
import re
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List

import numpy as np

from nn.seeding import stable_hash64
from poi.records import PoiRecord


logger = logging.getLogger(__name__)

MAGIC = b'TEV1'
VERSION = 1
HEADER = struct.Struct('<4sIII')  # magic, version, count, dim
DEFAULT_DIM = 384
_TOKEN_SPLIT = re.compile(r'[\W_]+', re.UNICODE)


class TextEmbeddingError(ValueError):
    """Raised when text vectors are missing or malformed"""


class EmptyTokensError(ValueError):
    """The description has no tokens to embed"""


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    """Precomputed language-model vector for one POI"""
    poi_id: int
    vector: np.ndarray


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([('id', '<u8'), ('vec', '<f4', (dim,))])


def write_text_embeddings(embeddings: List[TextEmbedding], path: str):
    """Write vectors in the TEV1 layout"""
    dims = {e.vector.shape[0] for e in embeddings}
    if len(dims) > 1:
        raise TextEmbeddingError(f"vectors have mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    records = np.zeros(len(embeddings), dtype=_record_dtype(dim))
    for i, e in enumerate(embeddings):
        records[i] = (e.poi_id, e.vector)
    with open(path, 'wb') as f:
        f.write(HEADER.pack(MAGIC, VERSION, len(embeddings), dim))
        f.write(records.tobytes())


def read_text_embeddings(path: str) -> Dict[int, np.ndarray]:
    """Read every vector of a TEV1 file keyed by POI id"""
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise TextEmbeddingError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < HEADER.size:
        raise TextEmbeddingError(f"{path}: truncated header")
    _, version, count, dim = HEADER.unpack_from(raw)
    if version != VERSION:
        raise TextEmbeddingError(f"{path}: unsupported TEV1 version {version}")

    dtype = _record_dtype(dim)
    payload = raw[HEADER.size:]
    if len(payload) != count * dtype.itemsize:
        raise TextEmbeddingError(
            f"{path}: payload is {len(payload)} bytes but {count} records of dim {dim} "
            f"need {count * dtype.itemsize}; record dimensions are inconsistent")
    records = np.frombuffer(payload, dtype=dtype)

    vectors: Dict[int, np.ndarray] = {}
    for poi_id, vec in zip(records['id'].tolist(), records['vec']):
        if poi_id in vectors:
            raise TextEmbeddingError(f"{path}: duplicate vector for POI {poi_id}")
        if not np.isfinite(vec).all():
            raise TextEmbeddingError(f"{path}: vector for POI {poi_id} has non-finite entries")
        vectors[poi_id] = vec.astype(np.float64)
    return vectors


def load_text_embeddings(path: str, pois: List[PoiRecord]) -> List[TextEmbedding]:
    """Vectors aligned to the POI order; extra ids in the file are ignored"""
    vectors = read_text_embeddings(path)
    aligned = []
    for p in pois:
        if p.id not in vectors:
            raise TextEmbeddingError(f"{path}: no text vector for POI {p.id}")
        aligned.append(TextEmbedding(p.id, vectors[p.id]))
    extra = len(vectors.keys() - {p.id for p in pois})
    if extra:
        logger.warning("ignored %d text vectors with no matching POI", extra)
    return aligned


def tokenize(description: str) -> List[str]:
    return [t for t in _TOKEN_SPLIT.split(description.lower()) if t]


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=stable_hash64(token)))
    vec = rng.standard_normal(dim)
    vec.setflags(write=False)
    return vec


def fallback_embed(description: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """
    Deterministic bag-of-tokens embedding used when no language model
    output is available. Each token seeds its own Philox stream; the
    token vectors are summed and L2-normalized.
    """
    if dim < 8:
        raise ValueError(f"embedding dimension must be >= 8, got {dim}")
    tokens = tokenize(description)
    if not tokens:
        raise EmptyTokensError(f"no tokens in {description!r}")
    total = np.zeros(dim)
    for token in tokens:
        total += _token_vector(token, dim)
    return total / np.linalg.norm(total)
