import struct
from collections import OrderedDict
from typing import Dict, Tuple

import numpy as np

from nn.head import HEAD_TENSORS, AeProjectionHead
from nn.projector import PoiProjector


MAGIC = b'AETH'
VERSION = 1
CANONICAL_TENSORS = HEAD_TENSORS + ['poi_w']


class CheckpointFormatError(ValueError):
    pass


def save_tensors(tensors: Dict[str, np.ndarray], path: str):
    """Write named tensors in the AETH1 layout (float32 payloads)"""
    parts = [MAGIC, struct.pack('<II', VERSION, len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode('utf-8')
        array = np.asarray(array)
        parts.append(struct.pack('<H', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<B', array.ndim))
        parts.append(struct.pack(f'<{array.ndim}I', *array.shape))
        parts.append(array.astype('<f4').tobytes(order='C'))
    with open(path, 'wb') as f:
        f.write(b''.join(parts))


def load_tensors(path: str) -> Dict[str, np.ndarray]:
    """Read an AETH1 file; tensors come back as float64"""
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:4]!r}")
    try:
        version, count = struct.unpack_from('<II', raw, 4)
        if version != VERSION:
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
        offset = 12
        tensors: Dict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack_from('<H', raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (rank,) = struct.unpack_from('<B', raw, offset)
            offset += 1
            shape = struct.unpack_from(f'<{rank}I', raw, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if offset + size > len(raw):
                raise CheckpointFormatError(f"{path}: tensor {name} is truncated")
            tensors[name] = np.frombuffer(raw, dtype='<f4', count=size // 4,
                                          offset=offset).reshape(shape).astype(np.float64)
            offset += size
    except struct.error as e:
        raise CheckpointFormatError(f"{path}: truncated checkpoint ({e})") from e
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors


def save_models(path: str, head: AeProjectionHead, projector: PoiProjector):
    tensors = OrderedDict(head.parameters())
    tensors.update(projector.parameters())
    save_tensors(tensors, path)


def load_models(path: str) -> Tuple[AeProjectionHead, PoiProjector]:
    tensors = load_tensors(path)
    missing = [n for n in CANONICAL_TENSORS if n not in tensors]
    if missing:
        raise CheckpointFormatError(f"{path}: missing tensor(s) {', '.join(missing)}")
    head = AeProjectionHead(**{n: tensors[n] for n in HEAD_TENSORS})
    return head, PoiProjector(tensors['poi_w'])
