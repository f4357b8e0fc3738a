import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np


logger = logging.getLogger(__name__)

MAGIC = b'AEF1'
VERSION = 1
# magic, version, width, height, channels, origin_x, origin_y, cell_size, crs_code, reserved
HEADER = struct.Struct('<4sIIIIdddii')
CANONICAL_NAN = np.uint32(0x7FC00000)


class FieldFormatError(ValueError):
    """Raised when an AEF1 file cannot be decoded"""


class BadMagicError(FieldFormatError):
    pass


class UnsupportedVersionError(FieldFormatError):
    pass


class MalformedHeaderError(FieldFormatError):
    pass


class TruncatedPayloadError(FieldFormatError):
    pass


class InvalidFieldError(ValueError):
    """Raised when a field violates its invariants"""


@dataclass(frozen=True, eq=False)
class EmbeddingField:
    """
    Georeferenced multi-channel raster.

    origin_x/origin_y is the center of the top-left cell; rows grow
    southward, so the center of (row, col) is
    (origin_x + col * cell_size, origin_y - row * cell_size).
    data has shape (height, width, channels). A cell whose channels are
    all NaN is nodata.
    """
    data: np.ndarray
    origin_x: float
    origin_y: float
    cell_size: float
    crs_code: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise InvalidFieldError(f"field data must be 3-D (height, width, channels), got {data.shape}")
        if min(data.shape) < 1:
            raise InvalidFieldError(f"field dimensions must be >= 1, got {data.shape}")
        if not self.cell_size > 0:
            raise InvalidFieldError(f"cell_size must be > 0, got {self.cell_size}")
        nan = np.isnan(data)
        partial = nan.any(axis=2) & ~nan.all(axis=2)
        if partial.any():
            row, col = np.argwhere(partial)[0]
            raise InvalidFieldError(f"cell ({row}, {col}) mixes NaN and finite channels")
        if np.isinf(data).any():
            raise InvalidFieldError("field contains infinite values")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @cached_property
    def valid(self) -> np.ndarray:
        """Boolean (height, width) mask of cells that carry data"""
        mask = ~np.isnan(self.data[:, :, 0])
        mask.setflags(write=False)
        return mask

    def cell_center(self, row: int, col: int) -> Tuple[float, float]:
        """Map coordinates of a cell center"""
        return (self.origin_x + col * self.cell_size, self.origin_y - row * self.cell_size)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def shifted(self, dx: float, dy: float) -> 'EmbeddingField':
        """Same raster with its origin translated by (dx, dy)"""
        return EmbeddingField(self.data, self.origin_x + dx, self.origin_y + dy,
                              self.cell_size, self.crs_code)

    def same_as(self, other: 'EmbeddingField') -> bool:
        """Bit-for-bit equality of geometry and payload"""
        return (self.data.shape == other.data.shape
                and self.origin_x == other.origin_x
                and self.origin_y == other.origin_y
                and self.cell_size == other.cell_size
                and self.crs_code == other.crs_code
                and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32)))


def write_field(field: EmbeddingField, path: str):
    """Write a field in the AEF1 layout"""
    header = HEADER.pack(MAGIC, VERSION, field.width, field.height, field.channels,
                         float(field.origin_x), float(field.origin_y), float(field.cell_size),
                         int(field.crs_code), 0)
    bits = field.data.astype('<f4').view('<u4').copy()
    bits[np.isnan(field.data)] = CANONICAL_NAN
    with open(path, 'wb') as f:
        f.write(header)
        f.write(bits.tobytes(order='C'))
    logger.debug("wrote field %dx%dx%d to %s", field.height, field.width, field.channels, path)


def read_field(path: str) -> EmbeddingField:
    """Read an AEF1 file"""
    with open(path, 'rb') as f:
        raw = f.read()

    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < HEADER.size:
        raise MalformedHeaderError(f"{path}: header is {len(raw)} bytes, expected {HEADER.size}")

    (_, version, width, height, channels,
     origin_x, origin_y, cell_size, crs_code, reserved) = HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported AEF1 version {version}")
    if width < 1 or height < 1 or channels < 1:
        raise MalformedHeaderError(f"{path}: invalid dimensions {width}x{height}x{channels}")
    if not (np.isfinite(cell_size) and cell_size > 0):
        raise MalformedHeaderError(f"{path}: invalid cell size {cell_size}")
    if reserved != 0:
        raise MalformedHeaderError(f"{path}: reserved header field is {reserved}, expected 0")

    expected = width * height * channels * 4
    payload = raw[HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise MalformedHeaderError(f"{path}: {len(payload) - expected} trailing bytes after payload")

    data = np.frombuffer(payload, dtype='<f4').reshape(height, width, channels).astype(np.float32)
    try:
        return EmbeddingField(data, origin_x, origin_y, cell_size, crs_code)
    except InvalidFieldError as e:
        raise InvalidFieldError(f"{path}: {e}") from e


def field_file_size(width: int, height: int, channels: int) -> int:
    """Size in bytes of an AEF1 file with the given dimensions"""
    return HEADER.size + width * height * channels * 4
