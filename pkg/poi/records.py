import logging
import math
from dataclasses import dataclass
from typing import Dict, List

import pandas as pd


logger = logging.getLogger(__name__)

POI_COLUMNS = ['id', 'x', 'y', 'name', 'cat1', 'cat2']
MAX_ID = 2 ** 64 - 1


class PoiFormatError(ValueError):
    """Raised when a POI file or record is invalid"""


@dataclass(frozen=True)
class PoiRecord:
    """A named, two-level categorized place"""
    id: int
    x: float
    y: float
    name: str
    category_l1: str
    category_l2: str

    def __post_init__(self):
        if not 0 <= self.id <= MAX_ID:
            raise PoiFormatError(f"POI id {self.id} is outside the unsigned 64-bit range")
        for label, value in (('name', self.name), ('cat1', self.category_l1), ('cat2', self.category_l2)):
            if not value.strip():
                raise PoiFormatError(f"POI {self.id}: {label} is empty")


def render_description(record: PoiRecord) -> str:
    """Semantic description fed to the text encoder"""
    return (f"A place of {record.category_l2}, a type of {record.category_l1}, "
            f"named {record.name.strip()}.")


def _parse_float(value: str, column: str, row: int) -> float:
    try:
        parsed = float(value)
    except ValueError:
        raise PoiFormatError(f"row {row}: cannot parse {column}={value!r} as a coordinate")
    if not math.isfinite(parsed):
        raise PoiFormatError(f"row {row}: {column}={value!r} is not finite")
    return parsed


def load_pois(path: str) -> List[PoiRecord]:
    """
    Load POIs from a UTF-8 CSV with header id,x,y,name,cat1,cat2.
    Rows are numbered from 1 (the header is not counted).
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise PoiFormatError(f"{path}: not a readable POI CSV ({e})") from e
    missing = [c for c in POI_COLUMNS if c not in frame.columns]
    if missing:
        raise PoiFormatError(f"{path}: missing column(s) {', '.join(missing)}")

    records: List[PoiRecord] = []
    first_row: Dict[int, int] = {}
    for i, row in enumerate(frame[POI_COLUMNS].itertuples(index=False), start=1):
        raw_id, raw_x, raw_y, name, cat1, cat2 = row
        try:
            poi_id = int(raw_id.strip())
        except ValueError:
            raise PoiFormatError(f"row {i}: cannot parse id {raw_id!r}")
        if poi_id in first_row:
            raise PoiFormatError(f"duplicate id {poi_id} in rows {first_row[poi_id]} and {i}")
        first_row[poi_id] = i

        try:
            record = PoiRecord(poi_id, _parse_float(raw_x, 'x', i), _parse_float(raw_y, 'y', i),
                               name.strip(), cat1, cat2)
        except PoiFormatError as e:
            raise PoiFormatError(f"row {i}: {e}") from e
        records.append(record)

    logger.info("loaded %d POIs from %s", len(records), path)
    return records


def save_pois(pois: List[PoiRecord], path: str):
    """Write POIs in the same CSV layout load_pois reads"""
    frame = pd.DataFrame({
        'id': [str(p.id) for p in pois],
        'x': [repr(float(p.x)) for p in pois],
        'y': [repr(float(p.y)) for p in pois],
        'name': [p.name for p in pois],
        'cat1': [p.category_l1 for p in pois],
        'cat2': [p.category_l2 for p in pois],
    }, columns=POI_COLUMNS)
    frame.to_csv(path, index=False, encoding='utf-8', lineterminator='\n')
