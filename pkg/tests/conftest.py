import numpy as np
import pytest

from fieldgrid.field import EmbeddingField
from poi.records import PoiRecord
from synth.world import SynthConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_field(rng):
    """32x32x8 field on a 10 m grid, top-left cell center at (5, 315)"""
    data = rng.standard_normal((32, 32, 8)).astype(np.float32)
    return EmbeddingField(data, origin_x=5.0, origin_y=315.0, cell_size=10.0, crs_code=27700)


@pytest.fixture
def field_path(tmp_path):
    """Writes a field to a file under tmp_path and returns the path"""
    from fieldgrid.field import write_field

    def write(field, name='field.aef'):
        path = str(tmp_path / name)
        write_field(field, path)
        return path
    return write


@pytest.fixture
def sample_pois():
    return [
        PoiRecord(1, 100.0, 200.0, 'Oak House', 'retail', 'budget retail'),
        PoiRecord(2, 150.5, 210.25, 'Mill Yard', 'industrial', 'standard industrial'),
        PoiRecord(3, 120.0, 180.0, 'Crown Court', 'civic', 'premium civic'),
    ]


@pytest.fixture(scope='session')
def tiny_world_config():
    return SynthConfig(grid_size=40, n_pois=160, n_regions=12, K=3, noise_sigma=0.05, seed=7,
                       d_t=16, n_luc=90, region_radius=80.0)


@pytest.fixture(scope='session')
def tiny_world(tiny_world_config):
    return generate(tiny_world_config)
