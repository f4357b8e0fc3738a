import numpy as np
import pytest

from fieldgrid.field import EmbeddingField
from fieldgrid.pooling import BufferQuery, pool_buffer
from infer.regions import (RegionError, RegionSpec, embed_pixels, load_region_mask, load_regions_csv, point_embed,
                           read_embeddings_csv, region_embed, region_embeddings_to_csv, region_members,
                           save_regions_csv, write_embeddings_csv)
from nn.head import AeProjectionHead, head_forward


@pytest.fixture
def head(rng):
    return AeProjectionHead.init(rng, in_dim=8, hidden=16, out_dim=6)


def test_region_spec_validation():
    with pytest.raises(RegionError):
        RegionSpec('a')
    with pytest.raises(RegionError):
        RegionSpec.buffer('a', 0.0, 0.0, 0.0)
    with pytest.raises(RegionError):
        RegionSpec.from_cells('a', [])


def test_cell_members_sorted_and_nodata_excluded():
    data = np.ones((4, 4, 2), dtype=np.float32)
    data[2, 1] = np.nan
    field = EmbeddingField(data, 0.0, 30.0, 10.0)
    rows, cols = region_members(field, RegionSpec.from_cells('r', [(3, 0), (2, 1), (0, 3), (0, 3)]))
    assert list(zip(rows.tolist(), cols.tolist())) == [(0, 3), (3, 0)]


def test_out_of_bounds_member(small_field):
    with pytest.raises(RegionError, match=r'\(40, 0\)'):
        region_members(small_field, RegionSpec.from_cells('r', [(0, 0), (40, 0)]))


def test_embed_pixels_matches_sequential_oracle(rng, head):
    field = EmbeddingField(rng.standard_normal((16, 16, 8)).astype(np.float32), 5.0, 155.0, 10.0)
    cells = [(r, c) for r in range(16) for c in range(16)]
    out = embed_pixels(head, field, cells, r_b=20.0, threads=3, tile=5)
    for i, (r, c) in enumerate(cells):
        x, y = field.cell_center(r, c)
        expected = head_forward(head, pool_buffer(field, BufferQuery(x, y, 20.0)).values)
        np.testing.assert_array_equal(out[i], expected)


def test_tile_size_does_not_change_embeddings(rng):
    head = AeProjectionHead.init(rng, in_dim=8, hidden=32, out_dim=16)
    field = EmbeddingField(rng.standard_normal((40, 40, 8)).astype(np.float32), 5.0, 395.0, 10.0)
    cells = [(r, c) for r in range(40) for c in range(40)]
    small = embed_pixels(head, field, cells, r_b=25.0, threads=4, tile=3)
    large = embed_pixels(head, field, cells, r_b=25.0, threads=1, tile=256)
    np.testing.assert_array_equal(small, large)
    raw_small = embed_pixels(head, field, cells, r_b=25.0, tile=3, raw_pixel=True)
    raw_large = embed_pixels(head, field, cells, r_b=25.0, tile=256, raw_pixel=True)
    np.testing.assert_array_equal(raw_small, raw_large)


def test_embed_pixels_rejects_nodata_and_dimension_mismatch(rng, head):
    data = rng.standard_normal((4, 4, 8)).astype(np.float32)
    data[1, 1] = np.nan
    field = EmbeddingField(data, 0.0, 30.0, 10.0)
    with pytest.raises(RegionError, match='nodata'):
        embed_pixels(head, field, [(1, 1)], 10.0)
    other = EmbeddingField(rng.standard_normal((4, 4, 5)).astype(np.float32), 0.0, 30.0, 10.0)
    with pytest.raises(RegionError, match='channels'):
        embed_pixels(head, other, [(0, 0)], 10.0)


def test_single_cell_region_equals_pixel_embedding(small_field, rng):
    head = AeProjectionHead.init(rng, in_dim=8, hidden=16, out_dim=6)
    [emb] = region_embed(head, small_field, [RegionSpec.from_cells('one', [(4, 7)])], r_b=25.0)
    assert emb.pixel_count == 1
    np.testing.assert_array_equal(emb.vector, embed_pixels(head, small_field, [(4, 7)], 25.0)[0])


def test_region_embedding_is_mean_without_renormalization(small_field, head):
    cells = [(3, 3), (3, 4), (10, 20)]
    [emb] = region_embed(head, small_field, [RegionSpec.from_cells('r', cells)], r_b=15.0)
    pixels = embed_pixels(head, small_field, cells, 15.0)
    np.testing.assert_allclose(emb.vector, pixels.mean(axis=0), rtol=0, atol=1e-12)
    assert np.linalg.norm(emb.vector) < 1.0


def test_overlapping_regions_and_order(small_field, head):
    regions = [RegionSpec.buffer('b', 100.0, 200.0, 40.0),
               RegionSpec.buffer('empty', -500.0, -500.0, 10.0),
               RegionSpec.buffer('a', 120.0, 190.0, 40.0)]
    out = region_embed(head, small_field, regions, r_b=20.0, threads=2)
    assert [e.region_id for e in out] == ['b', 'a']
    for emb, region in zip(out, [regions[0], regions[2]]):
        rows, cols = region_members(small_field, region)
        pixels = embed_pixels(head, small_field, list(zip(rows, cols)), 20.0)
        assert emb.pixel_count == rows.size
        np.testing.assert_allclose(emb.vector, pixels.mean(axis=0), rtol=0, atol=1e-12)


def test_region_norm_is_at_most_one(small_field, head, rng):
    regions = [RegionSpec.buffer(f"r{i}", float(x), float(y), float(r))
               for i, (x, y, r) in enumerate(zip(rng.uniform(0, 320, 12), rng.uniform(0, 320, 12),
                                                 rng.uniform(5, 80, 12)))]
    for emb in region_embed(head, small_field, regions, r_b=20.0):
        assert np.linalg.norm(emb.vector) <= 1.0 + 1e-12

    constant = EmbeddingField(np.ones((12, 12, 8), dtype=np.float32), 5.0, 115.0, 10.0)
    [emb] = region_embed(head, constant, [RegionSpec.buffer('c', 60.0, 60.0, 25.0)], r_b=10.0)
    assert emb.pixel_count > 1
    assert abs(np.linalg.norm(emb.vector) - 1.0) < 1e-9


def test_member_order_does_not_change_region(small_field, head, rng):
    cells = [(r, c) for r in range(5, 12) for c in range(8, 14)]
    shuffled = [cells[i] for i in rng.permutation(len(cells))]
    [a, b] = region_embed(head, small_field, [RegionSpec.from_cells('a', cells),
                                              RegionSpec.from_cells('b', shuffled)], r_b=15.0)
    np.testing.assert_allclose(a.vector, b.vector, rtol=0, atol=1e-12)


def test_split_halves_recombine_by_pixel_count(small_field, head):
    cells = [(r, c) for r in range(4, 15) for c in range(6, 11)]
    whole, left, right = region_embed(head, small_field, [RegionSpec.from_cells('whole', cells),
                                                          RegionSpec.from_cells('left', cells[:23]),
                                                          RegionSpec.from_cells('right', cells[23:])], r_b=20.0)
    assert left.pixel_count + right.pixel_count == whole.pixel_count
    recombined = (left.pixel_count * left.vector + right.pixel_count * right.vector) / whole.pixel_count
    np.testing.assert_allclose(recombined, whole.vector, rtol=0, atol=1e-12)


def test_duplicate_region_ids_rejected(small_field, head):
    regions = [RegionSpec.buffer('E01', 100.0, 200.0, 40.0), RegionSpec.buffer('E01', 200.0, 100.0, 40.0)]
    with pytest.raises(RegionError, match='duplicate region id E01'):
        region_embed(head, small_field, regions, r_b=20.0)


def test_raw_region_embedding_is_plain_field_mean(small_field):
    region = RegionSpec.buffer('r', 160.0, 160.0, 30.0)
    [emb] = region_embed(None, small_field, [region], r_b=50.0)
    pooled = pool_buffer(small_field, BufferQuery(160.0, 160.0, 30.0))
    assert emb.pixel_count == pooled.pixel_count
    np.testing.assert_allclose(emb.vector, pooled.values, rtol=0, atol=1e-12)


def test_raw_pixel_mode_skips_pooling(small_field, head):
    out = embed_pixels(head, small_field, [(2, 2)], 50.0, raw_pixel=True)
    np.testing.assert_allclose(out[0], head_forward(head, small_field.data[2, 2].astype(np.float64)),
                               rtol=0, atol=1e-12)


def test_point_embed_flags_empty_buffers(small_field, head):
    z, ok = point_embed(head, small_field, np.array([50.0, -999.0]), np.array([50.0, -999.0]), 25.0)
    assert ok.tolist() == [True, False]
    assert z.shape == (2, 6)
    assert np.isnan(z[1]).all()
    np.testing.assert_allclose(np.linalg.norm(z[0]), 1.0, atol=1e-9)


def test_regions_csv_round_trip(tmp_path):
    regions = [RegionSpec.buffer('E01', 530000.5, 180000.0, 300.0), RegionSpec.buffer('007', 1.0, 2.0, 50.0)]
    path = str(tmp_path / 'regions.csv')
    save_regions_csv(regions, path)
    back = load_regions_csv(path)
    assert [(r.region_id, r.centroid_x, r.centroid_y, r.radius) for r in back] == \
        [('E01', 530000.5, 180000.0, 300.0), ('007', 1.0, 2.0, 50.0)]


def test_region_mask(tmp_path, field_path):
    mask = np.full((3, 3, 1), np.nan, dtype=np.float32)
    mask[0, :2] = 4.0
    mask[2, 2] = 9.0
    regions = load_region_mask(field_path(EmbeddingField(mask, 0.0, 20.0, 10.0), 'mask.aef'))
    assert [(r.region_id, r.cells) for r in regions] == [('4', ((0, 0), (0, 1))), ('9', ((2, 2),))]


def test_embeddings_csv_round_trip(tmp_path, rng):
    vectors = rng.standard_normal((3, 4))
    path = str(tmp_path / 'emb.csv')
    write_embeddings_csv(['r1', '02', 'r3'], vectors, [5, 6, 7], path)
    ids, back, counts = read_embeddings_csv(path)
    assert ids == ['r1', '02', 'r3']
    assert counts.tolist() == [5, 6, 7]
    np.testing.assert_allclose(back, vectors, rtol=1e-15, atol=0)
    with pytest.raises(RegionError):
        region_embeddings_to_csv([], path)


def test_unreadable_csv_files_raise_region_error(tmp_path):
    empty = tmp_path / 'empty.csv'
    empty.write_text('')
    with pytest.raises(RegionError, match='not a readable CSV'):
        load_regions_csv(str(empty))
    with pytest.raises(RegionError, match='not a readable CSV'):
        read_embeddings_csv(str(empty))
    headless = tmp_path / 'vectors.csv'
    headless.write_text('id,value\n1,0.5\n')
    with pytest.raises(RegionError, match='region_id,pixel_count'):
        read_embeddings_csv(str(headless))
