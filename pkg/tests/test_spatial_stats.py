import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from exposure_panel.exceptions import SpatialError
from exposure_panel.spatial_stats import (
    ISOLATED, NOT_SIGNIFICANT, build_weights, global_moran, knn_neighbors, lattice_weights, lisa,
    local_moran, local_sum_identity, moran_statistic, read_edge_list, read_polygons, weights_from_edges,
)
from exposure_panel.synthetic_oracle import SpatialBlock, gen_spatial_field


def square(x, y):
    return [(x, y), (x + 1, y), (x + 1, y + 1), (x, y + 1)]


def test_lattice_units_and_cardinalities():
    rook = lattice_weights(3, 3, 'rook')
    queen = lattice_weights(3, 3, 'queen')
    assert rook.units[:4] == ('r0c0', 'r0c1', 'r0c2', 'r1c0')
    assert rook.cardinalities.tolist() == [2, 3, 2, 3, 4, 3, 2, 3, 2]
    assert queen.cardinalities[4] == 8
    assert_allclose(np.asarray(queen.matrix.sum(axis=1)).ravel(), 1.0)
    with pytest.raises(SpatialError):
        lattice_weights(3, 3, 'knn')


def test_checkerboard_has_perfect_negative_autocorrelation():
    weights = lattice_weights(4, 4, 'rook')
    values = np.array([(r + c) % 2 for r in range(4) for c in range(4)], dtype=float)
    assert moran_statistic(values, weights) == pytest.approx(-1.0)
    result = global_moran(values, weights, permutations=199, seed=1)
    assert result.I == pytest.approx(-1.0)
    assert result.expected == pytest.approx(-1 / 15)
    assert result.p_value < 0.05


def test_global_moran_matches_double_sum(rng):
    weights = lattice_weights(5, 5, 'queen')
    values = rng.standard_normal(25)
    W = weights.matrix.toarray()
    z = values - values.mean()
    numerator = sum(W[i, j] * z[i] * z[j] for i in range(25) for j in range(25))
    expected = (25 / W.sum()) * numerator / (z @ z)
    assert moran_statistic(values, weights) == pytest.approx(expected, abs=1e-12)


def test_local_moran_matches_brute_force(rng):
    weights = lattice_weights(5, 5, 'queen')
    values = rng.standard_normal(25)
    local_i, lag = local_moran(values, weights)
    binary = weights.binary.toarray()
    zhat = (values - values.mean()) / values.std(ddof=1)
    for i in range(25):
        total, count = 0.0, 0
        for j in range(25):
            if binary[i, j]:
                total += zhat[j]
                count += 1
        assert lag[i] == pytest.approx(total / count, abs=1e-12)
        assert local_i[i] == pytest.approx(zhat[i] * total / count, abs=1e-12)


def test_local_sum_identity(rng, lattice6):
    values = rng.standard_normal(36)
    result = lisa(values, lattice6, permutations=99, seed=4)
    assert result.local_i.sum() == pytest.approx(local_sum_identity(result, lattice6), abs=1e-10)


def test_planted_blocks_are_recovered(lattice6):
    blocks = [SpatialBlock(0, 3, 0, 3, 1.0), SpatialBlock(3, 6, 3, 6, -1.0)]
    field = gen_spatial_field(6, 6, blocks, noise_sd=0.05, seed=8)
    assert {u for u, m in zip(field.units, field.mask) if m == 'HH'} == {'r0c0', 'r0c1', 'r1c0', 'r1c1'}
    assert {u for u, m in zip(field.units, field.mask) if m == 'LL'} == {'r4c4', 'r4c5', 'r5c4', 'r5c5'}
    result = lisa(field.as_mapping(), lattice6, permutations=999, seed=8)
    for unit, planted, category in zip(result.units, field.mask, result.categories):
        if planted:
            assert category == planted, unit


def test_lisa_does_not_depend_on_threads(rng, lattice6):
    values = rng.standard_normal(36)
    serial = lisa(values, lattice6, permutations=199, seed=2, threads=1)
    parallel = lisa(values, lattice6, permutations=199, seed=2, threads=4)
    assert_allclose(serial.pseudo_p, parallel.pseudo_p)
    assert serial.categories == parallel.categories


def test_fdr_adjustment_is_never_smaller(rng, lattice6):
    values = rng.standard_normal(36)
    result = lisa(values, lattice6, permutations=199, seed=5, fdr=True)
    assert np.all(result.adjusted_p >= result.pseudo_p - 1e-15)
    assert sum(result.counts().values()) == 36


def test_isolated_units_are_not_tested():
    weights = weights_from_edges([('A', 'B'), ('B', 'C')], units=['A', 'B', 'C', 'D'])
    assert weights.isolated == ('D',)
    result = lisa({'A': 1.0, 'B': 2.0, 'C': 0.5, 'D': 3.0}, weights, permutations=9)
    assert result.categories[3] == ISOLATED
    assert math.isnan(result.pseudo_p[3])
    assert all(c in ('HH', 'LH', 'LL', 'HL', NOT_SIGNIFICANT) for c in result.categories[:3])


def test_edges_are_symmetric_and_validated():
    weights = weights_from_edges([('B', 'A'), ('B', 'C')])
    assert weights.units == ('A', 'B', 'C')
    assert weights.neighbors('A') == [('B', 1.0)]
    assert weights.neighbors('B') == [('A', 0.5), ('C', 0.5)]
    with pytest.raises(SpatialError):
        weights_from_edges([('A', 'A'), ('A', 'B')])
    with pytest.raises(SpatialError):
        weights_from_edges([('A', 'Z')], units=['A', 'B'])


def test_queen_and_rook_polygons():
    polygons = [square(0, 0), square(1, 0), square(1, 1)]
    queen = build_weights(['a', 'b', 'c'], polygons, scheme='queen')
    rook = build_weights(['a', 'b', 'c'], polygons, scheme='rook')
    assert [u for u, _ in queen.neighbors('a')] == ['b', 'c']
    assert [u for u, _ in rook.neighbors('a')] == ['b']


def test_island_fallback_to_nearest_neighbor():
    polygons = [square(0, 0), square(1, 0), square(10, 0)]
    plain = build_weights(['a', 'b', 'far'], polygons, island_k=0)
    assert plain.isolated == ('far',)
    patched = build_weights(['a', 'b', 'far'], polygons, island_k=1)
    assert patched.isolated == ()
    assert patched.fallback_units == ('far',)
    assert patched.neighbors('far') == [('b', 1.0)]


def test_detached_unit_gets_six_nearest_by_default():
    units = [f"u{i}" for i in range(6)] + ['island']
    polygons = [square(x, 0) for x in range(6)] + [square(20, 0)]
    weights = build_weights(units, polygons)
    assert weights.isolated == ()
    assert weights.fallback_units == ('island',)
    assert len(weights.neighbors('island')) == 6
    assert weights.neighbors('u0') == [('u1', 1.0)]
    small = build_weights(['a', 'b', 'far'], [square(0, 0), square(1, 0), square(10, 0)])
    assert [u for u, _ in small.neighbors('far')] == ['a', 'b']
    with pytest.raises(SpatialError):
        build_weights(['a', 'b'], [square(0, 0), square(1, 0)], island_k=-1)


def test_knn_breaks_ties_by_unit_order():
    centroids = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 0.0]])
    assert knn_neighbors(centroids, 2)[0] == [1, 2]
    assert knn_neighbors(centroids, 1, units=['z', 'y', 'x', 'w'])[0] == [2]
    assert knn_neighbors(centroids, 1, units=['a', 'b', 'c', 'd'])[0] == [1]
    with pytest.raises(SpatialError):
        knn_neighbors(centroids, 4)


def test_constant_field_is_rejected(lattice6):
    with pytest.raises(SpatialError):
        global_moran(np.ones(36), lattice6)
    with pytest.raises(SpatialError):
        lisa(np.arange(35, dtype=float), lattice6)


def test_spatial_files(write_csv):
    edges = read_edge_list(write_csv('edges.csv', pd.DataFrame({'unit_id': ['A', 'B'], 'neighbor_id': ['B', 'C']})))
    assert edges == [('A', 'B'), ('B', 'C')]
    path = write_csv('polygons.csv', pd.DataFrame({'unit_id': ['a', 'b'],
                                                   'ring': ['0 0;1 0;1 1;0 1;0 0', '1 0;2 0;2 1;1 1']}))
    units, rings = read_polygons(path)
    assert units == ['a', 'b']
    assert len(rings[0]) == 5 and rings[1][0] == (1.0, 0.0)
    bad = write_csv('bad.csv', pd.DataFrame({'unit_id': ['a'], 'ring': ['0 0;1 x']}))
    with pytest.raises(SpatialError):
        read_polygons(bad)


def test_weights_frame_is_ordered(lattice6):
    frame = lattice6.to_frame()
    assert list(frame.columns) == ['unit_id', 'neighbor_id', 'weight']
    assert frame.iloc[0].tolist() == ['r0c0', 'r0c1', pytest.approx(1 / 3)]
    assert len(frame) == int(lattice6.binary.sum())
