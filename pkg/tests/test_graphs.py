"""OD-pair adjacency matrices and their normalized stack."""

import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from velocast.errors import GraphError
from velocast.geo import Zone, partition_from_zones
from velocast.graphs import (
    MATRIX_NAMES, ODPair, all_od_pairs, build_centroid_distance,
    build_correlation, build_functionality, build_neighborhood, build_stack,
    load_stack, normalize_stack, row_normalize, save_stack, AdjacencyStack,
)


def square(x, y, w=1.0, h=1.0):
    return Polygon([(x, y), (x + w, y), (x + w, y + h), (x, y + h)])


def line_partition(functionality=None):
    """Three zones in a row: a-b adjacent, b-c adjacent, a-c not."""
    fn = functionality or {"a": None, "b": None, "c": None}
    return partition_from_zones([
        Zone.from_polygon("a", square(0, 0), fn["a"]),
        Zone.from_polygon("b", square(1, 0), fn["b"]),
        Zone.from_polygon("c", square(2, 0), fn["c"]),
    ])


def test_od_pair_rejects_self_loop():
    with pytest.raises(GraphError):
        ODPair(0, "a", "a")


def test_all_od_pairs_enumeration():
    pairs = all_od_pairs(line_partition())
    assert [(p.origin_zone, p.dest_zone) for p in pairs] == [
        ("a", "b"), ("a", "c"), ("b", "a"), ("b", "c"), ("c", "a"), ("c", "b"),
    ]
    assert [p.index for p in pairs] == list(range(6))


# -- neighborhood ------------------------------------------------------------

def test_neighborhood_same_origin_zone():
    part = line_partition()
    pairs = [ODPair(0, "a", "b"), ODPair(1, "a", "c")]
    m = build_neighborhood(pairs, part, "origin")
    assert m[0, 1] == 1.0  # identical origin zone


def test_neighborhood_non_adjacent_origins():
    part = line_partition()
    pairs = [ODPair(0, "a", "b"), ODPair(1, "c", "b")]
    m = build_neighborhood(pairs, part, "origin")
    assert m[0, 1] == 0.0  # a and c do not touch


def test_neighborhood_full_hand_enumeration():
    # four OD pairs; origin zones are a, a, b, c. By hand: a~a identical,
    # a~b adjacent, a~c not, b~c adjacent.
    part = line_partition()
    pairs = [ODPair(0, "a", "b"), ODPair(1, "a", "c"),
             ODPair(2, "b", "a"), ODPair(3, "c", "a")]
    m = build_neighborhood(pairs, part, "origin")
    expected = np.array([
        [1, 1, 1, 0],
        [1, 1, 1, 0],
        [1, 1, 1, 1],
        [0, 0, 1, 1],
    ], dtype=float)
    np.testing.assert_array_equal(m, expected)
    # destination zones are b, c, a, a
    md = build_neighborhood(pairs, part, "destination")
    expected_d = np.array([
        [1, 1, 1, 1],
        [1, 1, 0, 0],
        [1, 0, 1, 1],
        [1, 0, 1, 1],
    ], dtype=float)
    np.testing.assert_array_equal(md, expected_d)


def test_neighborhood_unknown_zone():
    part = line_partition()
    with pytest.raises(GraphError, match="unknown zone"):
        build_neighborhood([ODPair(0, "zz", "a")], part, "origin")


# -- centroid distance -------------------------------------------------------

def test_distance_same_side_zone_is_one():
    part = line_partition()
    pairs = [ODPair(0, "a", "b"), ODPair(1, "a", "c")]
    m = build_centroid_distance(pairs, part, "origin")
    assert m[0, 1] == pytest.approx(1.0)


def test_distance_at_sigma_is_inverse_e():
    # centroids at x = 0.5, 1.5, 2.5: pairwise distances 1, 1, 2,
    # sigma = std([1, 1, 2]) = sqrt(2)/3; build a two-zone roster whose
    # side-zone distance equals sigma by scaling the geometry
    sigma = math.sqrt(2.0) / 3.0
    part = partition_from_zones([
        Zone.from_polygon("a", square(0, 0, sigma, sigma)),
        Zone.from_polygon("b", square(sigma, 0, sigma, sigma)),
        Zone.from_polygon("c", square(2 * sigma, 0, sigma, sigma)),
    ])
    # scaled grid: distances sigma, sigma, 2*sigma; new std = sigma^2... so
    # instead check d = sigma directly with the generic oracle formula
    pairs = [ODPair(0, "a", "c"), ODPair(1, "b", "c")]
    m = build_centroid_distance(pairs, part, "origin")
    d = sigma  # |centroid_a - centroid_b| on the scaled grid
    s = np.std([d, d, 2 * d])
    assert m[0, 1] == pytest.approx(math.exp(-(d ** 2) / s ** 2))


def test_distance_matches_bruteforce_oracle():
    part = partition_from_zones([
        Zone.from_polygon("a", square(0, 0, 2, 1)),
        Zone.from_polygon("b", square(2, 0, 1, 3)),
        Zone.from_polygon("c", square(0, 1, 2, 2)),
    ])
    pairs = all_od_pairs(part)
    m = build_centroid_distance(pairs, part, "origin")

    cents = {z: part.zones[z].centroid for z in part.ids}
    dists = []
    for i, zi in enumerate(part.ids):
        for zj in part.ids[i + 1:]:
            dists.append(math.dist(cents[zi], cents[zj]))
    sigma = np.std(dists)
    for pa in pairs:
        for pb in pairs:
            d = math.dist(cents[pa.origin_zone], cents[pb.origin_zone])
            want = 1.0 if pa.index == pb.index else math.exp(-d * d / sigma ** 2)
            assert m[pa.index, pb.index] == pytest.approx(want, rel=1e-12)


def test_distance_degenerate_sigma_is_error():
    part = partition_from_zones([
        Zone.from_polygon("a", square(0, 0)),
        Zone.from_polygon("b", Polygon([(1, 0), (2, 0), (1, 1)])),
        Zone.from_polygon("c", Polygon([(1, 1), (2, 0), (2, 1)])),
    ])
    # force identical centroids to hit the degenerate branch
    for z in part.zones.values():
        z.centroid = (0.0, 0.0)
    with pytest.raises(GraphError, match="degenerate"):
        build_centroid_distance(all_od_pairs(part), part, "origin")


# -- functionality -----------------------------------------------------------

def test_functionality_similarities():
    fn = {"a": np.array([1.0, 1.0, 0.0]),
          "b": np.array([1.0, 0.0, 0.0]),
          "c": np.array([0.0, 0.0, 1.0])}
    part = line_partition(fn)
    pairs = [ODPair(0, "a", "c"), ODPair(1, "b", "c"), ODPair(2, "c", "a")]
    m = build_functionality(pairs, part, "origin")
    assert m[0, 1] == pytest.approx(1.0 / math.sqrt(2.0))  # (1,1,0) vs (1,0,0)
    assert m[0, 2] == pytest.approx(0.0)  # orthogonal
    same = build_functionality([ODPair(0, "a", "b"), ODPair(1, "a", "c")],
                               part, "origin")
    assert same[0, 1] == pytest.approx(1.0)  # identical vectors


def test_functionality_zero_vector_rule():
    fn = {"a": np.array([0.0, 0.0]),
          "b": np.array([1.0, 0.0]),
          "c": np.array([0.0, 1.0])}
    part = line_partition(fn)
    pairs = [ODPair(0, "a", "b"), ODPair(1, "b", "a")]
    m = build_functionality(pairs, part, "origin")
    assert m[0, 1] == 0.0  # zero vector correlates with nothing
    assert m[0, 0] == 1.0  # but the diagonal stays 1


def test_functionality_negative_cosine_clipped():
    fn = {"a": np.array([1.0, -1.0]),
          "b": np.array([-1.0, 1.0]),
          "c": np.array([1.0, 1.0])}
    part = line_partition(fn)
    pairs = [ODPair(0, "a", "c"), ODPair(1, "b", "c")]
    m = build_functionality(pairs, part, "origin")
    assert m[0, 1] == 0.0  # cosine -1 clips to 0


def test_functionality_missing_vector_is_error():
    part = line_partition()
    with pytest.raises(GraphError):
        build_functionality(all_od_pairs(part), part, "origin")


# -- correlation -------------------------------------------------------------

def test_correlation_diagonal_and_anticorrelation():
    t = np.arange(10.0)
    series = np.stack([t, -t], axis=1)
    pairs = [ODPair(0, "a", "b"), ODPair(1, "b", "a")]
    m = build_correlation(pairs, series)
    assert m[0, 0] == 1.0 and m[1, 1] == 1.0
    assert m[0, 1] == 0.0  # perfect anticorrelation clips to 0


def test_correlation_matches_textbook_formula():
    rng = np.random.default_rng(21)
    data = rng.poisson(5.0, size=(40, 5)).astype(float)
    pairs = [ODPair(k, f"o{k}", f"d{k}") for k in range(5)]
    m = build_correlation(pairs, data)
    for a in range(5):
        for b in range(5):
            xa, xb = data[:, a], data[:, b]
            num = np.sum((xa - xa.mean()) * (xb - xb.mean()))
            den = math.sqrt(np.sum((xa - xa.mean()) ** 2)
                            * np.sum((xb - xb.mean()) ** 2))
            want = 1.0 if a == b else max(0.0, num / den)
            assert m[a, b] == pytest.approx(want, rel=1e-10, abs=1e-12)


def test_correlation_zero_variance_rule():
    data = np.array([[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]])
    pairs = [ODPair(0, "a", "b"), ODPair(1, "b", "a")]
    m = build_correlation(pairs, data)
    assert m[0, 1] == 0.0 and m[1, 0] == 0.0
    assert m[0, 0] == 1.0


def test_correlation_needs_two_timestamps():
    with pytest.raises(GraphError, match="2 timestamps"):
        build_correlation([ODPair(0, "a", "b")], np.ones((1, 1)))


def test_correlation_ignores_rows_not_passed():
    # feeding only training rows then appending more rows and re-slicing
    # gives the identical matrix (no hidden global state)
    rng = np.random.default_rng(22)
    full = rng.poisson(4.0, size=(60, 3)).astype(float)
    pairs = [ODPair(k, f"o{k}", f"d{k}") for k in range(3)]
    a = build_correlation(pairs, full[:40])
    b = build_correlation(pairs, np.vstack([full[:40], full[40:]])[:40])
    np.testing.assert_array_equal(a, b)


# -- normalization and the stack ---------------------------------------------

def test_normalize_zero_matrix_gives_identity():
    np.testing.assert_array_equal(row_normalize(np.zeros((4, 4))), np.eye(4))


def test_normalize_complete_graph_two_by_two():
    # self-loop-free complete graph: A + I is all ones, rows become uniform
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(row_normalize(a), 0.5 * np.ones((2, 2)))


def test_normalized_rows_sum_to_one():
    rng = np.random.default_rng(23)
    a = rng.random((6, 6))
    a = (a + a.T) / 2
    out = row_normalize(a)
    np.testing.assert_allclose(out.sum(axis=1), np.ones(6), atol=1e-12)


def fixture_stack():
    fn = {"a": np.array([1.0, 0.0]), "b": np.array([0.5, 0.5]),
          "c": np.array([0.0, 1.0])}
    part = line_partition(fn)
    pairs = all_od_pairs(part)
    rng = np.random.default_rng(24)
    demand = rng.poisson(3.0, size=(48, len(pairs))).astype(float)
    return build_stack(pairs, part, demand)


def test_stack_invariants():
    stack = fixture_stack()
    assert len(stack.matrices) == 7
    for name, m in zip(MATRIX_NAMES, stack.matrices):
        assert m.shape == (6, 6), name
        np.testing.assert_allclose(m, m.T, atol=1e-12, err_msg=name)
        np.testing.assert_allclose(np.diag(m), 1.0, err_msg=name)
        assert m.min() >= 0.0 and m.max() <= 1.0 + 1e-12, name
    for norm in stack.normalized:
        np.testing.assert_allclose(norm.sum(axis=1), 1.0, atol=1e-12)


def test_stack_wrong_count_rejected():
    stack = fixture_stack()
    with pytest.raises(GraphError, match="7 matrices"):
        AdjacencyStack(stack.od_pairs, stack.matrices[:5])


def test_stack_serialization_roundtrip(tmp_path):
    stack = fixture_stack()
    save_stack(stack, str(tmp_path / "stack"))
    loaded = load_stack(str(tmp_path / "stack"))
    assert loaded.n == stack.n
    assert [(p.origin_zone, p.dest_zone) for p in loaded.od_pairs] == \
        [(p.origin_zone, p.dest_zone) for p in stack.od_pairs]
    for a, b in zip(stack.matrices, loaded.matrices):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(stack.normalized, loaded.normalized):
        np.testing.assert_array_equal(a, b)


def test_load_stack_missing_manifest(tmp_path):
    with pytest.raises(GraphError, match="manifest"):
        load_stack(str(tmp_path))
