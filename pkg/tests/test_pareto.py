import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmolab.errors import InvalidParameter
from lmolab.harness import RunRecord
from lmolab.pareto import ParetoConfig, frontier_indices, nondominated, pareto_frontier, robust_filter


def brute_nondominated(pts):
    keep = []
    for i, (xi, yi) in enumerate(pts):
        dom = any(
            xj <= xi and yj <= yi and (xj < xi or yj < yi) for j, (xj, yj) in enumerate(pts) if j != i
        )
        keep.append(not dom)
    return np.array(keep, dtype=bool)


def test_dominated_point_removed():
    assert pareto_frontier([(1.0, 2.0), (1.5, 2.5)]) == [(1.0, 2.0)]


def test_single_and_empty():
    assert pareto_frontier([(3.0, 4.0)]) == [(3.0, 4.0)]
    assert pareto_frontier([]) == []


def test_near_tie_falls_back(caplog):
    pts = [(1.0, 2.0), (1.0005, 1.9995)]
    res = frontier_indices(pts, ParetoConfig(c=0.001))
    assert res.stage1 == [0, 1]
    assert res.fallback and res.indices == [0]
    with caplog.at_level("INFO", logger="lmolab.pareto"):
        assert pareto_frontier(pts) == [(1.0, 2.0)]
    assert "falling back" in caplog.text


def test_fallback_tie_on_x_uses_y():
    res = frontier_indices([(1.0, 2.0), (1.0, 2.0)], ParetoConfig(c=0.5))
    assert res.fallback and res.indices == [0]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=40))
def test_stage1_matches_bruteforce(pts):
    pts = [(float(x), float(y)) for x, y in pts]
    np.testing.assert_array_equal(nondominated(pts), brute_nondominated(pts))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30), st.floats(0, 0.05))
def test_output_subset_of_stage1(pts, c):
    res = frontier_indices(pts, ParetoConfig(c=c))
    assert set(res.indices) <= set(res.stage1)
    assert res.indices


def test_c_zero_keeps_all_stage1():
    pts = [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0), (1.0, 1.0)]
    assert frontier_indices(pts, ParetoConfig(c=0.0)).indices == [0, 1, 2]


def test_robust_filter_literal():
    keep = robust_filter(np.array([[0.0, 1.0], [0.5, 0.5]]), 0.1)
    assert keep.tolist() == [True, True]


def test_accuracy_mode():
    pts = [(0.9, 0.8), (0.5, 0.5)]
    assert pareto_frontier(pts, ParetoConfig(mode="accuracy")) == [(0.9, 0.8)]


def test_grouped_by_algorithm():
    recs = [
        RunRecord("sign", 1.0, np.inf, 1e-3, 10, 0, 2.0, 1.0),
        RunRecord("orth", 2.0, 2.0, 1e-3, 10, 0, 3.0, 3.0),  # dominated globally, but alone in its group
        RunRecord("sign", 1.0, np.inf, 1e-3, 20, 0, 2.5, 1.5),
        RunRecord("orth", 2.0, 2.0, 1e-3, 20, 0, 9.0, 9.0, diverged=True),
    ]
    front = pareto_frontier(recs)
    assert [(r.algo, r.step) for r in front] == [("sign", 10), ("orth", 10)]


def test_config_validation():
    with pytest.raises(InvalidParameter):
        ParetoConfig(c=-1)
    with pytest.raises(InvalidParameter):
        ParetoConfig(mode="max")
