import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tefmm.tree import TreeDepthWarning, bounding_cube, build_tree, interaction_lists, pair_coverage


def test_single_particle():
    t = build_tree(np.array([[0.1, 0.2, 0.3]]))
    assert t.depth == 0 and t.n_boxes == 1 and t.is_leaf[0]


def test_octant_centers_split_once():
    pts = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    t = build_tree(pts, capacity=1, root=(np.zeros(3), 1.0))
    assert t.depth == 1
    assert len(t.leaves()) == 8 and np.all(t.count[t.leaves()] == 1)


def test_depth_cap_reports_overfull():
    pts = np.zeros((5, 3)) + 1e-3 * np.arange(5)[:, None]
    with pytest.warns(TreeDepthWarning):
        t = build_tree(pts, capacity=1, depth_cap=2)
    assert t.overfull and t.depth == 2


def test_children_tile_parent():
    rng = np.random.default_rng(0)
    t = build_tree(rng.random((3000, 3)), capacity=20)
    for b in range(t.n_boxes):
        kids = t.children[b][t.children[b] >= 0]
        if len(kids) == 0:
            continue
        assert t.count[kids].sum() == t.count[b]
        assert np.allclose(t.half[kids], t.half[b] / 2)
        assert np.all(np.abs(t.center[kids] - t.center[b]) == pytest.approx(t.half[b] / 2))
        # children own consecutive slices of the parent's range
        assert t.start[kids].min() == t.start[b]


def test_uniform_cube_cover():
    rng = np.random.default_rng(1)
    pts = rng.random((8000, 3))
    t = build_tree(pts, capacity=60)
    leaf = t.leaf_of_sorted()
    assert np.all(t.count[t.leaves()] <= 60)
    assert np.array_equal(np.sort(t.perm), np.arange(8000))
    assert np.all(t.is_leaf[leaf])
    # particles lie inside their leaf
    assert np.all(np.abs(t.points - t.center[leaf]) <= t.half[leaf][:, None] * (1 + 1e-12))
    lists = interaction_lists(t, t)
    C = pair_coverage(t, t, lists)
    assert C.min() == 1 and C.max() == 1


@given(st.integers(1, 300), st.integers(1, 300), st.integers(1, 30), st.integers(0, 2 ** 16))
@settings(max_examples=20, deadline=None)
def test_two_tree_cover(n_t, n_s, cap, seed):
    rng = np.random.default_rng(seed)
    a = rng.random((n_t, 3))
    b = rng.random((n_s, 3)) * 0.5 + 0.3
    root = bounding_cube(a, b)
    ta, tb = build_tree(a, cap, root=root), build_tree(b, cap, root=root)
    lists = interaction_lists(ta, tb)
    assert np.all(pair_coverage(ta, tb, lists) == 1)
    t, s = lists.m2l[:, 0], lists.m2l[:, 1]
    assert np.all(ta.level[t] == tb.level[s])
    assert np.all(np.abs(ta.ijk[t] - tb.ijk[s]).max(1) > 1)


def test_trees_need_shared_root():
    a = build_tree(np.random.default_rng(2).random((10, 3)))
    b = build_tree(np.random.default_rng(3).random((10, 3)) + 5)
    with pytest.raises(ValueError):
        interaction_lists(a, b)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        build_tree(np.zeros((0, 3)))
