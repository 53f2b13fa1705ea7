"""Adaptive octrees on a shared cubic root and dual-tree interaction lists."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class TreeDepthWarning(UserWarning):
    pass


@dataclass
class BoxTree:
    """Octree whose boxes own contiguous slices of `perm`.

    Box b covers the cube center[b] +/- half[b]; its subtree owns the
    particles points[start[b]:start[b] + count[b]] (sorted order), i.e.
    original indices perm[start[b]:start[b] + count[b]].  `ijk` are integer
    lattice coordinates of the box at its own level.
    """
    points: np.ndarray
    perm: np.ndarray
    center: np.ndarray
    half: np.ndarray
    level: np.ndarray
    parent: np.ndarray
    children: np.ndarray
    start: np.ndarray
    count: np.ndarray
    ijk: np.ndarray
    root_center: np.ndarray
    root_half: float
    capacity: int
    depth_cap: int
    overfull: bool = False

    @property
    def n_boxes(self) -> int:
        return len(self.half)

    @property
    def depth(self) -> int:
        return int(self.level.max())

    @property
    def is_leaf(self) -> np.ndarray:
        return np.all(self.children < 0, axis=1)

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    def boxes_at(self, level: int) -> np.ndarray:
        return np.flatnonzero(self.level == level)

    def leaf_of_sorted(self) -> np.ndarray:
        """Leaf index of each particle in sorted order."""
        out = np.empty(len(self.perm), dtype=np.int64)
        for b in self.leaves():
            out[self.start[b]:self.start[b] + self.count[b]] = b
        return out


def bounding_cube(*point_sets, pad: float = 1e-9):
    """Smallest axis-aligned cube holding every set (slightly padded)."""
    pts = np.vstack([np.atleast_2d(p) for p in point_sets if len(p)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    c = 0.5 * (lo + hi)
    h = 0.5 * float(np.max(hi - lo))
    h = max(h, 1e-12) * (1 + pad) + pad
    return c, h


def build_tree(points, capacity: int = 60, depth_cap: int = 10, root=None) -> BoxTree:
    """Adaptive octree.  Boxes with more than `capacity` particles split
    until `depth_cap`; empty children are not created.  `root` is an
    optional (center, half_width) shared between trees."""
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    if pts.shape[0] == 0:
        raise ValueError("cannot build a tree on zero particles")
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    if depth_cap < 0:
        raise ValueError("depth_cap must be >= 0")
    if root is None:
        rc, rh = bounding_cube(pts)
    else:
        rc, rh = np.asarray(root[0], float), float(root[1])
        if np.any(np.abs(pts - rc) > rh * (1 + 1e-12)):
            raise ValueError("particles outside the root box")

    perm = np.arange(len(pts))
    center, half, level, parent, start, count, ijk = [rc], [rh], [0], [-1], [0], [len(pts)], [(0, 0, 0)]
    children = [[-1] * 8]
    overfull = False
    queue = [0]
    head = 0
    while head < len(queue):
        b = queue[head]
        head += 1
        if count[b] <= capacity:
            continue
        if level[b] >= depth_cap:
            overfull = True
            continue
        s, n = start[b], count[b]
        idx = perm[s:s + n]
        c = center[b]
        bits = (pts[idx] >= c).astype(np.int64)
        code = bits[:, 0] + 2 * bits[:, 1] + 4 * bits[:, 2]
        order = np.argsort(code, kind="stable")
        perm[s:s + n] = idx[order]
        counts = np.bincount(code, minlength=8)
        off = s
        hc = 0.5 * half[b]
        for o in range(8):
            if counts[o] == 0:
                continue
            sgn = np.array([o & 1, (o >> 1) & 1, (o >> 2) & 1])
            nb_ = len(half)
            center.append(c + hc * (2 * sgn - 1))
            half.append(hc)
            level.append(level[b] + 1)
            parent.append(b)
            start.append(off)
            count.append(int(counts[o]))
            ijk.append(tuple(2 * np.asarray(ijk[b]) + sgn))
            children.append([-1] * 8)
            children[b][o] = nb_
            queue.append(nb_)
            off += int(counts[o])
    if overfull:
        warnings.warn(f"depth cap {depth_cap} left leaves above capacity {capacity}",
                      TreeDepthWarning, stacklevel=2)
    return BoxTree(points=pts[perm], perm=perm, center=np.array(center), half=np.array(half),
                   level=np.array(level), parent=np.array(parent), children=np.array(children),
                   start=np.array(start), count=np.array(count), ijk=np.array(ijk, dtype=np.int64),
                   root_center=np.asarray(rc, float), root_half=float(rh), capacity=capacity,
                   depth_cap=depth_cap, overfull=overfull)


@dataclass
class InteractionLists:
    """Box pairs (target box, source box) from the dual traversal.

    m2l: same-level, non-adjacent pairs whose parents are adjacent.
    near: adjacent pairs in which at least one box is a leaf; all particles
    of both subtrees interact directly.
    """
    m2l: np.ndarray
    near: np.ndarray


def _same_root(a: BoxTree, b: BoxTree) -> bool:
    return np.allclose(a.root_center, b.root_center) and np.isclose(a.root_half, b.root_half)


def interaction_lists(target: BoxTree, source: BoxTree) -> InteractionLists:
    """Dual traversal from the root pair, one level at a time.

    A pair of same-level boxes is far iff their lattice coordinates differ
    by more than one in some direction; adjacent pairs recurse into all
    child pairs unless one side is a leaf, in which case the pair is near.
    Together the two lists cover every (target, source) particle pair
    exactly once."""
    if not _same_root(target, source):
        raise ValueError("trees must share the root box")
    pairs = np.zeros((1, 2), dtype=np.int64)
    m2l, near = [], []
    t_leaf, s_leaf = target.is_leaf, source.is_leaf
    while len(pairs):
        t, s = pairs[:, 0], pairs[:, 1]
        far = np.abs(target.ijk[t] - source.ijk[s]).max(axis=1) > 1
        m2l.append(pairs[far])
        rest = pairs[~far]
        leaf = t_leaf[rest[:, 0]] | s_leaf[rest[:, 1]]
        near.append(rest[leaf])
        split = rest[~leaf]
        ct = np.repeat(target.children[split[:, 0]], 8, axis=1)
        cs = np.tile(source.children[split[:, 1]], (1, 8))
        ok = (ct >= 0) & (cs >= 0)
        pairs = np.stack([ct[ok], cs[ok]], axis=1)
    return InteractionLists(np.concatenate(m2l).reshape(-1, 2), np.concatenate(near).reshape(-1, 2))


def pair_coverage(target: BoxTree, source: BoxTree, lists: InteractionLists) -> np.ndarray:
    """Count matrix C[i, j] (original indices) of how often each particle
    pair is reached through the lists; the cover property is C == 1."""
    C = np.zeros((len(target.perm), len(source.perm)), dtype=np.int16)
    for arr in (lists.m2l, lists.near):
        for t, s in arr:
            ti = target.perm[target.start[t]:target.start[t] + target.count[t]]
            si = source.perm[source.start[s]:source.start[s] + source.count[s]]
            C[np.ix_(ti, si)] += 1
    return C
