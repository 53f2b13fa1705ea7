"""Taylor-expansion FMMs for free-space and layered-media Helmholtz sums.

All trees live in one global cubic root so boxes from different layers
share a lattice.  A run has three parts:

* free space per layer: Phi^free_l = sum_{j != i} Q_j h0(k_l |r_i - r_j|);
* reaction components Phi^{dir}_{l l'} for every admissible direction,
  with layered M2L (DCIM images for variant I, S tables for variant II)
  and a tabulated near field;
* `run_total`, which adds them per target layer.

Expansions are held in multi-index order.  Variant I uses Cartesian
coordinates, variant II the (w, wb, z) coordinates of the symmetric
expansions, so M2M/L2L/free M2L share code (see `taylor`).
"""
from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np

from . import taylor as ty
from .dcim import FitWarning
from .medium import DOWN, UP, LayeredMedium
from .tables import (Component, ImageTable, NearTable, STable, TableError, build_image_table,
                     build_near_table, build_s_table, config_hash, near_field_layered)
from .tree import BoxTree, InteractionLists, bounding_cube, build_tree, interaction_lists

VARIANTS = ("I", "II")


@dataclass
class FmmConfig:
    """Solver parameters.  `near_tol` is the relative accuracy of the
    layered near-field tables, `dcim_tol` the image fit tolerance, and the
    `s_*` fields size the S tables (rho spacing, Lagrange orders, declared
    off-grid tolerance)."""
    p: int = 6
    variant: str = "I"
    capacity: int = 60
    depth_cap: int = 10
    scaled: bool = True
    near_tol: float = 1e-7
    dcim_tol: float = 1e-6
    quad_tol: float = 1e-12
    s_rho_spacing: float = 0.1
    s_order_rho: int = 12
    s_order_z: int = 8
    s_tol: float = 1e-4
    threads: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("p must be >= 0")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def table_hash(self) -> bytes:
        """Hash of the fields that shape precomputed tables."""
        d = asdict(self)
        for k in ("p", "capacity", "depth_cap", "scaled", "threads", "deterministic"):
            d.pop(k)
        return config_hash(d)


def _set_threads(n: int):
    nb.set_num_threads(max(1, min(int(n), nb.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# geometry


@dataclass
class Geometry:
    """Per-layer particles with their trees on a shared root."""
    medium: LayeredMedium
    points: list
    trees: list  # BoxTree or None for empty layers
    root: tuple

    def layers(self):
        return [l for l, t in enumerate(self.trees) if t is not None]


def build_geometry(medium: LayeredMedium, points_by_layer, capacity: int = 60,
                   depth_cap: int = 10) -> Geometry:
    if len(points_by_layer) != medium.n_layers:
        raise ValueError("need one particle array per layer (use empty arrays)")
    pts = [np.asarray(p, float).reshape(-1, 3) for p in points_by_layer]
    for l, p in enumerate(pts):
        if len(p):
            medium.check_interior(l, p[:, 2])
    nonempty = [p for p in pts if len(p)]
    if not nonempty:
        raise ValueError("no particles")
    root = bounding_cube(*nonempty)
    trees = [build_tree(p, capacity, depth_cap, root=root) if len(p) else None for p in pts]
    return Geometry(medium, pts, trees, root)


# ---------------------------------------------------------------------------
# tree passes


def _coords(d, variant: str):
    return ty.sym_coords(d) if variant == "II" else np.asarray(d, complex)


class TreeExpansions:
    """Upward and downward passes of one tree for a given order/variant."""

    def __init__(self, tree: BoxTree, p: int, variant: str, scaled: bool = True):
        self.tree, self.p, self.variant = tree, p, variant
        self.nc = ty.n_coeffs(p)
        self.h = tree.half.copy() if scaled else np.ones(tree.n_boxes)
        self.deg = ty.multi_indices(p).sum(axis=1)
        self._shift = {}
        leaves = tree.leaves()
        self.leaves = leaves[np.argsort(tree.start[leaves])]
        octs = tree.ijk & 1
        self.octant = octs[:, 0] + 2 * octs[:, 1] + 4 * octs[:, 2]

    def _shift_matrix(self, b: int, kind: str):
        # depends on the level and octant of child box b only
        t = self.tree
        key = (kind, int(t.level[b]), int(self.octant[b]))
        M = self._shift.get(key)
        if M is None:
            par = t.parent[b]
            hp, hc = self.h[par], self.h[b]
            d = (t.center[b] - t.center[par]) / hp
            ratio = (hc / hp) ** self.deg
            if kind == "m2m":
                M = ty.shift_matrix(_coords(d, self.variant), self.p, "m2m") * ratio[None, :]
            else:
                M = ratio[:, None] * ty.shift_matrix(_coords(d, self.variant), self.p, "l2l")
            self._shift[key] = M
        return M

    def _leaf_monomials(self, lo: int, hi: int, boxes):
        t = self.tree
        Y = (t.points[lo:hi] - t.center[boxes]) / self.h[boxes][:, None]
        return ty.monomials(_coords(Y, self.variant), self.p)

    def _leaf_chunks(self, max_rows: int = 200_000):
        """Runs of consecutive leaves covering at most ~max_rows/nc particles."""
        t = self.tree
        lim = max(1, max_rows // self.nc * 8)
        i = 0
        while i < len(self.leaves):
            j, n = i, 0
            while j < len(self.leaves) and (n == 0 or n + t.count[self.leaves[j]] <= lim):
                n += t.count[self.leaves[j]]
                j += 1
            yield self.leaves[i:j]
            i = j

    def upward(self, q_sorted) -> np.ndarray:
        t = self.tree
        alpha = np.zeros((t.n_boxes, self.nc), complex)
        q_sorted = np.asarray(q_sorted, complex)
        for lv in self._leaf_chunks():
            lo = t.start[lv[0]]
            hi = t.start[lv[-1]] + t.count[lv[-1]]
            owner = np.repeat(lv, t.count[lv])
            Mon = self._leaf_monomials(lo, hi, owner) * q_sorted[lo:hi, None]
            alpha[lv] = np.add.reduceat(Mon, t.start[lv] - lo, axis=0)
        for level in range(t.depth, 0, -1):
            boxes = t.boxes_at(level)
            for o in range(8):
                kids = boxes[self.octant[boxes] == o]
                if len(kids):
                    M = self._shift_matrix(kids[0], "m2m")
                    alpha[t.parent[kids]] += alpha[kids] @ M.T
        return alpha

    def downward(self, beta: np.ndarray) -> np.ndarray:
        """L2L to the leaves and evaluation; returns values in sorted order."""
        t = self.tree
        beta = beta.copy()
        for level in range(1, t.depth + 1):
            boxes = t.boxes_at(level)
            for o in range(8):
                kids = boxes[self.octant[boxes] == o]
                if len(kids):
                    M = self._shift_matrix(kids[0], "l2l")
                    beta[kids] += beta[t.parent[kids]] @ M.T
        out = np.empty(len(t.perm), complex)
        for lv in self._leaf_chunks():
            lo = t.start[lv[0]]
            hi = t.start[lv[-1]] + t.count[lv[-1]]
            owner = np.repeat(lv, t.count[lv])
            Mon = self._leaf_monomials(lo, hi, owner)
            out[lo:hi] = np.einsum("ij,ij->i", Mon, beta[owner])
        return out


def _groups(keys: np.ndarray):
    """Yield (key row, member indices) for identical rows of `keys`."""
    if len(keys) == 0:
        return
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    for g in range(len(uniq)):
        yield uniq[g], order[bounds[g]:bounds[g + 1]]


def _apply(beta, alpha, t, s, L):
    # targets are unique within a translation key
    beta[t] += alpha[s] @ L.T


def free_m2l(beta, alpha, tgt: TreeExpansions, src: TreeExpansions, pairs, k: float):
    tt, st = tgt.tree, src.tree
    if len(pairs) == 0:
        return
    t, s = pairs[:, 0], pairs[:, 1]
    keys = np.column_stack([tt.level[t], tt.ijk[t] - st.ijk[s]])
    for _, idx in _groups(keys):
        t0, s0 = t[idx[0]], s[idx[0]]
        X = tt.center[t0] - st.center[s0]
        if tgt.variant == "II":
            T = ty.sym_taylor_tensor(k, X, 2 * tgt.p)
        else:
            T = ty.nonsym_derivs(k, X, 2 * tgt.p)
        L = ty.m2l_matrix_from_tensor(T, tgt.p, tgt.h[t0], src.h[s0])
        _apply(beta, alpha, t[idx], s[idx], L)


@nb.njit(cache=True, parallel=True)
def _p2p_free(tp, sp, q, k, tboxes, ptr, srcs, tstart, tcount, sstart, scount, same, out):
    # targets of one call are disjoint boxes, so threads never share output
    for a in nb.prange(len(tboxes)):
        t = tboxes[a]
        for i in range(tstart[t], tstart[t] + tcount[t]):
            acc = 0j
            for b in range(ptr[a], ptr[a + 1]):
                s = srcs[b]
                for j in range(sstart[s], sstart[s] + scount[s]):
                    if same and i == j:
                        continue
                    dx = tp[i, 0] - sp[j, 0]
                    dy = tp[i, 1] - sp[j, 1]
                    dz = tp[i, 2] - sp[j, 2]
                    x = k * np.sqrt(dx * dx + dy * dy + dz * dz)
                    acc += q[j] * (np.sin(x) - 1j * np.cos(x)) / x
            out[i] += acc


def free_near(tgt: BoxTree, src: BoxTree, q_sorted, pairs, k: float, same: bool) -> np.ndarray:
    """Direct h0 sums over near pairs, grouped by level (same-level target
    boxes are disjoint), in target sorted order."""
    out = np.zeros(len(tgt.perm), complex)
    if len(pairs) == 0:
        return out
    q = np.asarray(q_sorted, complex)
    for level in np.unique(tgt.level[pairs[:, 0]]):
        pl = pairs[tgt.level[pairs[:, 0]] == level]
        pl = pl[np.lexsort((pl[:, 1], pl[:, 0]))]
        tboxes, first = np.unique(pl[:, 0], return_index=True)
        ptr = np.append(first, len(pl)).astype(np.int64)
        _p2p_free(tgt.points, src.points, q, float(k), tboxes.astype(np.int64), ptr,
                  np.ascontiguousarray(pl[:, 1]), tgt.start, tgt.count, src.start, src.count,
                  bool(same), out)
    return out


# ---------------------------------------------------------------------------
# free-space FMM


def _to_original(tree: BoxTree, sorted_vals):
    out = np.empty_like(sorted_vals)
    out[tree.perm] = sorted_vals
    return out


def free_space_fmm_tree(tree: BoxTree, q, k: float, config: FmmConfig, lists=None,
                        expansions: TreeExpansions | None = None, alpha=None) -> np.ndarray:
    """Self-interaction of one tree (self term excluded), original order."""
    _set_threads(config.threads)
    ex = expansions or TreeExpansions(tree, config.p, config.variant, config.scaled)
    q_sorted = np.asarray(q, complex)[tree.perm]
    if alpha is None:
        alpha = ex.upward(q_sorted)
    lists = lists or interaction_lists(tree, tree)
    beta = np.zeros_like(alpha)
    free_m2l(beta, alpha, ex, ex, lists.m2l, k)
    vals = ex.downward(beta) + free_near(tree, tree, q_sorted, lists.near, k, True)
    return _to_original(tree, vals)


def run_free_space_fmm(sources, charges, k: float, config: FmmConfig | None = None,
                       targets=None) -> np.ndarray:
    """Phi(r_i) = sum_j Q_j h0(k |r_i - r_j|).  With `targets` omitted the
    targets are the sources and i == j is excluded."""
    config = config or FmmConfig()
    src = np.asarray(sources, float).reshape(-1, 3)
    if targets is None:
        tree = build_tree(src, config.capacity, config.depth_cap)
        return free_space_fmm_tree(tree, charges, k, config)
    tgt = np.asarray(targets, float).reshape(-1, 3)
    root = bounding_cube(src, tgt)
    ts = build_tree(src, config.capacity, config.depth_cap, root=root)
    tt = build_tree(tgt, config.capacity, config.depth_cap, root=root)
    es = TreeExpansions(ts, config.p, config.variant, config.scaled)
    et = TreeExpansions(tt, config.p, config.variant, config.scaled)
    q_sorted = np.asarray(charges, complex)[ts.perm]
    alpha = es.upward(q_sorted)
    lists = interaction_lists(tt, ts)
    beta = np.zeros((tt.n_boxes, et.nc), complex)
    free_m2l(beta, alpha, et, es, lists.m2l, k)
    vals = et.downward(beta) + free_near(tt, ts, q_sorted, lists.near, k, False)
    return _to_original(tt, vals)


# ---------------------------------------------------------------------------
# tables


@dataclass
class ComponentTables:
    comp: Component
    near: NearTable | None = None
    images: ImageTable | None = None
    stable: STable | None = None
    dcim_worst: float = 0.0


def _zkey(z):
    return np.round(np.asarray(z, float), 10)  # same rounding as ImageTable.key


def components(medium: LayeredMedium, geometry: Geometry | None = None):
    """All admissible (layer, src_layer, direction) triples, restricted to
    nonempty layers when a geometry is given."""
    layers = range(medium.n_layers) if geometry is None else geometry.layers()
    return [Component(l, lp, d) for l in layers for lp in layers for d in (UP, DOWN)
            if medium.admissible(l, d)]


def image_z_ref(tree: BoxTree, direction: str, m2l_targets=None) -> float:
    """Reference height of the image offsets: lowest target z for up-going
    components, highest for down-going ones.  Target box centers taking
    part in the M2L are included, since each image term is only valid on
    the far side of z_ref."""
    z = tree.points[:, 2]
    if m2l_targets is not None and len(m2l_targets):
        z = np.concatenate([z, tree.center[m2l_targets, 2]])
    return float(z.min() if direction == UP else z.max())


def required_source_heights(geometry: Geometry, comp: Component, lists: InteractionLists):
    """Distinct source box-center heights used by the layered M2L."""
    st = geometry.trees[comp.src_layer]
    if len(lists.m2l) == 0:
        return np.empty(0)
    return np.unique(_zkey(st.center[lists.m2l[:, 1], 2]))


def _box_xy_bounds(tree: BoxTree, boxes):
    lo = np.empty((len(boxes), 2))
    hi = np.empty((len(boxes), 2))
    for n, b in enumerate(boxes):
        xy = tree.points[tree.start[b]:tree.start[b] + tree.count[b], :2]
        lo[n], hi[n] = xy.min(0), xy.max(0)
    return lo, hi


def near_rho_max(tt: BoxTree, st: BoxTree, pairs) -> float:
    """Largest horizontal distance between particles of any near pair,
    bounded through the particle bounding rectangles of the two boxes."""
    if len(pairs) == 0:
        return 0.0
    tb, ti = np.unique(pairs[:, 0], return_inverse=True)
    sb, si = np.unique(pairs[:, 1], return_inverse=True)
    tlo, thi = _box_xy_bounds(tt, tb)
    slo, shi = _box_xy_bounds(st, sb)
    d = np.maximum(thi[ti] - slo[si], shi[si] - tlo[ti])
    return float(np.max(np.hypot(d[:, 0], d[:, 1])))


def build_component_tables(geometry: Geometry, comp: Component, config: FmmConfig,
                           lists: InteractionLists | None = None, p: int | None = None,
                           variants=None, existing: ComponentTables | None = None) -> ComponentTables:
    """Near-field table plus, per variant, the image sets (I) or the S
    table (II) for order p (default config.p)."""
    medium = geometry.medium
    p = config.p if p is None else p
    variants = (config.variant,) if variants is None else tuple(variants)
    tt, st = geometry.trees[comp.layer], geometry.trees[comp.src_layer]
    lists = lists or interaction_lists(tt, st)
    out = existing or ComponentTables(comp)
    if out.near is None and len(lists.near):
        tp, sp_ = tt.points, st.points
        rho_max = near_rho_max(tt, st, lists.near)
        out.near = build_near_table(medium, comp, rho_max, (tp[:, 2].min(), tp[:, 2].max()),
                                    (sp_[:, 2].min(), sp_[:, 2].max()), tol=config.near_tol,
                                    quad_tol=config.quad_tol)
    if len(lists.m2l) == 0:
        return out
    t, s = lists.m2l[:, 0], lists.m2l[:, 1]
    if "I" in variants:
        z_ref = image_z_ref(tt, comp.direction, np.unique(t))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", FitWarning)
            out.images = build_image_table(medium, comp, required_source_heights(geometry, comp, lists),
                                           p, z_ref, tol=config.dcim_tol, existing=out.images)
        for w in caught:
            if not issubclass(w.category, FitWarning):
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        worst = max(s_.residual for s_ in out.images.sets.values())
        out.dcim_worst = max(out.dcim_worst, worst)
        if worst > config.dcim_tol:
            warnings.warn(f"{comp}: worst image-fit residual {worst:.2e} exceeds {config.dcim_tol:.1e}",
                          FitWarning, stacklevel=2)
    if "II" in variants and (out.stable is None or out.stable.p < p):
        d = tt.center[t, :2] - st.center[s, :2]
        rho_max = float(np.max(np.hypot(d[:, 0], d[:, 1])))
        zt, zs = tt.center[t, 2], st.center[s, 2]
        h_min = float(min(tt.half[t].min(), st.half[s].min()))
        out.stable = build_s_table(medium, comp, p, rho_max, (zt.min(), zt.max()), (zs.min(), zs.max()),
                                   spacing=config.s_rho_spacing, z_spacing=h_min,
                                   order_rho=config.s_order_rho, order_z=config.s_order_z,
                                   quad_tol=config.quad_tol, tol=config.s_tol)
    return out


@dataclass
class TableSet:
    """Precomputed tables per component for one geometry."""
    geometry: Geometry
    config: FmmConfig
    p: int
    variants: tuple
    tables: dict = field(default_factory=dict)
    lists: dict = field(default_factory=dict)

    def lists_for(self, comp: Component) -> InteractionLists:
        key = (comp.layer, comp.src_layer)
        if key not in self.lists:
            self.lists[key] = interaction_lists(self.geometry.trees[comp.layer],
                                                self.geometry.trees[comp.src_layer])
        return self.lists[key]

    def get(self, comp: Component) -> ComponentTables:
        if comp not in self.tables:
            self.tables[comp] = build_component_tables(self.geometry, comp, self.config,
                                                       self.lists_for(comp), self.p, self.variants)
        return self.tables[comp]

    def drop(self, comp: Component):
        self.tables.pop(comp, None)

    def image_set_count(self) -> int:
        return sum(len(t.images) for t in self.tables.values() if t.images is not None)

    def all_tables(self) -> list:
        out = []
        for ct in self.tables.values():
            out.extend(x for x in (ct.near, ct.stable, ct.images) if x is not None)
        return out


def precompute_tables(geometry: Geometry, config: FmmConfig, p: int | None = None,
                      variants=None, comps=None) -> TableSet:
    """Build every table the component FMMs need (all admissible
    components unless `comps` is given).  Failures name the component."""
    ts = TableSet(geometry, config, config.p if p is None else p,
                  (config.variant,) if variants is None else tuple(variants))
    for comp in (comps or components(geometry.medium, geometry)):
        try:
            ts.get(comp)
        except TableError:
            raise
        except Exception as exc:
            raise TableError(f"table build failed for {comp}: {exc}") from exc
    return ts


# ---------------------------------------------------------------------------
# layered components


def layered_m2l(beta, alpha, tgt: TreeExpansions, src: TreeExpansions, pairs, comp: Component,
                tables: ComponentTables, medium: LayeredMedium):
    tt, st = tgt.tree, src.tree
    if len(pairs) == 0:
        return
    p = tgt.p
    t, s = pairs[:, 0], pairs[:, 1]
    k = medium.k(comp.layer)
    sgn = 1.0 if comp.direction == UP else -1.0
    # heights are shared by whole groups; horizontal offsets vary inside
    outer = np.column_stack([tt.level[t], _zkey(tt.center[t, 2]), _zkey(st.center[s, 2])])
    for key, idx in _groups(outer):
        zt, zs = float(tt.center[t[idx[0]], 2]), float(st.center[s[idx[0]], 2])
        dij = tt.ijk[t[idx], :2] - st.ijk[s[idx], :2]
        sub = list(_groups(dij))
        reps = np.array([idx[members[0]] for _, members in sub])
        d = tt.center[t[reps], :2] - st.center[s[reps], :2]
        h_t, h_s = tgt.h[t[reps[0]]], src.h[s[reps[0]]]
        if tgt.variant == "II":
            if tables.stable is None:
                raise TableError(f"missing S table for {comp}")
            L = ty.m2l_layered_sym(tables.stable, np.hypot(d[:, 0], d[:, 1]),
                                   np.arctan2(d[:, 1], d[:, 0]), zt, zs, p, h_t, h_s)
        else:
            if tables.images is None:
                raise TableError(f"missing image sets for {comp}")
            sets = [tables.images.get(zs, o) for o in range(p + 1)]
            X0 = np.column_stack([d, np.full(len(d), sgn * (zt - tables.images.z_ref))])
            L = ty.m2l_layered_nonsym(sets, k, X0, p, sgn, h_t, h_s)
        for g, (_, members) in enumerate(sub):
            sel = idx[members]
            _apply(beta, alpha, t[sel], s[sel], L[g])


def component_fmm_trees(geometry: Geometry, comp: Component, q_src, config: FmmConfig,
                        tables: ComponentTables, lists: InteractionLists | None = None,
                        tgt_ex: TreeExpansions | None = None, src_ex: TreeExpansions | None = None,
                        alpha=None) -> np.ndarray:
    medium = geometry.medium
    if not medium.admissible(comp.layer, comp.direction):
        raise ValueError(f"{comp.direction} component absent in layer {comp.layer}")
    tt, st = geometry.trees[comp.layer], geometry.trees[comp.src_layer]
    lists = lists or interaction_lists(tt, st)
    te = tgt_ex or TreeExpansions(tt, config.p, config.variant, config.scaled)
    se = src_ex or TreeExpansions(st, config.p, config.variant, config.scaled)
    q_sorted = np.asarray(q_src, complex)[st.perm]
    if alpha is None:
        alpha = se.upward(q_sorted)
    beta = np.zeros((tt.n_boxes, te.nc), complex)
    layered_m2l(beta, alpha, te, se, lists.m2l, comp, tables, medium)
    vals = te.downward(beta)
    if len(lists.near):
        if tables.near is None:
            raise TableError(f"missing near-field table for {comp}")
        vals = vals + near_field_layered(tables.near, tt, st, q_sorted, lists.near)
    return _to_original(tt, vals)


def run_component_fmm(medium: LayeredMedium, points_by_layer, charges_src, comp: Component,
                      config: FmmConfig | None = None, tables: TableSet | None = None) -> np.ndarray:
    """Phi^{dir}_{l l'} at the layer-l particles from the layer-l' charges.
    Non-admissible directions (down in the top layer, up in the bottom
    layer) give zeros."""
    config = config or FmmConfig()
    comp = Component(*comp) if not isinstance(comp, Component) else comp
    n_t = len(np.asarray(points_by_layer[comp.layer]).reshape(-1, 3))
    if not medium.admissible(comp.layer, comp.direction):
        return np.zeros(n_t, complex)
    geometry = tables.geometry if tables is not None else build_geometry(
        medium, points_by_layer, config.capacity, config.depth_cap)
    if geometry.trees[comp.layer] is None or geometry.trees[comp.src_layer] is None:
        return np.zeros(n_t, complex)
    tables = tables or TableSet(geometry, config, config.p, (config.variant,))
    _set_threads(config.threads)
    return component_fmm_trees(geometry, comp, charges_src, config, tables.get(comp),
                               tables.lists_for(comp))


@dataclass
class TotalResult:
    """Per-layer totals, with the free and reaction parts and their times."""
    potentials: list
    parts: dict
    times: dict


def run_total(medium: LayeredMedium, points_by_layer, charges_by_layer,
              config: FmmConfig | None = None, tables: TableSet | None = None,
              keep_tables: bool = True) -> TotalResult:
    """Phi_l = Phi^free_l + sum_{l'} (Phi^up_{l l'} + Phi^down_{l l'}).
    Table build time is reported under ('tables', comp); with
    keep_tables=False each component's tables are released after use."""
    config = config or FmmConfig()
    _set_threads(config.threads)
    geometry = tables.geometry if tables is not None else build_geometry(
        medium, points_by_layer, config.capacity, config.depth_cap)
    tables = tables or TableSet(geometry, config, config.p, (config.variant,))
    trees = geometry.trees
    q = [np.asarray(c, complex).reshape(-1) for c in charges_by_layer]
    ex = {l: TreeExpansions(trees[l], config.p, config.variant, config.scaled) for l in geometry.layers()}
    alpha = {l: ex[l].upward(q[l][trees[l].perm]) for l in geometry.layers()}
    pots = [np.zeros(len(p), complex) for p in geometry.points]
    parts, times = {}, {}
    for l in geometry.layers():
        t0 = time.perf_counter()
        v = free_space_fmm_tree(trees[l], q[l], medium.k(l), config, tables.lists_for(Component(l, l, UP)),
                                ex[l], alpha[l])
        times[("free", l)] = time.perf_counter() - t0
        parts[("free", l)] = v
        pots[l] += v
    for comp in components(medium, geometry):
        t0 = time.perf_counter()
        ct = tables.get(comp)
        times[("tables", comp)] = time.perf_counter() - t0
        t0 = time.perf_counter()
        v = component_fmm_trees(geometry, comp, q[comp.src_layer], config, ct, tables.lists_for(comp),
                                ex[comp.layer], ex[comp.src_layer], alpha[comp.src_layer])
        times[comp] = time.perf_counter() - t0
        parts[comp] = v
        pots[comp.layer] += v
        if not keep_tables:
            tables.drop(comp)
    return TotalResult(pots, parts, times)
