"""Precomputed tables for the layered components.

* NearTable: u^{dir}_{l l'}(rho, z, z') on a uniform grid, tricubic
  tensor-product Lagrange interpolation, used for near-field pairs.
* STable: the symmetric-variant integrals S_{N N'}^{M M'}(rho, z, z') on a
  uniform grid with higher-order Lagrange interpolation.
* ImageTable: DCIM image sets keyed by source box-center height and source
  z-derivative order.

All gridded values come from one quadrature pass: the integrand factors
into a rho part, a target-z part and a source-z part, so every grid is a
separable contraction over the contour nodes.  Tables persist to the SWT1
binary format (`save_tables` / `load_tables`).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from math import factorial

import numba as nb
import numpy as np
from scipy import special as sp

from . import dcim
from .medium import DOWN, UP, LayeredMedium, _as_dir, sigma_tilde_factors, \
    solve_reaction_coeffs_general, target_factor, vertical_wavenumber
from .sommerfeld import _vertical_gap, eval_scattered_green, wide_contour

KIND_NEAR, KIND_S, KIND_IMAGE = 0, 1, 2
_DIR_CODE = {UP: 0, DOWN: 1}
_CODE_DIR = {0: UP, 1: DOWN}


class TableError(LookupError):
    pass


@dataclass(frozen=True)
class Component:
    layer: int
    src_layer: int
    direction: str

    def __post_init__(self):
        object.__setattr__(self, "direction", _as_dir(self.direction))


def config_hash(obj) -> bytes:
    """32-byte SHA-256 of a JSON-serialisable description."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=float).encode()).digest()


# ---------------------------------------------------------------------------
# spectral factors on a contour


@dataclass
class _Spectral:
    kr: np.ndarray
    w: np.ndarray
    kz: np.ndarray
    coeffs: object
    kl: float


def _spectral(medium, comp: Component, gap, rho_max, tol, order=0):
    if gap <= 0:
        raise TableError(f"non-positive vertical gap {gap:.3g} for {comp}")
    c = wide_contour(medium, gap, rho_max, tol, order)
    kr, w = c.nodes()
    return _Spectral(kr, w, vertical_wavenumber(medium, comp.layer, kr),
                     solve_reaction_coeffs_general(medium, comp.layer, comp.src_layer, kr),
                     medium.k(comp.layer))


def _target_rows(medium, comp, sp_: _Spectral, z, n):
    return target_factor(medium, comp.layer, sp_.kr[None, :], np.asarray(z)[:, None],
                         comp.direction, n) / factorial(n)


def _source_rows(medium, comp, sp_: _Spectral, zp, n):
    fu, fd = sigma_tilde_factors(medium, comp.src_layer, sp_.kr[None, :], np.asarray(zp)[:, None], n)
    cu, cd = sp_.coeffs.pair(comp.direction)
    return fu * cu + fd * cd


# ---------------------------------------------------------------------------
# uniform grids and Lagrange weights


@dataclass(frozen=True)
class Grid1D:
    origin: float
    spacing: float
    n: int

    @property
    def nodes(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n)

    @property
    def end(self) -> float:
        return self.origin + self.spacing * (self.n - 1)


def _cover(lo, hi, h, min_points):
    """Uniform grid from lo with spacing <= h reaching hi, >= min_points."""
    span = max(hi - lo, 0.0)
    n = max(int(np.ceil(span / h - 1e-9)) + 1, min_points)
    spacing = span / (n - 1) if span > 0 else h
    return Grid1D(float(lo), float(spacing), int(n))


def lagrange_weights(grid: Grid1D, x: float, order: int):
    """(first node, weights) of the (order+1)-point stencil nearest x,
    clipped at the grid ends.  Exact nodes give unit weights."""
    npts = min(order + 1, grid.n)
    u = (x - grid.origin) / grid.spacing
    if u < -1e-9 or u > grid.n - 1 + 1e-9:
        raise TableError(f"value {x:.6g} outside table grid [{grid.origin:.6g}, {grid.end:.6g}]")
    j0 = int(np.floor(u - (npts - 1) / 2.0 + 0.5)) if npts % 2 == 0 else int(np.round(u)) - npts // 2
    j0 = min(max(j0, 0), grid.n - npts)
    t = u - j0
    nodes = np.arange(npts, dtype=float)
    k = int(np.round(t))
    if abs(t - k) < 1e-12 and 0 <= k < npts:
        w = np.zeros(npts)
        w[k] = 1.0
        return j0, w
    w = np.empty(npts)
    for i in range(npts):
        others = np.delete(nodes, i)
        w[i] = np.prod((t - others) / (nodes[i] - others))
    return j0, w


# ---------------------------------------------------------------------------
# near-field kernel table


@nb.njit(cache=True, inline="always")
def _cubic_w(u, n, w):
    j = int(np.floor(u)) - 1
    if j < 0:
        j = 0
    if j > n - 4:
        j = n - 4
    t = u - j
    w[0] = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0
    w[1] = t * (t - 2.0) * (t - 3.0) / 2.0
    w[2] = -t * (t - 1.0) * (t - 3.0) / 2.0
    w[3] = t * (t - 1.0) * (t - 2.0) / 6.0
    return j


@nb.njit(cache=True)
def _near_pairs(V, o0, h0, o1, h1, o2, h2, tpts, spts, q, pairs, tstart, tcount,
                sstart, scount, out):
    """out[i] += sum_j q_j u(rho_ij, z_i, z'_j) over box pairs, tricubic."""
    n0, n1, n2 = V.shape
    wr = np.empty(4)
    wz = np.empty(4)
    wp = np.empty(4)
    for pi in range(pairs.shape[0]):
        t = pairs[pi, 0]
        s = pairs[pi, 1]
        for i in range(tstart[t], tstart[t] + tcount[t]):
            jz = _cubic_w((tpts[i, 2] - o1) / h1, n1, wz)
            acc = 0j
            for j in range(sstart[s], sstart[s] + scount[s]):
                dx = tpts[i, 0] - spts[j, 0]
                dy = tpts[i, 1] - spts[j, 1]
                rho = np.sqrt(dx * dx + dy * dy)
                jr = _cubic_w((rho - o0) / h0, n0, wr)
                jp = _cubic_w((spts[j, 2] - o2) / h2, n2, wp)
                v = 0j
                for a in range(4):
                    for b in range(4):
                        wab = wr[a] * wz[b]
                        for c in range(4):
                            v += wab * wp[c] * V[jr + a, jz + b, jp + c]
                acc += q[j] * v
            out[i] += acc


@dataclass
class NearTable:
    """u_{l l'}^{dir}(rho, z, z') on a uniform (rho, z, z') grid."""
    comp: Component
    grids: tuple
    values: np.ndarray
    tol: float = 0.0
    midpoint_error: float = 0.0

    def __call__(self, rho, z, zp) -> np.ndarray:
        rho, z, zp = np.broadcast_arrays(np.asarray(rho, float), np.asarray(z, float),
                                         np.asarray(zp, float))
        out = np.empty(rho.shape, complex)
        flat = out.reshape(-1)
        for n, (a, b, c) in enumerate(zip(rho.ravel(), z.ravel(), zp.ravel())):
            flat[n] = self._one(a, b, c)
        return out

    def _one(self, rho, z, zp):
        ws = []
        for g, x in zip(self.grids, (rho, z, zp)):
            if x < g.origin - 1e-9 * max(1.0, abs(g.origin)) or x > g.end + 1e-9 * max(1.0, abs(g.end)):
                raise TableError(f"near-table query {x:.6g} outside [{g.origin:.6g}, {g.end:.6g}]")
            ws.append(lagrange_weights(g, x, 3))
        (i0, wa), (j0, wb), (k0, wc) = ws
        blk = self.values[i0:i0 + len(wa), j0:j0 + len(wb), k0:k0 + len(wc)]
        return complex(np.einsum("abc,a,b,c->", blk, wa, wb, wc))

    def check_covers(self, rho_max, zt, zs):
        for g, lo, hi in ((self.grids[0], 0.0, rho_max), (self.grids[1], np.min(zt), np.max(zt)),
                          (self.grids[2], np.min(zs), np.max(zs))):
            if lo < g.origin - 1e-9 or hi > g.end + 1e-9:
                raise TableError("near table does not cover the queried range")


def _separable_grid(A, T, S):
    # V[r, z, w] = sum_q A[r, q] T[z, q] S[w, q]
    nr, nq = A.shape
    B = (A[:, None, :] * T[None, :, :]).reshape(-1, nq)
    return (B @ S.T).reshape(nr, T.shape[0], S.shape[0])


def build_near_table(medium: LayeredMedium, comp: Component, rho_max: float, zt_range,
                     zs_range, tol: float = 1e-7, quad_tol: float = 1e-12,
                     h0: float | None = None, max_nodes: int = 8_000_000) -> NearTable:
    """Tabulate u on a grid fine enough that tricubic interpolation errs by
    at most 0.1*tol*max|u| at all interior cell midpoints; the spacing
    halves until this holds.  Every axis is padded by one cell (rho to
    negative values, u being even in rho) so that queries inside the
    requested ranges use centred stencils."""
    if not medium.admissible(comp.layer, comp.direction):
        raise TableError(f"{comp.direction} component absent in layer {comp.layer}")
    zt_lo, zt_hi = map(float, zt_range)
    zs_lo, zs_hi = map(float, zs_range)
    gap0 = _vertical_gap(medium, comp.layer, comp.src_layer, np.array([zt_lo, zt_hi]),
                         np.array([zs_lo, zs_hi]), comp.direction)
    h = h0 if h0 is not None else 0.1 * gap0
    while True:
        grids = (_cover(-h, max(rho_max, 0.0) + h, h, 4), _cover(zt_lo - h, zt_hi + h, h, 4),
                 _cover(zs_lo - h, zs_hi + h, h, 4))
        if np.prod([g.n for g in grids]) > max_nodes:
            raise TableError("near table grid exceeds the node budget; loosen tol")
        gap = _vertical_gap(medium, comp.layer, comp.src_layer,
                            np.array([grids[1].origin, grids[1].end]),
                            np.array([grids[2].origin, grids[2].end]), comp.direction)
        sp_ = _spectral(medium, comp, gap, grids[0].end, quad_tol)
        F = sp_.w * sp_.kr / (sp_.kl * sp_.kz)
        V = _table_values(medium, comp, sp_, F, grids)
        mids = tuple(Grid1D(g.origin + 1.5 * g.spacing, g.spacing, g.n - 3) for g in grids)
        Vm = _table_values(medium, comp, sp_, F, mids)
        tab = NearTable(comp, grids, V, tol)
        err = _midpoint_error(tab, mids, Vm)
        scale = float(np.max(np.abs(V)))
        if err <= 0.1 * tol * scale or h < 1e-4:
            tab.midpoint_error = err / max(scale, 1e-300)
            return tab
        h *= 0.5


def _table_values(medium, comp, sp_, F, grids):
    A = F[None, :] * sp.jv(0, sp_.kr[None, :] * grids[0].nodes[:, None])
    T = _target_rows(medium, comp, sp_, grids[1].nodes, 0)
    S = _source_rows(medium, comp, sp_, grids[2].nodes, 0)
    return _separable_grid(A, T, S)


def _midpoint_error(tab: NearTable, mids, Vm):
    # interpolate along each axis separately with vectorised cubic weights
    G = [_interp_matrix(g, m.nodes) for g, m in zip(tab.grids, mids)]
    approx = np.einsum("ai,bj,ck,ijk->abc", G[0], G[1], G[2], tab.values, optimize=True)
    return float(np.max(np.abs(approx - Vm)))


def _interp_matrix(grid: Grid1D, x, order=3):
    M = np.zeros((len(x), grid.n))
    for r, xv in enumerate(x):
        j0, w = lagrange_weights(grid, xv, order)
        M[r, j0:j0 + len(w)] = w
    return M


def near_field_layered(table: NearTable, target_tree, source_tree, q_sorted, pairs) -> np.ndarray:
    """sum over near box pairs of q_j u(r_i, r_j), in target sorted order."""
    out = np.zeros(len(target_tree.perm), complex)
    if len(pairs) == 0:
        return out
    g0, g1, g2 = table.grids
    _near_pairs(table.values, g0.origin, g0.spacing, g1.origin, g1.spacing, g2.origin, g2.spacing,
                target_tree.points, source_tree.points, np.asarray(q_sorted, complex),
                np.ascontiguousarray(pairs, dtype=np.int64), target_tree.start, target_tree.count,
                source_tree.start, source_tree.count, out)
    return out


# ---------------------------------------------------------------------------
# symmetric-variant S tables


def s_index_list(p: int) -> np.ndarray:
    """Stored (N, N', M, M') tuples: N, N' <= p, M <= 2p - N - N',
    0 <= M' <= M // 2 (the rest follow from S^{M, M-M'} = (-1)^M S^{M, M'})."""
    out = [(N, Np, M, Mp) for N in range(p + 1) for Np in range(p + 1)
           for M in range(2 * p - N - Np + 1) for Mp in range(M // 2 + 1)]
    return np.array(out, dtype=np.int64).reshape(-1, 4)


@dataclass
class STable:
    """S_{N N'}^{M M'} on a tensor grid {rho_i, z_j, z'_k}, kept in the
    factored form of the quadrature:

        S(rho_i, z_j, z'_k) = sum_q R_{M M'}[i, q] T_N[j, q] P_{N'}[k, q].

    Lagrange interpolation along each axis acts on the factor rows, which is
    the same linear map as interpolating the gridded values.  `dense()`
    materialises the values for persistence; loaded tables keep them dense.
    """
    comp: Component
    p: int
    grids: tuple
    index: np.ndarray  # (n_idx, 4) rows (N, N', M, M')
    R: np.ndarray | None = None  # (n_MM', n_rho, nq)
    T: np.ndarray | None = None  # (p+1, n_z, nq)
    P: np.ndarray | None = None  # (p+1, n_zp, nq)
    values: np.ndarray | None = None  # dense (n_idx, n_rho, n_z, n_zp)
    order_rho: int = 12
    order_z: int = 8
    tol: float = 0.0
    self_test_error: float = float("nan")
    _lookup: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._lookup = {tuple(int(v) for v in r): i for i, r in enumerate(self.index)}
        pp = self.p
        self._mm = {(M, Mp): n for n, (M, Mp) in enumerate(_mm_list(pp))}
        self._row_mm = np.array([self._mm[(int(r[2]), int(r[3]))] for r in self.index], dtype=np.int64)
        self._row_nn = np.array([int(r[0]) * (pp + 1) + int(r[1]) for r in self.index], dtype=np.int64)

    def position(self, N, Np, M, Mp) -> tuple[int, float]:
        """Row of S_{N N'}^{M M'} and the sign from the M' symmetry."""
        if Mp > M // 2:
            return self._lookup[(N, Np, M, M - Mp)], (-1.0) ** M
        return self._lookup[(N, Np, M, Mp)], 1.0

    def batch(self, rho, z: float, zp: float) -> np.ndarray:
        """All stored S values at (rho_k, z, z'), shape (len(rho), n_idx)."""
        rho = np.atleast_1d(np.asarray(rho, float))
        if self.values is not None:
            return np.stack([self._dense_one(r, z, zp) for r in rho])
        j0, wz = lagrange_weights(self.grids[1], z, self.order_z)
        k0, wp = lagrange_weights(self.grids[2], zp, self.order_z)
        Tz = np.einsum("j,njq->nq", wz, self.T[:, j0:j0 + len(wz)])
        Pz = np.einsum("k,nkq->nq", wp, self.P[:, k0:k0 + len(wp)])
        TP = (Tz[:, None, :] * Pz[None, :, :]).reshape(-1, Tz.shape[1])  # (N*(p+1)+N', q)
        out = np.empty((len(rho), len(self.index)), complex)
        for n, r in enumerate(rho):
            i0, wr = lagrange_weights(self.grids[0], r, self.order_rho)
            Rr = np.einsum("i,miq->mq", wr, self.R[:, i0:i0 + len(wr)])
            full = Rr @ TP.T  # (n_MM', n_NN')
            out[n] = full[self._row_mm, self._row_nn]
        return out

    def _dense_one(self, rho, z, zp):
        i0, wr = lagrange_weights(self.grids[0], rho, self.order_rho)
        j0, wz = lagrange_weights(self.grids[1], z, self.order_z)
        k0, wp = lagrange_weights(self.grids[2], zp, self.order_z)
        blk = self.values[:, i0:i0 + len(wr), j0:j0 + len(wz), k0:k0 + len(wp)]
        return np.einsum("irjk,r,j,k->i", blk, wr, wz, wp)

    def __call__(self, rho, z, zp) -> np.ndarray:
        return self.batch([rho], z, zp)[0]

    def dense(self) -> np.ndarray:
        if self.values is not None:
            return self.values
        gR, gZ, gP = self.grids
        out = np.empty((len(self.index), gR.n, gZ.n, gP.n), complex)
        for j in range(gZ.n):
            for k in range(gP.n):
                TP = (self.T[:, j, None, :] * self.P[None, :, k, :]).reshape(-1, self.T.shape[2])
                for i in range(gR.n):
                    full = self.R[:, i, :] @ TP.T
                    out[:, i, j, k] = full[self._row_mm, self._row_nn]
        return out


def _mm_list(p):
    return [(M, Mp) for M in range(2 * p + 1) for Mp in range(M // 2 + 1)]


def build_s_table(medium: LayeredMedium, comp: Component, p: int, rho_max: float, zt_range,
                  zs_range, spacing: float, z_spacing: float | None = None,
                  order_rho: int = 12, order_z: int = 8, quad_tol: float = 1e-13,
                  tol: float = 1e-4) -> STable:
    """Factored S table.  The rho grid starts `order_rho // 2` cells below
    zero (rows at negative rho are exact by Bessel parity) so stencils near
    rho = 0 stay centred.  z/z' grids start at the lower range ends with
    spacing `z_spacing`, halved until each has order_z+1 nodes; box centers
    on that lattice hit nodes exactly.  `tol` is the declared off-grid
    interpolation tolerance checked by `s_table_self_test`."""
    if not medium.admissible(comp.layer, comp.direction):
        raise TableError(f"{comp.direction} component absent in layer {comp.layer}")
    zsp = z_spacing if z_spacing is not None else spacing
    pad = order_rho // 2
    gR = _cover(-pad * spacing, max(rho_max, spacing) + pad * spacing, spacing, order_rho + 1)
    gZ = _lattice_cover(float(zt_range[0]), float(zt_range[1]), zsp, order_z + 1)
    gP = _lattice_cover(float(zs_range[0]), float(zs_range[1]), zsp, order_z + 1)
    gap = _vertical_gap(medium, comp.layer, comp.src_layer, np.array([gZ.origin, gZ.end]),
                        np.array([gP.origin, gP.end]), comp.direction)
    sp_ = _spectral(medium, comp, gap, gR.end, quad_tol, order=2 * p)
    T = np.stack([_target_rows(medium, comp, sp_, gZ.nodes, n) for n in range(p + 1)])
    P = np.stack([_source_rows(medium, comp, sp_, gP.nodes, n) for n in range(p + 1)])
    base = sp_.w / (sp_.kl * sp_.kz)
    x = sp_.kr[None, :] * gR.nodes[:, None]
    R = np.empty((len(_mm_list(p)), gR.n, len(sp_.kr)), complex)
    J = {}
    for n, (M, Mp) in enumerate(_mm_list(p)):
        nu = M - 2 * Mp
        if nu not in J:
            J[nu] = sp.jv(nu, x)
        R[n] = (base * sp_.kr ** (M + 1))[None, :] * J[nu] / (2.0 ** M * factorial(M))
    return STable(comp, p, (gR, gZ, gP), s_index_list(p), R=R, T=T, P=P,
                  order_rho=order_rho, order_z=order_z, tol=tol)


def _lattice_cover(lo, hi, h, min_points):
    if hi <= lo:
        return Grid1D(lo, h, 1)  # a single height, always hit exactly
    n = int(np.ceil((hi - lo) / h - 1e-9)) + 1
    while n < min_points:
        h *= 0.5
        n = int(np.ceil((hi - lo) / h - 1e-9)) + 1
    return Grid1D(lo, h, n)


def s_table_self_test(table: STable, medium: LayeredMedium, n_probes: int = 100, seed: int = 0,
                      tol: float = 1e-12) -> float:
    """Max error at random off-grid probes (all three coordinates off-grid)
    against direct quadrature, per index relative to max|S| of that index
    over the probe's stencil neighbourhood grid values."""
    rng = np.random.default_rng(seed)
    gR, gZ, gP = table.grids
    rows = rng.integers(len(table.index), size=n_probes)
    worst = 0.0
    for r in rows:
        N, Np, M, Mp = (int(v) for v in table.index[r])
        rho = rng.uniform(max(gR.origin, 0.0), gR.end)
        z = rng.uniform(gZ.origin, gZ.end)
        zp = rng.uniform(gP.origin, gP.end)
        approx = table(rho, z, zp)[r]
        exact = _table_integral_unchecked(medium, table.comp, N, Np, M, Mp, rho, z, zp, tol)
        scale = _row_scale(table, r)
        worst = max(worst, abs(approx - exact) / max(scale, 1e-300))
    table.self_test_error = worst
    return worst


def _row_scale(table: STable, r: int) -> float:
    # max |S| of one index over the corner/edge nodes of the grid
    gR, gZ, gP = table.grids
    best = 0.0
    for j in (0, gZ.n - 1):
        for k in (0, gP.n - 1):
            vals = table.batch(gR.nodes[gR.nodes >= 0][::4], gZ.nodes[j], gP.nodes[k])[:, r]
            best = max(best, float(np.max(np.abs(vals))))
    return best


def _table_integral_unchecked(medium, comp, N, Np, M, Mp, rho, z, zp, tol):
    """S at one point on a contour fitted to that point (refined once); no
    interior check, since box centers may sit outside the particle slab."""
    gap = _vertical_gap(medium, comp.layer, comp.src_layer, z, zp, comp.direction)
    if gap <= 0:
        raise TableError(f"non-positive vertical gap {gap:.3g} for {comp}")
    c = wide_contour(medium, gap, rho, tol * 1e-2, M + N + Np)
    kr, w = c.nodes(1)
    sp_ = _Spectral(kr, w, vertical_wavenumber(medium, comp.layer, kr),
                    solve_reaction_coeffs_general(medium, comp.layer, comp.src_layer, kr),
                    medium.k(comp.layer))
    T = _target_rows(medium, comp, sp_, [z], N)[0]
    S = _source_rows(medium, comp, sp_, [zp], Np)[0]
    f = kr ** (M + 1) * sp.jv(M - 2 * Mp, kr * rho) * T * S / (sp_.kl * sp_.kz)
    return complex(f @ w / (2.0 ** M * factorial(M)))


def near_table_probe_error(table: NearTable, medium: LayeredMedium, n_probes: int = 100,
                           seed: int = 0) -> float:
    """Max |interp - quadrature| / max|u| at random off-grid points."""
    rng = np.random.default_rng(seed)
    gR, gZ, gP = table.grids
    scale = float(np.max(np.abs(table.values)))
    worst = 0.0
    for _ in range(n_probes):
        rho = rng.uniform(gR.origin, gR.end)
        z = rng.uniform(gZ.origin, gZ.end)
        zp = rng.uniform(gP.origin, gP.end)
        exact = eval_scattered_green(medium, table.comp.layer, table.comp.src_layer,
                                     (rho, 0.0, z), (0.0, 0.0, zp), table.comp.direction).value
        worst = max(worst, abs(table(rho, z, zp) - exact) / scale)
    return worst


# ---------------------------------------------------------------------------
# DCIM image tables


@dataclass
class ImageTable:
    comp: Component
    z_ref: float
    sets: dict = field(default_factory=dict)  # (z_key, order) -> DcimImageSet

    @staticmethod
    def key(z: float) -> float:
        return round(float(z), 10)

    def get(self, z_src: float, order: int) -> dcim.DcimImageSet:
        try:
            return self.sets[(self.key(z_src), int(order))]
        except KeyError:
            raise TableError(f"no image set for z'={z_src:.6g}, order {order} in {self.comp}") from None

    def __len__(self):
        return len(self.sets)


def build_image_table(medium: LayeredMedium, comp: Component, z_src_values, p: int, z_ref: float,
                      path: dcim.DcimPath | None = None, tol: float = 1e-6,
                      existing: ImageTable | None = None) -> ImageTable:
    """One image set per distinct source box-center height and source
    z-derivative order 0..p."""
    table = existing if existing is not None else ImageTable(comp, float(z_ref))
    if existing is not None and abs(existing.z_ref - z_ref) > 1e-12:
        raise TableError("z_ref differs from the existing image table")
    for z in np.unique([ImageTable.key(z) for z in z_src_values]):
        for order in range(p + 1):
            key = (ImageTable.key(z), order)
            if key in table.sets:
                continue
            try:
                table.sets[key] = _fit_unchecked(medium, comp, order, float(z), z_ref, path, tol)
            except Exception as exc:  # surface the offending key
                raise TableError(f"image fit failed for {comp}, z'={z:.6g}, order {order}: {exc}") from exc
    return table


def _fit_unchecked(medium, comp, order, z, z_ref, path, tol):
    # source box centers may lie outside the source layer's particle slab
    # but must stay inside the layer itself
    return dcim.two_level_dcim(medium, comp.layer, comp.src_layer, order, z, z_ref, path=path,
                               tol=tol, direction=comp.direction)


# ---------------------------------------------------------------------------
# SWT1 persistence

MAGIC = b"SWT1"
VERSION = 1
_HEAD = struct.Struct("<4sI32sQ")
_KEY = struct.Struct("<BBBB4H")
_GRID = struct.Struct("<3I6d")


def _entries(tables):
    for t in tables:
        dcode = _DIR_CODE[t.comp.direction]
        if isinstance(t, NearTable):
            yield ((t.comp.layer, t.comp.src_layer, dcode, KIND_NEAR, 0, 0, 0, 0),
                   t.values.shape, [g.origin for g in t.grids] + [g.spacing for g in t.grids], t.values)
        elif isinstance(t, STable):
            vals = t.dense()
            for r, ix in enumerate(t.index):
                yield ((t.comp.layer, t.comp.src_layer, dcode, KIND_S, *map(int, ix)),
                       vals[r].shape, [g.origin for g in t.grids] + [g.spacing for g in t.grids],
                       vals[r])
        elif isinstance(t, ImageTable):
            for (z, order), s in sorted(t.sets.items()):
                payload = np.concatenate([s.amplitudes, s.offsets])
                yield ((t.comp.layer, t.comp.src_layer, dcode, KIND_IMAGE, order, 0, 0, 0),
                       (s.M, 2, 1), [z, t.z_ref, s.residual, s.scale, 0.0, 0.0], payload)
        else:
            raise TypeError(type(t))


def save_tables(path, tables, cfg_hash: bytes) -> int:
    """Write tables in the SWT1 layout; returns the entry count."""
    if len(cfg_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    entries = list(_entries(tables))
    with open(path, "wb") as f:
        f.write(_HEAD.pack(MAGIC, VERSION, cfg_hash, len(entries)))
        for key, dims, geo, payload in entries:
            f.write(_KEY.pack(*key))
            f.write(_GRID.pack(*dims, *geo))
            f.write(np.ascontiguousarray(payload, dtype="<c16").tobytes())
    return len(entries)


def load_tables(path, expect_hash: bytes | None = None, order_rho: int = 12, order_z: int = 8):
    """Read an SWT1 file back into NearTable / STable / ImageTable objects.
    Returns (config_hash, list of tables).  S tables come back dense; their
    interpolation orders are not part of the layout and are passed here."""
    with open(path, "rb") as f:
        data = f.read()
    magic, ver, h, count = _HEAD.unpack_from(data, 0)
    if magic != MAGIC or ver != VERSION:
        raise ValueError("not an SWT1 table file")
    if expect_hash is not None and h != expect_hash:
        raise ValueError("table file was generated for a different configuration")
    off = _HEAD.size
    near, stabs, imgs = [], {}, {}
    for _ in range(count):
        key = _KEY.unpack_from(data, off)
        off += _KEY.size
        g = _GRID.unpack_from(data, off)
        off += _GRID.size
        dims, geo = g[:3], g[3:]
        n = int(np.prod(dims))
        payload = np.frombuffer(data, dtype="<c16", count=n, offset=off).astype(complex)
        off += 16 * n
        comp = Component(key[0], key[1], _CODE_DIR[key[2]])
        kind = key[3]
        if kind == KIND_NEAR:
            grids = tuple(Grid1D(geo[i], geo[3 + i], dims[i]) for i in range(3))
            near.append(NearTable(comp, grids, payload.reshape(dims)))
        elif kind == KIND_S:
            grids = tuple(Grid1D(geo[i], geo[3 + i], dims[i]) for i in range(3))
            stabs.setdefault(comp, (grids, []))[1].append((key[4:], payload.reshape(dims)))
        elif kind == KIND_IMAGE:
            M = dims[0]
            z, z_ref, res, scale = geo[:4]
            it = imgs.setdefault(comp, ImageTable(comp, z_ref))
            it.sets[(ImageTable.key(z), key[4])] = dcim.DcimImageSet(
                payload[:M].copy(), payload[M:].copy(), z_ref, key[4], comp.layer, comp.src_layer,
                comp.direction, res, z, scale)
        else:
            raise ValueError(f"unknown entry kind {kind}")
    tables = list(near)
    for comp, (grids, items) in stabs.items():
        idx = np.array([it[0] for it in items], dtype=np.int64)
        p = int(idx[:, 0].max())
        vals = np.stack([it[1] for it in items])
        tables.append(STable(comp, p, grids, idx, values=vals, order_rho=order_rho, order_z=order_z))
    tables.extend(imgs.values())
    return h, tables
