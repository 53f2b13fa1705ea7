"""Brute-force references: direct O(N^2) sums, error metrics and a
finite-difference derivative probe."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from itertools import product
from math import comb

import numba as nb
import numpy as np

from .medium import DOWN, UP, LayeredMedium, _as_dir, sigma_tilde_factors, \
    solve_reaction_coeffs_general, target_factor, vertical_wavenumber
from .sommerfeld import wide_contour
from .special import j0_any_nb

# ---------------------------------------------------------------------------
# direct sums


@nb.njit(cache=True)
def _free_pairs(tgt, src, q, k, exclude_self, out):
    for i in range(tgt.shape[0]):
        acc = 0j
        for j in range(src.shape[0]):
            if exclude_self and i == j:
                continue
            dx = tgt[i, 0] - src[j, 0]
            dy = tgt[i, 1] - src[j, 1]
            dz = tgt[i, 2] - src[j, 2]
            R = np.sqrt(dx * dx + dy * dy + dz * dz)
            acc += q[j] * (-1j) * np.exp(1j * k * R) / (k * R)
        out[i] = acc


@nb.njit(cache=False)
def _layered_pairs(tx, ty, sx, sy, kr, A, B, out):
    # out_i = sum_j sum_n J0(kr_n rho_ij) sum_d A[i, n, d] B[j, n, d]
    nn = kr.shape[0]
    nd = A.shape[2]
    for i in range(tx.shape[0]):
        acc = 0j
        for j in range(sx.shape[0]):
            dx = tx[i] - sx[j]
            dy = ty[i] - sy[j]
            rho = np.sqrt(dx * dx + dy * dy)
            for n in range(nn):
                c = 0j
                for d in range(nd):
                    c += A[i, n, d] * B[j, n, d]
                acc += j0_any_nb(kr[n] * rho) * c
        out[i] = acc


def free_direct_sum(targets, sources, charges, k: float, exclude_self: bool = False) -> np.ndarray:
    """sum_j Q_j h0(k |r_i - r_j|), skipping j == i when `exclude_self`."""
    tgt = np.ascontiguousarray(np.atleast_2d(targets), dtype=float)
    src = np.ascontiguousarray(np.atleast_2d(sources), dtype=float)
    if exclude_self and tgt.shape != src.shape:
        raise ValueError("exclude_self requires aliased target/source arrays")
    out = np.empty(len(tgt), complex)
    _free_pairs(tgt, src, np.asarray(charges, complex), float(k), exclude_self, out)
    return out


def _pair_gap(medium, layer, src_layer, zt, zs, direction):
    zt_gap = (np.min(zt) - medium.bottom(layer)) if direction == UP else (medium.top(layer) - np.max(zt))
    c = []
    if src_layer < medium.L:
        c.append(np.min(zs) - medium.bottom(src_layer))
    if src_layer > 0:
        c.append(medium.top(src_layer) - np.max(zs))
    return float(zt_gap + min(c))


def oracle_contour(medium: LayeredMedium, gap: float, rho_max: float, tol: float = 1e-12):
    """Contour used by the direct sums (see `wide_contour`)."""
    return wide_contour(medium, gap, rho_max, tol)


def layered_direct_sum(targets, sources, charges, medium: LayeredMedium, layer: int,
                       src_layer: int, directions=(UP, DOWN), tol: float = 1e-12,
                       refine: int = 0) -> np.ndarray:
    """sum_j Q_j sum_dir u^dir_{l l'}(r_i, r_j) by per-pair quadrature.

    The contour returns to the real axis past max k so most Bessel calls
    are real; one pass shares J0 across the requested directions."""
    tgt = np.atleast_2d(np.asarray(targets, float))
    src = np.atleast_2d(np.asarray(sources, float))
    q = np.asarray(charges, complex)
    medium.check_interior(layer, tgt[:, 2])
    medium.check_interior(src_layer, src[:, 2])
    dirs = [_as_dir(d) for d in directions if medium.admissible(layer, _as_dir(d))]
    if not dirs or len(tgt) == 0 or len(src) == 0:
        return np.zeros(len(tgt), complex)
    gap = min(_pair_gap(medium, layer, src_layer, tgt[:, 2], src[:, 2], d) for d in dirs)
    lo = np.minimum(tgt[:, :2].min(0), src[:, :2].min(0))
    hi = np.maximum(tgt[:, :2].max(0), src[:, :2].max(0))
    rho_max = float(np.linalg.norm(hi - lo))
    contour = oracle_contour(medium, gap, rho_max, tol)
    kr, w = contour.nodes(refine)
    coeffs = solve_reaction_coeffs_general(medium, layer, src_layer, kr)
    kz = vertical_wavenumber(medium, layer, kr)
    F = w * kr / (medium.k(layer) * kz)
    A = np.empty((len(tgt), len(kr), len(dirs)), complex)
    B = np.empty((len(src), len(kr), len(dirs)), complex)
    fu, fd = sigma_tilde_factors(medium, src_layer, kr[None, :], src[:, 2:3], 0)
    for i, d in enumerate(dirs):
        A[:, :, i] = F[None, :] * target_factor(medium, layer, kr[None, :], tgt[:, 2:3], d)
        cu, cd = coeffs.pair(d)
        B[:, :, i] = q[:, None] * (fu * cu + fd * cd)
    out = np.empty(len(tgt), complex)
    _layered_pairs(np.ascontiguousarray(tgt[:, 0]), np.ascontiguousarray(tgt[:, 1]),
                   np.ascontiguousarray(src[:, 0]), np.ascontiguousarray(src[:, 1]),
                   kr.astype(complex), A, B, out)
    return out


def direct_sum(targets, sources, charges, kernel: str = "free", medium: LayeredMedium | None = None,
               layer: int = 0, src_layer: int = 0, k: float | None = None,
               exclude_self: bool = False, tol: float = 1e-12) -> np.ndarray:
    """Reference pairwise sums.

    kernel: "free" (needs k or medium+layer), "up", "down" or "reaction"
    (up + down) for the layered components of target layer `layer` due to
    sources in `src_layer`.
    """
    if kernel == "free":
        if k is None:
            if medium is None:
                raise ValueError("free kernel needs k or a medium")
            k = medium.k(layer)
        return free_direct_sum(targets, sources, charges, k, exclude_self)
    if medium is None:
        raise ValueError("layered kernels need a medium")
    dirs = {"up": (UP,), "down": (DOWN,), "reaction": (UP, DOWN)}[kernel]
    return layered_direct_sum(targets, sources, charges, medium, layer, src_layer, dirs, tol)


def total_direct(blocks, charges, medium: LayeredMedium, tol: float = 1e-12) -> list:
    """Phi_l for every layer: free part (j != i) plus all reaction parts.

    `blocks[l]` holds the particles of layer l (possibly empty)."""
    out = []
    for l, tgt in enumerate(blocks):
        if len(tgt) == 0:
            out.append(np.zeros(0, complex))
            continue
        phi = free_direct_sum(tgt, tgt, charges[l], medium.k(l), exclude_self=True)
        for lp, src in enumerate(blocks):
            if len(src):
                phi = phi + layered_direct_sum(tgt, src, charges[lp], medium, l, lp, (UP, DOWN), tol)
        out.append(phi)
    return out


# ---------------------------------------------------------------------------
# error metrics


@dataclass
class ErrorReport:
    err2: float
    errmax: float
    n: int
    component: str = ""
    time_s: float = 0.0

    def __post_init__(self):
        if self.err2 < 0 or self.errmax < 0:
            raise ValueError("errors must be nonnegative")


def error_metrics(exact, approx, component: str = "", floor: float = 1e-14,
                  time_s: float = 0.0) -> ErrorReport:
    """Relative L2 error and max pointwise relative error.  Entries with
    |exact| below floor * max|exact| are left out of the max (with a warning)."""
    ex = np.asarray(exact, complex).ravel()
    ap = np.asarray(approx, complex).ravel()
    if ex.shape != ap.shape:
        raise ValueError("length mismatch")
    mag = np.abs(ex)
    if not np.any(mag > 0):
        raise ValueError("exact values are all zero")
    diff = np.abs(ex - ap)
    err2 = float(np.sqrt(np.sum(diff ** 2) / np.sum(mag ** 2)))
    keep = mag >= floor * mag.max()
    if not np.all(keep):
        warnings.warn(f"{np.count_nonzero(~keep)} entries below the relative floor skipped in errmax")
    errmax = float(np.max(diff[keep] / mag[keep]))
    return ErrorReport(err2, errmax, len(ex), component, time_s)


# ---------------------------------------------------------------------------
# finite differences


def _fd_mixed(f, x, k, h):
    # product of 1-D central stencils, second-order accurate
    stencils = []
    for ki in k:
        stencils.append([((-1) ** j * comb(ki, j), (ki / 2.0 - j)) for j in range(ki + 1)])
    acc = 0j
    for combo in product(*stencils):
        c = 1.0
        shift = np.zeros(3)
        for d, (cj, sj) in enumerate(combo):
            c *= cj
            shift[d] = sj * h
        acc += c * f(x + shift)
    return acc / h ** sum(k)


def _sym_expand(n, m, s):
    """(d_x - i d_y)^s (d_x + i d_y)^{m-s} d_z^{n-m} as {(i, j, c): coef}."""
    a, b, c = s, m - s, n - m
    out = {}
    for u in range(a + 1):
        for v in range(b + 1):
            key = (u + v, a + b - u - v, c)
            out[key] = out.get(key, 0) + comb(a, u) * comb(b, v) * (-1j) ** (a - u) * (1j) ** (b - v)
    return out


def finite_difference(f, point, label, h: float | None = None, scale: float = 1.0,
                      kind: str = "multi", levels: int = 4) -> complex:
    """Derivative of f at point by central differences with a Richardson
    tableau over the steps h, h/2, ..., h/2^(levels-1).

    label: multi-index (k1, k2, k3) with kind="multi", or (n, m, s) with
    kind="sym" for (d_x - i d_y)^s (d_x + i d_y)^{m-s} d_z^{n-m}.
    Central stencils have even error expansions in h, so each tableau
    column removes one more even power.  Default h = 0.1 * scale, large
    enough that rounding at the finest level stays near eps / (h/8)^|k|.
    Warns when the extrapolated value is more than 10% away from the
    previous tableau column or from the raw finest-step difference."""
    x = np.asarray(point, float)
    if kind == "sym":
        terms = _sym_expand(*label)
    else:
        terms = {tuple(int(v) for v in label): 1.0}
    if h is None:
        h = 0.1 * scale
    T = [sum(c * _fd_mixed(f, x, t, h / 2 ** j) for t, c in terms.items()) for j in range(levels)]
    raw = prev = T[-1]
    for col in range(1, levels):
        prev = T[-1]
        fac = 4.0 ** col
        T = [(fac * T[j + 1] - T[j]) / (fac - 1) for j in range(len(T) - 1)]
    order = max(sum(t) for t in terms)
    noise = 1e-13 * abs(f(x)) / (h / 2 ** (levels - 1)) ** order  # rounding level of the stencil
    tol = max(0.1 * abs(T[0]), noise, 1e-300)
    if abs(T[0] - prev) > tol or abs(T[0] - raw) > tol:
        warnings.warn("finite-difference levels disagree by more than 10%; adjust h")
    return complex(T[0])


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0
