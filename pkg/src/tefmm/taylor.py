"""Taylor-expansion machinery for the two FMM variants.

Nonsymmetric variant: coefficients are indexed by multi-indices
k = (k1, k2, k3), |k| <= p, stored in graded lexicographic order.  Source
moments are alpha_k = sum q (r - c)^k, target expansions are
sum beta_k (r - c)^k.

Symmetric variant: coefficients are indexed by (n, m, s), 0 <= s <= m <= n <= p,
packed by n, then m, then s.  The monomial for (n, m, s) is
(x + iy)^s (x - iy)^{m-s} z^{n-m}; with w = x + iy and wb = x - iy this is
w^a wb^b z^c for the exponent triple (a, b, c) = (s, m - s, n - m).  The
derivative operator paired with it is (d_x - i d_y)^a (d_x + i d_y)^b d_z^c
= 2^{a+b} d_w^a d_wb^b d_z^c, so all re-centering and translation algebra is
shared with the nonsymmetric variant once coordinates are mapped to
(w, wb, z).  The two variants differ in how derivative tensors are produced
(Cartesian recurrence versus the spherical ladder) and in the layered M2L.

Optional conditioning scale: a coefficient set can carry a length `scale`
h, in which case moments are stored as sum q ((r - c)/h)^k and local
coefficients as beta_k h^{|k|}.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial, sqrt, pi

import numba as nb
import numpy as np

from .special import spherical_hankel_all, sph_harm_all

# ---------------------------------------------------------------------------
# index tables


def n_coeffs(p: int) -> int:
    return (p + 1) * (p + 2) * (p + 3) // 6


@lru_cache(maxsize=None)
def multi_indices(p: int) -> np.ndarray:
    """All (k1, k2, k3) with |k| <= p, graded lexicographic order."""
    out = []
    for t in range(p + 1):
        for a in range(t, -1, -1):
            for b in range(t - a, -1, -1):
                out.append((a, b, t - a - b))
    arr = np.array(out, dtype=np.int64).reshape(-1, 3)
    arr.setflags(write=False)
    return arr


def mi_position(k) -> int:
    """Position of multi-index k in the graded lexicographic order."""
    k1, k2, k3 = (int(v) for v in k)
    t = k1 + k2 + k3
    base = t * (t + 1) * (t + 2) // 6
    # within degree t: a runs from t down, b from t-a down
    off = 0
    for a in range(t, k1, -1):
        off += t - a + 1
    off += (t - k1) - k2
    return base + off


@lru_cache(maxsize=None)
def _mi_lookup(p: int) -> np.ndarray:
    """Dense lookup pos[k1, k2, k3] (-1 where |k| > p)."""
    idx = multi_indices(p)
    pos = -np.ones((p + 1, p + 1, p + 1), dtype=np.int64)
    for i, (a, b, c) in enumerate(idx):
        pos[a, b, c] = i
    pos.setflags(write=False)
    return pos


@lru_cache(maxsize=None)
def sym_indices(p: int) -> np.ndarray:
    """All (n, m, s) with 0 <= s <= m <= n <= p, packed by n, m, s."""
    out = [(n, m, s) for n in range(p + 1) for m in range(n + 1) for s in range(m + 1)]
    arr = np.array(out, dtype=np.int64).reshape(-1, 3)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def sym_to_mi_perm(p: int) -> np.ndarray:
    """perm[i] = graded-lex position of the exponent triple of sym index i."""
    pos = _mi_lookup(p)
    perm = np.array([pos[s, m - s, n - m] for n, m, s in sym_indices(p)], dtype=np.int64)
    perm.setflags(write=False)
    return perm


@lru_cache(maxsize=None)
def _recurrence_tables(P: int):
    idx = multi_indices(P)
    pos = _mi_lookup(P)
    n = len(idx)
    m1 = -np.ones((n, 3), dtype=np.int64)
    m2 = -np.ones((n, 3), dtype=np.int64)
    for j, k in enumerate(idx):
        for i in range(3):
            if k[i] >= 1:
                kk = k.copy()
                kk[i] -= 1
                m1[j, i] = pos[tuple(kk)]
            if k[i] >= 2:
                kk = k.copy()
                kk[i] -= 2
                m2[j, i] = pos[tuple(kk)]
    order = idx.sum(axis=1)
    return m1, m2, order


# ---------------------------------------------------------------------------
# nonsymmetric derivative recurrence


@nb.njit(cache=True)
def _nonsym_rec(kap, X, m1, m2, order, out):
    # a^k = D^k h0(kap R)/k!,  b^k = D^k psi/k!  with psi = R h0(kap R)
    n = out.shape[1]
    b = np.empty(n, dtype=np.complex128)
    ik = 1j * kap
    for p_ in range(X.shape[0]):
        x0 = X[p_, 0]
        x1 = X[p_, 1]
        x2 = X[p_, 2]
        R2 = x0 * x0 + x1 * x1 + x2 * x2
        R = np.sqrt(R2)
        if R.real < 0:
            R = -R
        e = np.exp(ik * R)
        out[p_, 0] = -1j * e / (kap * R)
        b[0] = -1j * e / kap
        for j in range(1, n):
            t = order[j]
            sa = 0j
            sa2 = 0j
            sb = 0j
            sb2 = 0j
            for i in range(3):
                q = m1[j, i]
                if q >= 0:
                    xi = x0 if i == 0 else (x1 if i == 1 else x2)
                    sa += xi * out[p_, q]
                    sb += xi * b[q]
                q = m2[j, i]
                if q >= 0:
                    sa2 += out[p_, q]
                    sb2 += b[q]
            b[j] = ik * (sa + sa2) / t
            out[p_, j] = (ik * (sb + sb2) - (2 * t - 1) * sa - (t - 1) * sa2) / (t * R2)


def nonsym_derivs(k: float, offset, p_total: int) -> np.ndarray:
    """D^k h0(k|x|)/k! for |k| <= p_total at offset x (complex z allowed).

    `offset` may be (3,) or (n, 3); output has shape (n_coeffs,) or
    (n, n_coeffs).  The square root uses the branch with Re R >= 0.
    """
    X = np.asarray(offset, dtype=np.complex128)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    R2 = np.sum(X * X, axis=1)
    if np.any(np.abs(R2) == 0):
        raise ValueError("derivative tensor undefined at zero offset")
    m1, m2, order = _recurrence_tables(p_total)
    out = np.empty((X.shape[0], len(order)), dtype=np.complex128)
    _nonsym_rec(float(k), np.ascontiguousarray(X), m1, m2, order, out)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# spherical ladder for the symmetric variant


def _ladder_coeffs(n, m):
    """Coefficients of D^+, D^-, D^0 acting on Omega_n^m, consistent with
    `special.sph_harm_all` (signs verified against finite differences)."""
    d1 = (2 * n + 1) * (2 * n + 3)
    d0 = 4 * n * n - 1
    Ap = sqrt((n + m + 2) * (n + m + 1) / d1)
    Bp = sqrt(max((n - m) * (n - m - 1), 0) / d0) if n > 0 else 0.0
    Am = -sqrt((n - m + 2) * (n - m + 1) / d1)
    Bm = -sqrt(max((n + m) * (n + m - 1), 0) / d0) if n > 0 else 0.0
    A0 = sqrt(((n + 1) ** 2 - m * m) / d1)
    B0 = -sqrt(max(n * n - m * m, 0) / d0) if n > 0 else 0.0
    return Ap, Bp, Am, Bm, A0, B0


def apply_ladder(state: dict, op: str) -> dict:
    """Apply one of D^+, D^-, D^0 to a combination {(n, m): coef} of Omega_n^m."""
    out: dict = {}
    for (n, m), c in state.items():
        Ap, Bp, Am, Bm, A0, B0 = _ladder_coeffs(n, m)
        if op == "+":
            terms = ((n + 1, m + 1, Ap), (n - 1, m + 1, Bp))
        elif op == "-":
            terms = ((n + 1, m - 1, Am), (n - 1, m - 1, Bm))
        else:
            terms = ((n + 1, m, A0), (n - 1, m, B0))
        for nn, mm, a in terms:
            if nn < 0 or abs(mm) > nn or a == 0.0:
                continue
            out[(nn, mm)] = out.get((nn, mm), 0.0) + a * c
    return out


def ladder_power_coeffs(n: int, m: int, s: int, op: str) -> np.ndarray:
    """C_rs, r = 0..s, with (D^op)^s Omega_n^m = sum_r C_rs Omega_{n-s+2r}^{m + shift*s}.

    Two-term recurrence in s with C_00 = 1 (op in "+", "-", "0")."""
    shift = {"+": 1, "-": -1, "0": 0}[op]
    sel = {"+": (0, 1), "-": (2, 3), "0": (4, 5)}[op]
    C = np.array([1.0])
    for t in range(1, s + 1):
        mu_prev = m + shift * (t - 1)
        mu = m + shift * t
        new = np.zeros(t + 1)
        for r in range(t + 1):
            deg = n - t + 2 * r
            if deg < abs(mu):
                continue
            acc = 0.0
            if r >= 1:  # from Omega_{deg-1} via the A coefficient
                nn = deg - 1
                if nn >= abs(mu_prev):
                    acc += _ladder_coeffs(nn, mu_prev)[sel[0]] * C[r - 1]
            if r <= t - 1:  # from Omega_{deg+1} via the B coefficient
                nn = deg + 1
                acc += _ladder_coeffs(nn, mu_prev)[sel[1]] * C[r]
            new[r] = acc
        C = new
    return C


@lru_cache(maxsize=None)
def ladder_table(N: int) -> np.ndarray:
    """C[pos(a,b,c), j]: (D^-)^a (D^+)^b (D^0)^c Omega_0^0 = sum_j C_j Omega_j^{b-a}.

    Built by chaining single-step ladders (operators commute)."""
    idx = multi_indices(N)
    pos = _mi_lookup(N)
    C = np.zeros((len(idx), N + 1))
    zchain = [{(0, 0): 1.0}]
    for c in range(1, N + 1):
        zchain.append(apply_ladder(zchain[-1], "0"))
    for c in range(N + 1):
        st_b = zchain[c]
        for b in range(0, N - c + 1):
            if b > 0:
                st_b = apply_ladder(st_b, "+")
            st_a = st_b
            for a in range(0, N - c - b + 1):
                if a > 0:
                    st_a = apply_ladder(st_a, "-")
                row = pos[a, b, c]
                for (n, m), v in st_a.items():
                    assert m == b - a
                    C[row, n] += v
    C.setflags(write=False)
    return C


def omega_all(k: float, offset, N: int) -> np.ndarray:
    """Omega_n^m(x) = h_n(k|x|) Y_n^m(theta, phi) for n <= N; [n, N+m]."""
    x = np.asarray(offset, dtype=float)
    R = float(np.linalg.norm(x))
    if R == 0:
        raise ValueError("Omega undefined at the origin")
    theta = np.arccos(np.clip(x[2] / R, -1.0, 1.0))
    phi = np.arctan2(x[1], x[0])
    h = spherical_hankel_all(N, k * R)
    Y = sph_harm_all(N, theta, phi)
    return h[:, None] * Y


def sym_derivs(k: float, offset, order: int) -> np.ndarray:
    """D_nm^s h0(k|x|) = (d_x - i d_y)^s (d_x + i d_y)^{m-s} d_z^{n-m} h0 for
    all n <= order, packed by (n, m, s), via the spherical ladder.

    Mixed source/target labels follow from
    D_nm^s Dhat_n'm'^s' = (-1)^{n'} D_{n+n', m+m'}^{s+s'}."""
    x = np.asarray(offset, dtype=float)
    if np.linalg.norm(x) == 0:
        raise ValueError("derivative tensor undefined at zero offset")
    C = ladder_table(order)
    Om = omega_all(k, x, order)
    pos = _mi_lookup(order)
    out = np.empty(len(sym_indices(order)), dtype=complex)
    s4pi = sqrt(4 * pi)
    for i, (n, m, s) in enumerate(sym_indices(order)):
        a, b, c = s, m - s, n - m
        row = C[pos[a, b, c]]
        mu = b - a
        val = np.dot(row, Om[:, order + mu])
        out[i] = (-1) ** c * k ** n * s4pi * val
    return out


def sym_taylor_from_derivs(D: np.ndarray, order: int) -> np.ndarray:
    """Convert packed D_nm^s values into the graded-lex tensor
    d^{(a,b,c)} = D_(a,b,c) / (2^{a+b} a! b! c!) used by the shared algebra."""
    out = np.zeros(n_coeffs(order), dtype=complex)
    perm = sym_to_mi_perm(order)
    for i, (n, m, s) in enumerate(sym_indices(order)):
        a, b, c = s, m - s, n - m
        out[perm[i]] = D[i] / (2.0 ** (a + b) * factorial(a) * factorial(b) * factorial(c))
    return out


def sym_taylor_tensor(k: float, offset, order: int) -> np.ndarray:
    return sym_taylor_from_derivs(sym_derivs(k, offset, order), order)


def sym_tensor_from_cartesian(a_cart: np.ndarray, order: int) -> np.ndarray:
    """Recombine Cartesian Taylor coefficients a^{(i,j,c)} = D^{(i,j,c)}h/(i!j!c!)
    into symmetric ones d^{(a,b,c)} = d_w^a d_wb^b d_z^c h / (a! b! c!), using
    d_w = (d_x - i d_y)/2, d_wb = (d_x + i d_y)/2."""
    idx = multi_indices(order)
    pos = _mi_lookup(order)
    out = np.zeros(len(idx), dtype=complex)
    for r, (a, b, c) in enumerate(idx):
        acc = 0j
        # (d_x - i d_y)^a (d_x + i d_y)^b = sum_{u,v} C(a,u)C(b,v) d_x^{u+v} (-i d_y)^{a-u} (i d_y)^{b-v}
        for u in range(a + 1):
            for v in range(b + 1):
                ix = u + v
                iy = a + b - ix
                coef = comb(a, u) * comb(b, v) * (-1j) ** (a - u) * (1j) ** (b - v)
                acc += coef * factorial(ix) * factorial(iy) * factorial(c) * a_cart[pos[ix, iy, c]]
        out[r] = acc / (2.0 ** (a + b) * factorial(a) * factorial(b) * factorial(c))
    return out


# ---------------------------------------------------------------------------
# coefficient containers


@dataclass
class NonSymCoeffs:
    coeffs: np.ndarray
    center: np.ndarray
    p: int
    role: str = "source"
    scale: float = 1.0


@dataclass
class SymCoeffs:
    coeffs: np.ndarray  # packed by (n, m, s)
    center: np.ndarray
    p: int
    role: str = "source"
    scale: float = 1.0


def sym_coords(x) -> np.ndarray:
    """Map real (x, y, z) to (w, wb, z) = (x+iy, x-iy, z)."""
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=complex)
    out[..., 0] = x[..., 0] + 1j * x[..., 1]
    out[..., 1] = x[..., 0] - 1j * x[..., 1]
    out[..., 2] = x[..., 2]
    return out


@nb.njit(cache=True)
def _monomials(Y, idx, out):
    # out[i, j] = prod_d Y[i, d]^idx[j, d]
    P = 0
    for j in range(idx.shape[0]):
        s = idx[j, 0] + idx[j, 1] + idx[j, 2]
        if s > P:
            P = s
    pw = np.empty((3, P + 1), dtype=out.dtype)
    for i in range(Y.shape[0]):
        for d in range(3):
            pw[d, 0] = 1.0
            for e in range(1, P + 1):
                pw[d, e] = pw[d, e - 1] * Y[i, d]
        for j in range(idx.shape[0]):
            out[i, j] = pw[0, idx[j, 0]] * pw[1, idx[j, 1]] * pw[2, idx[j, 2]]


def monomials(Y, p: int) -> np.ndarray:
    """Matrix of monomials Y^k (rows: points, cols: |k| <= p)."""
    Y = np.ascontiguousarray(np.atleast_2d(Y), dtype=complex)
    out = np.empty((Y.shape[0], n_coeffs(p)), dtype=complex)
    _monomials(Y, multi_indices(p), out)
    return out


def shift_matrix(d, p: int, kind: str) -> np.ndarray:
    """Re-centering matrices in the (possibly complex) coordinates d.

    kind="m2m": alpha_new = M @ alpha_old, new center = old center - d,
                M[k, k'] = C(k, k') d^{k - k'} for k' <= k.
    kind="l2l": beta_new = M @ beta_old, new center = old center + d,
                M[k, k'] = C(k', k) d^{k' - k} for k <= k'.
    """
    idx = multi_indices(p)
    pos = _mi_lookup(p)
    n = len(idx)
    d = np.asarray(d, dtype=complex)
    pw = np.ones((3, p + 1), dtype=complex)
    for e in range(1, p + 1):
        pw[:, e] = pw[:, e - 1] * d
    M = np.zeros((n, n), dtype=complex)
    for i, (a, b, c) in enumerate(idx):
        if kind == "m2m":
            for a2 in range(a + 1):
                for b2 in range(b + 1):
                    for c2 in range(c + 1):
                        M[i, pos[a2, b2, c2]] = (comb(a, a2) * comb(b, b2) * comb(c, c2)
                                                 * pw[0, a - a2] * pw[1, b - b2] * pw[2, c - c2])
        elif kind == "l2l":
            for j, (a2, b2, c2) in enumerate(idx):
                if a2 >= a and b2 >= b and c2 >= c:
                    M[i, j] = (comb(a2, a) * comb(b2, b) * comb(c2, c)
                               * pw[0, a2 - a] * pw[1, b2 - b] * pw[2, c2 - c])
        else:
            raise ValueError(kind)
    return M


@lru_cache(maxsize=None)
def _m2l_structure(p: int):
    """Index and binomial factors of the dense M2L assembly:
    L[k, k'] = sign(k') * binom(k + k', k) * T[k + k']."""
    idx = multi_indices(p)
    pos2 = _mi_lookup(2 * p)
    n = len(idx)
    tgt = np.empty((n, n), dtype=np.int64)
    fac = np.empty((n, n))
    sign_h = np.empty((n, n))  # (-1)^{k1'+k2'}
    sign_all = np.empty((n, n))  # (-1)^{|k'|}
    for i, k in enumerate(idx):
        for j, kp in enumerate(idx):
            s = k + kp
            tgt[i, j] = pos2[s[0], s[1], s[2]]
            fac[i, j] = comb(int(s[0]), int(k[0])) * comb(int(s[1]), int(k[1])) * comb(int(s[2]), int(k[2]))
            sign_h[i, j] = (-1) ** int(kp[0] + kp[1])
            sign_all[i, j] = (-1) ** int(kp.sum())
    return tgt, fac, sign_h, sign_all


def scale_vectors(p: int, h_t: float, h_s: float):
    deg = multi_indices(p).sum(axis=1)
    return h_t ** deg, h_s ** deg


def m2l_matrix_from_tensor(T: np.ndarray, p: int, h_t: float = 1.0, h_s: float = 1.0) -> np.ndarray:
    """Free-space M2L matrix from a Taylor tensor T[nu] = D^nu G / nu! of
    order 2p (evaluated at target center minus source center)."""
    tgt, fac, _, sign_all = _m2l_structure(p)
    L = sign_all * fac * T[tgt]
    if h_t != 1.0 or h_s != 1.0:
        st, ss = scale_vectors(p, h_t, h_s)
        L = st[:, None] * L * ss[None, :]
    return L


# ---------------------------------------------------------------------------
# single-box operations (reference implementations; the engine batches them)


def source_te_nonsym(positions, charges, center, p: int, scale: float = 1.0) -> NonSymCoeffs:
    Y = (np.atleast_2d(positions) - np.asarray(center)) / scale
    M = monomials(Y, p)
    return NonSymCoeffs(np.asarray(charges, dtype=complex) @ M, np.asarray(center, float), p, "source", scale)


def source_te_sym(positions, charges, center, p: int, scale: float = 1.0) -> SymCoeffs:
    Y = sym_coords((np.atleast_2d(positions) - np.asarray(center)) / scale)
    M = monomials(Y, p)
    al = np.asarray(charges, dtype=complex) @ M
    return SymCoeffs(al[sym_to_mi_perm(p)], np.asarray(center, float), p, "source", scale)


def _to_mi(c: SymCoeffs) -> np.ndarray:
    out = np.empty(n_coeffs(c.p), dtype=complex)
    out[sym_to_mi_perm(c.p)] = c.coeffs
    return out


def m2m_nonsym(child: NonSymCoeffs, new_center, new_scale: float | None = None) -> NonSymCoeffs:
    new_scale = child.scale if new_scale is None else new_scale
    d = (np.asarray(child.center) - np.asarray(new_center)) / new_scale
    deg = multi_indices(child.p).sum(axis=1)
    M = shift_matrix(d, child.p, "m2m")
    a = M @ (child.coeffs * (child.scale / new_scale) ** deg)
    return NonSymCoeffs(a, np.asarray(new_center, float), child.p, "source", new_scale)


def m2m_sym(child: SymCoeffs, new_center, new_scale: float | None = None) -> SymCoeffs:
    new_scale = child.scale if new_scale is None else new_scale
    d = sym_coords((np.asarray(child.center) - np.asarray(new_center)) / new_scale)
    deg = multi_indices(child.p).sum(axis=1)
    M = shift_matrix(d, child.p, "m2m")
    a = M @ (_to_mi(child) * (child.scale / new_scale) ** deg)
    return SymCoeffs(a[sym_to_mi_perm(child.p)], np.asarray(new_center, float), child.p, "source", new_scale)


def l2l_nonsym(parent: NonSymCoeffs, child_center, new_scale: float | None = None) -> NonSymCoeffs:
    new_scale = parent.scale if new_scale is None else new_scale
    d = (np.asarray(child_center) - np.asarray(parent.center)) / parent.scale
    deg = multi_indices(parent.p).sum(axis=1)
    M = shift_matrix(d, parent.p, "l2l")
    b = (M @ parent.coeffs) * (new_scale / parent.scale) ** deg
    return NonSymCoeffs(b, np.asarray(child_center, float), parent.p, "target", new_scale)


def l2l_sym(parent: SymCoeffs, child_center, new_scale: float | None = None) -> SymCoeffs:
    new_scale = parent.scale if new_scale is None else new_scale
    d = sym_coords((np.asarray(child_center) - np.asarray(parent.center)) / parent.scale)
    deg = multi_indices(parent.p).sum(axis=1)
    M = shift_matrix(d, parent.p, "l2l")
    b = (M @ _to_mi(parent)) * (new_scale / parent.scale) ** deg
    return SymCoeffs(b[sym_to_mi_perm(parent.p)], np.asarray(child_center, float), parent.p, "target", new_scale)


def m2l_free_nonsym(src: NonSymCoeffs, target_center, k: float, target_scale: float | None = None) -> NonSymCoeffs:
    h_t = src.scale if target_scale is None else target_scale
    X = np.asarray(target_center, float) - src.center
    T = nonsym_derivs(k, X, 2 * src.p)
    L = m2l_matrix_from_tensor(T, src.p, h_t, src.scale)
    return NonSymCoeffs(L @ src.coeffs, np.asarray(target_center, float), src.p, "target", h_t)


def m2l_free_sym(src: SymCoeffs, target_center, k: float, target_scale: float | None = None) -> SymCoeffs:
    h_t = src.scale if target_scale is None else target_scale
    X = np.asarray(target_center, float) - src.center
    T = sym_taylor_tensor(k, X, 2 * src.p)
    L = m2l_matrix_from_tensor(T, src.p, h_t, src.scale)
    b = L @ _to_mi(src)
    return SymCoeffs(b[sym_to_mi_perm(src.p)], np.asarray(target_center, float), src.p, "target", h_t)


def eval_local(coeffs, points) -> np.ndarray:
    """Evaluate a target expansion at points (Horner-free monomial sum)."""
    pts = np.atleast_2d(points)
    Y = (pts - coeffs.center) / coeffs.scale
    if isinstance(coeffs, SymCoeffs):
        Y = sym_coords(Y)
        c = _to_mi(coeffs)
    else:
        c = coeffs.coeffs
    val = monomials(Y, coeffs.p) @ c
    return val if np.ndim(points) > 1 else val[0]


# ---------------------------------------------------------------------------
# layered M2L


@lru_cache(maxsize=None)
def _layered_nonsym_structure(p: int):
    """Per source z-order o: (rows, cols, tensor positions at order 2p-o,
    factors, target k3) of the image-based M2L entries
    L[k, k'] = (-1)^{k1'+k2'} C(k1+k1', k1) C(k2+k2', k2) sgn^{k3} T[k1+k1', k2+k2', k3]."""
    idx = multi_indices(p)
    out = []
    for o in range(p + 1):
        pos = _mi_lookup(2 * p - o)
        rows, cols, tpos, fac, k3 = [], [], [], [], []
        for j, kp in enumerate(idx):
            if kp[2] != o:
                continue
            for i, k in enumerate(idx):
                rows.append(i)
                cols.append(j)
                tpos.append(pos[k[0] + kp[0], k[1] + kp[1], k[2]])
                fac.append((-1) ** int(kp[0] + kp[1]) * comb(int(k[0] + kp[0]), int(k[0]))
                           * comb(int(k[1] + kp[1]), int(k[1])))
                k3.append(int(k[2]))
        out.append(tuple(np.array(v) for v in (rows, cols, tpos, fac, k3)))
    return out


def m2l_layered_nonsym(image_sets, k: float, X0, p: int, sgn: float, h_t: float = 1.0,
                       h_s: float = 1.0) -> np.ndarray:
    """Image-based layered M2L matrices for a batch of center offsets.

    image_sets[o] is the DCIM set for source z-derivative order o at the
    source center height; X0 rows are (x_t - x_s, y_t - y_s,
    sgn (z_t - z_ref)).  Returns (n, n_coeffs, n_coeffs)."""
    X0 = np.atleast_2d(np.asarray(X0, complex))
    n = len(X0)
    nc = n_coeffs(p)
    L = np.zeros((n, nc, nc), complex)
    for o, (rows, cols, tpos, fac, k3) in enumerate(_layered_nonsym_structure(p)):
        im = image_sets[o]
        if im.M == 0:
            continue
        X = np.repeat(X0, im.M, axis=0)
        X[:, 2] -= np.tile(im.offsets, n)
        a = nonsym_derivs(k, X, 2 * p - o).reshape(n, im.M, -1)
        T = np.einsum("j,njt->nt", im.amplitudes, a)
        L[:, rows, cols] = T[:, tpos] * (fac * sgn ** k3)[None, :]
    if h_t != 1.0 or h_s != 1.0:
        st, ss = scale_vectors(p, h_t, h_s)
        L *= st[None, :, None] * ss[None, None, :]
    return L


@lru_cache(maxsize=None)
def _layered_sym_structure(p: int):
    """(N, N', M, M', nu, factor) for every (target, source) pair of
    exponent triples (a, b, c) = (s, m - s, n - m), in multi-index order:
    entry = factor e^{i nu phi} S_{N N'}^{M M'}, nu = M - 2M'."""
    idx = multi_indices(p)
    n = len(idx)
    N = np.empty((n, n), np.int64)
    Np, M, Mp = N.copy(), N.copy(), N.copy()
    fac = np.empty((n, n))
    for i, (a, b, c) in enumerate(idx):
        for j, (a2, b2, c2) in enumerate(idx):
            m, s, m2, s2 = a + b, a, a2 + b2, a2
            N[i, j], Np[i, j] = c, c2
            M[i, j], Mp[i, j] = m + m2, s + s2
            fac[i, j] = ((-1) ** int(m + s + s2) * factorial(int(m + m2))
                         / (factorial(int(a)) * factorial(int(b)) * factorial(int(a2)) * factorial(int(b2))))
    return N, Np, M, Mp, M - 2 * Mp, fac


def m2l_layered_sym(table, rho, phi, z_t: float, z_s: float, p: int, h_t: float = 1.0,
                    h_s: float = 1.0) -> np.ndarray:
    """S-table layered M2L matrices (multi-index order of the (w, wb, z)
    exponents) for horizontal offsets (rho_n, phi_n) at heights z_t, z_s."""
    N, Np, M, Mp, nu, fac = _layered_sym_structure(p)
    rows = np.empty(N.shape, np.int64)
    sign = np.empty(N.shape)
    for key in set(zip(N.ravel(), Np.ravel(), M.ravel(), Mp.ravel())):
        r, sg = table.position(*(int(v) for v in key))
        m = (N == key[0]) & (Np == key[1]) & (M == key[2]) & (Mp == key[3])
        rows[m], sign[m] = r, sg
    S = table.batch(rho, z_t, z_s)  # (n, n_idx)
    ph = np.exp(1j * np.asarray(phi, float)[:, None, None] * nu[None])
    L = S[:, rows] * (sign * fac)[None] * ph
    if h_t != 1.0 or h_s != 1.0:
        st, ss = scale_vectors(p, h_t, h_s)
        L *= st[None, :, None] * ss[None, None, :]
    return L
