"""Two-level discrete complex image approximation of layered kernels.

For the up-going component in target layer l the spectral density is
rewritten as

    Theta(k_lz) = e^{i k_lz (z_min - d_l)} (1/k3'!) d^{k3'} sigma~^up / dz'^{k3'}
                ~ sum_j A_j e^{-i k_lz Z_j},

after which the Sommerfeld identity turns each exponential into a spherical
Hankel function at the complex distance
R_j = sqrt(rho^2 + (z - z_min - Z_j)^2).  The down-going component uses
z_max and z_max - z in place of z_min and z - z_min.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import comb

import numpy as np

from .medium import (DOWN, UP, LayeredMedium, _as_dir, sigma_tilde_factors,
                     solve_reaction_coeffs_general)
from .taylor import _mi_lookup, multi_indices, n_coeffs, nonsym_derivs


class FitError(RuntimeError):
    pass


# default margin added to max(k) in the level split T0
T0_MARGIN = 0.8


@dataclass(frozen=True)
class DcimPath:
    """Two-level sampling path in the k_lz plane.

    level 1: k_lz = i k (T0 + t),        t in [0, T1]
    level 2: k_lz = k (1 - t/T0 + i t),  t in [0, T0]
    """
    T0: float
    T1: float = 10.0
    samples_per_level: int = 101

    def __post_init__(self):
        if not (self.T0 > 0 and self.T1 > 0):
            raise ValueError("T0 and T1 must be positive")
        if self.samples_per_level < 4:
            raise ValueError("need at least 4 samples per level")

    @classmethod
    def default(cls, medium: LayeredMedium, layer: int, margin: float = T0_MARGIN, **kw):
        kl = medium.k(layer)
        T0 = np.sqrt(max(((max(medium.wavenumbers) + margin) / kl) ** 2 - 1.0, 1e-2))
        return cls(T0=float(T0), **kw)

    def t_grid(self, level: int, density: int = 1):
        n = (self.samples_per_level - 1) * density + 1
        return np.linspace(0.0, self.T1 if level == 1 else self.T0, n)

    def kz(self, level: int, k: float, t):
        t = np.asarray(t, dtype=float)
        if level == 1:
            return 1j * k * (self.T0 + t)
        return k * (1.0 - t / self.T0 + 1j * t)


@dataclass
class DcimImageSet:
    amplitudes: np.ndarray
    offsets: np.ndarray
    z_ref: float
    order: int
    layer: int
    src_layer: int
    direction: str
    residual: float
    z_src: float = 0.0
    scale: float = 1.0  # max |Theta| over the samples

    @property
    def M(self) -> int:
        return len(self.amplitudes)


# ---------------------------------------------------------------------------
# sampling


def _theta_from_kz(medium, layer, src_layer, order, z_src, z_ref, direction, kz):
    kl = medium.k(layer)
    # principal root keeps k_rho in the fourth quadrant along both levels
    k_rho = np.sqrt(kl * kl - kz * kz + 0j)
    coeffs = solve_reaction_coeffs_general(medium, layer, src_layer, k_rho)
    cu, cd = coeffs.pair(direction)
    fu, fd = sigma_tilde_factors(medium, src_layer, k_rho, z_src, order)
    sig = fu * cu + fd * cd
    if direction == UP:
        return np.exp(1j * kz * (z_ref - medium.bottom(layer))) * sig
    return np.exp(-1j * kz * (z_ref - medium.top(layer))) * sig


def sample_theta(medium: LayeredMedium, layer: int, src_layer: int, order: int, z_src: float,
                 z_ref: float, path: DcimPath, direction: str = UP, density: int = 1):
    """Samples of Theta along level 1 then level 2.

    Returns [(t1, Theta1), (t2, Theta2)].  `z_ref` is z_min for the up-going
    component and z_max for the down-going one."""
    direction = _as_dir(direction)
    if not medium.admissible(layer, direction):
        raise ValueError(f"no {direction}-going component in layer {layer}")
    medium.check_interior(src_layer, z_src)
    if direction == UP and z_ref < medium.bottom(layer):
        raise ValueError("z_min lies below the layer")
    if direction == DOWN and z_ref > medium.top(layer):
        raise ValueError("z_max lies above the layer")
    kl = medium.k(layer)
    out = []
    for level in (1, 2):
        t = path.t_grid(level, density)
        out.append((t, _theta_from_kz(medium, layer, src_layer, order, z_src, z_ref,
                                      direction, path.kz(level, kl, t))))
    return out


# ---------------------------------------------------------------------------
# generalized pencil of functions


def gpof_fit(samples, step: float, tol: float = 1e-10, max_terms: int | None = None,
             relative: bool = True, strict: bool = True):
    """Fit f(t_k) = sum_j c_j exp(s_j t_k), t_k = k*step.

    The model order is the smallest M (among singular values above the
    rounding floor) whose max residual is <= tol (times max|f| when
    `relative`).  Returns (c, s, residual); when the tolerance is not met,
    raises FitError, or with strict=False returns the best model found."""
    y = np.asarray(samples, dtype=complex)
    N = len(y)
    if max_terms is None:
        max_terms = max(N // 4, 1)
    if N < 2 * max_terms:
        raise ValueError("need at least 2*max_terms samples")
    ymax = float(np.max(np.abs(y))) if N else 0.0
    if ymax == 0.0:
        return np.zeros(0, complex), np.zeros(0, complex), 0.0
    thr = tol * ymax if relative else tol
    Lp = N // 2
    Y = np.lib.stride_tricks.sliding_window_view(y, Lp + 1)  # (N-Lp, Lp+1)
    _, sv, Vh = np.linalg.svd(Y, full_matrices=False)
    floor = sv[0] * N * np.finfo(float).eps
    best = None
    t = np.arange(N) * step
    for M in range(1, min(max_terms, len(sv)) + 1):
        if sv[M - 1] < floor:
            break
        V = Vh[:M].T  # (Lp+1, M); rows of Y lie in span(conj V)
        V1, V2 = V[:-1], V[1:]
        z = np.linalg.eigvals(np.linalg.pinv(V1) @ V2)
        z = z[np.abs(z) > 1e-300]
        s = np.log(z) / step
        E = np.exp(np.outer(t, s))
        c, *_ = np.linalg.lstsq(E, y, rcond=None)
        res = float(np.max(np.abs(E @ c - y)))
        if best is None or res < best[2]:
            best = (c, s, res)
        if res <= thr:
            return c, s, res
    if not strict and best is not None:
        return best
    raise FitError(f"GPOF residual {best[2] if best else np.inf:.3e} exceeds {thr:.3e} "
                   f"with {max_terms} terms")


def _to_images(c, s, level, k, path: DcimPath):
    if level == 1:
        Z = s / k
        A = c * np.exp(-path.T0 * s)
    else:
        Z = s / (k * (1.0 + 1j / path.T0))
        A = c * np.exp(1j * k * Z)
    return A, Z


def image_model(A, Z, kz):
    """sum_j A_j exp(-i k_lz Z_j) at the given k_lz values."""
    kz = np.asarray(kz)
    if len(A) == 0:
        return np.zeros(kz.shape, complex)
    return np.exp(-1j * np.multiply.outer(kz, Z)) @ A


class FitWarning(UserWarning):
    pass


def _candidate_models(th1, th2, t1, t2, kl, path, scale, mt, fit_tol, level1_tol):
    c1, s1, _ = gpof_fit(th1, t1[1] - t1[0], max(level1_tol, fit_tol) * scale, mt,
                         relative=False, strict=False)
    A1, Z1 = _to_images(c1, s1, 1, kl, path)
    rem = th2 - image_model(A1, Z1, path.kz(2, kl, t2))
    c2, s2, _ = gpof_fit(rem, t2[1] - t2[0], fit_tol * scale, mt, relative=False, strict=False)
    A2, Z2 = _to_images(c2, s2, 2, kl, path)
    return np.concatenate([A1, A2]), np.concatenate([Z1, Z2])


def _refit_bounded(Z, kz, y, growth):
    """Drop exponents that grow past `growth` anywhere on the path and
    refit all amplitudes jointly on both levels."""
    E = np.exp(-1j * np.multiply.outer(kz, Z))
    g = np.abs(E).max(axis=0)
    keep = np.isfinite(g) & (g <= growth)
    if not np.any(keep):
        return None
    a, *_ = np.linalg.lstsq(E[:, keep] / g[keep], y, rcond=None)
    return a / g[keep], Z[keep]


def two_level_dcim(medium: LayeredMedium, layer: int, src_layer: int, order: int, z_src: float,
                   z_ref: float, path: DcimPath | None = None, tol: float = 1e-6,
                   direction: str = UP, max_terms: int | None = None,
                   strict: bool = False, fit_tol: float = 1e-12,
                   level1_tols=(1e-7, 1e-5, 1e-9), growth: float = 1e2) -> DcimImageSet:
    """Fit level 1, subtract it from the level-2 samples, fit the remainder.

    Tolerances are relative to max|Theta| over the samples.  The level-2
    fit targets `fit_tol`.  The level-1 fit is looser: tight outer fits pick
    up fast exponents whose continuation onto level 2 is large and ill
    conditioned.  Each level-1 tolerance in `level1_tols` gives one
    candidate, plus a variant with path-growing exponents dropped and the
    amplitudes refit on both levels.  The candidate with the smallest
    deviation on a twice denser grid wins.  A deviation above `tol` raises
    FitError when `strict`, else emits FitWarning.
    """
    direction = _as_dir(direction)
    if path is None:
        path = DcimPath.default(medium, layer)
    kl = medium.k(layer)
    (t1, th1), (t2, th2) = sample_theta(medium, layer, src_layer, order, z_src, z_ref, path, direction)
    scale = float(max(np.max(np.abs(th1)), np.max(np.abs(th2))))
    mt = max_terms if max_terms is not None else len(t1) // 4
    if scale == 0.0:
        return DcimImageSet(np.zeros(0, complex), np.zeros(0, complex), z_ref, order, layer,
                            src_layer, direction, 0.0, z_src, 0.0)
    dense = sample_theta(medium, layer, src_layer, order, z_src, z_ref, path, direction, 2)
    kz_d = np.concatenate([path.kz(lv, kl, t) for lv, (t, _) in zip((1, 2), dense)])
    y_d = np.concatenate([th for _, th in dense])
    best = None
    with np.errstate(all="ignore"):
        for l1 in level1_tols:
            A, Z = _candidate_models(th1, th2, t1, t2, kl, path, scale, mt, fit_tol, l1)
            cands = [(A, Z)]
            bounded = _refit_bounded(Z, kz_d, y_d, growth)
            if bounded is not None:
                cands.append(bounded)
            for A, Z in cands:
                dev = np.max(np.abs(image_model(A, Z, kz_d) - y_d))
                if np.isfinite(dev) and (best is None or dev < best[0]):
                    best = (float(dev), A, Z)
    if best is None:
        raise FitError("no finite image model")
    res, A, Z = best
    if res > tol * scale:
        msg = (f"image fit deviation {res / scale:.3e} exceeds tolerance {tol:.1e} "
               f"(layer {layer}, source layer {src_layer}, {direction}, order {order})")
        if strict:
            raise FitError(msg)
        warnings.warn(msg, FitWarning, stacklevel=2)
    return DcimImageSet(A, Z, z_ref, order, layer, src_layer, direction, res / scale, z_src, scale)


def _max_deviation(medium, layer, src_layer, order, z_src, z_ref, path, direction, A, Z, density):
    kl = medium.k(layer)
    dev = 0.0
    for level, (t, th) in zip((1, 2), sample_theta(medium, layer, src_layer, order, z_src, z_ref,
                                                    path, direction, density)):
        dev = max(dev, float(np.max(np.abs(image_model(A, Z, path.kz(level, kl, t)) - th))))
    return dev


# ---------------------------------------------------------------------------
# physical-domain evaluation


def image_offsets(images: DcimImageSet, r, rp) -> np.ndarray:
    """Complex offsets X_j = (x - x', y - y', sgn (z - z_ref) - Z_j)."""
    r = np.asarray(r, float)
    rp = np.asarray(rp, float)
    sgn = 1.0 if images.direction == UP else -1.0
    X = np.empty((images.M, 3), complex)
    X[:, 0] = r[0] - rp[0]
    X[:, 1] = r[1] - rp[1]
    X[:, 2] = sgn * (r[2] - images.z_ref) - images.offsets
    return X


def eval_images(images: DcimImageSet, k: float, r, rp) -> complex:
    """sum_j A_j h0(k R_j), R_j with nonnegative real part."""
    if images.M == 0:
        return 0j
    X = image_offsets(images, r, rp)
    R = np.sqrt(np.sum(X * X, axis=1))
    R = np.where(R.real < 0, -R, R)
    return complex(np.sum(images.amplitudes * (-1j) * np.exp(1j * k * R) / (k * R)))


def image_derivative_sum(images: DcimImageSet, k: float, X0, p_total: int) -> np.ndarray:
    """sum_j A_j a^nu(X0 - (0, 0, Z_j)) for |nu| <= p_total, where X0 is
    the offset for Z = 0.  Returns the graded-lex tensor."""
    if images.M == 0:
        return np.zeros(n_coeffs(p_total), complex)
    X = np.empty((images.M, 3), complex)
    X[:, 0] = X0[0]
    X[:, 1] = X0[1]
    X[:, 2] = X0[2] - images.offsets
    a = nonsym_derivs(k, X, p_total)
    return images.amplitudes @ a


def eval_image_derivatives(images: DcimImageSet, k: float, r, rp, p_total: int) -> dict:
    """Scaled mixed derivatives D_r^k D_r'^k' u / (k! k'!) of the image sum.

    Horizontal source derivatives use D_x' = -D_x; the source z-derivative
    order is fixed by the image set (images.order).  Returns
    {(k1, k2, k3, k1', k2'): value} for k1+k2+k3+k1'+k2' + order <= p_total.
    """
    sgn = 1.0 if images.direction == UP else -1.0
    p_eff = p_total - images.order
    if p_eff < 0:
        raise ValueError("p_total below the image-set derivative order")
    r = np.asarray(r, float)
    rp = np.asarray(rp, float)
    X0 = np.array([r[0] - rp[0], r[1] - rp[1], sgn * (r[2] - images.z_ref)], complex)
    T = image_derivative_sum(images, k, X0, p_eff)
    pos = _mi_lookup(p_eff)
    out = {}
    for a, b, c in multi_indices(p_eff):
        for a2 in range(p_eff - a - b - c + 1):
            for b2 in range(p_eff - a - b - c - a2 + 1):
                v = T[pos[a + a2, b + b2, c]] * comb(a + a2, a) * comb(b + b2, b)
                out[(int(a), int(b), int(c), a2, b2)] = (-1) ** (a2 + b2) * sgn ** c * v
    return out


def dcim_budget(n_center_z: int, p: int) -> int:
    """Number of image sets per (layer pair, direction): distinct source
    box-center heights times the p+1 source z-derivative orders."""
    return n_center_z * (p + 1)


def eval_image_horizontal(images: DcimImageSet, k: float, r, rp, k3: int, s: int) -> complex:
    """(d_x + i d_y)^s d_z^k3 / (s! k3!) of the image sum (source z-order
    fixed by the set), from sum_j i^{s-j} a^{(j, s-j, k3)}."""
    D = eval_image_derivatives(images, k, r, rp, k3 + s + images.order)
    return complex(sum(1j ** (s - j) * D[(j, s - j, k3, 0, 0)] for j in range(s + 1)))
