"""Self-checks behind `tefmm verify`.

Each check returns a list of `CheckResult` rows (check, status, value,
reference, tolerance).  `value` is the measured error and `reference` the
quantity it is measured against, when there is one.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from math import factorial, sqrt

import numpy as np

from . import dcim, reference, taylor
from .medium import (LayeredMedium, closed_form_three_layer, closed_form_two_layer,
                     solve_reaction_coeffs_general, three_layer_kappas)
from .oracle import finite_difference
from .sommerfeld import eval_scattered_derivative, verify_sommerfeld_identity, wide_contour
from .special import spherical_hankel_all


@dataclass
class CheckResult:
    check: str
    status: str
    value: float
    reference: object
    tolerance: float

    def as_dict(self):
        return asdict(self)


def _row(name, err, tol, ref=None):
    ok = bool(np.isfinite(err) and err <= tol)
    return CheckResult(name, "pass" if ok else "fail", float(err), ref, float(tol))


def _label(P, key):
    k3, k3p, s = key
    return f"r={P[0]} r'={P[1]} (k3,k3',s)=({k3},{k3p},{s})"


def golden_quadrature(tol: float = 1e-6) -> list:
    """Quadrature derivatives vs the frozen values, relative per real and
    imaginary part."""
    m = reference.three_layer_medium()
    out = []
    for (P, key), ref in reference.DERIVATIVES.items():
        k3, k3p, s = key
        v = eval_scattered_derivative(m, 1, 1, P[0], P[1], "up", s, k3, k3p).value
        for part, a, b in (("re", v.real, ref.real), ("im", v.imag, ref.imag)):
            out.append(_row(f"quadrature {_label(P, key)} {part}", abs(a - b) / abs(b), tol, b))
    return out


def golden_dcim(tol: float = 1e-6) -> list:
    """Two-level DCIM derivatives vs the frozen values, absolute per part."""
    m = reference.three_layer_medium()
    path = dcim.DcimPath.default(m, 1)
    out = []
    for (P, key), ref in reference.DERIVATIVES.items():
        k3, k3p, s = key
        im = dcim.two_level_dcim(m, 1, 1, k3p, P[1][2], reference.DCIM_Z_MIN, path=path)
        v = dcim.eval_image_horizontal(im, m.k(1), P[0], P[1], k3, s)
        for part, a, b in (("re", v.real, ref.real), ("im", v.imag, ref.imag)):
            out.append(_row(f"dcim {_label(P, key)} {part}", abs(a - b), tol, b))
    return out


def sommerfeld_identity(n_probes: int = 10, seed: int = 0, tol: float = 1e-10) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_probes):
        k = rng.uniform(0.5, 3.0)
        r = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.3, 2.0)])
        err = verify_sommerfeld_identity(k, r)
        out.append(_row(f"sommerfeld identity k={k:.4f} r={np.round(r, 4).tolist()}", err, tol))
    return out


def _contour_points(medium: LayeredMedium, n: int):
    kr, _ = wide_contour(medium, 1.0, 1.0).nodes()
    return kr[np.linspace(0, len(kr) - 1, n).astype(int)]


def closed_form_equivalence(n_points: int = 50, tol: float = 1e-12, tol_identity: float = 1e-13) -> list:
    """General layered solver vs explicit two- and three-layer densities,
    plus the equality of the two three-layer denominators."""
    out = []
    cases = ((LayeredMedium([0.0], [0.8, 1.5]), closed_form_two_layer),
             (reference.three_layer_medium(), closed_form_three_layer))
    for medium, closed in cases:
        kr = _contour_points(medium, n_points)
        worst = 0.0
        for l in range(medium.n_layers):
            for lp in range(medium.n_layers):
                g = solve_reaction_coeffs_general(medium, l, lp, kr)
                c = closed(medium, l, lp, kr)
                for f in ("uu", "ud", "du", "dd"):
                    a, b = np.asarray(getattr(g, f)), np.asarray(getattr(c, f))
                    scale = np.maximum(np.abs(b), 1e-300)
                    mask = np.abs(b) > 0
                    if np.any(mask):
                        worst = max(worst, float(np.max(np.abs(a - b)[mask] / scale[mask])))
                    if np.any(~mask):
                        worst = max(worst, float(np.max(np.abs(a[~mask]))))
        out.append(_row(f"closed-form densities, {medium.n_layers} layers", worst, tol))
    m3 = reference.three_layer_medium()
    K = three_layer_kappas(m3, _contour_points(m3, n_points))
    ident = float(np.max(np.abs(K["den_top"] - K["den_bottom"]) / np.abs(K["den_top"])))
    out.append(_row("three-layer denominator identity", ident, tol_identity))
    return out


def recurrence_vs_fd(max_order: int = 4, tol: float = 1e-6, k: float = 1.5,
                     offset=(0.7, -0.4, 0.9)) -> list:
    """Cartesian recurrence vs finite differences of h0(k|x|)."""
    x0 = np.asarray(offset, float)

    def f(x):
        R = np.linalg.norm(x)
        return -1j * np.exp(1j * k * R) / (k * R)

    a = taylor.nonsym_derivs(k, x0, max_order)
    out = []
    worst = 0.0
    for i, kk in enumerate(taylor.multi_indices(max_order)):
        if kk.sum() == 0:
            continue
        d = a[i] * factorial(kk[0]) * factorial(kk[1]) * factorial(kk[2])
        fd = finite_difference(f, x0, tuple(kk))
        worst = max(worst, abs(d - fd) / abs(fd))
    out.append(_row(f"recurrence vs finite differences, |k|<={max_order}", worst, tol))
    return out


def ladder_special_case(n_max: int = 6, tol: float = 1e-12, k: float = 1.3,
                        offset=(0.4, -0.3, 0.8)) -> list:
    """D^0 Omega_n^{+-n} = Omega_{n+1}^{+-n} / sqrt(2n+3), with D^0 = -d_z / k
    computed in closed form: for m = +-n, Omega_n^m = c (x +- iy)^n h_n(kr)/r^n,
    so d_z Omega_n^m = -(z/r) k h_{n+1}(kr)/h_n(kr) Omega_n^m."""
    x = np.asarray(offset, float)
    r = float(np.linalg.norm(x))
    Om = taylor.omega_all(k, x, n_max + 1)
    h = spherical_hankel_all(n_max + 1, k * r)
    N = n_max + 1
    worst = 0.0
    for n in range(n_max + 1):
        for m in (n, -n):
            lhs = (x[2] / r) * h[n + 1] / h[n] * Om[n, N + m]  # -d_z Omega / k
            rhs = Om[n + 1, N + m] / sqrt(2 * n + 3)
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
            # the ladder coefficients must give the same single term
            st = taylor.apply_ladder({(n, m): 1.0}, "0")
            lad = sum(c * Om[nn, N + mm] for (nn, mm), c in st.items())
            worst = max(worst, abs(lad - rhs) / abs(rhs))
    return [_row(f"ladder special case, n<={n_max}", worst, tol)]


def gpof_roundtrip(tol: float = 1e-10, seed: int = 3) -> list:
    rng = np.random.default_rng(seed)
    s_true = np.array([-0.3 + 2.0j, -0.8 - 1.1j, -1.5 + 0.4j, -0.05 + 0.0j])
    c_true = rng.normal(size=4) + 1j * rng.normal(size=4)
    step = 0.05
    t = np.arange(101) * step
    y = np.exp(np.outer(t, s_true)) @ c_true
    c, s, res = dcim.gpof_fit(y, step, tol=1e-13)
    tt = np.linspace(0, t[-1], 777)
    err = float(np.max(np.abs(np.exp(np.outer(tt, s)) @ c - np.exp(np.outer(tt, s_true)) @ c_true)))
    return [_row("GPOF roundtrip (4 exponentials, off-sample)", err, tol)]


def sym_nonsym_equivalence(order: int = 8, tol: float = 1e-9, k: float = 1.1,
                           offset=(0.6, 0.5, -0.7)) -> list:
    """Spherical-ladder derivatives vs binomially recombined Cartesian ones."""
    x = np.asarray(offset, float)
    a = taylor.nonsym_derivs(k, x, order)
    pos = taylor._mi_lookup(order)
    D = taylor.sym_derivs(k, x, order)
    worst = 0.0
    scale = float(np.max(np.abs(D)))
    for i, (n, m, s) in enumerate(taylor.sym_indices(order)):
        aa, bb, c = s, m - s, n - m
        acc = 0j
        for u in range(aa + 1):
            for v in range(bb + 1):
                ix, iy = u + v, aa + bb - u - v
                coef = (factorial(aa) / (factorial(u) * factorial(aa - u))
                        * factorial(bb) / (factorial(v) * factorial(bb - v))
                        * (-1j) ** (aa - u) * (1j) ** (bb - v))
                acc += coef * factorial(ix) * factorial(iy) * factorial(c) * a[pos[ix, iy, c]]
        worst = max(worst, abs(acc - D[i]) / max(abs(D[i]), 1e-300 + 1e-12 * scale))
    return [_row(f"symmetric vs Cartesian derivatives, total order<={order}", worst, tol)]


ALL_CHECKS = {
    "quadrature": golden_quadrature,
    "dcim": golden_dcim,
    "sommerfeld": sommerfeld_identity,
    "closed_forms": closed_form_equivalence,
    "recurrence": recurrence_vs_fd,
    "ladder": ladder_special_case,
    "gpof": gpof_roundtrip,
    "sym_nonsym": sym_nonsym_equivalence,
}


def run_checks(names=None) -> list:
    out = []
    for name in (names or ALL_CHECKS):
        out.extend(ALL_CHECKS[name]())
    return out
