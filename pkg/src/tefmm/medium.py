"""Layered media and spectral reaction densities.

Layer 0 is the top half space z > d_0, layer l (1 <= l <= L-1) is the slab
d_l < z < d_{l-1}, and layer L is the bottom half space z < d_{L-1}.

Reaction coefficients are returned in a *local reference* convention:
upgoing waves in layer l are referenced at its bottom interface d_l and
downgoing waves at its top interface d_{l-1}, so that in layer l

    u_up   = (1/k_l) int k_rho J0(k_rho rho) e^{ i k_lz (z - d_l)}     / k_lz * sigma~_up   dk_rho
    u_down = (1/k_l) int k_rho J0(k_rho rho) e^{-i k_lz (z - d_{l-1})} / k_lz * sigma~_down dk_rho

with the source-side assembly

    sigma~(z') = e^{i k'z (z' - d_l')} sigma^{.,up} + e^{i k'z (d_{l'-1} - z')} sigma^{.,down}.

With this choice every exponential that appears has modulus <= 1 inside its
layer, which keeps the coefficients well scaled for large k_rho.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

UP = "up"
DOWN = "down"


def _as_dir(direction: str) -> str:
    d = str(direction).lower()
    if d in ("up", "u", "+", "upgoing"):
        return UP
    if d in ("down", "d", "-", "downgoing"):
        return DOWN
    raise ValueError(f"unknown direction {direction!r}")


class SingularSystemError(ArithmeticError):
    """Raised when the interface system is singular (contour hits a pole)."""


@dataclass(frozen=True)
class LayeredMedium:
    interface_depths: tuple
    wavenumbers: tuple

    def __init__(self, interface_depths, wavenumbers):
        d = tuple(float(v) for v in np.atleast_1d(interface_depths))
        k = tuple(float(v) for v in np.atleast_1d(wavenumbers))
        if len(d) < 1:
            raise ValueError("need at least one interface")
        if len(k) != len(d) + 1:
            raise ValueError("need one wavenumber per layer (L+1 values)")
        if any(d[i] <= d[i + 1] for i in range(len(d) - 1)):
            raise ValueError("interface depths must be strictly decreasing")
        if any((not np.isfinite(v)) or v <= 0 for v in k):
            raise ValueError("wavenumbers must be positive and finite")
        object.__setattr__(self, "interface_depths", d)
        object.__setattr__(self, "wavenumbers", k)

    @property
    def L(self) -> int:
        return len(self.interface_depths)

    @property
    def n_layers(self) -> int:
        return len(self.wavenumbers)

    def k(self, layer: int) -> float:
        return self.wavenumbers[layer]

    def top(self, layer: int) -> float:
        """Upper boundary d_{l-1} (inf for layer 0)."""
        return np.inf if layer == 0 else self.interface_depths[layer - 1]

    def bottom(self, layer: int) -> float:
        """Lower boundary d_l (-inf for layer L)."""
        return -np.inf if layer == self.L else self.interface_depths[layer]

    def thickness(self, layer: int) -> float:
        if layer <= 0 or layer >= self.L:
            raise ValueError("only interior layers have finite thickness")
        return self.interface_depths[layer - 1] - self.interface_depths[layer]

    def layer_of(self, z: float) -> int:
        z = float(z)
        for j, dj in enumerate(self.interface_depths):
            if z == dj:
                raise ValueError(f"z={z} lies exactly on interface {j}")
            if z > dj:
                return j
        return self.L

    def check_interior(self, layer: int, z) -> None:
        z = np.asarray(z, dtype=float)
        if np.any(z >= self.top(layer)) or np.any(z <= self.bottom(layer)):
            raise ValueError(f"points not strictly inside layer {layer}")

    def admissible(self, layer: int, direction: str) -> bool:
        """Whether the component type exists for targets in `layer`."""
        direction = _as_dir(direction)
        if direction == UP:
            return layer < self.L
        return layer > 0

    def kz(self, layer: int, k_rho):
        return vertical_wavenumber(self, layer, k_rho)


def vertical_wavenumber(medium: LayeredMedium, layer: int, k_rho):
    """sqrt(k_l^2 - k_rho^2) on the branch with Im >= 0."""
    if not 0 <= layer <= medium.L:
        raise IndexError("layer out of range")
    kl = medium.wavenumbers[layer]
    return _kz(kl, k_rho)


def _kz(kl, k_rho):
    w = np.sqrt(kl * kl - np.asarray(k_rho, dtype=complex) ** 2)
    w = np.where(w.imag < 0, -w, w)
    # on the positive real k_rho axis beyond k_l the root is +i|.|
    return w if w.ndim else complex(w)


@dataclass
class ReactionCoeffs:
    """sigma^{up,up}, sigma^{up,down}, sigma^{down,up}, sigma^{down,down}.

    First arrow: wave direction in the target layer; second arrow: which
    source-side exponential it multiplies (up = e^{ik'(z'-d_l')}, i.e. the
    wave leaving the source downward toward the bottom interface and
    reflected back; down = e^{ik'(d_{l'-1}-z')}).  Arrays broadcast over
    k_rho.
    """
    uu: np.ndarray
    ud: np.ndarray
    du: np.ndarray
    dd: np.ndarray
    layer: int = 0
    src_layer: int = 0
    zero_up: bool = False
    zero_down: bool = False

    def pair(self, direction: str):
        direction = _as_dir(direction)
        return (self.uu, self.ud) if direction == UP else (self.du, self.dd)


# ---------------------------------------------------------------------------
# stable block solver


def _unit_solutions(medium: LayeredMedium, src: int, k_rho: np.ndarray):
    """Solve the 2L x 2L interface system for the two unit source channels.

    Returns U[layer, chan, q], W[layer, chan, q] where chan 0 is the
    bottom-going source wave (amplitude e^{ik'(z'-d_l')}) and chan 1 the
    top-going one (amplitude e^{ik'(d_{l'-1}-z')}); q indexes k_rho.
    Amplitudes are normalised so that the free wave has unit value at the
    interface it reaches.
    """
    L = medium.L
    kr = np.atleast_1d(np.asarray(k_rho, dtype=complex))
    nq = kr.size
    k = np.asarray(medium.wavenumbers, dtype=float)
    kz = np.stack([_kz(k[j], kr) for j in range(L + 1)])  # (L+1, nq)
    E = np.ones((L + 1, nq), dtype=complex)
    for j in range(1, L):
        E[j] = np.exp(1j * kz[j] * medium.thickness(j))
    # unknown ordering: x = [U_0, W_1, U_1, W_2, ..., U_{L-1}, W_L]
    # U_j at 2j, W_j at 2j-1
    n = 2 * L
    A = np.zeros((nq, n, n), dtype=complex)
    rhs = np.zeros((nq, n, 2), dtype=complex)
    for j in range(L):  # interface j between layers j and j+1
        rv, rf = 2 * j, 2 * j + 1
        kk_a = k[j] * kz[j]
        kk_b = k[j + 1] * kz[j + 1]
        # layer j (above): U_j e^{0} + W_j E_j  ; derivative factor (U_j - W_j E_j)
        A[:, rv, 2 * j] = 1.0
        A[:, rf, 2 * j] = kk_a
        if j >= 1:
            A[:, rv, 2 * j - 1] = E[j]
            A[:, rf, 2 * j - 1] = -kk_a * E[j]
        # layer j+1 (below): U_{j+1} E_{j+1} + W_{j+1}
        if j + 1 <= L - 1:
            A[:, rv, 2 * (j + 1)] = -E[j + 1]
            A[:, rf, 2 * (j + 1)] = -kk_b * E[j + 1]
        A[:, rv, 2 * (j + 1) - 1] = -1.0
        A[:, rf, 2 * (j + 1) - 1] = kk_b
        # free field of the source layer, moved to the right-hand side
        if src == j:  # interface below the source: channel 0
            rhs[:, rv, 0] = -1.0
            rhs[:, rf, 0] = k[j] * kz[src]
        if src == j + 1:  # interface above the source: channel 1
            rhs[:, rv, 1] = 1.0
            rhs[:, rf, 1] = k[j + 1] * kz[src]
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - pole hit
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("non-finite interface solution")
    U = np.zeros((L + 1, 2, nq), dtype=complex)
    W = np.zeros((L + 1, 2, nq), dtype=complex)
    for j in range(L):
        U[j] = x[:, 2 * j, :].T
    for j in range(1, L + 1):
        W[j] = x[:, 2 * j - 1, :].T
    return U, W, kz


def solve_reaction_coeffs_general(medium: LayeredMedium, layer: int, src_layer: int,
                                  k_rho, method: str = "block") -> ReactionCoeffs:
    """Reaction densities sigma_{l l'} for any number of layers.

    method="block" solves the full interface system (default, stable for
    large k_rho); method="transfer" runs the cosh/sinh transfer-matrix
    recursion with decay conditions A_0 = B_0, A_L = -B_L.
    """
    L = medium.L
    if not (0 <= layer <= L and 0 <= src_layer <= L):
        raise IndexError("layer index out of range")
    kr = np.asarray(k_rho, dtype=complex)
    scalar = kr.ndim == 0
    if method == "block":
        U, W, kz = _unit_solutions(medium, src_layer, kr)
    elif method == "transfer":
        U, W, kz = _transfer_solutions(medium, src_layer, kr)
    else:
        raise ValueError(f"unknown method {method!r}")
    ratio = kz[layer] / kz[src_layer]
    uu = ratio * U[layer, 0]
    ud = ratio * U[layer, 1]
    du = ratio * W[layer, 0]
    dd = ratio * W[layer, 1]
    if src_layer == 0:  # no top-going source channel
        ud = np.zeros_like(ud)
        dd = np.zeros_like(dd)
    if src_layer == L:
        uu = np.zeros_like(uu)
        du = np.zeros_like(du)
    if scalar:
        uu, ud, du, dd = (complex(v[0]) for v in (uu, ud, du, dd))
    return ReactionCoeffs(uu, ud, du, dd, layer, src_layer,
                          zero_up=(layer == L), zero_down=(layer == 0))


def _transfer_solutions(medium: LayeredMedium, src: int, k_rho):
    """cosh/sinh transfer recursion.  Layer l is written as
    A_l cosh(i k_lz (z-d_l)) + B_l sinh(i k_lz (z-d_l)) (layer L referenced at
    d_{L-1}).  Same output layout as `_unit_solutions`."""
    L = medium.L
    kr = np.atleast_1d(np.asarray(k_rho, dtype=complex))
    nq = kr.size
    k = np.asarray(medium.wavenumbers, dtype=float)
    kz = np.stack([_kz(k[j], kr) for j in range(L + 1)])
    I2 = np.zeros((nq, 2, 2), dtype=complex)
    I2[:, 0, 0] = I2[:, 1, 1] = 1.0

    def T(lm1):  # T_{l-1,l}
        l = lm1 + 1
        D = medium.thickness(l) if l < L else 0.0
        c = np.cosh(1j * kz[l] * D)
        s = np.sinh(1j * kz[l] * D)
        r = (k[l] * kz[l]) / (k[lm1] * kz[lm1])
        M = np.empty((nq, 2, 2), dtype=complex)
        M[:, 0, 0] = c
        M[:, 0, 1] = s
        M[:, 1, 0] = r * s
        M[:, 1, 1] = r * c
        return M

    Ts = [T(j) for j in range(L)]
    # P[l] = T_{l,l+1} ... T_{L-1,L}
    P = [None] * (L + 1)
    P[L] = I2
    for l in range(L - 1, -1, -1):
        P[l] = Ts[l] @ P[l + 1]
    U = np.zeros((L + 1, 2, nq), dtype=complex)
    W = np.zeros((L + 1, 2, nq), dtype=complex)
    ksrc = k[src] * kz[src]
    for chan in (0, 1):
        if chan == 0 and src == L:
            continue
        if chan == 1 and src == 0:
            continue
        # source jump vectors
        S = {}
        if chan == 1:  # top of source layer, interface d_{src-1}
            v = np.empty((nq, 2), dtype=complex)
            v[:, 0] = 1.0
            v[:, 1] = ksrc / (k[src - 1] * kz[src - 1])
            S[src - 1] = v
        else:  # bottom of source layer, interface d_src
            v = np.empty((nq, 2), dtype=complex)
            v[:, 0] = -1.0
            v[:, 1] = 1.0
            S[src] = v
        # V_0 = P_0 V_L + sum_j (T_{01}...T_{j-1,j}) S_j
        s_tot = np.zeros((nq, 2), dtype=complex)
        for j, vec in S.items():
            acc = vec
            for i in range(j - 1, -1, -1):
                acc = np.einsum("qab,qb->qa", Ts[i], acc)
            s_tot = s_tot + acc
        a = P[0]
        den = (a[:, 0, 0] - a[:, 0, 1]) - (a[:, 1, 0] - a[:, 1, 1])
        if np.any(den == 0):
            raise SingularSystemError("transfer denominator vanished")
        AL = (s_tot[:, 1] - s_tot[:, 0]) / den
        VL = np.stack([AL, -AL], axis=1)
        V = [None] * (L + 1)
        V[L] = VL
        for l in range(L - 1, -1, -1):
            V[l] = np.einsum("qab,qb->qa", Ts[l], V[l + 1])
            if l in S:
                V[l] = V[l] + S[l]
        for l in range(L + 1):
            A_, B_ = V[l][:, 0], V[l][:, 1]
            if l < L:
                U[l, chan] = 0.5 * (A_ + B_)
            if l >= 1:
                W_ = 0.5 * (A_ - B_)
                if l < L:
                    W_ = W_ * np.exp(-1j * kz[l] * medium.thickness(l))
                W[l, chan] = W_
    return U, W, kz


# ---------------------------------------------------------------------------
# closed forms for two and three layers


def _paper_to_local(medium, layer, coeffs_down, kz_layer):
    """Closed forms reference interior downgoing waves at d_l; convert to
    the local d_{l-1} reference."""
    if 0 < layer < medium.L:
        return coeffs_down * np.exp(-1j * kz_layer * medium.thickness(layer))
    return coeffs_down


def closed_form_two_layer(medium: LayeredMedium, layer: int, src_layer: int, k_rho) -> ReactionCoeffs:
    if medium.L != 1:
        raise ValueError("closed_form_two_layer needs exactly one interface")
    k0, k1 = medium.wavenumbers
    k0z, k1z = _kz(k0, k_rho), _kz(k1, k_rho)
    a, b = k0 * k0z, k1 * k1z
    den = a + b
    z = 0.0 * den
    if src_layer == 0:
        if layer == 0:
            c = ((a - b) / den, z, z, z)
        else:
            c = (z, z, 2 * k0 * k1z / den, z)
    else:
        if layer == 0:
            c = (z, 2 * k1 * k0z / den, z, z)
        else:
            c = (z, z, z, (b - a) / den)
    return ReactionCoeffs(*c, layer, src_layer, zero_up=(layer == 1), zero_down=(layer == 0))


def three_layer_kappas(medium: LayeredMedium, k_rho, z_src: float = 0.0) -> dict:
    """Auxiliary kappa quantities of the three-layer closed forms
    (interfaces 0 and -d)."""
    if medium.L != 2:
        raise ValueError("three-layer quantities need exactly two interfaces")
    d0, d1 = medium.interface_depths
    d = d0 - d1
    k0, k1, k2 = medium.wavenumbers
    k0z, k1z, k2z = (_kz(kk, k_rho) for kk in (k0, k1, k2))
    a, b, c = k0 * k0z, k1 * k1z, k2 * k2z
    e2d = np.exp(2j * d * k1z)
    ed = np.exp(1j * d * k1z)
    emd = np.exp(-1j * d * k1z)
    zp = z_src - d0
    out = dict(
        k11=(b - c) / 2 * e2d + (b + c) / 2,
        k12=1j * ((c - b) / 2 * e2d + (b + c) / 2),
        k21=(b - c) * ((b - a) / 2 * ed + (a + b) / 2 * emd),
        k21p=(b - c) * ((a - b) / 2 * ed + (a + b) / 2 * emd),
        k22=(b + a) / 2 * np.exp(1j * k1z * zp) + (b - a) / 2 * np.exp(-1j * k1z * zp),
        k23=(b - c) / 2 * np.exp(1j * k1z * (2 * d + zp)) + (b + c) / 2 * np.exp(-1j * k1z * zp),
        k31=(b - a) / 2 * e2d + (b + a) / 2,
        k32=1j * ((a - b) / 2 * e2d + (a + b) / 2),
    )
    out["den_top"] = a * out["k11"] - 1j * b * out["k12"]
    out["den_bottom"] = c * out["k31"] - 1j * b * out["k32"]
    out.update(a=a, b=b, c=c, k0z=k0z, k1z=k1z, k2z=k2z, d=d, ed=ed, e2d=e2d)
    return out


def closed_form_three_layer(medium: LayeredMedium, layer: int, src_layer: int, k_rho) -> ReactionCoeffs:
    """Explicit three-layer densities (interfaces at d_0 and d_1 = d_0 - d).

    Values are shifted to the local-reference convention of this module
    (see module docstring); the bottom-layer downgoing densities are
    referenced at d_1.
    """
    K = three_layer_kappas(medium, k_rho)
    a, b, c = K["a"], K["b"], K["c"]
    k0, k1, k2 = medium.wavenumbers
    k0z, k1z, k2z = K["k0z"], K["k1z"], K["k2z"]
    ed, e2d = K["ed"], K["e2d"]
    den = K["den_top"]
    zero = 0.0 * den
    uu = ud = du = dd = zero
    if src_layer == 0:
        if layer == 0:
            uu = (a * K["k11"] + 1j * b * K["k12"]) / den
        elif layer == 1:
            uu = k0 * k1z * (b - c) * ed / den
            du = k0 * k1z * (b + c) * ed / den
        else:
            du = 2 * k0 * k1 * k1z * k2z * ed / den
    elif src_layer == 1:
        if layer == 0:
            uu = k1 * k0z * (b - c) * ed / den
            ud = k1 * k0z * (b + c) / den
        elif layer == 1:
            uu = (b - c) / den * (b + a) / 2
            ud = (b - c) / den * (b - a) / 2 * ed
            du = (b - a) * ed / den * (b - c) / 2 * ed
            dd = (b - a) * ed / den * (b + c) / 2
        else:
            # the printed sigma_21 pair carries an extra e^{-i d k2z}
            # belonging to a z=0 reference; dropped for the d_1 reference
            du = k1 * k2z / den * (b + a)
            dd = k1 * k2z / den * (b - a) * ed
    else:
        denb = K["den_bottom"]
        if layer == 0:
            ud = 2 * k1 * k1z * k2 * k0z * ed / denb
        elif layer == 1:
            ud = k2 * k1z * (b + a) / denb
            dd = k2 * k1z * (b - a) * e2d / denb
        else:
            dd = (c * K["k31"] + 1j * b * K["k32"]) / denb
    if layer == 1:
        du = _paper_to_local(medium, 1, du, k1z)
        dd = _paper_to_local(medium, 1, dd, k1z)
    return ReactionCoeffs(uu, ud, du, dd, layer, src_layer,
                          zero_up=(layer == 2), zero_down=(layer == 0))


# ---------------------------------------------------------------------------
# assembled densities


def sigma_tilde_factors(medium: LayeredMedium, src_layer: int, k_rho, z_src, order: int):
    """Source-side exponentials of (1/n'!) d^{n'}/dz'^{n'} sigma~.

    Returns (f_up, f_down) multiplying sigma^{.,up} and sigma^{.,down}:
    f_up = (i k'z)^n/n! e^{ik'z(z'-d_l')}, f_down = (-i k'z)^n/n! e^{ik'z(d_{l'-1}-z')}.
    Broadcasts k_rho against z_src.
    """
    kz = vertical_wavenumber(medium, src_layer, k_rho)
    zs = np.asarray(z_src, dtype=float)
    fac = (1j * kz) ** order / factorial(order)
    if src_layer < medium.L:
        f_up = fac * np.exp(1j * kz * (zs - medium.bottom(src_layer)))
    else:
        f_up = 0.0 * kz * zs
    if src_layer > 0:
        f_down = ((-1) ** order) * fac * np.exp(1j * kz * (medium.top(src_layer) - zs))
    else:
        f_down = 0.0 * kz * zs
    return f_up, f_down


def density_sigma_tilde(medium: LayeredMedium, layer: int, src_layer: int, k_rho, z_src,
                        direction: str, deriv_order: int = 0, coeffs: ReactionCoeffs | None = None):
    """(1/n'!) d^{n'} sigma~_{l l'}^{dir}(k_rho, z') / dz'^{n'}."""
    direction = _as_dir(direction)
    if deriv_order < 0:
        raise ValueError("derivative order must be >= 0")
    medium.check_interior(src_layer, z_src)
    if coeffs is None:
        coeffs = solve_reaction_coeffs_general(medium, layer, src_layer, k_rho)
    c_up, c_down = coeffs.pair(direction)
    f_up, f_down = sigma_tilde_factors(medium, src_layer, k_rho, z_src, deriv_order)
    return f_up * c_up + f_down * c_down


def target_factor(medium: LayeredMedium, layer: int, k_rho, z, direction: str, order: int = 0):
    """(s i k_lz)^n e^{s i k_lz (z - z_ref)} with s=+1, z_ref=d_l (up) or
    s=-1, z_ref=d_{l-1} (down): the z-dependence of the target side."""
    direction = _as_dir(direction)
    kz = vertical_wavenumber(medium, layer, k_rho)
    z = np.asarray(z, dtype=float)
    if direction == UP:
        return (1j * kz) ** order * np.exp(1j * kz * (z - medium.bottom(layer)))
    return (-1j * kz) ** order * np.exp(-1j * kz * (z - medium.top(layer)))
