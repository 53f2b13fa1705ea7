"""Special functions: Bessel J of complex argument, spherical Hankel
functions of the first kind and spherical harmonics.

The public scalar/array entry points (`bessel_j`, `spherical_hankel`) are
thin, validated wrappers.  The ``*_nb`` functions are numba kernels used
inside the hot quadrature and direct-sum loops.
"""
from __future__ import annotations

import ctypes
import math

import numba as nb
import numpy as np
from numba.extending import get_cython_function_address
from scipy import special as sp

# |Im z| above this overflows exp() in double precision.
IMAG_BOUND = 700.0


def bessel_j(order: int, z):
    """Bessel function J_n(z) for integer n (any sign) and complex z.

    Negative orders are mapped through J_{-n} = (-1)^n J_n.
    """
    n = int(order)
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z.imag) > IMAG_BOUND):
        raise OverflowError(f"|Im z| exceeds {IMAG_BOUND}; J_n would overflow")
    sign = -1.0 if (n < 0 and n % 2) else 1.0
    out = sign * sp.jv(abs(n), z)
    return out if out.ndim else complex(out)


def spherical_hankel(n: int, z):
    """Spherical Hankel function h_n^(1)(z) by upward recurrence."""
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise ValueError("spherical Hankel function is singular at z=0")
    h = spherical_hankel_all(int(n), z)
    out = h[..., int(n)]
    return out if out.ndim else complex(out)


def spherical_hankel_all(nmax: int, z) -> np.ndarray:
    """h_0..h_nmax at every z; shape z.shape + (nmax+1,)."""
    if nmax < 0:
        raise ValueError("nmax must be >= 0")
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape + (nmax + 1,), dtype=complex)
    e = np.exp(1j * z)
    out[..., 0] = -1j * e / z
    if nmax >= 1:
        out[..., 1] = -(1.0 + 1j / z) * e / z
    for n in range(1, nmax):
        out[..., n + 1] = (2 * n + 1) / z * out[..., n] - out[..., n - 1]
    return out


# ---------------------------------------------------------------------------
# numba kernels

_j0_addr = get_cython_function_address("scipy.special.cython_special", "j0")
_j0_real = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double)(_j0_addr)


# ctypes pointers cannot be cached, so these kernels compile per process
@nb.njit(cache=False)
def j0_real_nb(x):
    return _j0_real(x)


@nb.njit(cache=True)
def _asym_j01(z):
    # Hankel asymptotic expansion of J0, J1 for |z| large, Re z >= 0.
    res0 = 0j
    res1 = 0j
    for nu in range(2):
        mu = 4.0 * nu * nu
        p = 1.0 + 0j
        q = 0j
        term = 1.0 + 0j
        k = 1
        while k < 60:
            term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * z)
            if k % 2 == 1:
                sgn = 1.0 if ((k // 2) % 2 == 0) else -1.0
                q += sgn * term
            else:
                sgn = 1.0 if ((k // 2) % 2 == 0) else -1.0
                p += sgn * term
            if abs(term) < 1e-17:
                break
            k += 1
        w = z - nu * 0.5 * np.pi - 0.25 * np.pi
        val = np.sqrt(2.0 / (np.pi * z)) * (p * np.cos(w) - q * np.sin(w))
        if nu == 0:
            res0 = val
        else:
            res1 = val
    return res0, res1


@nb.njit(cache=True)
def jn_upto_nb(nmax, z, out):
    """Fill out[0..nmax] with J_n(z), complex z, via Miller's backward
    recurrence (small/moderate |z|) or asymptotics plus upward recurrence."""
    az = abs(z)
    if az < 1e-300:
        out[0] = 1.0
        for n in range(1, nmax + 1):
            out[n] = 0.0
        return
    flip = False
    if z.real < 0:
        z = -z
        flip = True
    if az > 25.0 and nmax < 0.5 * az:
        j0, j1 = _asym_j01(z)
        out[0] = j0
        if nmax >= 1:
            out[1] = j1
        for n in range(1, nmax):
            out[n + 1] = (2.0 * n / z) * out[n] - out[n - 1]
    else:
        start = int(max(nmax, az) + 20 + 3.0 * np.sqrt(max(nmax, az))) + 2
        if start % 2 == 1:
            start += 1
        # normaliser: exp(-i s z) = J0 + 2 sum (-i s)^n J_n, s = sign(Im z)
        ph = -1j if z.imag >= 0 else 1j
        jp1 = 0j
        jc = 1e-30 + 0j
        norm = 0j
        for n in range(start, 0, -1):
            jm1 = (2.0 * n / z) * jc - jp1
            if n <= nmax:
                out[n] = jc
            norm += 2.0 * (ph ** n) * jc
            jp1 = jc
            jc = jm1
            if abs(jc) > 1e250:
                # rescale to avoid overflow
                jc *= 1e-250
                jp1 *= 1e-250
                norm *= 1e-250
                for m in range(n, nmax + 1):
                    out[m] *= 1e-250
        out[0] = jc
        norm += jc
        scale = np.exp(ph * z) / norm
        for n in range(0, nmax + 1):
            out[n] *= scale
    if flip:
        for n in range(1, nmax + 1, 2):
            out[n] = -out[n]


@nb.njit(cache=True)
def j0_complex_nb(z):
    buf = np.empty(1, dtype=np.complex128)
    jn_upto_nb(0, z, buf)
    return buf[0]


# ---------------------------------------------------------------------------
# spherical harmonics


def sph_harm_all(nmax: int, theta, phi) -> np.ndarray:
    """Y_n^m(theta, phi) for 0<=n<=nmax, -n<=m<=n.

    Y_n^m = (-1)^m sqrt((2n+1)/(4 pi) (n-m)!/(n+m)!) P_n^m(cos theta) e^{i m phi}
    with P_n^m free of the Condon-Shortley phase, and Y_n^{-m} =
    (-1)^m conj(Y_n^m) for real angles.  Output shape: (..., nmax+1, 2*nmax+1),
    entry [n, nmax+m].
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    x = np.cos(theta)
    sx = np.sin(theta)
    shape = theta.shape
    # normalised associated Legendre \bar P_n^m = sqrt((2n+1)/(4pi) (n-m)!/(n+m)!) P_n^m
    pb = np.zeros(shape + (nmax + 1, nmax + 1))
    pb[..., 0, 0] = math.sqrt(1.0 / (4 * math.pi))
    for m in range(1, nmax + 1):
        pb[..., m, m] = pb[..., m - 1, m - 1] * sx * math.sqrt((2 * m + 1) / (2.0 * m))
    for m in range(0, nmax):
        pb[..., m + 1, m] = math.sqrt(2 * m + 3) * x * pb[..., m, m]
    for m in range(0, nmax + 1):
        for n in range(m + 2, nmax + 1):
            a = math.sqrt((4.0 * n * n - 1) / (n * n - m * m))
            b = math.sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1) ** 2 - 1))
            pb[..., n, m] = a * (x * pb[..., n - 1, m] - b * pb[..., n - 2, m])
    out = np.zeros(shape + (nmax + 1, 2 * nmax + 1), dtype=complex)
    for m in range(0, nmax + 1):
        e = np.exp(1j * m * phi)
        for n in range(m, nmax + 1):
            val = (-1) ** m * pb[..., n, m] * e
            out[..., n, nmax + m] = val
            if m > 0:
                out[..., n, nmax - m] = (-1) ** m * np.conj(val)
    return out


_INV_SQ = np.array([0.0] + [1.0 / (m * m) for m in range(1, 80)])


@nb.njit(cache=True)
def j0_series_nb(z):
    """Power series of J0; accurate to ~1e-13 relative for |z| <= 12."""
    q = -0.25 * z * z
    term = 1.0 + 0j
    s = 1.0 + 0j
    for m in range(1, 80):
        term = term * q * _INV_SQ[m]
        s += term
        t2 = term.real * term.real + term.imag * term.imag
        if t2 < 1e-34 * (s.real * s.real + s.imag * s.imag):
            break
    return s


@nb.njit(cache=False)
def j0_any_nb(z):
    if z.imag == 0.0:
        return complex(_j0_real(z.real))
    if abs(z) <= 12.0:
        return j0_series_nb(z)
    return j0_complex_nb(z)
