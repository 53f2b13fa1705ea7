"""Particle generators for the cube and quartic-surface test geometries."""
from __future__ import annotations

import numpy as np


def generate_cube(center, size: float, N: int, seed: int) -> np.ndarray:
    """N uniform points in the axis-aligned cube of edge `size`."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    return np.asarray(center, float) + size * (rng.random((N, 3)) - 0.5)


def quartic_radius(a: float, cos_theta):
    """r(theta) = 0.5 - a + (a/8)(35 cos^4 - 30 cos^2 + 3)."""
    c2 = np.asarray(cos_theta) ** 2
    return 0.5 - a + a / 8.0 * (35.0 * c2 * c2 - 30.0 * c2 + 3.0)


def inside_quartic(points, center, a: float) -> np.ndarray:
    d = np.atleast_2d(points) - np.asarray(center, float)
    r = np.linalg.norm(d, axis=1)
    cos = np.divide(d[:, 2], r, out=np.ones_like(r), where=r > 0)
    return r <= quartic_radius(a, cos)


def generate_quartic(center, a: float, N: int, seed: int, batch: int = 4096) -> np.ndarray:
    """N points uniform in the quartic body, by rejection from the
    enclosing cube (the radius never exceeds 0.5)."""
    if not 0.0 < a < 0.5:
        raise ValueError("a must lie in (0, 0.5)")
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    c = np.asarray(center, float)
    out, n = [], 0
    while n < N:
        cand = c + rng.random((max(batch, 2 * (N - n)), 3)) - 0.5
        keep = cand[inside_quartic(cand, c, a)]
        out.append(keep)
        n += len(keep)
    return np.vstack(out)[:N]


def quartic_volume(a: float, n: int = 20001) -> float:
    """(2 pi / 3) int_{-1}^{1} r(u)^3 du by Simpson's rule."""
    from scipy.integrate import simpson

    u = np.linspace(-1.0, 1.0, n)
    return float(2.0 * np.pi / 3.0 * simpson(quartic_radius(a, u) ** 3, x=u))


def block_extent(shape: str, size_or_a: float) -> float:
    """Half extent in z of a block about its center."""
    if shape == "cube":
        return 0.5 * size_or_a
    if shape == "quartic":
        return float(np.max(quartic_radius(size_or_a, np.linspace(-1, 1, 2001))))
    raise ValueError(f"unknown block shape {shape!r}")


def charges(N: int, seed: int) -> np.ndarray:
    """Real charges uniform in (0, 1), on a stream separate from the positions."""
    return np.random.default_rng([seed, 1]).random(N)
