import numpy as np
import pytest

from tefmm import checks, reference
from tefmm.medium import LayeredMedium
from tefmm.oracle import finite_difference
from tefmm.sommerfeld import (eval_scattered_derivative, eval_scattered_green,
                              sommerfeld_identity_integral, verify_sommerfeld_identity)


def test_golden_derivatives():
    rows = checks.golden_quadrature()
    assert len(rows) == 20
    assert all(r.status == "pass" for r in rows), [r.as_dict() for r in rows if r.status != "pass"]


def test_table_point_value(three_layer):
    r, rp = reference.POINTS[0]
    v = eval_scattered_green(three_layer, 1, 1, r, rp, "up").value
    assert abs(v - reference.DERIVATIVES[(reference.POINTS[0], (0, 0, 0))]) < 1e-12


@pytest.mark.parametrize("k,r", [(0.8, (0.3, -0.2, 0.5)), (2.0, (1.0, 0.5, 1.5)), (1.3, (0.0, 0.0, 0.4))])
def test_sommerfeld_identity(k, r):
    assert verify_sommerfeld_identity(k, np.array(r)) < 1e-10
    R = np.linalg.norm(r)
    assert abs(sommerfeld_identity_integral(k, np.array(r)) - (-1j) * np.exp(1j * k * R) / (k * R)) < 1e-10


def test_z_derivatives_match_finite_differences(three_layer):
    r, rp = np.array([0.4, 0.2, -0.6]), np.array([0.1, -0.1, -1.1])

    def f(x):
        return eval_scattered_green(three_layer, 1, 1, x, rp, "up").value

    for k3 in (1, 2):
        d = eval_scattered_derivative(three_layer, 1, 1, r, rp, "up", 0, k3, 0).value
        fd = finite_difference(f, r, (0, 0, k3), h=0.05) / (1 if k3 == 1 else 2)
        assert abs(d - fd) < 1e-7 * abs(d)


def test_horizontal_derivative_matches_finite_differences(two_layer):
    r, rp = np.array([0.4, 0.2, 0.6]), np.array([0.1, -0.1, 1.1])

    def f(x):
        return eval_scattered_green(two_layer, 0, 0, x, rp, "up").value

    d = eval_scattered_derivative(two_layer, 0, 0, r, rp, "up", 1, 0, 0).value
    fd = finite_difference(f, r, (1, 0, 0), h=0.05) + 1j * finite_difference(f, r, (0, 1, 0), h=0.05)
    assert abs(d - fd) < 1e-7 * abs(d)


def test_homogeneous_medium_reaction_vanishes():
    m = LayeredMedium([0.0], [1.1, 1.1])
    v = eval_scattered_green(m, 0, 0, (0.2, 0.1, 0.5), (0.0, 0.0, 0.8), "up").value
    assert abs(v) < 1e-14


def test_transmission_in_homogeneous_medium_is_free_field():
    m = LayeredMedium([0.0], [1.1, 1.1])
    r, rp = np.array([0.2, 0.1, -0.5]), np.array([0.0, 0.0, 0.8])
    v = eval_scattered_green(m, 1, 0, r, rp, "down").value
    R = np.linalg.norm(r - rp)
    assert abs(v - (-1j) * np.exp(1j * 1.1 * R) / (1.1 * R)) < 1e-11


def test_reciprocity(three_layer):
    # k_l^2 u_{l l'}(r, r') = k_{l'}^2 u_{l' l}(r', r) in h0 units
    r, rp = np.array([0.3, 0.1, 0.6]), np.array([-0.2, 0.4, -1.3])
    a = sum(eval_scattered_green(three_layer, 0, 1, r, rp, d).value for d in ("up",))
    b = sum(eval_scattered_green(three_layer, 1, 0, rp, r, d).value for d in ("up", "down"))
    assert abs(a * three_layer.k(0) ** 2 - b * three_layer.k(1) ** 2) < 1e-10 * abs(a)
