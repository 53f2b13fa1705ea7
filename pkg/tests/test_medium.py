import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tefmm import checks
from tefmm.medium import (DOWN, UP, LayeredMedium, closed_form_three_layer, closed_form_two_layer,
                          solve_reaction_coeffs_general, three_layer_kappas, vertical_wavenumber)


def test_layer_bookkeeping(three_layer):
    m = three_layer
    assert m.L == 2 and m.n_layers == 3
    assert m.top(0) == np.inf and m.bottom(2) == -np.inf
    assert m.thickness(1) == 2.0
    assert [m.layer_of(z) for z in (1.0, -1.0, -3.0)] == [0, 1, 2]
    with pytest.raises(ValueError):
        m.layer_of(-2.0)
    with pytest.raises(ValueError):
        m.check_interior(1, [0.0])


def test_admissible_directions(three_layer):
    m = three_layer
    assert m.admissible(0, UP) and not m.admissible(0, DOWN)
    assert m.admissible(1, UP) and m.admissible(1, DOWN)
    assert m.admissible(2, DOWN) and not m.admissible(2, UP)


@pytest.mark.parametrize("d,k", [([0.0, 0.0], [1, 2, 3]), ([0.0], [1.0]), ([0.0], [1.0, -1.0])])
def test_invalid_media(d, k):
    with pytest.raises(ValueError):
        LayeredMedium(d, k)


@given(st.floats(0.0, 20.0), st.floats(-0.5, 0.5))
@settings(max_examples=60, deadline=None)
def test_vertical_wavenumber_branch(re, im):
    m = LayeredMedium([0.0], [1.3, 0.7])
    kz = vertical_wavenumber(m, 0, re + 1j * im)
    assert kz.imag >= -1e-15
    assert abs(kz ** 2 - (1.3 ** 2 - (re + 1j * im) ** 2)) < 1e-9 * max(1.0, re * re)


def test_general_solver_matches_closed_forms():
    rows = checks.closed_form_equivalence()
    assert all(r.status == "pass" for r in rows), [r.as_dict() for r in rows]


def test_homogeneous_medium():
    # no reflection inside a layer; across layers the field is the free wave
    m = LayeredMedium([0.0, -1.0], [1.2, 1.2, 1.2])
    kr = np.linspace(0.1, 5.0, 17) + 0.05j
    for l in range(3):
        c = solve_reaction_coeffs_general(m, l, l, kr)
        for f in ("uu", "ud", "du", "dd"):
            assert np.max(np.abs(getattr(c, f))) < 1e-13
    down = solve_reaction_coeffs_general(m, 2, 0, kr)
    E = np.exp(1j * vertical_wavenumber(m, 1, kr) * m.thickness(1))
    assert np.allclose(down.du, E, rtol=1e-13)


def test_two_layer_reflection_coefficient():
    # reflection with continuity of u and of k d_z u across the interface
    m = LayeredMedium([0.0], [0.8, 1.5])
    kr = np.array([0.3, 1.1, 2.5]) + 0.0j
    kz0, kz1 = vertical_wavenumber(m, 0, kr), vertical_wavenumber(m, 1, kr)
    c = closed_form_two_layer(m, 0, 0, kr)
    a, b = 0.8 * kz0, 1.5 * kz1
    assert np.allclose(c.uu, (a - b) / (a + b), rtol=1e-13)
    assert np.all(c.ud == 0) and np.all(c.du == 0) and np.all(c.dd == 0)


def test_three_layer_denominators_agree(three_layer):
    kr = np.linspace(0.05, 4.0, 31) + 0.1j
    K = three_layer_kappas(three_layer, kr)
    assert np.max(np.abs(K["den_top"] - K["den_bottom"]) / np.abs(K["den_top"])) < 1e-13
    g = solve_reaction_coeffs_general(three_layer, 1, 1, kr)
    c = closed_form_three_layer(three_layer, 1, 1, kr)
    assert np.allclose(g.uu, c.uu, rtol=1e-12, atol=0)
