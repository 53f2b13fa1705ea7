import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tefmm import dcim
from tefmm.tables import (Component, Grid1D, ImageTable, NearTable, STable, TableError, build_image_table,
                          build_near_table, build_s_table, config_hash, lagrange_weights, load_tables,
                          near_table_probe_error, s_table_self_test, save_tables)

# the top-layer image fits sit on a spectral residual floor near 5e-5
pytestmark = pytest.mark.filterwarnings("ignore::tefmm.dcim.FitWarning")

COMP_TWO = Component(0, 0, "up")
COMP_CROSS = Component(1, 0, "down")


@pytest.fixture(scope="module")
def near_table(two_layer):
    return build_near_table(two_layer, COMP_TWO, 0.8, (0.5, 1.0), (0.6, 1.2), tol=1e-7)


@pytest.fixture(scope="module")
def s_table(two_layer):
    return build_s_table(two_layer, COMP_CROSS, 4, 1.5, (-1.0, -0.5), (0.5, 1.0), spacing=0.1,
                         z_spacing=0.125)


@pytest.fixture(scope="module")
def image_table(two_layer):
    return build_image_table(two_layer, COMP_TWO, [0.625, 0.875, 0.625], 3, 0.5)


@given(st.integers(0, 6), st.floats(0.0, 1.0), st.lists(st.floats(-1, 1), min_size=7, max_size=7))
@settings(max_examples=50, deadline=None)
def test_lagrange_exact_on_polynomials(order, frac, coef):
    g = Grid1D(-0.3, 0.1, 12)
    x = g.origin + frac * (g.end - g.origin)
    j0, w = lagrange_weights(g, x, order)
    poly = np.polynomial.Polynomial(coef[:order + 1])
    assert abs(w @ poly(g.nodes[j0:j0 + len(w)]) - poly(x)) < 1e-9


def test_lagrange_rejects_outside():
    with pytest.raises(TableError):
        lagrange_weights(Grid1D(0.0, 0.1, 5), 0.5, 3)


def test_near_table_probe_error(near_table, two_layer):
    assert near_table.midpoint_error <= 0.1 * near_table.tol
    assert near_table_probe_error(near_table, two_layer, n_probes=100) <= near_table.tol


def test_near_table_outside_range(near_table):
    with pytest.raises(TableError):
        near_table(0.2, 0.3, 0.8)


def test_s_table_self_test(s_table, two_layer):
    err = s_table_self_test(s_table, two_layer, n_probes=100)
    assert err <= s_table.tol
    assert s_table.self_test_error == err


def test_s_table_symmetry(s_table):
    # S with M' and M - M' differ by (-1)^M
    row, sign = s_table.position(1, 2, 3, 3)
    assert (row, sign) == (s_table.position(1, 2, 3, 0)[0], -1.0)


def test_s_table_factored_equals_dense(s_table):
    dense = STable(s_table.comp, s_table.p, s_table.grids, s_table.index, values=s_table.dense(),
                   order_rho=s_table.order_rho, order_z=s_table.order_z)
    a = s_table.batch([0.37, 1.02], -0.81, 0.66)
    b = dense.batch([0.37, 1.02], -0.81, 0.66)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14 * np.abs(a).max())


def test_image_table_count(image_table):
    assert len(image_table) == dcim.dcim_budget(2, 3)
    with pytest.raises(TableError):
        image_table.get(0.7, 0)


def test_inadmissible_component(two_layer):
    with pytest.raises(TableError):
        build_near_table(two_layer, Component(0, 0, "down"), 1.0, (0.5, 1.0), (0.5, 1.0))


def test_roundtrip_bit_identical(tmp_path, near_table, s_table, image_table):
    h = config_hash({"case": 1})
    path = tmp_path / "t.swt"
    n = save_tables(path, [near_table, s_table, image_table], h)
    assert n == 1 + len(s_table.index) + len(image_table)
    assert path.read_bytes()[:4] == b"SWT1"
    h2, loaded = load_tables(path, expect_hash=h)
    assert h2 == h
    near = [t for t in loaded if isinstance(t, NearTable)][0]
    st_ = [t for t in loaded if isinstance(t, STable)][0]
    im = [t for t in loaded if isinstance(t, ImageTable)][0]
    assert np.array_equal(near.values, near_table.values)
    assert near.grids == near_table.grids
    assert np.array_equal(st_.values, s_table.dense())
    assert np.array_equal(st_.index, s_table.index)
    for key, s in image_table.sets.items():
        assert np.array_equal(im.sets[key].amplitudes, s.amplitudes)
        assert np.array_equal(im.sets[key].offsets, s.offsets)
    # a second save of the loaded tables reproduces the file byte for byte
    path2 = tmp_path / "t2.swt"
    save_tables(path2, [near, st_, im], h)
    assert path2.read_bytes() == path.read_bytes()
    with pytest.raises(ValueError):
        load_tables(path, expect_hash=config_hash({"case": 2}))
