import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tefmm import checks, taylor as ty
from tefmm.oracle import free_direct_sum


def test_counts_and_ordering():
    assert ty.n_coeffs(0) == 1 and ty.n_coeffs(2) == 10
    idx = ty.multi_indices(3)
    assert len(idx) == ty.n_coeffs(3)
    assert np.all(np.diff(idx.sum(1)) >= 0)
    for i, k in enumerate(idx):
        assert ty.mi_position(k) == i


def test_zeroth_derivative_is_h0():
    x = np.array([0.3, -0.4, 1.2])
    R = np.linalg.norm(x)
    a = ty.nonsym_derivs(1.7, x, 0)
    assert abs(a[0] - (-1j) * np.exp(1j * 1.7 * R) / (1.7 * R)) < 1e-15


@pytest.mark.parametrize("check", ["recurrence", "ladder", "sym_nonsym"])
def test_recurrence_checks(check):
    rows = checks.ALL_CHECKS[check]()
    assert all(r.status == "pass" for r in rows), [r.as_dict() for r in rows]


def _cluster(seed, center, n=40, size=0.5):
    rng = np.random.default_rng(seed)
    return np.asarray(center) + size * (rng.random((n, 3)) - 0.5), rng.random(n) + 0.2j


@pytest.mark.parametrize("variant", ["nonsym", "sym"])
def test_m2l_converges(variant):
    k = 1.3
    src, q = _cluster(0, [0.0, 0.0, 0.0])
    tgt, _ = _cluster(1, [1.6, 0.3, -0.9])
    exact = free_direct_sum(tgt, src, q, k)
    errs = []
    for p in (2, 4, 6, 8):
        if variant == "nonsym":
            S = ty.source_te_nonsym(src, q, [0, 0, 0], p, 0.25)
            L = ty.m2l_free_nonsym(S, [1.6, 0.3, -0.9], k, 0.25)
        else:
            S = ty.source_te_sym(src, q, [0, 0, 0], p, 0.25)
            L = ty.m2l_free_sym(S, [1.6, 0.3, -0.9], k, 0.25)
        approx = ty.eval_local(L, tgt)
        errs.append(np.linalg.norm(approx - exact) / np.linalg.norm(exact))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-7


@given(st.lists(st.floats(-0.3, 0.3), min_size=3, max_size=3), st.sampled_from(["nonsym", "sym"]))
@settings(max_examples=30, deadline=None)
def test_m2m_is_exact(shift, variant):
    # moments re-centered by M2M equal moments formed at the new center
    src, q = _cluster(2, [0.1, 0.0, 0.2], n=12, size=0.3)
    c_old = np.array([0.1, 0.0, 0.2])
    c_new = c_old + np.asarray(shift)
    make = ty.source_te_nonsym if variant == "nonsym" else ty.source_te_sym
    m2m = ty.m2m_nonsym if variant == "nonsym" else ty.m2m_sym
    child = make(src, q, c_old, 5, 0.3)
    moved = m2m(child, c_new, 0.6)
    direct = make(src, q, c_new, 5, 0.6)
    assert np.allclose(moved.coeffs, direct.coeffs, rtol=1e-11, atol=1e-12 * np.abs(direct.coeffs).max())


@given(st.lists(st.floats(-0.3, 0.3), min_size=3, max_size=3), st.sampled_from(["nonsym", "sym"]))
@settings(max_examples=30, deadline=None)
def test_l2l_is_exact(shift, variant):
    # a polynomial re-centered by L2L evaluates identically
    src, q = _cluster(3, [0.0, 0.0, 0.0], n=10)
    make = ty.source_te_nonsym if variant == "nonsym" else ty.source_te_sym
    m2l = ty.m2l_free_nonsym if variant == "nonsym" else ty.m2l_free_sym
    l2l = ty.l2l_nonsym if variant == "nonsym" else ty.l2l_sym
    parent = m2l(make(src, q, [0, 0, 0], 4, 0.25), [2.0, 0.0, 0.0], 1.1, 0.5)
    child = l2l(parent, np.array([2.0, 0.0, 0.0]) + np.asarray(shift), 0.25)
    pts = child.center + 0.2 * (np.random.default_rng(4).random((6, 3)) - 0.5)
    a, b = ty.eval_local(parent, pts), ty.eval_local(child, pts)
    assert np.allclose(a, b, rtol=1e-11)


def test_sym_and_nonsym_m2l_agree():
    src, q = _cluster(5, [0.0, 0.0, 0.0])
    tgt, _ = _cluster(6, [-1.2, 1.1, 0.8])
    a = ty.eval_local(ty.m2l_free_nonsym(ty.source_te_nonsym(src, q, [0, 0, 0], 6, 0.25),
                                         [-1.2, 1.1, 0.8], 0.9, 0.25), tgt)
    b = ty.eval_local(ty.m2l_free_sym(ty.source_te_sym(src, q, [0, 0, 0], 6, 0.25),
                                      [-1.2, 1.1, 0.8], 0.9, 0.25), tgt)
    assert np.allclose(a, b, rtol=1e-10)


def test_sym_coords_roundtrip():
    x = np.array([[0.3, -0.7, 1.1]])
    w = ty.sym_coords(x)
    assert np.allclose(w[0], [0.3 - 0.7j, 0.3 + 0.7j, 1.1])
