import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morsewitten import build_admissible_homotopy, build_product_system, builtin, continuation, kappa_lower_bound
from morsewitten.continuation import ProductFunction, crosses_middle, smoothstep, tilt_for
from morsewitten.errors import ContractError, KappaTooSmallError
from morsewitten.geometry import sample_manifold
from morsewitten.symbolics import parse_expression

from conftest import bundle


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_smoothstep_is_a_monotone_symmetric_step(t, u):
    w, dw, _ = smoothstep(t)
    assert 0 <= w <= 1 and dw >= 0
    assert float(smoothstep(1 - t)[0]) == pytest.approx(1 - float(w), abs=1e-12)
    if t <= u:
        assert smoothstep(t)[0] <= smoothstep(u)[0] + 1e-15


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99))
def test_smoothstep_derivatives(t):
    h = 1e-6
    w, dw, ddw = smoothstep(t)
    assert dw == pytest.approx((smoothstep(t + h)[0] - smoothstep(t - h)[0]) / (2 * h), abs=1e-7)
    assert ddw == pytest.approx((smoothstep(t + h)[1] - smoothstep(t - h)[1]) / (2 * h), abs=1e-5)


def homotopy(delta=0.25, tilt=0.0, axis=0):
    a, b = builtin("sphere_quadratic"), builtin("sphere_two_peaks")
    return build_admissible_homotopy(a, a.f, b.f, delta, tilt, axis)


@pytest.mark.parametrize("delta", [0.0, -0.1, 0.26, 0.5])
def test_flattening_width_is_checked(delta):
    with pytest.raises(ContractError):
        homotopy(delta)


@pytest.mark.parametrize("delta", [0.1, 0.25])
def test_homotopy_is_constant_near_its_ends(delta):
    h = homotopy(delta, tilt=0.2, axis=1)
    P = sample_manifold(h.spec, 20, seed=1)
    fa, fb = h.f_alpha.jet(P, 0)[0], h.f_beta.jet(P, 0)[0]
    for s in np.linspace(0, delta, 5):
        np.testing.assert_allclose(h.value(P, s), fa, atol=1e-15)
        np.testing.assert_allclose(h.ds_value(P, s), 0, atol=1e-15)
    for s in np.linspace(1 - delta, 1, 5):
        np.testing.assert_allclose(h.value(P, s), fb, atol=1e-15)


def test_kappa_bound_dominates_the_slope_and_the_gap():
    h = homotopy(0.25)
    k = kappa_lower_bound(h)
    P = sample_manifold(h.spec, 50, seed=0)
    gap = h.f_beta.jet(P, 0)[0].max() - h.f_alpha.jet(P, 0)[0].min()
    assert k >= gap
    slope = max(np.abs(h.ds_value(P, s)).max() for s in np.linspace(0, 1, 200))
    assert k * math.pi * math.sin(math.pi * 0.75) / 2 >= slope


def test_kappa_of_a_constant_homotopy_is_the_padded_range():
    # 3x1^2 + 2x2^2 + x3^2 ranges over [1, 3] on the sphere; the slope vanishes
    a = builtin("sphere_quadratic")
    h = build_admissible_homotopy(a, a.f, a.f, 0.25)
    assert kappa_lower_bound(h) == pytest.approx(1.1 * 2.0, abs=1e-12)


def test_kappa_of_a_unit_slope_homotopy_with_no_range_gap():
    # f_beta - f_alpha = -4/15 and max |w'| = 15/4, so |d_s f| <= 1 with the peak
    # at s = 1/2; f_beta lies below f_alpha, so the gap term is negative
    a = builtin("sphere_height")
    c = 1 / 15
    fa = parse_expression(f"{c!r}*(x3+2)", 3)
    fb = parse_expression(f"{c!r}*(x3-2)", 3)
    k = kappa_lower_bound(build_admissible_homotopy(a, fa, fb, 0.25))
    assert k == pytest.approx(1.1 * 2 / (math.pi * math.sin(3 * math.pi / 4)), rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(0, 2 * math.pi), st.floats(0.1, 3.0), st.booleans())
def test_product_function_derivatives(s1, angle, z, tilted):
    h = homotopy(0.1, tilt=0.2 if tilted else 0.0, axis=1)
    F = ProductFunction(h, 5.0)
    q = np.array([math.cos(angle), math.sin(angle), z])
    p = np.concatenate([q, [s1, math.sqrt(1 - s1 * s1)]])
    v, g, H = F.jet(p[None], 2)
    eps = 1e-6
    E = np.eye(5) * eps
    fd_g = np.array([(F.jet((p + E[i])[None], 1)[0][0] - F.jet((p - E[i])[None], 1)[0][0]) / (2 * eps) for i in range(5)])
    fd_H = np.array([(F.jet((p + E[i])[None], 1)[1][0] - F.jet((p - E[i])[None], 1)[1][0]) / (2 * eps) for i in range(5)])
    np.testing.assert_allclose(g[0], fd_g, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(H[0], fd_H, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(H[0], H[0].T, atol=0)


def test_product_critical_points_sit_on_the_end_slices():
    a, b = builtin("sphere_quadratic"), builtin("sphere_two_peaks")
    h = build_admissible_homotopy(a, a.f, b.f, 0.25)
    kappa = kappa_lower_bound(h)
    sysm = build_product_system(a, b, h, kappa, search_seeds=500)
    for cid, pid in sysm.alpha_ids.items():
        c, pc = sysm.crits_alpha[cid], sysm.crits[pid]
        assert pc.index == c.index + 1
        assert pc.value == pytest.approx(c.value + kappa, abs=1e-12)
    for cid, pid in sysm.beta_ids.items():
        c, pc = sysm.crits_beta[cid], sysm.crits[pid]
        assert pc.index == c.index
        assert pc.value == pytest.approx(c.value, abs=1e-12)


def test_small_kappa_is_detected():
    # from two peaks to the quadratic f_beta - f_alpha reaches 2 at the south
    # pole, so a small kappa leaves a critical point of F inside the interval
    a, b = builtin("sphere_two_peaks"), builtin("sphere_quadratic")
    h = build_admissible_homotopy(a, a.f, b.f, 0.25)
    with pytest.raises(KappaTooSmallError):
        build_product_system(a, b, h, 0.2, search_seeds=2000)


def test_tilt_is_used_only_for_shared_points_gaining_index():
    q, tp = bundle("sphere_quadratic"), bundle("sphere_two_peaks")
    # (0, 0, 1) is a minimum of the quadratic and the saddle of the two-peaks function
    tilt, axis = tilt_for(q, tp)
    assert tilt > 0 and axis == 1
    assert tilt_for(tp, q)[0] == 0.0


def test_crosses_middle():
    up = np.array([[0, 0, 0, 1.0, 0.0], [0, 0, 0, 0.3, 0.95], [0, 0, 0, -0.3, 0.95], [0, 0, 0, -1.0, 0.0]])
    assert crosses_middle(up)
    down = up.copy()
    down[:, -1] *= -1
    assert not crosses_middle(down)


def test_constant_homotopy_on_the_height_sphere_is_the_identity():
    A = bundle("sphere_height")
    cm = continuation(A, A)
    assert [cm.psi[k].tolist() for k in range(3)] == [[[1]], [], [[1]]]
    assert cm.delta_blocks_ok
    assert all(not np.any(m) for m in cm.all_lines.values())
