import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from morsewitten import builtin, find_critical_points, integrate_trajectory, linearized_flow_at_critical
from morsewitten.critical import CriticalSet
from morsewitten.errors import UnresolvedLimitError
from morsewitten.flow import (
    check_stable_graph,
    flow_map,
    hessian_in_eigenframe,
    integrate_batch,
    level_crossings,
    local_stable_graph,
    reverse_trajectory,
)
from morsewitten.geometry import constraint_jets_batch, sample_manifold

from conftest import bundle


def drift(spec, points):
    return np.max(np.abs(constraint_jets_batch(spec, points, 1)[0]))


@pytest.mark.parametrize("name", ["sphere_two_peaks", "torus_tilted", "rp2"])
def test_sampled_flow_lines_descend_on_the_manifold(name):
    spec = builtin(name)
    crits = find_critical_points(spec)
    starts = sample_manifold(spec, 30, seed=3)
    for tr in integrate_batch(spec, crits, starts, 1):
        assert tr.omega_limit is not None
        assert np.all(np.diff(tr.values) < 0)
        assert drift(spec, tr.points) < 1e-12
        assert np.all(np.diff(tr.times) > 0)


def test_backward_flow_climbs_to_a_maximum():
    spec = builtin("sphere_height")
    crits = find_critical_points(spec)
    tr = integrate_trajectory(spec, crits, np.array([0.6, 0.0, 0.8]), direction=-1)
    assert tr.alpha_limit == 0 and tr.final_limit == (0, 0)
    assert np.all(np.diff(tr.values) > 0)
    back = reverse_trajectory(tr)
    assert np.all(np.diff(back.values) < 0)


def test_height_flow_follows_the_meridian():
    # on the sphere the flow of x3 is dz/dt = -(1 - z^2): z(t) = -tanh(t - atanh(z0))
    spec = builtin("sphere_height")
    z0, t = 0.5, 0.8
    q = flow_map(spec, np.array([np.sqrt(1 - z0**2), 0.0, z0]), t)
    assert q[2] == pytest.approx(-np.tanh(t - np.arctanh(z0)), abs=1e-9)
    assert q[1] == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_flow_is_a_semigroup(s, t):
    spec = builtin("sphere_two_peaks")
    p = np.array([0.3, 0.5, np.sqrt(1 - 0.34)])
    a = flow_map(spec, flow_map(spec, p, s), t)
    b = flow_map(spec, p, s + t)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_unresolved_limit_is_reported():
    spec = builtin("sphere_height")
    crits = find_critical_points(spec)
    with pytest.raises(UnresolvedLimitError):
        integrate_trajectory(spec, crits, np.array([0.6, 0.0, 0.8]), max_time=0.5)


def test_level_crossings_hit_the_level():
    spec = builtin("sphere_quadratic")
    crits = find_critical_points(spec)
    tr = integrate_trajectory(spec, crits, np.array([0.8, 0.36, 0.48]), levels=(2.0, 1.5))
    assert [a for a, _ in tr.crossings] == [2.0, 1.5]
    for a, q in tr.crossings:
        assert float(spec.f.jet(q[None], 0)[0][0]) == pytest.approx(a, abs=1e-10)


@pytest.mark.parametrize("name", ["sphere_quadratic", "sphere_two_peaks", "torus_tilted", "rp2"])
def test_linearized_flow_is_the_exponential_of_the_hessian(name):
    spec = builtin(name)
    for x in find_critical_points(spec):
        H = hessian_in_eigenframe(spec, x)
        np.testing.assert_allclose(H, np.diag(x.eigenvalues), atol=1e-9)
        for t in (0.5, 1.0, 2.0):
            D = linearized_flow_at_critical(spec, x, t)
            assert np.linalg.norm(D - scipy.linalg.expm(-t * H)) < 1e-6


def test_stable_graph_points_flow_into_the_saddle():
    b = bundle("sphere_quadratic")
    saddle = next(c for c in b.crits if c.index == 1)
    g = local_stable_graph(b.spec, saddle, crits=b.crits)
    assert len(g.points) >= 5
    assert drift(b.spec, g.points) < 1e-12
    # the stable manifold is tangent to the stable space: offsets are second order
    r = np.linalg.norm(g.stable_coords, axis=1)
    assert np.all(np.linalg.norm(g.unstable_offsets, axis=1) <= 10 * r**2 + 1e-12)
    trajs = check_stable_graph(b.spec, CriticalSet(b.spec, b.crits), saddle, g)
    assert all(tr.omega_limit == saddle.id for tr in trajs)
