import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morsewitten import (
    ManifoldSpec,
    assign_orientations,
    builtin,
    check_morse_smale,
    find_critical_points,
    homology,
    morse_complex,
    pair_broken_orbits,
    trace_connecting_moduli,
)
from morsewitten.critical import CriticalSet
from morsewitten.errors import ContractError
from morsewitten.flow import integrate_trajectory
from morsewitten.moduli import regular_level, shooting_direction
from morsewitten.symbolics import parse_expression

from conftest import bundle

# isolated flow lines, from the geometry of each example
ORBIT_COUNTS = {
    "sphere_height": 0,
    "sphere_quadratic": 8,  # each saddle meets both maxima and both minima
    "sphere_two_peaks": 4,  # each peak into the north-pole saddle, the saddle twice to the minimum
    "torus_tilted": 8,      # two lines for each of the four (index 2 or 0, saddle) pairs
    "rp2": 4,               # two lifts for each of the two adjacent pairs
}


@pytest.mark.parametrize("name, count", sorted(ORBIT_COUNTS.items()))
def test_orbit_counts(name, count):
    assert len(bundle(name).catalog.all()) == count


def test_orbits_are_flow_lines_between_their_end_points():
    b = bundle("sphere_quadratic")
    cset = CriticalSet(b.spec, b.crits)
    for o in b.catalog.all():
        assert o.sign in (1, -1)
        assert float(b.spec.f.jet(o.point[None], 0)[0][0]) == pytest.approx(o.level, abs=1e-9)
        down = integrate_trajectory(b.spec, cset, o.point, 1)
        up = integrate_trajectory(b.spec, cset, o.point, -1)
        assert down.omega_limit == o.target and up.alpha_limit == o.source


def test_two_peaks_top_boundary():
    # both peaks flow into the saddle with the same sign, so x1 - x2 is a cycle
    b = bundle("sphere_two_peaks")
    d2 = b.complex.d(2)
    assert d2.shape == (1, 2) and abs(d2[0, 0]) == 1 and d2[0, 0] == d2[0, 1]


def test_upright_torus_is_not_morse_smale():
    spec = builtin("torus_untilted")
    crits = find_critical_points(spec)
    ms = check_morse_smale(spec, crits)
    assert not ms.passed
    assert all(crits[s].index <= crits[t].index for s, t, _ in ms.offending)
    assert (1, 2, 0) in ms.offending


@pytest.mark.parametrize("name", ["sphere_quadratic", "sphere_two_peaks", "torus_tilted", "rp2"])
def test_builtins_are_morse_smale(name):
    b = bundle(name)
    assert check_morse_smale(b.spec, b.crits).passed


def test_shooting_direction_prefers_the_smaller_sphere():
    spec = builtin("sphere_quadratic")
    assert shooting_direction(spec, 1) == 1
    assert shooting_direction(spec, 2) == -1


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["sphere_quadratic", "torus_tilted", "rp2"]), st.integers(0, 5))
def test_reversing_one_orientation_negates_its_orbits(name, cid):
    b = bundle(name)
    cid = cid % len(b.crits)
    flipped = b.catalog.resigned(b.Or.flipped(cid))
    for key, orbits in b.catalog.orbits.items():
        for o, p in zip(orbits, flipped[key]):
            # points of index 0 carry the empty frame, which flipping leaves alone
            factor = -1 if (cid in key and b.crits[cid].index > 0) else 1
            assert p.sign == factor * o.sign


def three_sphere(involution=None):
    reflections = tuple(np.diag([-1.0 if j == i else 1.0 for j in range(4)]) for i in range(4))
    return ManifoldSpec(
        4, (parse_expression("x1^2+x2^2+x3^2+x4^2-1", 4),),
        parse_expression("4*x1^2+3*x2^2+2*x3^2+x4^2", 4), 3,
        involution=involution, label="s3", box=1.5, symmetries=reflections,
    )


def test_three_sphere_homology():
    b = morse_complex(three_sphere(), 0)
    assert [c.index for c in b.crits] == [3, 3, 2, 2, 1, 1, 0, 0]
    h = homology(b.complex, "Z")
    assert h.betti == [1, 0, 0, 1] and h.torsion == [[], [], [], []]


def test_real_projective_three_space_homology():
    # RP^3: Z, Z/2, 0, Z
    b = morse_complex(three_sphere(-np.eye(4)), 0)
    h = homology(b.complex, "Z")
    assert h.betti == [1, 0, 0, 1] and h.torsion == [[], [2], [], []]
    assert homology(b.complex, "Z2").betti == [1, 1, 1, 1]


def test_moduli_arcs_and_broken_orbits_on_the_quadratic_sphere():
    b = bundle("sphere_quadratic")
    x, z = 0, 4
    a = regular_level(b.crits, x, z)
    arcs = trace_connecting_moduli(b.spec, b.crits, x, z, a, catalog=b.catalog)
    assert len(arcs) == 1 and len(arcs[0].ends) == 2
    assert {e.intermediate[0] for e in arcs[0].ends} == {2, 3}
    f = b.spec.f.jet(arcs[0].points, 0)[0]
    np.testing.assert_allclose(f, a, atol=1e-9)
    rep = pair_broken_orbits(b.spec, b.crits, b.catalog, x, z, arcs)
    assert rep.bijection and rep.arc_sums == [0]


def test_tracing_needs_index_gap_two():
    b = bundle("sphere_quadratic")
    with pytest.raises(ContractError):
        trace_connecting_moduli(b.spec, b.crits, 0, 2, 2.5, catalog=b.catalog)


def test_regular_level_avoids_critical_values():
    crits = bundle("sphere_quadratic").crits
    a = regular_level(crits, 0, 4)
    assert min(abs(a - c.value) for c in crits) >= 0.25
