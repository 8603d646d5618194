import functools
import itertools
from types import SimpleNamespace

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from sympy.matrices.normalforms import smith_normal_form as sympy_snf

from morsewitten import (
    MorseComplex,
    assemble_complex,
    coboundary_complex,
    cohomology,
    homology,
    homology_basis,
    induced_map_on_homology,
    morse_inequalities_check,
    smith_normal_form,
)
from morsewitten.complex import check_chain_map, rank_gf2
from morsewitten.errors import ComplexInconsistencyError, ContractError

matrices = st.integers(1, 5).flatmap(
    lambda m: st.integers(1, 5).flatmap(
        lambda n: st.lists(st.lists(st.integers(-12, 12), min_size=n, max_size=n), min_size=m, max_size=m)
    )
)


def sympy_factors(A):
    D = sympy_snf(sympy.Matrix(A), domain=sympy.ZZ)
    return sorted(abs(int(D[i, i])) for i in range(min(D.shape)) if D[i, i] != 0)


@settings(max_examples=200, deadline=None)
@given(matrices)
def test_smith_form_matches_sympy_and_factors_exactly(A):
    s = smith_normal_form(A)
    U, D, V = s.as_arrays()
    assert (U.dot(D).dot(V) == np.array(A, dtype=object)).all()
    assert abs(sympy.Matrix(s.U).det()) == 1 and abs(sympy.Matrix(s.V).det()) == 1
    assert (np.array(s.U, dtype=object).dot(np.array(s.U_inv, dtype=object)) == np.eye(len(A), dtype=int)).all()
    d = s.invariant_factors
    assert all(x > 0 for x in d)
    assert all(b % a == 0 for a, b in zip(d, d[1:]))
    assert sorted(d) == sympy_factors(A)


def test_smith_form_has_no_overflow():
    big = 2**62
    s = smith_normal_form([[big, 0], [0, big * 3]])
    assert s.invariant_factors == [big, 3 * big]


def test_smith_form_of_empty_and_zero_matrices():
    assert smith_normal_form(np.zeros((0, 3), dtype=int)).rank == 0
    assert smith_normal_form(np.zeros((2, 2), dtype=int)).invariant_factors == []


def rank_gf2_brute(A):
    rows = [tuple(int(v) % 2 for v in r) for r in A]
    span = set()
    for bits in itertools.product((0, 1), repeat=len(rows)):
        span.add(tuple(sum(b * r[j] for b, r in zip(bits, rows)) % 2 for j in range(len(rows[0]))))
    return len(span).bit_length() - 1


@settings(max_examples=100, deadline=None)
@given(matrices)
def test_rank_over_two_elements_by_enumerating_the_span(A):
    assert rank_gf2(A) == rank_gf2_brute(A)


def complex_of(*boundaries):
    """Chain complex C_n -> ... -> C_0 from boundary matrices d_1 .. d_n."""
    ranks = [boundaries[0].shape[0]] + [d.shape[1] for d in boundaries]
    gens, start = [], 0
    for r in ranks:
        gens.append(list(range(start, start + r)))
        start += r
    return MorseComplex(len(boundaries), gens, {k + 1: np.array(d, dtype=np.int64) for k, d in enumerate(boundaries)})


# random complexes of length two: d2 maps into the kernel of d1
@st.composite
def complexes(draw):
    n0, n1, n2 = draw(st.integers(1, 4)), draw(st.integers(1, 4)), draw(st.integers(1, 4))
    d1 = np.array(draw(st.lists(st.lists(st.integers(-3, 3), min_size=n1, max_size=n1), min_size=n0, max_size=n0)))
    ker = sympy.Matrix(d1).nullspace()
    basis = []
    for v in ker:
        den = functools.reduce(sympy.ilcm, [x.q for x in v], 1)
        basis.append([int(x * den) for x in v])
    coeffs = np.array(draw(st.lists(st.lists(st.integers(-3, 3), min_size=n2, max_size=n2),
                                    min_size=len(basis), max_size=len(basis))), dtype=np.int64)
    d2 = (np.array(basis, dtype=np.int64).T @ coeffs) if basis else np.zeros((n1, n2), dtype=np.int64)
    return complex_of(d1, d2.reshape(n1, n2))


@settings(max_examples=100, deadline=None)
@given(complexes())
def test_homology_agrees_with_sympy_smith_forms(cx):
    h = homology(cx, "Z")
    for k in range(3):
        dk, dk1 = cx.d(k), cx.d(k + 1)
        rk = len(sympy_factors(dk)) if dk.size else 0
        f1 = sympy_factors(dk1) if dk1.size else []
        assert h.betti[k] == cx.rank(k) - rk - len(f1)
        assert h.torsion[k] == [t for t in f1 if t > 1]


@settings(max_examples=100, deadline=None)
@given(complexes())
def test_universal_coefficients(cx):
    # H^k is free of rank b_k plus the torsion of H_{k-1}; over Z2 every
    # even torsion coefficient in degrees k and k-1 adds a dimension
    h, c, h2 = homology(cx, "Z"), cohomology(cx, "Z"), homology(cx, "Z2")
    for k in range(3):
        assert c.betti[k] == h.betti[k]
        assert c.torsion[k] == (h.torsion[k - 1] if k else [])
        even = sum(1 for t in h.torsion[k] if t % 2 == 0) + (sum(1 for t in h.torsion[k - 1] if t % 2 == 0) if k else 0)
        assert h2.betti[k] == h.betti[k] + even


@settings(max_examples=60, deadline=None)
@given(complexes())
def test_homology_basis_cycles_are_independent_classes(cx):
    for k in range(3):
        b = homology_basis(cx, k)
        assert b.free.shape[1] == homology(cx, "Z").betti[k]
        for j in range(b.free.shape[1]):
            z = b.free[:, j]
            assert not np.any(cx.d(k).astype(object).dot(z))
            f, _ = b.coordinates(z)
            assert list(f) == [int(i == j) for i in range(b.free.shape[1])]


def test_projective_plane_complex():
    cx = complex_of(np.array([[0]]), np.array([[-2]]))
    h, c = homology(cx, "Z"), cohomology(cx, "Z")
    assert [h.describe(k) for k in range(3)] == ["Z", "Z2", "0"]
    assert [c.describe(k) for k in range(3)] == ["Z", "0", "Z2"]
    assert homology(cx, "Z2").betti == [1, 1, 1]
    co = coboundary_complex(cx)
    np.testing.assert_array_equal(co.delta(1), cx.d(2).T)


def test_boundary_squared_violation_names_the_pair():
    crits = [SimpleNamespace(id=i, index=k) for i, k in enumerate((2, 1, 0))]
    orbits = {(0, 1): [SimpleNamespace(sign=1)], (1, 2): [SimpleNamespace(sign=1)]}
    with pytest.raises(ComplexInconsistencyError) as info:
        assemble_complex(crits, orbits, 2)
    assert info.value.entry == (0, 2)


def test_induced_maps():
    # the complex of the quadratic function on the sphere
    cx = complex_of(np.array([[-1, -1], [1, 1]]), np.array([[1, 1], [-1, -1]]))
    ident = {k: np.eye(cx.rank(k), dtype=np.int64) for k in range(3)}
    maps = induced_map_on_homology(ident, cx, cx)
    assert [maps[k].free.tolist() for k in range(3)] == [[[1]], [], [[1]]]
    swap = dict(ident)
    swap[1] = np.array([[0, 1], [1, 0]])
    assert not check_chain_map({0: ident[0], 1: swap[1], 2: ident[2]}, cx, cx)
    with pytest.raises(ContractError):
        induced_map_on_homology({0: ident[0], 1: swap[1], 2: ident[2]}, cx, cx)


def test_morse_inequalities():
    cx = complex_of(np.array([[0, 0]]), np.array([[0], [0]]))
    rep = morse_inequalities_check(cx, homology(cx, "Z"))
    assert rep.passed and rep.euler == 0 and rep.partial_counts == [1, 1, 0]
