"""Morse-Witten chain complexes and their (co)homology.

All matrix algebra is exact: Smith normal form runs on Python integers, so
there is no overflow to guard against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ComplexInconsistencyError, ContractError

# --------------------------------------------------------------------------
# Smith normal form
# --------------------------------------------------------------------------


def _ident(n):
    return [[int(i == j) for j in range(n)] for i in range(n)]


def _tolist(A):
    A = np.asarray(A, dtype=object)
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    return [[int(v) for v in row] for row in A], A.shape


@dataclass(frozen=True)
class SmithForm:
    """``A = U D V`` with ``U``, ``V`` unimodular and ``D`` diagonal.

    The inverses are kept as well; all entries are Python integers.
    """

    U: list
    D: list
    V: list
    U_inv: list
    V_inv: list
    shape: tuple

    @property
    def diagonal(self):
        m, n = self.shape
        return [self.D[i][i] for i in range(min(m, n))]

    @property
    def rank(self):
        return sum(1 for d in self.diagonal if d != 0)

    @property
    def invariant_factors(self):
        return [d for d in self.diagonal if d != 0]

    def as_arrays(self):
        return tuple(np.array(M, dtype=object).reshape(s) for M, s in (
            (self.U, (self.shape[0],) * 2), (self.D, self.shape), (self.V, (self.shape[1],) * 2)))


def smith_normal_form(A):
    """Smith normal form of an integer matrix.

    Row operations are recorded in ``L`` and column operations in ``R`` so
    that ``L A R = D``; then ``U = L^-1`` and ``V = R^-1``.  Pivots are
    chosen by smallest magnitude.
    """
    D, (m, n) = _tolist(A)
    L, Li = _ident(m), _ident(m)
    R, Ri = _ident(n), _ident(n)

    def swap_rows(i, j):
        for M in (D, L):
            M[i], M[j] = M[j], M[i]
        for row in Li:
            row[i], row[j] = row[j], row[i]

    def swap_cols(i, j):
        for M in (D, R):
            for row in M:
                row[i], row[j] = row[j], row[i]
        Ri[i], Ri[j] = Ri[j], Ri[i]

    def add_row(src, dst, q):  # row_dst += q * row_src
        if q == 0:
            return
        for M in (D, L):
            M[dst] = [a + q * b for a, b in zip(M[dst], M[src])]
        for row in Li:  # inverse: col_src -= q * col_dst
            row[src] -= q * row[dst]

    def add_col(src, dst, q):  # col_dst += q * col_src
        if q == 0:
            return
        for M in (D, R):
            for row in M:
                row[dst] += q * row[src]
        Ri[src] = [a - q * b for a, b in zip(Ri[src], Ri[dst])]

    def negate_row(i):
        D[i] = [-a for a in D[i]]
        L[i] = [-a for a in L[i]]
        for row in Li:
            row[i] = -row[i]

    for t in range(min(m, n)):
        while True:
            entries = [(abs(D[i][j]), i, j) for i in range(t, m) for j in range(t, n) if D[i][j]]
            if not entries:
                break
            _, i, j = min(entries)
            swap_rows(t, i)
            swap_cols(t, j)
            p = D[t][t]
            dirty = False
            for i in range(t + 1, m):
                q = D[i][t] // p
                add_row(t, i, -q)
                dirty |= D[i][t] != 0
            for j in range(t + 1, n):
                q = D[t][j] // p
                add_col(t, j, -q)
                dirty |= D[t][j] != 0
            if dirty:
                continue
            bad = [(i, j) for i in range(t + 1, m) for j in range(t + 1, n) if D[i][j] % p]
            if bad:
                add_row(bad[0][0], t, 1)
                continue
            break
        if t < m and t < n and D[t][t] < 0:
            negate_row(t)
    out = SmithForm(Li, D, Ri, L, R, (m, n))
    _verify_smith(out, A)
    return out


def _verify_smith(s, A):
    """Re-multiply and check unimodularity and the divisibility chain."""
    m, n = s.shape
    A, _ = _tolist(A)
    if m and n and _matmul(_matmul(s.U, s.D), s.V) != A:
        raise ArithmeticError("Smith normal form does not reproduce its input")
    for M, Mi, k in ((s.U, s.U_inv, m), (s.V, s.V_inv, n)):
        if k and _matmul(M, Mi) != _ident(k):
            raise ArithmeticError("Smith transform is not unimodular")
    d = s.invariant_factors
    if any(x < 0 for x in d) or any(d[i + 1] % d[i] for i in range(len(d) - 1)):
        raise ArithmeticError("invariant factors do not form a divisibility chain")


def invariant_factors(A):
    return smith_normal_form(A).invariant_factors


def _matmul(A, B):
    return [[sum(a * b for a, b in zip(row, col)) for col in zip(*B)] for row in A] if A and B else []


def rank_gf2(A):
    """Rank over the field with two elements."""
    M = (np.asarray(A, dtype=np.int64) % 2).astype(np.uint8)
    if M.size == 0:
        return 0
    M = M.copy()
    rows, cols = M.shape
    r = 0
    for c in range(cols):
        piv = np.flatnonzero(M[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        M[[r, p]] = M[[p, r]]
        for i in np.flatnonzero(M[:, c]):
            if i != r:
                M[i] ^= M[r]
        r += 1
        if r == rows:
            break
    return r


# --------------------------------------------------------------------------
# complexes
# --------------------------------------------------------------------------


@dataclass
class MorseComplex:
    """Chain complex graded by Morse index.

    ``generators[k]`` lists critical-point ids of index ``k`` in order and
    ``boundary[k]`` is the integer matrix of ``C_k -> C_{k-1}`` (rows
    indexed by ``generators[k-1]``).
    """

    dim: int
    generators: list
    boundary: dict
    label: str = ""
    or_seed: int = 0

    def __post_init__(self):
        for k in range(self.dim + 1):
            if k not in self.boundary:
                self.boundary[k] = np.zeros((self.rank(k - 1), self.rank(k)), dtype=np.int64)

    def rank(self, k):
        return len(self.generators[k]) if 0 <= k <= self.dim else 0

    @property
    def counts(self):
        return [self.rank(k) for k in range(self.dim + 1)]

    def d(self, k):
        """Boundary ``C_k -> C_{k-1}`` (a zero matrix outside the range)."""
        if 1 <= k <= self.dim:
            return np.asarray(self.boundary[k], dtype=np.int64)
        return np.zeros((self.rank(k - 1), self.rank(k)), dtype=np.int64)


@dataclass
class CochainComplex:
    """``delta[k]`` maps ``C^k -> C^{k+1}``; it is the transpose of the
    boundary ``C_{k+1} -> C_k``."""

    dim: int
    generators: list
    coboundary: dict
    label: str = ""

    def rank(self, k):
        return len(self.generators[k]) if 0 <= k <= self.dim else 0

    def delta(self, k):
        if 0 <= k < self.dim:
            return np.asarray(self.coboundary[k], dtype=np.int64)
        return np.zeros((self.rank(k + 1), self.rank(k)), dtype=np.int64)

    def as_chain_complex(self):
        """Regrade ``D_j = C^{n-j}`` so that cohomology becomes homology."""
        n = self.dim
        gens = [self.generators[n - j] for j in range(n + 1)]
        bd = {j: self.delta(n - j) for j in range(1, n + 1)}
        return MorseComplex(n, gens, bd, self.label)


def assemble_complex(crits, orbits, dim, label="", or_seed=0):
    """Boundary matrices from signed connecting orbits.

    ``orbits`` maps (source id, target id) to orbit lists (anything with a
    ``sign``).  ``d^2 = 0`` is checked before returning.
    """
    gens = [[c.id for c in crits if c.index == k] for k in range(dim + 1)]
    pos = [{cid: i for i, cid in enumerate(g)} for g in gens]
    bd = {}
    for k in range(1, dim + 1):
        M = np.zeros((len(gens[k - 1]), len(gens[k])), dtype=np.int64)
        for x in gens[k]:
            for y in gens[k - 1]:
                M[pos[k - 1][y], pos[k][x]] = sum(o.sign for o in orbits.get((x, y), []))
        bd[k] = M
    cx = MorseComplex(dim, gens, bd, label, or_seed)
    check_d_squared(cx)
    return cx


def check_d_squared(cx):
    for k in range(2, cx.dim + 1):
        P = cx.d(k - 1) @ cx.d(k)
        nz = np.argwhere(P != 0)
        if nz.size:
            i, j = nz[0]
            x, z = cx.generators[k][j], cx.generators[k - 2][i]
            raise ComplexInconsistencyError(
                f"boundary squared is nonzero: coefficient {P[i, j]} of {z} in dd({x})",
                entry=(x, z),
            )
    return True


def coboundary_complex(cx):
    gens = [list(g) for g in cx.generators]
    co = {k: cx.d(k + 1).T.copy() for k in range(cx.dim)}
    return CochainComplex(cx.dim, gens, co, cx.label)


# --------------------------------------------------------------------------
# homology
# --------------------------------------------------------------------------


@dataclass
class HomologyResult:
    """Per degree: Betti number and torsion coefficients (empty over Z2)."""

    ring: str
    betti: list
    torsion: list
    cohomological: bool = False

    def data(self, k):
        return (self.betti[k], tuple(self.torsion[k]))

    def describe(self, k):
        if self.ring == "Z2":
            return "0" if self.betti[k] == 0 else ("Z2" if self.betti[k] == 1 else f"Z2^{self.betti[k]}")
        parts = []
        if self.betti[k]:
            parts.append("Z" if self.betti[k] == 1 else f"Z^{self.betti[k]}")
        parts += [f"Z{t}" for t in self.torsion[k]]
        return " + ".join(parts) if parts else "0"


def homology(cx, coefficients="Z"):
    """Homology of a chain complex (or cohomology of a cochain complex)."""
    co = isinstance(cx, CochainComplex)
    ch = cx.as_chain_complex() if co else cx
    n = ch.dim
    betti, torsion = [], []
    for k in range(n + 1):
        if coefficients in ("Z2", "z2"):
            b = ch.rank(k) - rank_gf2(ch.d(k)) - rank_gf2(ch.d(k + 1))
            betti.append(b)
            torsion.append([])
        elif coefficients in ("Z", "z"):
            sk, sk1 = smith_normal_form(ch.d(k)), smith_normal_form(ch.d(k + 1))
            betti.append(ch.rank(k) - sk.rank - sk1.rank)
            torsion.append([d for d in sk1.invariant_factors if d > 1])
        else:
            raise ContractError(f"unknown coefficients {coefficients!r}")
    ring = "Z2" if coefficients in ("Z2", "z2") else "Z"
    if co:
        betti, torsion = betti[::-1], torsion[::-1]
    return HomologyResult(ring, betti, torsion, co)


def cohomology(cx, coefficients="Z"):
    return homology(coboundary_complex(cx), coefficients)


@dataclass
class HomologyBasis:
    """Integral homology in one degree with explicit generators.

    ``cycles`` (c_k x z) spans the cycles; a cycle ``c`` has coordinates
    ``W (V c)[r:]`` where the first ``r_im`` are killed by boundaries,
    the torsion ones are read modulo ``orders`` and the rest are free.
    """

    degree: int
    free: np.ndarray  # (c_k, b) chain-level representatives
    torsion_reps: np.ndarray  # (c_k, t)
    orders: list
    _V: list
    _r: int
    _W: list
    _rim: int

    def coordinates(self, chain):
        """(free coordinates, torsion coordinates) of a cycle."""
        c = [int(v) for v in chain]
        y = [sum(a * b for a, b in zip(row, c)) for row in self._V][self._r:]
        w = [sum(a * b for a, b in zip(row, y)) for row in self._W] if self._W else []
        nt = len(self.orders)
        tors = [w[self._rim - nt + i] % o for i, o in enumerate(self.orders)] if nt else []
        free = w[self._rim:]
        if any(v != 0 for v in y) and len(y) != len(w):
            raise AssertionError("coordinate dimension mismatch")
        return free, tors


def homology_basis(cx, k):
    """Generators of ``H_k(cx; Z)`` via two Smith normal forms."""
    n_k = cx.rank(k)
    sk = smith_normal_form(cx.d(k))
    r = sk.rank
    Vinv = sk.V_inv
    Z = [[Vinv[i][j] for j in range(r, n_k)] for i in range(n_k)]  # columns span the cycles
    z = n_k - r
    B = _matmul(sk.V, cx.d(k + 1).tolist()) if cx.rank(k + 1) and n_k else []
    Bz = [row for row in B[r:]] if B else [[0] * cx.rank(k + 1) for _ in range(z)]
    if z == 0:
        return HomologyBasis(k, np.zeros((n_k, 0), dtype=object), np.zeros((n_k, 0), dtype=object), [], sk.V, r, [], 0)
    if cx.rank(k + 1) == 0:
        Bz = [[] for _ in range(z)]
        U, Uinv, diag, rim = _ident(z), _ident(z), [], 0
    else:
        sb = smith_normal_form(np.array(Bz, dtype=object).reshape(z, cx.rank(k + 1)))
        U, Uinv, diag, rim = sb.U, sb.U_inv, sb.diagonal, sb.rank
    ZU = _matmul(Z, U)
    orders = [d for d in diag[:rim] if d > 1]
    tor_cols = [i for i in range(rim) if diag[i] > 1]
    free = np.array([[ZU[i][j] for j in range(rim, z)] for i in range(n_k)], dtype=object).reshape(n_k, z - rim)
    tors = np.array([[ZU[i][j] for j in tor_cols] for i in range(n_k)], dtype=object).reshape(n_k, len(tor_cols))
    return HomologyBasis(k, free, tors, orders, sk.V, r, Uinv, rim)


@dataclass
class HomologyMap:
    degree: int
    free: np.ndarray  # (b_target, b_source) integer matrix on free parts
    torsion: np.ndarray  # images of torsion generators in target torsion coordinates


def check_chain_map(phi, src, tgt):
    for k in range(src.dim + 1):
        lhs = np.asarray(phi[k - 1], dtype=np.int64) @ src.d(k) if k >= 1 else None
        rhs = tgt.d(k) @ np.asarray(phi[k], dtype=np.int64) if k >= 1 else None
        if k >= 1 and not np.array_equal(lhs, rhs):
            return False
    return True


def induced_map_on_homology(phi, src, tgt, coefficients="Z"):
    """Matrices of the map induced on integral homology by a chain map.

    ``phi[k]`` is the integer matrix ``C_k(src) -> C_k(tgt)``.  Free
    generators of the source are pushed forward and expressed in the
    target's homology coordinates.
    """
    if coefficients not in ("Z", "z"):
        raise ContractError("induced maps are computed over Z")
    if not check_chain_map(phi, src, tgt):
        raise ContractError("phi does not commute with the boundary maps")
    out = {}
    for k in range(src.dim + 1):
        bs, bt = homology_basis(src, k), homology_basis(tgt, k)
        P = np.asarray(phi[k], dtype=object).reshape(tgt.rank(k), src.rank(k))
        cols_f, cols_t = [], []
        for j in range(bs.free.shape[1]):
            f, t = bt.coordinates(P.dot(bs.free[:, j]))
            cols_f.append(f)
            cols_t.append(t)
        tor = []
        for j in range(bs.torsion_reps.shape[1]):
            _, t = bt.coordinates(P.dot(bs.torsion_reps[:, j]))
            tor.append(t)
        F = np.array(cols_f, dtype=np.int64).T.reshape(bt.free.shape[1], bs.free.shape[1])
        T = np.array(tor, dtype=np.int64).T.reshape(len(bt.orders), bs.torsion_reps.shape[1])
        out[k] = HomologyMap(k, F, T)
    return out


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------


@dataclass
class InequalityReport:
    counts: list
    betti: list
    partial_counts: list
    partial_betti: list
    passed: bool
    euler: int = field(default=0)


def morse_inequalities_check(cx, hr):
    """Strong Morse inequalities with equality in the top degree."""
    c, b = cx.counts, list(hr.betti)
    n = cx.dim
    pc, pb = [], []
    for k in range(n + 1):
        pc.append(sum((-1) ** (k - i) * c[i] for i in range(k + 1)))
        pb.append(sum((-1) ** (k - i) * b[i] for i in range(k + 1)))
    ok = all(pc[k] >= pb[k] for k in range(n)) and pc[n] == pb[n]
    return InequalityReport(c, b, pc, pb, ok, sum((-1) ** i * c[i] for i in range(n + 1)))


@dataclass
class DualityReport:
    coefficients: str
    cohomology_f: list
    homology_minus_f: list
    homology_f: list
    passed: bool


def poincare_duality_check(cx_f, cx_minus_f, coefficients="Z"):
    """Compare ``H^k(f)``, ``H_{n-k}(-f)`` and ``H_{n-k}(f)`` degreewise."""
    n = cx_f.dim
    co = cohomology(cx_f, coefficients)
    hm = homology(cx_minus_f, coefficients)
    hf = homology(cx_f, coefficients)
    a = [co.data(k) for k in range(n + 1)]
    b = [hm.data(n - k) for k in range(n + 1)]
    c = [hf.data(n - k) for k in range(n + 1)]
    return DualityReport(coefficients, a, b, c, a == b == c)
