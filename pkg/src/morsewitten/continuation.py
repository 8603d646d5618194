"""Continuation maps between the complexes of two Morse functions.

An admissible homotopy ``f_s`` from ``f^alpha`` to ``f^beta`` is turned into
one Morse function on ``M x S^1``:

    F(q, s) = (kappa / 2) (1 + cos(pi s)) + f_|s|(q),

written on the unit circle ``(s1, s2) = (cos pi s, sin pi s)``.  Its critical
points are those of ``f^alpha`` on the slice ``s = 0`` (index raised by one)
and those of ``f^beta`` on ``s = 1``.  Flow lines from the first slice to
the second that pass through ``s = 1/2`` are counted to give the chain map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .complex import assemble_complex, check_chain_map, induced_map_on_homology
from .critical import (
    CriticalPoint,
    CriticalSet,
    OrientationAssignment,
    assign_orientations,
    classify_critical_point,
    find_critical_points,
)
from .errors import ContinuationError, ContractError, KappaTooSmallError, MorseError
from .geometry import product_with_circle, retract_to_manifold, sample_manifold
from .moduli import OrbitCatalog, Shooter, check_morse_smale

KAPPA_SAFETY = 1.1
SLICE_TOL = 1e-6
NUDGE = 0.03
TILT = 0.2


# --------------------------------------------------------------------------
# homotopies
# --------------------------------------------------------------------------


def smoothstep(t):
    """Quintic ``6t^5 - 15t^4 + 10t^3`` clipped to [0, 1], with derivatives."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    w = t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    dw = 30.0 * t * t * (1.0 - t) ** 2
    ddw = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return w, dw, ddw


@dataclass(frozen=True, eq=False)
class AdmissibleHomotopy:
    """``f_s = f^alpha + w(s) (f^beta - f^alpha)``, constant near the ends.

    ``w`` is the quintic smoothstep rescaled to ``[delta, 1 - delta]``.  An
    optional tilt adds ``tilt * 4 w (1 - w) * x_axis``, which vanishes where
    the homotopy is flat; it separates critical points that both endpoint
    functions share.
    """

    spec: object
    f_alpha: object
    f_beta: object
    delta: float = 0.25
    tilt: float = 0.0
    tilt_axis: int = 0

    def __post_init__(self):
        if not (0.0 < self.delta <= 0.25):
            raise ContractError(f"flattening width must lie in (0, 1/4], got {self.delta}")
        for f in (self.f_alpha, self.f_beta):
            if f.ambient_dim != self.spec.ambient_dim:
                raise ContractError("endpoint functions must live on the same ambient space")

    def weight(self, s):
        """``w(s)`` and its first two derivatives in ``s``."""
        d = self.delta
        scale = 1.0 / (1.0 - 2.0 * d)
        w, dw, ddw = smoothstep((np.asarray(s, dtype=float) - d) * scale)
        return w, dw * scale, ddw * scale * scale

    def _ends(self, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        return P, self.f_alpha.jet(P, 0)[0], self.f_beta.jet(P, 0)[0]

    def value(self, P, s):
        P, a, b = self._ends(P)
        w = self.weight(s)[0]
        return a + w * (b - a) + self.tilt * 4.0 * w * (1.0 - w) * P[:, self.tilt_axis]

    def ds_value(self, P, s):
        P, a, b = self._ends(P)
        w, dw, _ = self.weight(s)
        return dw * (b - a) + self.tilt * 4.0 * (1.0 - 2.0 * w) * dw * P[:, self.tilt_axis]


def build_admissible_homotopy(spec, f_alpha, f_beta, delta=0.25, tilt=0.0, tilt_axis=0):
    return AdmissibleHomotopy(spec, f_alpha, f_beta, float(delta), float(tilt), int(tilt_axis))


def kappa_lower_bound(h, grid=(50, 200), seed=0):
    """Safety factor times the larger of the slope bound and the range gap.

    ``grid`` is (manifold samples, s samples); the maxima are taken over
    that grid together with the critical points of both end functions, so
    the range gap ``max f^beta - min f^alpha`` is exact.
    """
    n_pts, n_s = grid
    ends = [c.location for f in (h.f_alpha, h.f_beta)
            for c in find_critical_points(h.spec.with_function(f))]
    P = np.vstack([sample_manifold(h.spec, n_pts, seed=seed), *ends])
    s = np.linspace(0.0, 1.0, n_s)
    slope = max(float(np.abs(h.ds_value(P, si)).max()) for si in s)
    bound = 2.0 * slope / (math.pi * math.sin(math.pi * (1.0 - h.delta)))
    gap = float(h.f_beta.jet(P, 0)[0].max() - h.f_alpha.jet(P, 0)[0].min())
    return KAPPA_SAFETY * max(bound, gap)


class ProductFunction:
    """``F = (kappa/2)(1 + s1) + f^alpha + W(s1) (f^beta - f^alpha)`` on
    ``R^{N+2}`` with ``W(s1) = w(arccos(s1) / pi)``."""

    def __init__(self, h, kappa):
        self.h = h
        self.kappa = float(kappa)
        self.N = h.spec.ambient_dim
        self.ambient_dim = self.N + 2
        self.text = f"product({getattr(h.f_alpha, 'text', '?')} -> {getattr(h.f_beta, 'text', '?')})"

    def _W(self, s1):
        s1 = np.clip(s1, -1.0, 1.0)
        s = np.arccos(s1) / math.pi
        w, dw, ddw = self.h.weight(s)
        W1 = np.zeros_like(s1)
        W2 = np.zeros_like(s1)
        live = (dw != 0) | (ddw != 0)
        if live.any():
            r = np.sqrt(1.0 - s1[live] ** 2)
            ds = -1.0 / (math.pi * r)
            dds = -s1[live] / (math.pi * r**3)
            W1[live] = dw[live] * ds
            W2[live] = ddw[live] * ds * ds + dw[live] * dds
        return w, W1, W2

    def jet(self, points, order=2):
        points = np.asarray(points, dtype=float)
        N, B = self.N, points.shape[0]
        q, s1 = points[:, :N], points[:, N]
        va, ga, ha = self.h.f_alpha.jet(q, order)
        vb, gb, hb = self.h.f_beta.jet(q, order)
        W, W1, W2 = self._W(s1)
        dv = vb - va
        v = 0.5 * self.kappa * (1.0 + s1) + va + W * dv
        G = np.zeros((B, N + 2))
        G[:, :N] = ga + W[:, None] * (gb - ga)
        G[:, N] = 0.5 * self.kappa + W1 * dv
        H = None
        if order >= 2 and ha is not None:
            H = np.zeros((B, N + 2, N + 2))
            H[:, :N, :N] = ha + W[:, None, None] * (hb - ha)
            mix = W1[:, None] * (gb - ga)
            H[:, :N, N] = mix
            H[:, N, :N] = mix
            H[:, N, N] = W2 * dv
        if self.h.tilt:
            t, i = self.h.tilt, self.h.tilt_axis
            T = 4.0 * W * (1.0 - W)
            T1 = 4.0 * (1.0 - 2.0 * W) * W1
            T2 = 4.0 * (1.0 - 2.0 * W) * W2 - 8.0 * W1 * W1
            g = q[:, i]
            v = v + t * T * g
            G[:, i] += t * T
            G[:, N] += t * T1 * g
            if H is not None:
                H[:, i, N] += t * T1
                H[:, N, i] += t * T1
                H[:, N, N] += t * T2 * g
        return v, G, H


# --------------------------------------------------------------------------
# product system
# --------------------------------------------------------------------------


def _shared_symmetries(*specs):
    first = specs[0].symmetries
    return tuple(m for m in first if all(any(np.allclose(m, o) for o in s.symmetries) for s in specs[1:]))


def _lift_symmetry(m, M):
    out = np.eye(M)
    out[: m.shape[0], : m.shape[1]] = m
    return out


@dataclass
class ProductSystem:
    """``M x S^1`` with ``F`` and its critical points.

    ``alpha_ids[i]`` / ``beta_ids[j]`` are product ids of the lifts of the
    ``i``-th critical point of ``f^alpha`` and the ``j``-th of ``f^beta``.
    """

    spec: object
    homotopy: AdmissibleHomotopy
    kappa: float
    crits: list
    alpha_ids: dict
    beta_ids: dict
    crits_alpha: list
    crits_beta: list


def build_product_system(spec_alpha, spec_beta, h, kappa, search_seeds=3000):
    """Product spec, ``F`` and its critical points (lifts re-classified).

    A multistart search with ``search_seeds`` seeds looks for critical
    points away from the two slices; finding one means ``kappa`` is too
    small.  Pass ``search_seeds=0`` to skip it.
    """
    prod = product_with_circle(h.spec)
    M = prod.ambient_dim
    shared = _shared_symmetries(spec_alpha, spec_beta)
    if h.tilt:
        shared = tuple(m for m in shared if m[h.tilt_axis, h.tilt_axis] == 1.0)
    sym = (prod.symmetries[0],) + tuple(_lift_symmetry(m, M) for m in shared)
    F = ProductFunction(h, kappa)
    prod = replace(prod, f=F, symmetries=sym, label=f"{spec_alpha.label} -> {spec_beta.label} x S1")
    ca = find_critical_points(spec_alpha)
    cb = find_critical_points(spec_beta)
    crits, aid, bid = [], {}, {}
    for src, s1, ids, shift in ((ca, 1.0, aid, 1), (cb, -1.0, bid, 0)):
        for c in src:
            p = np.concatenate([c.location, [s1, 0.0]])
            p = retract_to_manifold(prod, p)
            pc = classify_critical_point(prod, p)
            if pc.index != c.index + shift:
                raise KappaTooSmallError(
                    f"lift of critical point {c.id} has index {pc.index}, expected {c.index + shift}"
                )
            ids[c.id] = len(crits)
            crits.append(pc)
    crits = [_relabel(c, i) for i, c in enumerate(crits)]
    if search_seeds:
        for c in find_critical_points(prod, seed_count=search_seeds):
            if abs(abs(c.location[-2]) - 1.0) > SLICE_TOL:
                raise KappaTooSmallError(
                    f"critical point of the product function off the end slices at s1 = {c.location[-2]:.6g}; "
                    "increase kappa"
                )
    return ProductSystem(prod, h, float(kappa), crits, aid, bid, ca, cb)


def _relabel(c, i):
    return CriticalPoint(i, c.location, c.value, c.index, c.eigenvalues, c.unstable_frame, c.stable_frame)


def product_orientation(system, Or_alpha, Or_beta):
    """``(d/ds, Or^alpha)`` on the ``s = 0`` slice and ``Or^beta`` on ``s = 1``.

    ``d/ds`` at ``s = 0`` is the unit vector along ``s2``.
    """
    M = system.spec.ambient_dim
    N = M - 2
    ds = np.zeros(M)
    ds[-1] = 1.0
    frames = {}
    for cid, pid in system.alpha_ids.items():
        f = Or_alpha.frame(cid)
        pad = np.zeros((len(f), M))
        pad[:, :N] = f
        frames[pid] = np.vstack([ds, pad])
    for cid, pid in system.beta_ids.items():
        f = Or_beta.frame(cid)
        pad = np.zeros((len(f), M))
        pad[:, :N] = f
        frames[pid] = pad.reshape(len(f), M)
    return OrientationAssignment(frames, (Or_alpha.seed, Or_beta.seed))


# --------------------------------------------------------------------------
# the chain map
# --------------------------------------------------------------------------


def crosses_middle(points):
    """Whether a trajectory on ``M x S^1`` passes through ``s = 1/2``:
    ``s1`` changes sign while ``s2 > 0``."""
    s1, s2 = points[:, -2], points[:, -1]
    change = np.flatnonzero(np.sign(s1[:-1]) * np.sign(s1[1:]) <= 0)
    return bool(np.any((s2[change] > 0) & (s2[change + 1] > 0)))


@dataclass
class ContinuationMap:
    """``psi[k]``: integer matrix ``CM_k(f^alpha) -> CM_k(f^beta)`` in the
    generator orders of the two complexes."""

    psi: dict
    kappa: float
    delta: float
    crossings: list
    delta_blocks_ok: bool = True
    all_lines: dict = field(default_factory=dict)


def _generator_positions(cx):
    return [{cid: i for i, cid in enumerate(g)} for g in cx.generators]


def compute_psi(system, cx_alpha, cx_beta, Or_ab, catalog=None):
    """Count crossing flow lines ``(x, 0) -> (y, 1)`` with their signs.

    Also assembles the full product boundary and checks its block form:
    ``-d^alpha`` and ``d^beta`` on the diagonal, nothing from ``s = 1``
    back to ``s = 0``, and a zero total count over both halves of the
    circle.
    """
    n = cx_alpha.dim
    cset = CriticalSet(system.spec, system.crits)
    if catalog is None:
        catalog = OrbitCatalog(system.spec, cset, Or_ab)
    pa, pb = _generator_positions(cx_alpha), _generator_positions(cx_beta)
    back_a = {pid: cid for cid, pid in system.alpha_ids.items()}
    back_b = {pid: cid for cid, pid in system.beta_ids.items()}
    psi = {k: np.zeros((cx_beta.rank(k), cx_alpha.rank(k)), dtype=np.int64) for k in range(n + 1)}
    total = {k: np.zeros_like(psi[k]) for k in psi}
    crossings = []
    ok = True
    problems = []
    for (X, Y), orbits in sorted(catalog.orbits.items()):
        for o in orbits:
            if X in back_a and Y in back_b:
                x, y = back_a[X], back_b[Y]
                k = cset[Y].index
                total[k][pb[k][y], pa[k][x]] += o.sign
                if crosses_middle(o.trajectory.points):
                    psi[k][pb[k][y], pa[k][x]] += o.sign
                    crossings.append((x, y, o.sign, o.point))
            elif X in back_b and Y in back_a:
                ok = False
                problems.append(f"flow line from the s=1 slice ({back_b[X]}) to the s=0 slice ({back_a[Y]})")
    # diagonal blocks
    for k in range(1, n + 1):
        da = np.zeros((cx_alpha.rank(k - 1), cx_alpha.rank(k)), dtype=np.int64)
        db = np.zeros((cx_beta.rank(k - 1), cx_beta.rank(k)), dtype=np.int64)
        for (X, Y), orbits in catalog.orbits.items():
            s = sum(o.sign for o in orbits)
            if X in back_a and Y in back_a and cset[X].index == k + 1:
                da[pa[k - 1][back_a[Y]], pa[k][back_a[X]]] += s
            if X in back_b and Y in back_b and cset[X].index == k:
                db[pb[k - 1][back_b[Y]], pb[k][back_b[X]]] += s
        if not np.array_equal(da, -cx_alpha.d(k)):
            ok = False
            problems.append(f"s=0 block in degree {k} is not minus the boundary of f^alpha")
        if not np.array_equal(db, cx_beta.d(k)):
            ok = False
            problems.append(f"s=1 block in degree {k} is not the boundary of f^beta")
    if not check_chain_map(psi, cx_alpha, cx_beta):
        raise ContinuationError("counted flow lines do not give a chain map")
    cm = ContinuationMap(psi, system.kappa, system.homotopy.delta, crossings, ok, total)
    cm.problems = problems
    return cm


# --------------------------------------------------------------------------
# end-to-end
# --------------------------------------------------------------------------


@dataclass
class ComplexBundle:
    """A Morse function with its critical points, orientations and complex."""

    spec: object
    crits: list
    Or: object
    catalog: object
    complex: object


def morse_complex(spec, seed=0):
    crits = find_critical_points(spec)
    Or = assign_orientations(crits, seed)
    cat = OrbitCatalog(spec, crits, Or)
    ms = check_morse_smale(spec, crits, cat.shooter)
    if not ms.passed:
        raise ContinuationError(f"{spec.label} is not Morse-Smale: {ms.describe()}")
    cx = assemble_complex(crits, cat.orbits, spec.dim, spec.label, seed)
    return ComplexBundle(spec, crits, Or, cat, cx)


def tilt_for(a, b):
    """Tilt ``(amplitude, axis)`` needed to keep the product flow Morse-Smale.

    A point critical for both functions whose index under ``f^beta``
    exceeds its index under ``f^alpha`` carries a flow line along its
    whole circle between product critical points of equal index.  Such
    circles are broken by tilting along an ambient axis with a component in
    the unstable space of ``f^beta`` at every offending point, so the flow
    line is pushed off the stable manifold it used to run into.  Axes kept
    fixed by a shared reflection are preferred.  Returns ``(0.0, 0)`` when
    no tilt is needed.
    """
    bad = []
    for x in a.crits:
        for y in b.crits:
            if np.linalg.norm(x.location - y.location) < 1e-8 and y.index > x.index:
                bad.append(y.unstable_frame)
    if not bad:
        return 0.0, 0
    N = a.spec.ambient_dim
    shared = _shared_symmetries(a.spec, b.spec)
    kept = lambda i: sum(1 for m in shared if m[i, i] == 1.0)
    for i in sorted(range(N), key=lambda i: (-kept(i), i)):
        e = np.zeros(N)
        e[i] = 1.0
        if all(np.linalg.norm(U @ e) > 0.1 for U in bad):
            return TILT, i
    raise ContinuationError("no coordinate axis separates the shared critical points")


def continuation(a, b, delta=0.25, kappa=None, check_ms=True, search_seeds=3000):
    """Continuation chain map from bundle ``a`` to bundle ``b``.

    If the product flow is not Morse-Smale, ``delta`` is nudged by
    ``+-0.03`` (twice at most) before giving up.
    """
    tilt, axis = tilt_for(a, b)
    tried = []
    for d in (delta, delta - NUDGE, delta + NUDGE):
        if not (0.0 < d <= 0.25) or any(abs(d - t) < 1e-12 for t in tried):
            continue
        tried.append(d)
        h = build_admissible_homotopy(a.spec, a.spec.f, b.spec.f, d, tilt, axis)
        k = kappa if kappa is not None else kappa_lower_bound(h)
        system = build_product_system(a.spec, b.spec, h, k, search_seeds)
        Or_ab = product_orientation(system, a.Or, b.Or)
        cset = CriticalSet(system.spec, system.crits)
        shooter = Shooter(system.spec, cset)
        if check_ms:
            ms = check_morse_smale(system.spec, cset, shooter)
            if not ms.passed:
                continue
        catalog = OrbitCatalog(system.spec, cset, Or_ab, shooter)
        cm = compute_psi(system, a.complex, b.complex, Or_ab, catalog)
        cm.system, cm.catalog = system, catalog
        return cm
    raise ContinuationError(f"product flow is not Morse-Smale for flattening widths {tried}")


def resign(cm, a, b):
    """Recount an existing continuation with the orientations of ``a``/``b``."""
    Or_ab = product_orientation(cm.system, a.Or, b.Or)
    catalog = cm.catalog.resigned(Or_ab)
    out = compute_psi(cm.system, a.complex, b.complex, Or_ab, catalog)
    out.system, out.catalog = cm.system, catalog
    return out


def reorient(bundle, seed):
    """Same Morse function, orientations drawn from another seed."""
    Or = assign_orientations(bundle.crits, seed)
    cat = bundle.catalog.resigned(Or)
    cx = assemble_complex(bundle.crits, cat.orbits, bundle.spec.dim, bundle.spec.label, seed)
    return ComplexBundle(bundle.spec, bundle.crits, Or, cat, cx)


def _sign_change(src, ref, cx):
    """Diagonal sign matrices converting chains of ``src`` to those of ``ref``."""
    s = src.Or.signs_relative_to(ref.Or)
    return {k: np.diag([s[c] for c in cx.generators[k]]).astype(np.int64) for k in range(cx.dim + 1)}


@dataclass
class ContinuationReport:
    kappa: float
    psi: dict
    chain_map: bool
    blocks: bool
    round_trip: bool
    identity: bool
    independent: bool
    all_lines_zero: bool
    details: list

    @property
    def passed(self):
        return all((self.chain_map, self.blocks, self.round_trip, self.identity,
                    self.independent, self.all_lines_zero))


def _homology_free(psi, src, tgt):
    return {k: m.free for k, m in induced_map_on_homology(psi, src, tgt).items()}


def verify_continuation(spec_alpha, spec_beta, seeds=(0, 1), deltas=(0.25, 0.1), search_seeds=3000):
    """Round trip, identity and independence checks on homology."""
    details = []
    A = morse_complex(spec_alpha, seeds[0])
    B = morse_complex(spec_beta, seeds[0])
    base = continuation(A, B, deltas[0], search_seeds=search_seeds)
    back = continuation(B, A, deltas[0], search_seeds=search_seeds)
    const = continuation(A, A, deltas[0], search_seeds=search_seeds)
    n = A.complex.dim

    ba = _homology_free(base.psi, A.complex, B.complex)
    ab = _homology_free(back.psi, B.complex, A.complex)
    round_trip = all(np.array_equal(ab[k] @ ba[k], np.eye(ba[k].shape[1], dtype=np.int64)) for k in ba)
    round_trip &= all(np.array_equal(ba[k] @ ab[k], np.eye(ab[k].shape[1], dtype=np.int64)) for k in ab)
    details.append(f"round trip on homology: {'identity' if round_trip else 'NOT identity'}")
    identity = all(np.array_equal(const.psi[k], np.eye(A.complex.rank(k), dtype=np.int64)) for k in range(n + 1))
    aa = _homology_free(const.psi, A.complex, A.complex)
    identity &= all(np.array_equal(aa[k], np.eye(aa[k].shape[0], dtype=np.int64)) for k in aa)
    details.append(f"constant homotopy: {'identity' if identity else 'NOT identity'}")

    independent = True
    for d in deltas[1:]:
        other = continuation(A, B, d, search_seeds=search_seeds)
        same = _homology_free(other.psi, A.complex, B.complex)
        eq = all(np.array_equal(same[k], ba[k]) for k in ba)
        independent &= eq
        details.append(f"delta={d}: {'same' if eq else 'DIFFERENT'} map on homology")
    for s in seeds[1:]:
        A2, B2 = reorient(A, s), reorient(B, s)
        cm = resign(base, A2, B2)
        SA, SB = _sign_change(A2, A, A.complex), _sign_change(B2, B, B.complex)
        # express the new chain map in the reference bases
        ref = {k: SB[k] @ cm.psi[k] @ SA[k] for k in cm.psi}
        same = _homology_free(ref, A.complex, B.complex)
        eq = all(np.array_equal(same[k], ba[k]) for k in ba)
        independent &= eq
        details.append(f"orientation seed {s}: {'same' if eq else 'DIFFERENT'} map on homology")

    zero = all(not np.any(m) for cm in (base, back, const) for m in cm.all_lines.values())
    details.append(f"all flow lines counted: {'zero map' if zero else 'NONZERO'}")
    blocks = base.delta_blocks_ok and back.delta_blocks_ok and const.delta_blocks_ok
    for cm in (base, back, const):
        details.extend(cm.problems)
    return ContinuationReport(base.kappa, base.psi, True, blocks, round_trip, identity, independent, zero, details)
