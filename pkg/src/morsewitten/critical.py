"""Critical points: search, classification, Morse indices and orientations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import DegenerateCriticalPointError, MorseError
from .geometry import (
    canonical_representative,
    constraint_jets_batch,
    gradient_batch,
    is_canonical,
    lagrangian_hessian_batch,
    project_to_manifold_batch,
    retract_batch,
    riemannian_gradient,
    riemannian_hessian_at_critical,
    tangent_frame,
)

DEGENERACY_TOL = 1e-7
CRITICAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    """A nondegenerate critical point with its eigen-splitting.

    Frames are stored as rows of ambient vectors.  ``eigenvalues`` are sorted
    ascending, so the first ``index`` of them belong to ``unstable_frame``.
    """

    id: int
    location: np.ndarray
    value: float
    index: int
    eigenvalues: np.ndarray
    unstable_frame: np.ndarray
    stable_frame: np.ndarray
    quotient_rep: bool = True

    @property
    def eigenframe(self):
        return np.vstack([self.unstable_frame, self.stable_frame])

    def __repr__(self):
        loc = ", ".join(f"{c:.6g}" for c in self.location)
        return f"CriticalPoint(id={self.id}, index={self.index}, f={self.value:.6g}, at=({loc}))"


def _normalize_sign(v):
    """Make the entry of largest magnitude positive (first one on ties)."""
    i = int(np.argmax(np.abs(v) > np.abs(v).max() - 1e-12))
    return v if v[i] > 0 else -v


def classify_critical_point(spec, p, id=-1, quotient_rep=True):
    """Eigen-decompose the Hessian at a critical point."""
    p = np.asarray(p, dtype=float)
    g = riemannian_gradient(spec, p)
    if np.linalg.norm(g) >= CRITICAL_TOL:
        raise MorseError(f"point {p} is not critical (|grad f| = {np.linalg.norm(g):.3g})")
    frame = tangent_frame(spec, p)
    H = riemannian_hessian_at_critical(spec, p, frame)
    lam, vec = np.linalg.eigh(H)
    if np.min(np.abs(lam)) < DEGENERACY_TOL:
        raise DegenerateCriticalPointError(
            f"degenerate critical point at {p} (eigenvalues {lam}); f is not Morse", location=p
        )
    amb = np.array([_normalize_sign(v) for v in (vec.T @ frame.vectors)])
    k = int(np.sum(lam < 0))
    value = float(spec.f.jet(p[None], 0)[0][0])
    return CriticalPoint(
        id=id,
        location=p.copy(),
        value=value,
        index=k,
        eigenvalues=lam,
        unstable_frame=amb[:k],
        stable_frame=amb[k:],
        quotient_rep=quotient_rep,
    )


def _kkt_newton(spec, P, iters=40, max_step=0.25):
    """Batched Newton on ``grad f = J^T lam, Phi = 0`` from on-manifold points."""
    P = P.copy()
    N, c = spec.ambient_dim, spec.codim
    alive = np.ones(len(P), bool)
    for _ in range(iters):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        g, lam, HL, J = lagrangian_hessian_batch(spec, P[idx])
        vals, _, _ = constraint_jets_batch(spec, P[idx], 1)
        K = np.zeros((idx.size, N + c, N + c))
        K[:, :N, :N] = HL
        K[:, :N, N:] = -np.swapaxes(J, 1, 2)
        K[:, N:, :N] = J
        rhs = np.concatenate([g - (np.swapaxes(J, 1, 2) @ lam[:, :, None])[:, :, 0], vals], axis=1)
        ok = np.abs(np.linalg.det(K)) > 1e-300
        step = np.zeros_like(rhs)
        if ok.any():
            step[ok] = np.linalg.solve(K[ok], rhs[ok][:, :, None])[:, :, 0]
        dp = step[:, :N]
        norm = np.linalg.norm(dp, axis=1, keepdims=True)
        dp *= np.minimum(1.0, max_step / np.maximum(norm, 1e-300))
        Q, conv = retract_batch(spec, P[idx] - dp)
        good = conv & ok & np.all(np.isfinite(Q), axis=1)
        P[idx[good]] = Q[good]
        alive[idx[~good]] = False
        alive[idx[good & (norm[:, 0] < 1e-15)]] = False
    _, grad = gradient_batch(spec, P)
    return P, np.linalg.norm(grad, axis=1)


def _safe(fn, P, *args):
    """Apply a batched routine, dropping rows that raise evaluation errors."""
    try:
        return fn(P, *args), np.ones(len(P), bool)
    except MorseError:
        if len(P) == 1:
            return None, np.zeros(1, bool)
        half = len(P) // 2
        a, ma = _safe(fn, P[:half], *args)
        b, mb = _safe(fn, P[half:], *args)
        parts = [r for r in (a, b) if r is not None]
        out = tuple(np.concatenate(z) for z in zip(*parts)) if parts else None
        return out, np.concatenate([ma, mb])


def find_critical_points(spec, seed_count=None, newton_tol=1e-12, dedup_tol=1e-6, seed=0):
    """Multistart search for all critical points of ``spec.f``.

    Returns a list sorted by descending value (ties broken lexicographically)
    with ids assigned in that order.  For specs with an involution only the
    canonical representatives are returned.
    """
    if seed_count is None:
        seed_count = 2000 if spec.dim <= 2 else 20000
    halton = qmc.Halton(d=spec.ambient_dim, scramble=True, seed=seed)
    raw = (2.0 * halton.random(seed_count) - 1.0) * spec.box

    res, mask = _safe(lambda X: project_to_manifold_batch(spec, X), raw)
    if res is None:
        return []
    P, ok = res
    P = P[ok]
    res, mask = _safe(lambda X: _kkt_newton(spec, X), P)
    if res is None:
        return []
    P, gnorm = res
    P = P[gnorm < newton_tol * 10]

    uniques = []
    for p in P:
        if spec.involution is not None:
            p = canonical_representative(spec, p)
        if uniques and np.min(np.linalg.norm(np.array(uniques) - p, axis=1)) < dedup_tol:
            continue
        uniques.append(p)
    if not uniques:
        return []
    polished, gnorm = _kkt_newton(spec, np.array(uniques), iters=5)
    crits = []
    for p, gn in zip(polished, gnorm):
        if spec.involution is not None and not is_canonical(spec, p):
            p = canonical_representative(spec, p)
        crits.append(classify_critical_point(spec, p))
    crits.sort(key=lambda c: (-round(c.value, 9), tuple(np.round(c.location, 9))))
    return [_with_id(c, i) for i, c in enumerate(crits)]


def _with_id(c, i):
    return CriticalPoint(
        i, c.location, c.value, c.index, c.eigenvalues, c.unstable_frame, c.stable_frame, c.quotient_rep
    )


def euler_characteristic(crits):
    return sum((-1) ** c.index for c in crits)


def counts_by_index(crits, dim):
    out = [0] * (dim + 1)
    for c in crits:
        out[c.index] += 1
    return out


# --------------------------------------------------------------------------
# nodes on the double cover
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Node:
    """A critical point as seen upstairs: the representative (lift 0) or its
    image under the involution (lift 1)."""

    id: int
    lift: int
    location: np.ndarray
    index: int
    unstable_frame: np.ndarray
    stable_frame: np.ndarray
    eigenvalues: np.ndarray


class CriticalSet:
    """Critical points plus all their lifts, for limit identification."""

    def __init__(self, spec, crits):
        self.spec = spec
        self.points = list(crits)
        nodes = []
        for c in self.points:
            nodes.append(Node(c.id, 0, c.location, c.index, c.unstable_frame, c.stable_frame, c.eigenvalues))
            if spec.involution is not None:
                s = spec.involution
                nodes.append(
                    Node(
                        c.id,
                        1,
                        s @ c.location,
                        c.index,
                        c.unstable_frame @ s.T,
                        c.stable_frame @ s.T,
                        c.eigenvalues,
                    )
                )
        self.nodes = nodes
        self.locations = np.array([n.location for n in nodes]).reshape(len(nodes), spec.ambient_dim)
        self._by_key = {(n.id, n.lift): i for i, n in enumerate(nodes)}

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, cid):
        return self.points[cid]

    def node(self, cid, lift=0):
        return self.nodes[self._by_key[(cid, lift)]]

    def node_index(self, cid, lift=0):
        return self._by_key[(cid, lift)]

    def of_index(self, k):
        return [c for c in self.points if c.index == k]


# --------------------------------------------------------------------------
# orientations
# --------------------------------------------------------------------------


class OrientationAssignment:
    """Ordered bases of the unstable spaces, one per critical point id."""

    def __init__(self, frames, seed=0):
        self.frames = {cid: np.array(f, dtype=float) for cid, f in frames.items()}
        self.seed = seed

    def frame(self, cid, involution=None, lift=0):
        f = self.frames[cid]
        if lift and involution is not None:
            return f @ np.asarray(involution).T
        return f

    def flipped(self, cid):
        """Copy with the orientation of one critical point reversed."""
        frames = dict(self.frames)
        f = frames[cid].copy()
        if len(f):
            f[0] = -f[0]
        frames[cid] = f
        return OrientationAssignment(frames, self.seed)

    def signs_relative_to(self, other):
        """+1/-1 per id: whether ``self`` and ``other`` orient alike."""
        out = {}
        for cid, f in self.frames.items():
            if len(f) == 0:
                out[cid] = 1
            else:
                out[cid] = int(np.sign(np.linalg.det(f @ other.frames[cid].T)))
        return out


def assign_orientations(crits, seed=0):
    """Orient each unstable space by its eigenframe (ascending eigenvalues).

    Seed 0 uses the eigenframes as they are; any other seed flips the first
    vector of each point with a pseudorandom bit.
    """
    rng = np.random.default_rng(seed) if seed else None
    frames = {}
    for c in crits:
        f = np.array(c.unstable_frame, dtype=float)
        flip = bool(rng.integers(0, 2)) if rng is not None else False
        if flip and len(f):
            f[0] = -f[0]
        frames[c.id] = f
    return OrientationAssignment(frames, seed)
