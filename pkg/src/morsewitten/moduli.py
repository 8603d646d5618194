"""Connecting orbits, characteristic signs, moduli arcs and broken orbits.

Orbits between critical points of adjacent index are found by shooting
from a small sphere around one end.  Launch spheres of dimension 0 are
enumerated; launch circles are sampled and every change of the resolved
limit between neighbouring samples is bisected, since trajectories into a
saddle separate the basins of the lower critical points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.spatial import cKDTree

from .critical import CriticalSet
from .errors import (
    CompactnessAnomalyError,
    ContractError,
    GluingVerificationError,
    IllConditionedSignError,
    MorseError,
    OrientationCoherenceError,
    TransversalityError,
    UnresolvedLimitError,
)
from .flow import (
    MAX_TIME,
    Trajectory,
    _field,
    integrate_batch,
    level_crossings,
    reverse_trajectory,
    variational_transport,
)
from .geometry import (
    TangentFrame,
    constraint_jets_batch,
    gradient_batch,
    projector_batch,
    retract_batch,
)

EPSILON = 1e-4
CIRCLE_SAMPLES = 720
ANGLE_TOL = 1e-12
PASSAGE_RADIUS = 1e-3
# chord spacing of the cheap first pass when comparing curves
COARSE_SPACING = 1e-2
END_TOL = 1e-14
# trajectories passing a target this close record the side they leave on
NEAR_RADIUS = 0.1
# flow lines that graze a hit target hide next to it; probe this far off
HIT_PROBE = 1e-10
# orbits found from opposite ends closer than this are the same orbit
MERGE_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class ConnectingOrbit:
    """An isolated flow line from ``source`` to ``target``.

    On a double cover the flow line starts at the representative of the
    source and ends at lift ``target_lift`` of the target.  ``trajectory``
    runs forward in flow time; ``point`` lies on the level ``level``.
    """

    source: int
    target: int
    target_lift: int
    level: float
    point: np.ndarray
    parameter: float
    trajectory: Trajectory
    sign: int = 0
    shot: str = "forward"

    def with_sign(self, sign):
        return ConnectingOrbit(
            self.source, self.target, self.target_lift, self.level, self.point,
            self.parameter, self.trajectory, int(sign), self.shot,
        )


@dataclass
class ShotResult:
    """Everything learned by shooting from one critical point."""

    node: tuple
    direction: int
    hits: list = field(default_factory=list)  # (node key, parameter, trajectory)
    anomalies: list = field(default_factory=list)  # (node key, parameter)
    labels: list = field(default_factory=list)  # (parameter, node key) of the samples


# --------------------------------------------------------------------------
# shooting
# --------------------------------------------------------------------------


def _closest_approach(traj, loc):
    d = np.linalg.norm(traj.points - loc, axis=1)
    i = int(np.argmin(d))
    return i, d[i]


def _dedup_hits(hits):
    """Drop repeated hits (same target, same launch angle)."""
    kept = []
    for h in hits:
        if any(h[0] == g[0] and abs(h[1] - g[1]) < 1e-9 for g in kept):
            continue
        kept.append(h)
    return kept


def _truncate(traj, i):
    return Trajectory(
        traj.times[: i + 1], traj.points[: i + 1], traj.values[: i + 1], traj.direction,
        omega_limit=traj.omega_limit, omega_lift=traj.omega_lift,
        alpha_limit=traj.alpha_limit, alpha_lift=traj.alpha_lift,
    )


class Shooter:
    """Shoots flow lines out of critical points and caches the results."""

    def __init__(self, spec, crits, eps=EPSILON, samples=CIRCLE_SAMPLES, max_time=MAX_TIME):
        self.spec = spec
        self.cset = crits if isinstance(crits, CriticalSet) else CriticalSet(spec, crits)
        self.eps = eps
        self.samples = samples
        self.max_time = max_time
        self._cache = {}

    # labels ----------------------------------------------------------------
    def _key(self, traj):
        cid, lift = traj.final_limit
        return None if cid is None else (cid, lift)

    def _index(self, key):
        return self.cset[key[0]].index

    def _kind(self, key, k, direction):
        """'hit' for adjacent index, 'regular' further on, 'anomaly' otherwise."""
        j = self._index(key)
        step = k - j if direction > 0 else j - k
        if step == 1:
            return "hit"
        if step > 1:
            return "regular"
        return "anomaly"

    def _sides(self, traj, k, direction):
        """Side and passage distance for each adjacent-index target.

        The sign of the displacement from the target at closest approach,
        along its one-dimensional exit direction, tells the two sides of its
        stable (or, shooting backward, unstable) manifold apart.
        """
        out = {}
        for node in self.cset.nodes:
            key = (node.id, node.lift)
            if self._kind(key, k, direction) != "hit":
                continue
            exit_ = node.unstable_frame if direction > 0 else node.stable_frame
            if len(exit_) != 1:
                continue
            i, d = _closest_approach(traj, node.location)
            out[key] = (int(np.sign((traj.points[i] - node.location) @ exit_[0])), d)
        return out

    @staticmethod
    def _flipped(a, b):
        """Targets passed on opposite sides, at least once nearby."""
        return {
            key for key, (v, d) in a.items()
            if key in b and v * b[key][0] < 0 and min(d, b[key][1]) < NEAR_RADIUS
        }

    def _split(self, a, b):
        """Why two neighbouring samples bracket a flow line: 'limit' if
        their limits differ, 'side' if they pass a target on opposite
        sides, None otherwise."""
        if a[0] != b[0]:
            return "limit"
        if self._flipped(a[1], b[1]):
            return "side"
        return None

    # launching -------------------------------------------------------------
    def _launch(self, base, frame, params, fixers):
        spec = self.spec
        if frame.shape[0] == 1:
            dirs = np.array([[p] for p in params]) * frame[0]
        else:
            dirs = np.cos(params)[:, None] * frame[0] + np.sin(params)[:, None] * frame[1]
        Q = base + self.eps * dirs
        for i, R in fixers:
            Q[i] = 0.5 * (Q[i] + R @ Q[i])
        Q, ok = retract_batch(spec, Q)
        if not ok.all():
            raise MorseError("launch point failed to retract")
        return Q

    def _fixed_angles(self, node, frame):
        """Angles on the launch circle fixed by a symmetry of the scenario."""
        out = []
        for R in self.spec.symmetries:
            if np.linalg.norm(R @ node.location - node.location) > 1e-10:
                continue
            M = frame @ R @ frame.T
            if np.linalg.norm(frame @ R - M @ frame) > 1e-9:
                continue
            w, v = np.linalg.eigh(0.5 * (M + M.T))
            if np.allclose(w, w[0]):
                continue
            c, s = v[:, np.argmax(w)]
            th = np.arctan2(s, c) % (2 * np.pi)
            out += [(th, R), ((th + np.pi) % (2 * np.pi), R)]
        return out

    def _run(self, base, frame, params, fixers, direction):
        Q = self._launch(base, frame, np.asarray(params, float), fixers)
        trajs = integrate_batch(self.spec, self.cset, Q, direction, self.max_time)
        for tr in trajs:
            if tr.final_limit[0] is None:
                raise UnresolvedLimitError(
                    f"flow line launched at {tr.start} unresolved after time {self.max_time}"
                )
        return trajs

    def shoot(self, cid, direction):
        """Classify the flow lines leaving critical point ``cid``.

        ``direction`` +1 shoots forward out of the unstable sphere, -1
        backward out of the stable sphere.
        """
        key = (cid, direction)
        if key in self._cache:
            return self._cache[key]
        node = self.cset.node(cid, 0)
        k = node.index
        frame = node.unstable_frame if direction > 0 else node.stable_frame
        res = ShotResult((cid, 0), direction)
        d = len(frame)
        if d == 0:
            self._cache[key] = res
            return res
        if d > 2:
            raise MorseError("launch spheres of dimension above 1 are not supported")

        if d == 1:
            params = [1.0, -1.0]
            trajs = self._run(node.location, frame, params, [], direction)
            for p, tr in zip(params, trajs):
                lab = self._key(tr)
                res.labels.append((p, lab))
                kind = self._kind(lab, k, direction)
                if kind == "hit":
                    res.hits.append((lab, p, tr))
                elif kind == "anomaly":
                    res.anomalies.append((lab, p))
            self._cache[key] = res
            return res

        # launch circle
        M = self.samples
        grid = [((j + 0.5) * 2 * np.pi / M, None) for j in range(M)]
        fixed = self._fixed_angles(node, frame)
        merged = {}
        for th, R in grid + fixed:
            merged.setdefault(round(th, 13), (th, []))
            if R is not None:
                merged[round(th, 13)][1].append(R)
        items = sorted(merged.values(), key=lambda t: t[0])
        params = np.array([t[0] for t in items])
        fixers = [(i, R) for i, (_, Rs) in enumerate(items) for R in Rs]
        trajs = self._run(node.location, frame, params, fixers, direction)
        labels = [self._key(tr) for tr in trajs]
        kinds = [self._kind(lab, k, direction) for lab in labels]
        res.labels = list(zip(params.tolist(), labels))
        for p, lab, kind, tr in zip(params, labels, kinds, trajs):
            if kind == "hit":
                res.hits.append((lab, float(p), tr))
            elif kind == "anomaly":
                res.anomalies.append((lab, float(p)))

        marks = [(lab, self._sides(tr, k, direction)) for lab, tr in zip(labels, trajs)]
        brackets = []
        n = len(params)
        for i in range(n):
            j = (i + 1) % n
            if kinds[i] == "regular" and kinds[j] == "regular":
                why = self._split(marks[i], marks[j])
                if why:
                    hi = params[j] if j else params[j] + 2 * np.pi
                    brackets.append([params[i], hi, marks[i], marks[j], trajs[i], trajs[j], why])
        # Just beside a hit, flow lines follow the target's own unstable
        # manifold and may graze a further target exponentially close to
        # the hit.  Walk out from each sampled hit at log-spaced offsets.
        offsets = HIT_PROBE * 10.0 ** np.arange(8)
        walks = []
        for i in range(n):
            if kinds[i] != "hit":
                continue
            for j, sgn in (((i + 1) % n, 1.0), ((i - 1) % n, -1.0)):
                gap = (sgn * (params[j] - params[i])) % (2 * np.pi)
                if kinds[j] == "regular":
                    walks.append((params[i], sgn, offsets[offsets < gap], j))
        if walks:
            flat = np.concatenate([p + sg * off for p, sg, off, _ in walks])
            ptrajs = iter(self._run(node.location, frame, flat, [], direction))
            for p, sgn, off, j in walks:
                chain = []
                for o in off:
                    tr = next(ptrajs)
                    chain.append((p + sgn * o, (self._key(tr), self._sides(tr, k, direction)), tr))
                end = p + sgn * ((sgn * (params[j] - p)) % (2 * np.pi))
                chain.append((end, marks[j], trajs[j]))
                for (t0, m0, tr0), (t1, m1, tr1) in zip(chain, chain[1:]):
                    if self._kind(m0[0], k, direction) != "regular" or self._kind(m1[0], k, direction) != "regular":
                        continue
                    why = self._split(m0, m1)
                    if why is None:
                        continue
                    if sgn > 0:
                        brackets.append([t0, t1, m0, m1, tr0, tr1, why])
                    else:
                        brackets.append([t1, t0, m1, m0, tr1, tr0, why])
        self._bisect(node, frame, brackets, k, direction, res)
        res.hits = _dedup_hits(res.hits)
        res.hits.sort(key=lambda h: h[1])
        self._cache[key] = res
        return res

    def _bisect(self, node, frame, brackets, k, direction, res):
        while brackets:
            mids = np.array([0.5 * (b[0] + b[1]) for b in brackets])
            trajs = self._run(node.location, frame, mids, [], direction)
            nxt = []
            for b, m, tr in zip(brackets, mids, trajs):
                lab = self._key(tr)
                kind = self._kind(lab, k, direction)
                if kind == "hit":
                    res.hits.append((lab, float(m % (2 * np.pi)), tr))
                    continue
                if kind == "anomaly":
                    res.anomalies.append((lab, float(m % (2 * np.pi))))
                    continue
                mark = (lab, self._sides(tr, k, direction))
                for part in ([b[0], m, b[2], mark, b[4], tr], [m, b[1], mark, b[3], tr, b[5]]):
                    why = self._split(part[2], part[3])
                    if why is None:
                        continue
                    part.append(why)
                    if part[1] - part[0] > ANGLE_TOL:
                        nxt.append(part)
                    else:
                        self._resolve(part, k, direction, res)
            brackets = nxt

    def _resolve(self, part, k, direction, res):
        """A bracket shrunk to the angular tolerance: find the saddle it straddles."""
        best = None
        flipped = None
        if part[6] == "side":
            flipped = self._flipped(part[2][1], part[3][1])
        for tr in (part[4], part[5]):
            for ni, node in enumerate(self.cset.nodes):
                kind = self._kind((node.id, node.lift), k, direction)
                if kind == "regular":
                    continue
                if flipped is not None and (node.id, node.lift) not in flipped:
                    continue
                i, d = _closest_approach(tr, node.location)
                if best is None or d < best[0]:
                    best = (d, (node.id, node.lift), tr, i, kind)
        theta = float((0.5 * (part[0] + part[1])) % (2 * np.pi))
        if (best is None or best[0] > PASSAGE_RADIUS) and part[6] == "side":
            return  # the two sides were told apart far from the target
        if best is None or best[0] > PASSAGE_RADIUS:
            raise TransversalityError(
                f"basin boundary at angle {theta:.15f} resolves to no critical point"
            )
        d, lab, tr, i, kind = best
        if kind == "anomaly":
            res.anomalies.append((lab, theta))
            return
        cid, lift = lab
        tr = _truncate(tr, i)
        kw = dict(omega_limit=cid, omega_lift=lift) if direction > 0 else dict(alpha_limit=cid, alpha_lift=lift)
        tr = Trajectory(tr.times, tr.points, tr.values, tr.direction, **{
            "omega_limit": tr.omega_limit, "omega_lift": tr.omega_lift,
            "alpha_limit": tr.alpha_limit, "alpha_lift": tr.alpha_lift, **kw})
        res.hits.append((lab, theta, tr))


# --------------------------------------------------------------------------
# connecting orbits and signs
# --------------------------------------------------------------------------


def _orient_from_source(spec, traj, start_key, hit_key, direction):
    """Forward-oriented trajectory from the representative of the source.

    Returns (trajectory, target id, target lift)."""
    if direction > 0:
        src, tgt = start_key, hit_key
        fwd = traj
    else:
        src, tgt = hit_key, start_key
        fwd = reverse_trajectory(traj)
    tlift = tgt[1]
    if src[1] == 1:
        s = spec.involution
        fwd = Trajectory(fwd.times, fwd.points @ s.T, fwd.values, fwd.direction)
        tlift = 1 - tlift
    fwd = Trajectory(
        fwd.times, fwd.points, fwd.values, 1,
        omega_limit=tgt[0], omega_lift=tlift, alpha_limit=src[0], alpha_lift=0,
    )
    return fwd, tgt[0], tlift


def shooting_direction(spec, kx):
    """+1 (forward from the source) or -1 (backward from the target).

    The forward launch sphere has dimension ``kx - 1``, the backward one
    ``n - kx``; ties go forward (and ``find_connecting_orbits`` shoots
    both ways).
    """
    return 1 if kx - 1 <= spec.dim - kx else -1


def find_connecting_orbits(spec, crits, Or, x, y, shooter=None):
    """All flow lines from ``x`` to ``y`` (index difference 1), with signs.

    ``x``/``y`` are ids.  Pairs whose index difference is not 1 give an
    empty list (the moduli space is empty or not zero-dimensional).
    """
    shooter = shooter or Shooter(spec, crits)
    cset = shooter.cset
    kx, ky = cset[x].index, cset[y].index
    if kx - ky != 1:
        return []
    direction = shooting_direction(spec, kx)
    # When both launch spheres have the same dimension, one side can be
    # badly conditioned (a fast transverse expansion squeezes the orbit
    # into an angular sliver far below the bisection tolerance).  Shooting
    # from both ends and merging recovers such orbits.
    tie = kx - 1 == spec.dim - kx
    out = []
    a = 0.5 * (cset[x].value + cset[y].value)
    for d in ((1, -1) if tie else (direction,)):
        start = x if d > 0 else y
        res = shooter.shoot(start, d)
        found = []
        for hit_key, param, traj in res.hits:
            if hit_key[0] != (y if d > 0 else x):
                continue
            fwd, tid, tlift = _orient_from_source(spec, traj, (start, 0), hit_key, d)
            cr = level_crossings(spec, fwd, [a])
            if not cr:
                raise MorseError(f"orbit {x}->{y} misses its middle level {a}")
            found.append(ConnectingOrbit(x, tid, tlift, a, cr[0][1], param, fwd, 0,
                                         "forward" if d > 0 else "backward"))
        out.extend(o for o in _dedup(found)
                   if not any(k.target_lift == o.target_lift
                              and np.linalg.norm(k.point - o.point) < MERGE_TOL for k in out))
    return [o.with_sign(characteristic_sign(spec, cset, Or, o)) for o in out]


def _dedup(orbits):
    kept = []
    for o in orbits:
        if any(k.target_lift == o.target_lift and np.linalg.norm(k.point - o.point) < 1e-6 for k in kept):
            continue
        kept.append(o)
    return kept


def characteristic_sign(spec, crits, Or, orbit):
    """Sign comparing the induced orientation of an orbit with its direction.

    The oriented unstable frame of the source is projected to the first
    sample and transported along the trajectory.  At the last sample it is
    compared with the frame (-grad f / |grad f|, oriented unstable frame of
    the target projected there).
    """
    cset = crits if isinstance(crits, CriticalSet) else CriticalSet(spec, crits)
    tr = orbit.trajectory
    src = Or.frame(orbit.source)
    tgt = Or.frame(orbit.target, spec.involution, orbit.target_lift)
    P = tr.points[[0, -1]]
    _, J, _ = constraint_jets_batch(spec, P, 1)
    Pr = projector_batch(J)
    start = TangentFrame(P[0], src @ Pr[0])
    moved = variational_transport(spec, tr, start)
    _, g = gradient_batch(spec, P[1:])
    g = g[0]
    if np.linalg.norm(g) == 0:
        raise IllConditionedSignError("orbit ends exactly at a critical point")
    comp = [-g / np.linalg.norm(g)]
    for v in tgt:
        w = Pr[1] @ v
        comp.append(w / np.linalg.norm(w))
    comp = np.array(comp)
    if comp.shape[0] != moved.vectors.shape[0]:
        raise MorseError("frame dimensions disagree; indices do not differ by one")
    det = np.linalg.det(comp @ moved.vectors.T)
    if abs(det) < 1e-6:
        raise IllConditionedSignError(f"orbit {orbit.source}->{orbit.target}: |det| = {abs(det):.3g}")
    return int(np.sign(det)) * moved.sign


class OrbitCatalog:
    """Connecting orbits of all adjacent-index pairs, signed for one
    orientation choice."""

    def __init__(self, spec, crits, Or, shooter=None):
        self.spec = spec
        self.shooter = shooter or Shooter(spec, crits)
        self.cset = self.shooter.cset
        self.Or = Or
        self.orbits = {}
        for x in self.cset:
            for y in self.cset:
                if x.index - y.index == 1:
                    self.orbits[(x.id, y.id)] = find_connecting_orbits(
                        spec, self.cset, Or, x.id, y.id, self.shooter
                    )

    def resigned(self, Or):
        """Same orbits, signs recomputed for another orientation choice."""
        new = object.__new__(OrbitCatalog)
        new.spec, new.shooter, new.cset, new.Or = self.spec, self.shooter, self.cset, Or
        new.orbits = {
            k: [o.with_sign(characteristic_sign(self.spec, self.cset, Or, o)) for o in v]
            for k, v in self.orbits.items()
        }
        return new

    def __getitem__(self, key):
        return self.orbits.get(key, [])

    def all(self):
        return [o for k in sorted(self.orbits) for o in self.orbits[k]]

    def upstairs(self):
        """Every orbit together with its image under the involution, as
        (source key, target key, sign, points, orbit, image flag)."""
        out = []
        for o in self.all():
            out.append(((o.source, 0), (o.target, o.target_lift), o.sign, o.trajectory.points, o, 0))
            if self.spec.involution is not None:
                s = self.spec.involution
                out.append(
                    ((o.source, 1), (o.target, 1 - o.target_lift), o.sign, o.trajectory.points @ s.T, o, 1)
                )
        return out


# --------------------------------------------------------------------------
# Morse-Smale diagnostics
# --------------------------------------------------------------------------


@dataclass
class MorseSmaleReport:
    passed: bool
    offending: list  # (source id, target id, target lift)

    def describe(self):
        if self.passed:
            return "all unstable manifolds descend strictly in index"
        return "; ".join(f"{s}->{t}" for s, t, _ in self.offending)


def check_morse_smale(spec, crits, shooter=None):
    """Look for flow lines between critical points whose index does not drop.

    Every unstable direction of every critical point of index 1..n-1 is
    shot forward; a flow line that ends at a point of equal or higher index
    violates the transversality of stable and unstable manifolds.
    """
    shooter = shooter or Shooter(spec, crits)
    bad = []
    for c in shooter.cset:
        if 1 <= c.index <= spec.dim - 1:
            res = shooter.shoot(c.id, 1)
            for key, _ in res.anomalies:
                if (c.id, key[0], key[1]) not in bad:
                    bad.append((c.id, key[0], key[1]))
    return MorseSmaleReport(not bad, bad)


# --------------------------------------------------------------------------
# level curves and moduli arcs (surfaces only)
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArcEnd:
    """An open end of a moduli arc: the limiting broken orbit passes
    through ``intermediate`` (a node key)."""

    point: np.ndarray
    intermediate: tuple
    trajectory: np.ndarray  # samples of the full flow line through the end point


@dataclass(frozen=True, eq=False)
class ModuliArc:
    """A component (or run) of the level set flowing from source to target."""

    source: int
    target: int
    target_lift: int
    level: float
    points: np.ndarray
    ends: tuple = ()

    @property
    def closed(self):
        return len(self.ends) == 0


def _level_system(spec, P, a):
    vals, J, _ = constraint_jets_batch(spec, P, 1)
    fv, g, _ = spec.f.jet(P, 1)
    G = np.concatenate([vals, (fv - a)[:, None]], axis=1)
    JJ = np.concatenate([J, g[:, None, :]], axis=1)
    return G, JJ


def project_to_level(spec, P, a, iters=50):
    """Gauss-Newton onto ``{Phi = 0, f = a}``; returns (points, converged)."""
    Q = np.atleast_2d(np.asarray(P, float)).copy()
    for _ in range(iters):
        G, JJ = _level_system(spec, Q, a)
        try:
            step = np.swapaxes(JJ, 1, 2) @ np.linalg.solve(JJ @ np.swapaxes(JJ, 1, 2), G[:, :, None])
        except np.linalg.LinAlgError:
            return Q, np.zeros(len(Q), bool)
        step = step[:, :, 0]
        nrm = np.linalg.norm(step, axis=1, keepdims=True)
        Q -= step * np.minimum(1.0, 0.25 / np.maximum(nrm, 1e-300))
        if np.max(np.abs(G)) < 1e-14:
            break
    G, _ = _level_system(spec, Q, a)
    return Q, np.max(np.abs(G), axis=1) < 1e-12


def _level_tangent(spec, p, a):
    _, JJ = _level_system(spec, p[None], a)
    return np.linalg.svd(JJ[0])[2][-1]


def _march(spec, p0, a, h, max_steps=200000):
    """Trace the closed level curve through ``p0`` with step ``h``."""
    pts = [p0]
    t = _level_tangent(spec, p0, a)
    t0 = t
    p = p0
    travelled = 0.0
    for _ in range(max_steps):
        q, ok = project_to_level(spec, p + h * t, a)
        if not ok[0]:
            raise MorseError(f"level-curve corrector failed near {p}")
        q = q[0]
        travelled += np.linalg.norm(q - p)
        tn = _level_tangent(spec, q, a)
        if tn @ t < 0:
            tn = -tn
        p, t = q, tn
        if travelled > 3 * h and np.linalg.norm(p - p0) < 0.75 * h and t @ t0 > 0:
            return np.array(pts), travelled
        pts.append(p)
    raise MorseError("level curve did not close")


def trace_level_set(spec, a, resolution=2000, seeds=600, h=0.01, seed=0):
    """Closed components of ``{Phi = 0, f = a}`` on a surface, each sampled
    by about ``resolution`` points in cyclic order."""
    if spec.dim != 2:
        raise ContractError("level-curve tracing is implemented for surfaces only")
    from .geometry import sample_manifold

    S = sample_manifold(spec, seeds, seed=seed)
    Q, ok = project_to_level(spec, S, a)
    Q = Q[ok]
    comps = []
    trees = []
    for q in Q:
        if any(t.query(q)[0] < 3 * h for t in trees):
            continue
        rough, length = _march(spec, q, a, h)
        trees.append(cKDTree(rough))
        fine, _ = _march(spec, q, a, length / resolution)
        comps.append(fine)
    return comps


def _classify(spec, cset, P, max_time):
    fwd = integrate_batch(spec, cset, P, 1, max_time)
    bwd = integrate_batch(spec, cset, P, -1, max_time)
    labels = []
    for f, b in zip(fwd, bwd):
        if f.omega_limit is None or b.alpha_limit is None:
            raise UnresolvedLimitError(f"level point {f.start} has an unresolved limit")
        labels.append(((b.alpha_limit, b.alpha_lift), (f.omega_limit, f.omega_lift)))
    return labels, fwd, bwd


def _full_line(fwd, bwd):
    return np.vstack([bwd.points[::-1], fwd.points[1:]])


def regular_level(crits, x, z):
    """A level strictly between ``f(z)`` and ``f(x)`` away from critical
    values: the middle of the widest gap between critical values."""
    lo, hi = crits[z].value, crits[x].value
    vals = sorted({lo, hi} | {c.value for c in crits if lo < c.value < hi})
    gaps = [(b - a, i) for i, (a, b) in enumerate(zip(vals, vals[1:]))]
    _, i = max(gaps, key=lambda g: (round(g[0], 9), -g[1]))
    return 0.5 * (vals[i] + vals[i + 1])


class LevelCurves:
    """The components of a level set with every sample classified by its
    limits in both time directions."""

    def __init__(self, spec, cset, a, resolution=2000, max_time=MAX_TIME):
        self.a = a
        self.components = trace_level_set(spec, a, resolution)
        self.labels = [_classify(spec, cset, C, max_time)[0] for C in self.components]


@dataclass
class _Puncture:
    """Where the level meets a flow line into or out of a saddle."""

    point: np.ndarray
    saddle: tuple
    direction: int  # integrate this way from nearby points to pass the saddle
    sides: tuple = ()  # (point, full line) on either side


def _level_hit(spec, orbit, image, a):
    cr = level_crossings(spec, orbit.trajectory, [a])
    if not cr:
        return None
    q = cr[0][1]
    return spec.involution @ q if image else q


def _punctures(spec, cset, catalog, a, kx):
    """Crossings of the level with orbits ending or starting at saddles of
    index ``kx - 1``."""
    out = []
    for s, t, _, _, orbit, image in catalog.upstairs():
        if cset[t[0]].index == kx - 1 and cset[t[0]].value < a and cset[s[0]].index == kx:
            sad, direction = t, 1
        elif cset[s[0]].index == kx - 1 and cset[s[0]].value > a and cset[t[0]].index == kx - 2:
            sad, direction = s, -1
        else:
            continue
        q = _level_hit(spec, orbit, image, a)
        if q is None:
            continue
        if any(np.linalg.norm(q - p.point) < 1e-9 for p in out):
            continue
        out.append(_Puncture(q, sad, direction))
    return out


def _side(spec, cset, P, punct, max_time):
    """Which side of the saddle's invariant curve each point lies on
    (0 if the flow line runs into the saddle).

    Flow lines are followed only until they are well past the saddle's
    level."""
    out = np.zeros(len(P), int)
    vals = [c.value for c in cset]
    margin = 0.05 * (max(vals) - min(vals))
    for d in (1, -1):
        idx = [i for i, p in enumerate(punct) if p.direction == d]
        if not idx:
            continue
        stop = np.array([cset[punct[i].saddle[0]].value - d * margin for i in idx])
        trs = integrate_batch(spec, cset, P[idx], d, max_time, stop_values=stop)
        for i, tr in zip(idx, trs):
            node = cset.node(*punct[i].saddle)
            if tr.final_limit == punct[i].saddle:
                continue
            j, _ = _closest_approach(tr, node.location)
            exit_dir = node.unstable_frame if d > 0 else node.stable_frame
            out[i] = int(np.sign(exit_dir[0] @ (tr.points[j] - node.location)))
    return out


def _refine_punctures(spec, cset, punct, a, max_time, window=1e-6):
    """Bisect each puncture to ``END_TOL`` along the level curve and
    return points just on either side."""
    if not punct:
        return
    T = np.array([_level_tangent(spec, p.point, a) for p in punct])
    base = np.array([p.point for p in punct])
    lo, _ = project_to_level(spec, base - window * T, a)
    hi, _ = project_to_level(spec, base + window * T, a)
    slo = _side(spec, cset, lo, punct, max_time)
    shi = _side(spec, cset, hi, punct, max_time)
    for i in range(len(punct)):
        if slo[i] == 0 or shi[i] == 0 or slo[i] == shi[i]:
            raise CompactnessAnomalyError(
                f"flow lines near {punct[i].point} do not split at saddle {punct[i].saddle}"
            )
    active = np.ones(len(punct), bool)
    for _ in range(80):
        width = np.linalg.norm(hi - lo, axis=1)
        active &= width > END_TOL
        if not active.any():
            break
        idx = np.flatnonzero(active)
        mid, _ = project_to_level(spec, 0.5 * (lo[idx] + hi[idx]), a)
        sm = _side(spec, cset, mid, [punct[i] for i in idx], max_time)
        for j, i in enumerate(idx):
            if sm[j] == 0:
                lo[i], hi[i] = _straddle(spec, cset, mid[j], T[i], punct[i], a, max_time)
                active[i] = False
            elif sm[j] == slo[i]:
                lo[i] = mid[j]
            else:
                hi[i] = mid[j]
    sides = np.vstack([lo, hi])
    _, fwd, bwd = _classify(spec, cset, sides, max_time)
    m = len(punct)
    for i, p in enumerate(punct):
        p.sides = (
            (lo[i], _full_line(fwd[i], bwd[i])),
            (hi[i], _full_line(fwd[m + i], bwd[m + i])),
        )


def _straddle(spec, cset, p, t, punct, a, max_time):
    """Points on either side of a level point whose flow line runs exactly
    into the saddle (this happens on symmetry planes)."""
    ds = 0.1 * END_TOL * 10.0 ** np.arange(9)
    Q, _ = project_to_level(spec, np.concatenate([p - ds[:, None] * t, p + ds[:, None] * t]), a)
    s = _side(spec, cset, Q, [punct] * len(Q), max_time)
    m = len(ds)
    for i in range(m):
        if s[i] and s[m + i] and s[i] != s[m + i]:
            return Q[i], Q[m + i]
    raise CompactnessAnomalyError(f"cannot leave the saddle's invariant curve near {p}")


def trace_connecting_moduli(spec, crits, x, z, a=None, resolution=2000, catalog=None,
                            level=None, max_time=MAX_TIME):
    """Arcs of the level set ``f = a`` made of flow lines from ``x`` to ``z``.

    Every sample of every level component is classified by its limits in
    both time directions.  The ends of the arcs sit where the level meets
    a flow line into or out of an intermediate saddle; they are taken from
    the connecting orbits in ``catalog`` and bisected along the level curve
    by the side on which nearby flow lines pass the saddle.  A change of
    limits between neighbouring samples without such a crossing in between
    is reported as a compactness anomaly.
    """
    cset = crits if isinstance(crits, CriticalSet) else CriticalSet(spec, crits)
    if cset[x].index - cset[z].index != 2:
        raise ContractError(f"index difference of {x} and {z} is not 2")
    if spec.dim != 2:
        raise ContractError("moduli tracing is implemented for surfaces only")
    if a is None:
        a = regular_level(cset, x, z) if level is None else level.a
    if level is None or level.a != a:
        level = LevelCurves(spec, cset, a, resolution, max_time)
    if catalog is None:
        from .critical import assign_orientations

        catalog = OrbitCatalog(spec, cset, assign_orientations(cset.points, 0))
    kx = cset[x].index
    punct = _punctures(spec, cset, catalog, a, kx)
    want = lambda lab: lab[0] == (x, 0) and lab[1][0] == z

    arcs = []
    relevant = []
    for C, labels in zip(level.components, level.labels):
        n = len(C)
        h = np.median(np.linalg.norm(np.diff(C, axis=0), axis=1))
        # cut positions: puncture p lies on segment (i, i+1)
        cuts = {}
        for p in punct:
            d = np.linalg.norm(C - p.point, axis=1)
            i = int(np.argmin(d))
            if d[i] > 2 * h:
                continue
            nxt, prv = C[(i + 1) % n], C[i - 1]
            i = i if np.linalg.norm(nxt - p.point) < np.linalg.norm(prv - p.point) else (i - 1) % n
            cuts.setdefault(i, []).append(p)
        for i in range(n):
            if labels[i] != labels[(i + 1) % n] and i not in cuts:
                raise CompactnessAnomalyError(
                    f"limits change between {C[i]} and {C[(i + 1) % n]} with no broken orbit in between"
                )
        good = np.array([want(l) for l in labels])
        if not cuts:
            if good.all():
                arcs.append(ModuliArc(x, z, labels[0][1][1], a, C.copy()))
            continue
        first = min(cuts)
        order = np.roll(np.arange(n), -(first + 1))
        runs, cur = [], []
        for i in order:
            cur.append(i)
            if i in cuts:
                runs.append((cur, cuts[i]))
                cur = []
        prev_cut = cuts[first]
        for run, end_cut in runs:
            if good[run].all():
                relevant.append((C[run], prev_cut, end_cut, labels[run[0]][1][1]))
            elif good[run].any():
                raise CompactnessAnomalyError("a run between two broken orbits mixes limits")
            prev_cut = end_cut

    used = {id(p) for _, pc, ec, _ in relevant for p in pc + ec}
    _refine_punctures(spec, cset, [p for p in punct if id(p) in used], a, max_time)
    for pts, pc, ec, lift in relevant:
        if len(pc) != 1 or len(ec) != 1:
            raise CompactnessAnomalyError("two broken orbits cross the level between neighbouring samples")
        ends = []
        for p, anchor in ((pc[0], pts[0]), (ec[0], pts[-1])):
            (q0, l0), (q1, l1) = p.sides
            q, line = (q0, l0) if np.linalg.norm(q0 - anchor) < np.linalg.norm(q1 - anchor) else (q1, l1)
            gap = np.min(np.linalg.norm(line - cset.node(*p.saddle).location, axis=1))
            if gap > PASSAGE_RADIUS:
                raise CompactnessAnomalyError(
                    f"flow line beside the end at {q} misses saddle {p.saddle} by {gap:.3g}"
                )
            ends.append(ArcEnd(q, p.saddle, line))
        arcs.append(ModuliArc(x, z, lift, a, pts.copy(), tuple(ends)))
    return arcs


# --------------------------------------------------------------------------
# broken orbits
# --------------------------------------------------------------------------


def _densify(spec, pts, spacing=2e-4):
    """Cubic Hermite interpolation of a sampled flow line (chord parameter)."""
    if len(pts) < 2:
        return pts
    _, V = _field(spec, pts, 1)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-14])
    pts, V = pts[keep], V[keep]
    s = np.concatenate([[0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    if len(s) < 2:
        return pts
    speed = np.linalg.norm(V, axis=1, keepdims=True)
    tang = np.where(speed > 1e-14, V / np.maximum(speed, 1e-300), 0.0)
    spline = CubicHermiteSpline(s, pts, tang, axis=0)
    return spline(np.linspace(0, s[-1], max(2, int(s[-1] / spacing) + 1)))


def hausdorff(A, B):
    ta, tb = cKDTree(A), cKDTree(B)
    return max(tb.query(A)[0].max(), ta.query(B)[0].max())


@dataclass
class PairingReport:
    source: int
    target: int
    broken: list  # (y key, u sign, v sign, u index, v index)
    matches: list  # (arc index, end index, broken index, distance)
    arc_sums: list
    bijection: bool
    coherent: bool

    @property
    def ok(self):
        return self.bijection and self.coherent


def broken_orbits(catalog, x, z):
    """Broken flow lines from the representative of ``x`` to any lift of ``z``."""
    ups = catalog.upstairs()
    out = []
    for s1, t1, n1, p1, _, _ in ups:
        if s1 != (x, 0):
            continue
        for s2, t2, n2, p2, _, _ in ups:
            if s2 == t1 and t2[0] == z:
                out.append((t1, t2, n1, n2, p1, p2))
    return out


def pair_broken_orbits(spec, crits, catalog, x, z, arcs, tol=PASSAGE_RADIUS, strict=True):
    """Match open arc ends with broken orbits and check sign cancellation.

    Every open end must be within Hausdorff distance ``tol`` of exactly one
    broken orbit through its intermediate point, every broken orbit must be
    matched exactly once, and the two ends of each arc must carry sign
    products summing to zero.
    """
    spec = catalog.spec
    broken = broken_orbits(catalog, x, z)
    dense = [_densify(spec, np.vstack([p1, p2])) for (_, _, _, _, p1, p2) in broken]
    coarse = [_densify(spec, np.vstack([p1, p2]), COARSE_SPACING) for (_, _, _, _, p1, p2) in broken]
    matches = []
    used = {}
    for ai, arc in enumerate(arcs):
        for ei, end in enumerate(arc.ends):
            line = coarse_line = None
            cands = []
            for bi, (y, t, _, _, _, _) in enumerate(broken):
                if y != end.intermediate or t[1] != arc.target_lift:
                    continue
                if coarse_line is None:
                    coarse_line = _densify(spec, end.trajectory, COARSE_SPACING)
                # the coarse curves are within COARSE_SPACING of the fine ones
                d = hausdorff(coarse_line, coarse[bi])
                if d > tol + 2 * COARSE_SPACING:
                    cands.append((d, bi))
                    continue
                if line is None:
                    line = _densify(spec, end.trajectory)
                cands.append((hausdorff(line, dense[bi]), bi))
            close = [c for c in cands if c[0] < tol]
            if len(close) != 1:
                matches.append((ai, ei, None, min(cands)[0] if cands else np.inf))
                continue
            d, bi = close[0]
            matches.append((ai, ei, bi, d))
            used[bi] = used.get(bi, 0) + 1
    bij = all(m[2] is not None for m in matches) and all(used.get(b, 0) == 1 for b in range(len(broken)))
    sums = []
    for ai, arc in enumerate(arcs):
        if arc.closed:
            continue
        ms = [m for m in matches if m[0] == ai and m[2] is not None]
        if len(ms) != 2:
            sums.append(None)
            continue
        sums.append(sum(broken[m[2]][2] * broken[m[2]][3] for m in ms))
    coherent = all(s == 0 for s in sums)
    rep = PairingReport(
        x, z,
        [(b[0], b[2], b[3]) for b in broken],
        matches, sums, bij, coherent,
    )
    if strict:
        if not bij:
            raise GluingVerificationError(
                f"broken orbits {x}->{z} do not match the moduli arc ends: {matches}"
            )
        if not coherent:
            raise OrientationCoherenceError(f"arc sign sums {sums} for {x}->{z} are not zero")
    return rep
