"""Negative gradient flow on level-set manifolds.

The integrator is a batched Dormand-Prince 5(4) pair applied to the
projected gradient field, with a normal retraction after every accepted
step.  Each row of a batch carries its own step size; rows stop when they
are captured by a critical point or run out of time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.signal import lfilter

from .critical import CriticalSet
from .errors import (
    MorseError,
    RadiusTooLargeError,
    RetractionError,
    TransportError,
    UnresolvedLimitError,
)
from .geometry import (
    TangentFrame,
    constraint_jets_batch,
    gradient_batch,
    lagrangian_hessian_batch,
    projector_batch,
    retract_batch,
    tangent_frame,
    riemannian_hessian_at_critical,
)

LOCAL_TOL = 1e-10
CAPTURE_RADIUS = 1e-3
SETTLE_RADIUS = 1e-4
GUARD_RATIO = 100.0
MAX_TIME = 500.0
MAX_STEP = 0.5

# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples of a flow line in integration time.

    ``direction`` is +1 for the negative gradient flow and -1 for the
    reversed flow; ``alpha_*``/``omega_*`` always refer to the negative
    gradient flow, so a backward integration fills in ``alpha_limit``.
    Limits are critical-point ids; ``*_lift`` says which lift on a double
    cover (0 for the representative).
    """

    times: np.ndarray
    points: np.ndarray
    values: np.ndarray
    direction: int
    omega_limit: int | None = None
    omega_lift: int = 0
    alpha_limit: int | None = None
    alpha_lift: int = 0
    crossings: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    @property
    def start(self):
        return self.points[0]

    @property
    def end(self):
        return self.points[-1]

    @property
    def final_limit(self):
        """The limit reached at the end of the integration, as (id, lift)."""
        if self.direction > 0:
            return self.omega_limit, self.omega_lift
        return self.alpha_limit, self.alpha_lift


def _as_critical_set(spec, crits):
    return crits if isinstance(crits, CriticalSet) else CriticalSet(spec, crits)


def _field(spec, P, direction):
    fv, g = gradient_batch(spec, P)
    return fv, -direction * g


def _dp_step(spec, P, K1, h, direction):
    """One Dormand-Prince step for every row; returns (P5, error norms)."""
    ks = [K1]
    for i in range(1, 7):
        Y = P + h[:, None] * sum(a * k for a, k in zip(_A[i], ks))
        ks.append(_field(spec, Y, direction)[1])
    P5 = P + h[:, None] * sum(b * k for b, k in zip(_B5, ks) if b)
    err = np.max(np.abs(h[:, None] * sum(e * k for e, k in zip(_E, ks))), axis=1)
    return P5, err


class _Capture:
    """Limit identification against all critical-point lifts."""

    def __init__(self, cset, direction):
        self.cset = cset
        self.locs = cset.locations
        self.attract = []
        self.repel = []
        for n in cset.nodes:
            a, r = (n.stable_frame, n.unstable_frame) if direction > 0 else (n.unstable_frame, n.stable_frame)
            self.attract.append(a)
            self.repel.append(r)

    def check(self, P, radius=SETTLE_RADIUS):
        """Node index (or -1) that each row has settled into."""
        out = np.full(len(P), -1)
        if len(self.locs) == 0:
            return out
        d = np.linalg.norm(P[:, None, :] - self.locs[None], axis=2)
        near = np.argmin(d, axis=1)
        for i in np.flatnonzero(d[np.arange(len(P)), near] < radius):
            j = near[i]
            disp = P[i] - self.locs[j]
            a = np.linalg.norm(self.attract[j] @ disp) if len(self.attract[j]) else 0.0
            r = np.linalg.norm(self.repel[j] @ disp) if len(self.repel[j]) else 0.0
            if a >= GUARD_RATIO * r:
                out[i] = j
        return out

    def exact(self, P):
        out = np.full(len(P), -1)
        if len(self.locs) == 0:
            return out
        d = np.linalg.norm(P[:, None, :] - self.locs[None], axis=2)
        near = np.argmin(d, axis=1)
        hit = d[np.arange(len(P)), near] < 1e-12
        out[hit] = near[hit]
        return out


def integrate_batch(spec, crits, P0, direction=1, max_time=MAX_TIME, t_end=None, h0=0.01, stop_values=None):
    """Integrate many flow lines at once.

    Rows stop when captured by a critical point (or at ``t_end`` if given,
    in which case no capture is attempted).  With ``stop_values`` a row
    also stops, unresolved, once ``f`` has moved past its entry in the
    direction of integration.  Unresolved rows come back with their final
    limit set to ``None``; nothing is raised here.
    """
    direction = 1 if direction > 0 else -1
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    B = len(P0)
    cset = _as_critical_set(spec, crits) if crits is not None else None
    cap = _Capture(cset, direction) if cset is not None and t_end is None else None

    P, ok = retract_batch(spec, P0)
    if not ok.all():
        raise RetractionError("starting point not on the manifold")
    fv, K = _field(spec, P, direction)
    t = np.zeros(B)
    h = np.full(B, h0 if t_end is None else min(h0, t_end))
    times = [[0.0] for _ in range(B)]
    pts = [[P[i].copy()] for i in range(B)]
    vals = [[fv[i]] for i in range(B)]
    limit = np.full(B, -1)
    active = np.ones(B, bool)
    if cap is not None:
        start = cap.exact(P)
        limit[start >= 0] = start[start >= 0]
        active[start >= 0] = False
    if t_end is not None and t_end <= 0:
        active[:] = False

    while active.any():
        idx = np.flatnonzero(active)
        hh = h[idx]
        if t_end is not None:
            hh = np.minimum(hh, t_end - t[idx])
        P5, err = _dp_step(spec, P[idx], K[idx], hh, direction)
        acc = (err <= LOCAL_TOL) & np.all(np.isfinite(P5), axis=1)
        Q = P5
        if acc.any():
            Qa, rok = retract_batch(spec, P5[acc])
            Q = P5.copy()
            Q[acc] = Qa
            bad = np.flatnonzero(acc)[~rok]
            acc[bad] = False
        fac = np.where(err > 0, 0.9 * (LOCAL_TOL / np.maximum(err, 1e-300)) ** 0.2, 5.0)
        fac = np.clip(np.nan_to_num(fac, nan=0.2), 0.2, 5.0)
        h[idx] = np.minimum(hh * fac, MAX_STEP)
        if not acc.any():
            if np.any(h[idx] < 1e-14):
                raise MorseError("integrator step size underflow")
            continue
        ai = idx[acc]
        P[ai] = Q[acc]
        t[ai] += hh[acc]
        fva, Ka = _field(spec, P[ai], direction)
        K[ai] = Ka
        for j, i in enumerate(ai):
            times[i].append(t[i])
            pts[i].append(P[i].copy())
            vals[i].append(fva[j])
        if t_end is not None:
            active[ai[t[ai] >= t_end - 1e-15]] = False
            continue
        got = cap.check(P[ai])
        limit[ai[got >= 0]] = got[got >= 0]
        active[ai[got >= 0]] = False
        if stop_values is not None:
            active[ai[direction * (stop_values[ai] - fva) > 0]] = False
        active[ai[t[ai] >= max_time]] = False

    out = []
    for i in range(B):
        node = cset.nodes[limit[i]] if limit[i] >= 0 else None
        kw = {}
        if node is not None:
            if direction > 0:
                kw = dict(omega_limit=node.id, omega_lift=node.lift)
            else:
                kw = dict(alpha_limit=node.id, alpha_lift=node.lift)
            if len(times[i]) == 1:
                kw = dict(omega_limit=node.id, omega_lift=node.lift, alpha_limit=node.id, alpha_lift=node.lift)
        out.append(
            Trajectory(
                np.array(times[i]), np.array(pts[i]), np.array(vals[i]), direction, **kw
            )
        )
    return out


def integrate_trajectory(spec, crits, p0, direction=1, max_time=MAX_TIME, levels=()):
    """Integrate one flow line until it is captured by a critical point.

    Raises :class:`UnresolvedLimitError` if nothing captures it within
    ``max_time``.  Crossings of the requested ``levels`` are located to
    1e-10 in ``f``.
    """
    traj = integrate_batch(spec, crits, np.asarray(p0, float)[None], direction, max_time)[0]
    if traj.final_limit[0] is None:
        raise UnresolvedLimitError(
            f"trajectory from {np.asarray(p0)} not captured within time {max_time}"
        )
    if levels:
        traj.crossings.extend(level_crossings(spec, traj, levels))
    return traj


def flow_map(spec, q, t, direction=1):
    """The time-``t`` flow of ``q`` (no limit detection)."""
    if t == 0:
        return np.asarray(q, dtype=float).copy()
    traj = integrate_batch(spec, None, np.asarray(q, float)[None], direction, t_end=t)[0]
    return traj.end


def reverse_trajectory(traj):
    """The same samples read in the opposite time direction."""
    T = traj.times[-1]
    return Trajectory(
        T - traj.times[::-1],
        traj.points[::-1].copy(),
        traj.values[::-1].copy(),
        -traj.direction,
        omega_limit=traj.omega_limit,
        omega_lift=traj.omega_lift,
        alpha_limit=traj.alpha_limit,
        alpha_lift=traj.alpha_lift,
        crossings=list(traj.crossings),
    )


def level_crossings(spec, traj, levels, tol=1e-10):
    """Points where ``f`` along the trajectory crosses each of ``levels``.

    The bracketing step is re-integrated with a shortened step, and the
    step fraction is refined by the secant (Illinois) rule.
    """
    out = []
    v = traj.values
    for a in levels:
        s = np.sign(v - a)
        hits = np.flatnonzero(s[:-1] * s[1:] <= 0)
        for i in hits[:1]:
            if v[i] == a:
                out.append((a, traj.points[i].copy()))
                continue
            p0, h = traj.points[i], traj.times[i + 1] - traj.times[i]

            def g(theta):
                q = flow_map(spec, p0, theta * h, traj.direction)
                return float(spec.f.jet(q[None], 0)[0][0]) - a, q

            lo, hi = 0.0, 1.0
            glo, ghi = v[i] - a, v[i + 1] - a
            q = traj.points[i + 1]
            side = 0
            for _ in range(100):
                theta = (lo * ghi - hi * glo) / (ghi - glo)
                gm, q = g(theta)
                if abs(gm) < tol:
                    break
                if np.sign(gm) == np.sign(glo):
                    lo, glo = theta, gm
                    if side == -1:
                        ghi *= 0.5
                    side = -1
                else:
                    hi, ghi = theta, gm
                    if side == 1:
                        glo *= 0.5
                    side = 1
            out.append((a, q))
    return out


# --------------------------------------------------------------------------
# linearization
# --------------------------------------------------------------------------


def _hermite_midpoints(spec, traj):
    P = traj.points
    h = np.diff(traj.times)
    _, V = _field(spec, P, traj.direction)
    mid = 0.5 * (P[:-1] + P[1:]) + (h / 8.0)[:, None] * (V[:-1] - V[1:])
    mid, _ = retract_batch(spec, mid)
    return mid, h


def _linear_generators(spec, P, direction):
    """``-dir * P HL P`` at each point: the variational operator."""
    _, _, HL, J = lagrangian_hessian_batch(spec, P)
    Pr = projector_batch(J)
    return -direction * (Pr @ HL @ Pr)


def variational_transport(spec, traj, frame):
    """Push a tangent frame along a trajectory by the linearized flow.

    Each step applies ``exp(h A)`` with ``A`` the variational operator at
    the step midpoint, followed by tangent projection at the new sample.
    The frame is re-orthonormalized by QR every 10 steps (or sooner if it
    grows ill-conditioned); the product of the signs of the diagonal of R
    is returned as ``sign`` so that orientation is tracked exactly.
    """
    X = np.array(frame.vectors, dtype=float)
    sign = int(frame.sign)
    if len(traj) < 2 or len(X) == 0:
        return TangentFrame(traj.points[-1].copy(), X, sign)
    mid, h = _hermite_midpoints(spec, traj)
    A = _linear_generators(spec, mid, traj.direction)
    steps = expm(h[:, None, None] * A)
    _, J, _ = constraint_jets_batch(spec, traj.points[1:], 1)
    Proj = projector_batch(J)
    for i in range(len(h)):
        X = (Proj[i] @ (steps[i] @ X.T)).T
        s = np.linalg.svd(X, compute_uv=False)
        cond = s[0] / s[-1] if s[-1] > 0 else np.inf
        if cond > 1e8:
            raise TransportError(f"transported frame collapsed (condition {cond:.3g})")
        if (i + 1) % 10 == 0 or cond > 1e4:
            Q, R = np.linalg.qr(X.T)
            sign *= int(np.prod(np.sign(np.diag(R))))
            X = Q.T
    Q, R = np.linalg.qr(X.T)
    sign *= int(np.prod(np.sign(np.diag(R))))
    return TangentFrame(traj.points[-1].copy(), Q.T, sign)


def linearized_flow_at_critical(spec, x, t):
    """``d(phi_t)`` at a critical point, in its eigenframe.

    Integrates the variational equation with the ambient operator at the
    fixed point (by an explicit Runge-Kutta solver); the result should
    equal ``exp(-t H)``.
    """
    if not 0 <= t <= 10:
        raise ValueError("t must lie in [0, 10]")
    E = x.eigenframe
    n = len(E)
    if t == 0:
        return np.eye(n)
    A = _linear_generators(spec, x.location[None], 1)[0]
    Ae = E @ A @ E.T

    def rhs(_, y):
        return (Ae @ y.reshape(n, n)).ravel()

    sol = solve_ivp(rhs, (0, t), np.eye(n).ravel(), method="DOP853", rtol=1e-13, atol=1e-14)
    return sol.y[:, -1].reshape(n, n)


def hessian_in_eigenframe(spec, x):
    return riemannian_hessian_at_critical(spec, x.location, TangentFrame(x.location, x.eigenframe))


# --------------------------------------------------------------------------
# local stable manifolds
# --------------------------------------------------------------------------


class _EigenChart:
    """Coordinates ``c = E (p - x)`` around a critical point."""

    def __init__(self, spec, x):
        self.spec = spec
        self.x = x.location
        self.E = x.eigenframe
        _, J, _ = constraint_jets_batch(spec, self.x[None], 1)
        self.normal = np.linalg.qr(J[0].T)[0].T

    def to_point(self, C):
        """Inverse chart: solve for the normal offset by Newton's method."""
        C = np.atleast_2d(C)
        base = self.x + C @ self.E
        mu = np.zeros((len(C), len(self.normal)))
        for _ in range(50):
            P = base + mu @ self.normal
            vals, J, _ = constraint_jets_batch(self.spec, P, 1)
            if np.max(np.abs(vals)) < 1e-14:
                break
            M = J @ self.normal.T
            mu -= np.linalg.solve(M, vals[:, :, None])[:, :, 0]
        return base + mu @ self.normal

    def field(self, C):
        P = self.to_point(C)
        _, V = _field(self.spec, P, 1)
        return V @ self.E.T


@dataclass(frozen=True, eq=False)
class StableGraph:
    """Samples of the local stable manifold as a graph over ``E^s``.

    ``stable_coords`` (m, n-k) are the prescribed stable components,
    ``unstable_offsets`` (m, k) the computed unstable components, and
    ``points`` the corresponding points of the manifold.
    """

    critical_id: int
    stable_coords: np.ndarray
    unstable_offsets: np.ndarray
    points: np.ndarray
    iterations: int


def local_stable_graph(spec, x, radius=0.05, grid=9, verify=True, crits=None):
    """Local stable manifold of ``x`` by the Perron contraction iteration.

    A solution on ``[0, T]`` decaying to ``x`` solves
    ``g(t) = e^{tA_s} g0 + int_0^t e^{(t-u)A_s} h_s(g(u)) du
    - int_t^T e^{(t-u)A_u} h_u(g(u)) du``
    in eigen-coordinates, with ``A`` the diagonal linear part and ``h`` the
    remainder of the vector field.  Both integrals are trapezoid sums on a
    uniform grid (computed as first-order recursive filters).  The graph
    value over ``g0`` is the unstable component of ``g(0)``.

    ``grid`` points are taken along each stable axis of the ball (a tensor
    grid clipped to the ball).  With ``verify`` every graph point is flowed
    forward and must be captured by ``x``.
    """
    k = x.index
    n = len(x.eigenvalues)
    m = n - k
    if m == 0:
        return StableGraph(x.id, np.zeros((1, 0)), np.zeros((1, k)), x.location[None].copy(), 0)
    lam = x.eigenvalues
    axes = np.linspace(-radius, radius, grid)
    mesh = np.stack(np.meshgrid(*([axes] * m), indexing="ij"), axis=-1).reshape(-1, m)
    S0 = mesh[np.linalg.norm(mesh, axis=1) <= radius + 1e-15]
    chart = _EigenChart(spec, x)
    if k == 0:
        C = np.zeros((len(S0), n))
        C[:, :] = S0
        return StableGraph(x.id, S0, np.zeros((len(S0), 0)), chart.to_point(C), 0)

    rates = np.abs(lam)
    T = 20.0 / rates.min()
    dt = 0.001 / rates.max()
    steps = int(np.ceil(T / dt))
    dt = T / steps
    tgrid = np.linspace(0, T, steps + 1)
    A = -lam  # diagonal linear part in the eigenframe
    decay = np.exp(-rates * dt)

    def remainder(G):
        Cflat = G.reshape(-1, n)
        return (chart.field(Cflat) - Cflat * A).reshape(G.shape)

    G = np.zeros((len(S0), len(tgrid), n))
    G[:, :, k:] = S0[:, None, :] * np.exp(np.outer(tgrid, A[k:]))[None]
    prev_diff = np.inf
    growing = 0
    for it in range(1, 200):
        H = remainder(G)
        new = np.empty_like(G)
        for j in range(k, n):
            # I(t_{i+1}) = e^{-a dt} I(t_i) + dt/2 (e^{-a dt} h_i + h_{i+1})
            u = 0.5 * dt * (decay[j] * H[:, :-1, j] + H[:, 1:, j])
            integ = lfilter([1.0], [1.0, -decay[j]], u, axis=1)
            lin = S0[:, j - k][:, None] * np.exp(A[j] * tgrid)[None]
            new[:, 0, j] = lin[:, 0]
            new[:, 1:, j] = lin[:, 1:] + integ
        for j in range(k):
            # J(t_i) = e^{-b dt} J(t_{i+1}) + dt/2 (h_i + e^{-b dt} h_{i+1})
            u = 0.5 * dt * (H[:, :-1, j] + decay[j] * H[:, 1:, j])
            integ = lfilter([1.0], [1.0, -decay[j]], u[:, ::-1], axis=1)[:, ::-1]
            new[:, :-1, j] = -integ
            new[:, -1, j] = 0.0
        diff = np.max(np.abs(new - G))
        G = new
        if not np.all(np.isfinite(G)):
            raise RadiusTooLargeError(f"stable-graph iteration diverged at radius {radius}")
        if diff < 1e-10:
            break
        growing = growing + 1 if diff > prev_diff else 0
        if growing >= 5:
            raise RadiusTooLargeError(f"stable-graph iteration not contracting at radius {radius}")
        prev_diff = diff
    else:
        raise RadiusTooLargeError(f"stable-graph iteration did not converge at radius {radius}")

    C0 = G[:, 0, :]
    pts = chart.to_point(C0)
    graph = StableGraph(x.id, S0, C0[:, :k].copy(), pts, it)
    if verify:
        if crits is None:
            raise ValueError("verification needs the critical points")
        check_stable_graph(spec, crits, x, graph)
    return graph


def check_stable_graph(spec, crits, x, graph):
    """Flow each graph point forward; all must be captured by ``x`` with
    eventually decreasing distance."""
    trajs = integrate_batch(spec, crits, graph.points, 1)
    for tr in trajs:
        if tr.omega_limit != x.id or tr.omega_lift != 0:
            raise MorseError(f"stable-graph point {tr.start} does not flow to critical point {x.id}")
        d = np.linalg.norm(tr.points - x.location, axis=1)
        tail = d[len(d) // 2:]
        if len(tail) > 1 and np.any(np.diff(tail) > 1e-12):
            raise MorseError(f"distance to critical point {x.id} not monotone along {tr.start}")
    return trajs
