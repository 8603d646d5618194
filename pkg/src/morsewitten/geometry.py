"""Closed manifolds presented as regular level sets ``{Phi = 0}`` in R^N.

The metric is always the one induced by the ambient Euclidean inner
product.  Most helpers come in a batched flavour (suffix ``_batch``) that
takes points of shape ``(B, N)``; the unsuffixed functions act on a single
point and carry the documented error checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from .errors import (
    DegeneratePresentationError,
    FixedPointError,
    InvalidSpecError,
    RetractionError,
)
from .symbolics import parse_expression

RANK_TOL = 1e-8
RETRACT_TOL = 1e-12


# --------------------------------------------------------------------------
# smooth functions
# --------------------------------------------------------------------------


class LiftedFunction:
    """A function of the first ``inner.ambient_dim`` coordinates of R^N."""

    def __init__(self, inner, ambient_dim):
        self.inner = inner
        self.ambient_dim = ambient_dim
        self.text = getattr(inner, "text", repr(inner))

    def __repr__(self):
        return f"LiftedFunction({self.text!r}, {self.ambient_dim})"

    def jet(self, points, order=2):
        points = np.asarray(points, dtype=float)
        m = self.inner.ambient_dim
        v, g, h = self.inner.jet(points[:, :m], order)
        B = points.shape[0]
        G = np.zeros((B, self.ambient_dim))
        G[:, :m] = g
        H = None
        if h is not None:
            H = np.zeros((B, self.ambient_dim, self.ambient_dim))
            H[:, :m, :m] = h
        return v, G, H


class ScaledFunction:
    """``scale * inner``; used to flip a Morse function to ``-f``."""

    def __init__(self, inner, scale):
        self.inner = inner
        self.scale = float(scale)
        self.ambient_dim = inner.ambient_dim
        self.text = f"({self.scale!r})*({getattr(inner, 'text', inner)})"

    def jet(self, points, order=2):
        v, g, h = self.inner.jet(points, order)
        return self.scale * v, self.scale * g, None if h is None else self.scale * h


# --------------------------------------------------------------------------
# manifold presentation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ManifoldSpec:
    """Level-set presentation of a closed manifold together with a function.

    ``constraints`` holds the ``N - n`` components of ``Phi``; ``f`` is the
    Morse function.  ``involution`` is an optional free linear involution
    (the manifold of interest is then the quotient).  ``symmetries`` lists
    orthogonal linear maps preserving both ``Phi`` and ``f``; launch spheres
    are cut along their fixed directions when shooting flow lines.
    ``box`` is the half-width of the ambient cube used for sampling.
    """

    ambient_dim: int
    constraints: tuple
    f: object
    dim: int
    involution: np.ndarray | None = None
    label: str = ""
    box: float = 4.0
    symmetries: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "symmetries", tuple(np.asarray(s, float) for s in self.symmetries))
        N = self.ambient_dim
        if self.dim < 1 or self.dim > N:
            raise InvalidSpecError(f"dimension {self.dim} impossible in R^{N}")
        if len(self.constraints) != N - self.dim:
            raise InvalidSpecError(
                f"need {N - self.dim} constraints for a {self.dim}-manifold in R^{N}, "
                f"got {len(self.constraints)}"
            )
        for c in (*self.constraints, self.f):
            if c.ambient_dim != N:
                raise InvalidSpecError(f"function {c} lives in R^{c.ambient_dim}, not R^{N}")
        if self.involution is not None:
            s = np.asarray(self.involution, dtype=float)
            if s.shape != (N, N):
                raise InvalidSpecError(f"involution must be {N}x{N}")
            if not np.array_equal(s @ s, np.eye(N)):
                raise InvalidSpecError("involution does not square to the identity")
            object.__setattr__(self, "involution", s)

    @property
    def codim(self):
        return self.ambient_dim - self.dim

    def with_function(self, f, label=None):
        return replace(self, f=f, label=self.label if label is None else label)


def constraint_jets_batch(spec, P, order=1):
    """Constraint values (B, c), Jacobians (B, c, N) and optional Hessians."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    vals, jacs, hess = [], [], []
    for c in spec.constraints:
        v, g, h = c.jet(P, order)
        vals.append(v)
        jacs.append(g)
        hess.append(h)
    vals = np.stack(vals, axis=1)
    jacs = np.stack(jacs, axis=1)
    hess = np.stack(hess, axis=1) if order >= 2 else None
    return vals, jacs, hess


def gradient_batch(spec, P):
    """f values and Riemannian gradients (projected ambient gradients)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    fv, g, _ = spec.f.jet(P, 1)
    _, J, _ = constraint_jets_batch(spec, P, 1)
    G = J @ np.swapaxes(J, 1, 2)
    coef = np.linalg.solve(G, (J @ g[:, :, None]))
    return fv, g - (np.swapaxes(J, 1, 2) @ coef)[:, :, 0]


def lagrangian_hessian_batch(spec, P):
    """Ambient gradient, Lagrange multipliers and ``Hess f - sum lam_a Hess Phi_a``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    _, g, H = spec.f.jet(P, 2)
    _, J, HP = constraint_jets_batch(spec, P, 2)
    G = J @ np.swapaxes(J, 1, 2)
    lam = np.linalg.solve(G, (J @ g[:, :, None]))[:, :, 0]
    HL = H - np.einsum("ba,bamn->bmn", lam, HP)
    return g, lam, HL, J


def projector_batch(J):
    N = J.shape[-1]
    G = J @ np.swapaxes(J, 1, 2)
    return np.eye(N) - np.swapaxes(J, 1, 2) @ np.linalg.solve(G, J)


def retract_batch(spec, P, tol=RETRACT_TOL, max_iter=50):
    """Move points normally onto ``{Phi = 0}``.

    The correction is restricted to the row space of ``J(p)`` at the input
    point (a chord Newton iteration on the multipliers), so the output
    differs from the input by a normal vector.  Returns ``(Q, converged)``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    vals, J0, _ = constraint_jets_batch(spec, P, 1)
    J0T = np.swapaxes(J0, 1, 2)
    mu = np.zeros(vals.shape)
    Q = P.copy()
    done = np.max(np.abs(vals), axis=1) < tol * 1e-2
    for _ in range(max_iter):
        todo = ~done
        if not todo.any():
            break
        vals, J, _ = constraint_jets_batch(spec, Q[todo], 1)
        A = J @ J0T[todo]
        step = np.linalg.solve(A, vals[:, :, None])[:, :, 0]
        mu[todo] -= step
        Q[todo] = P[todo] + (J0T[todo] @ mu[todo][:, :, None])[:, :, 0]
        vals, _, _ = constraint_jets_batch(spec, Q[todo], 1)
        res = np.max(np.abs(vals), axis=1)
        small = np.max(np.abs(step), axis=1) < 1e-15
        idx = np.flatnonzero(todo)
        done[idx[(res < tol * 1e-2) | ((res < tol) & small)]] = True
    vals, _, _ = constraint_jets_batch(spec, Q, 1)
    ok = np.max(np.abs(vals), axis=1) < tol
    return Q, ok


def retract_to_manifold(spec, p):
    """Retract a nearby point onto the manifold; raises on failure."""
    p = np.asarray(p, dtype=float)
    vals, _, _ = constraint_jets_batch(spec, p[None], 1)
    if np.max(np.abs(vals)) >= 0.1:
        raise RetractionError(f"point too far from the manifold (|Phi| = {np.max(np.abs(vals)):.3g})")
    Q, ok = retract_batch(spec, p[None])
    if not ok[0]:
        raise RetractionError("retraction did not converge in 50 iterations")
    return Q[0]


def project_to_manifold_batch(spec, P, max_iter=100, max_step=0.5):
    """Damped Gauss-Newton projection from arbitrary ambient points.

    Used only for seeding; unlike :func:`retract_batch` it re-evaluates the
    Jacobian each step and tolerates a large initial residual.
    """
    Q = np.atleast_2d(np.asarray(P, dtype=float)).copy()
    active = np.ones(len(Q), bool)
    for _ in range(max_iter):
        if not active.any():
            break
        vals, J, _ = constraint_jets_batch(spec, Q[active], 1)
        G = J @ np.swapaxes(J, 1, 2)
        try:
            step = (np.swapaxes(J, 1, 2) @ np.linalg.solve(G, vals[:, :, None]))[:, :, 0]
        except np.linalg.LinAlgError:
            step = np.zeros_like(Q[active])
            bad = np.linalg.cond(G) > 1e12
            active[np.flatnonzero(active)[bad]] = False
            continue
        norm = np.linalg.norm(step, axis=1, keepdims=True)
        step = step * np.minimum(1.0, max_step / np.maximum(norm, 1e-300))
        Q[active] -= step
        res = np.max(np.abs(vals), axis=1)
        idx = np.flatnonzero(active)
        active[idx[res < 1e-10]] = False
    Q, ok = retract_batch(spec, Q)
    ok &= np.all(np.isfinite(Q), axis=1) & (np.max(np.abs(Q), axis=1) < 10 * spec.box)
    return Q, ok


def sample_manifold(spec, count, seed=0):
    """Low-discrepancy ambient samples pushed onto the manifold."""
    halton = qmc.Halton(d=spec.ambient_dim, scramble=True, seed=seed)
    raw = (2.0 * halton.random(count) - 1.0) * spec.box
    Q, ok = project_to_manifold_batch(spec, raw)
    return Q[ok]


# --------------------------------------------------------------------------
# tangent spaces, gradients, Hessians
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TangentFrame:
    """Ordered orthonormal vectors (rows) tangent to the manifold at ``base``.

    ``sign`` records an orientation correction picked up when the frame was
    re-orthonormalized (the frame's orientation is that of ``sign * vectors``
    in the sense of the first vector).
    """

    base: np.ndarray
    vectors: np.ndarray
    sign: int = 1

    def __len__(self):
        return len(self.vectors)


def _check_rank(J):
    s = np.linalg.svd(J, compute_uv=False)
    if s.min() <= RANK_TOL:
        raise DegeneratePresentationError(
            f"constraint Jacobian is rank deficient (smallest singular value {s.min():.3g})"
        )


def tangent_projector(spec, p):
    """Orthogonal projector ``I - J^T (J J^T)^{-1} J`` onto ``T_p M``."""
    p = np.asarray(p, dtype=float)
    _, J, _ = constraint_jets_batch(spec, p[None], 1)
    _check_rank(J[0])
    return projector_batch(J)[0]


def tangent_frame(spec, p):
    """Orthonormal basis of ``ker J(p)``."""
    p = np.asarray(p, dtype=float)
    _, J, _ = constraint_jets_batch(spec, p[None], 1)
    _check_rank(J[0])
    _, _, Vt = np.linalg.svd(J[0])
    return TangentFrame(p.copy(), Vt[spec.codim:].copy())


def riemannian_gradient(spec, p):
    """Gradient of ``f`` for the induced metric: the projected ambient gradient."""
    p = np.asarray(p, dtype=float)
    _, g = gradient_batch(spec, p[None])
    return g[0]


def riemannian_hessian_at_critical(spec, x, frame):
    """Hessian matrix of ``f`` at a critical point, in the given frame.

    Uses the Lagrange correction ``Hess f - sum lam_a Hess Phi_a`` with
    multipliers from ``J^T lam = grad f``; only meaningful at critical points.
    """
    x = np.asarray(x, dtype=float)
    _, J, _ = constraint_jets_batch(spec, x[None], 1)
    _check_rank(J[0])
    _, _, HL, _ = lagrangian_hessian_batch(spec, x[None])
    V = frame.vectors
    H = V @ HL[0] @ V.T
    return 0.5 * (H + H.T)


# --------------------------------------------------------------------------
# quotients and products
# --------------------------------------------------------------------------


def canonical_representative(spec, p, tol=1e-9):
    """Deterministic representative of the orbit ``{p, sigma p}``.

    Picks whichever point is larger at the first coordinate where the two
    differ by more than ``tol``.
    """
    if spec.involution is None:
        raise InvalidSpecError("scenario has no involution")
    p = np.asarray(p, dtype=float)
    q = spec.involution @ p
    diff = p - q
    big = np.flatnonzero(np.abs(diff) > tol)
    if big.size == 0:
        raise FixedPointError(f"involution fixes {p}")
    return p.copy() if diff[big[0]] > 0 else q


def is_canonical(spec, p, tol=1e-9):
    if spec.involution is None:
        return True
    p = np.asarray(p, dtype=float)
    diff = p - spec.involution @ p
    big = np.flatnonzero(np.abs(diff) > tol)
    return big.size > 0 and diff[big[0]] > 0


def involution_preserves_orientation(spec, samples=20, seed=0):
    """Whether the involution maps the orientation ``(grad Phi, frame)`` of
    the level set to itself; the quotient is orientable exactly then."""
    if spec.involution is None:
        return True
    s = spec.involution
    signs = set()
    for p in sample_manifold(spec, samples, seed=seed):
        _, J, _ = constraint_jets_batch(spec, np.array([p, s @ p]), 1)
        T = tangent_frame(spec, p).vectors
        here = np.linalg.det(np.vstack([J[0], T]))
        there = np.linalg.det(np.vstack([J[1], T @ s.T]))
        signs.add(int(np.sign(here * there)))
    if len(signs) != 1:
        raise InvalidSpecError("involution orientation behaviour is not constant")
    return signs.pop() > 0


def product_with_circle(spec, radius=1.0):
    """``M x S^1`` inside ``R^{N+2}``; the circle is ``s1^2 + s2^2 = radius^2``.

    The reflection ``s2 -> -s2`` is recorded as a symmetry (the lifted
    function does not depend on ``s2``).
    """
    N = spec.ambient_dim
    M = N + 2
    cons = [LiftedFunction(c, M) for c in spec.constraints]
    r2 = repr(float(radius) ** 2)
    cons.append(parse_expression(f"x{N + 1}^2+x{N + 2}^2-{r2}", M))
    sigma = None
    if spec.involution is not None:
        sigma = np.eye(M)
        sigma[:N, :N] = spec.involution
    refl = np.eye(M)
    refl[-1, -1] = -1.0
    return ManifoldSpec(
        ambient_dim=M,
        constraints=tuple(cons),
        f=LiftedFunction(spec.f, M),
        dim=spec.dim + 1,
        involution=sigma,
        label=f"{spec.label} x S1",
        box=max(spec.box, 1.5 * radius),
        symmetries=(refl,),
    )


def circle_parameter(point):
    """Circle coordinate ``s`` in ``[-1, 1]`` of a point of ``M x S^1``."""
    point = np.asarray(point, dtype=float)
    return np.arctan2(point[..., -1], point[..., -2]) / np.pi


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def validate_spec(spec, samples=200, seed=0):
    """Sample-based checks of the presentation and of the involution."""
    pts = sample_manifold(spec, samples, seed=seed)
    if len(pts) == 0:
        raise InvalidSpecError(f"{spec.label}: no sample point reached the manifold")
    _, J, _ = constraint_jets_batch(spec, pts, 1)
    smin = np.linalg.svd(J, compute_uv=False).min(axis=1)
    if smin.min() <= RANK_TOL:
        raise DegeneratePresentationError(
            f"{spec.label}: constraint Jacobian degenerate at {pts[np.argmin(smin)]}"
        )
    if spec.involution is not None:
        s = spec.involution
        img = pts @ s.T
        cv, _, _ = constraint_jets_batch(spec, img, 1)
        if np.max(np.abs(cv)) > 1e-10:
            raise InvalidSpecError(f"{spec.label}: involution does not preserve the manifold")
        f0 = spec.f.jet(pts, 1)[0]
        f1 = spec.f.jet(img, 1)[0]
        if np.max(np.abs(f0 - f1)) > 1e-10:
            raise InvalidSpecError(f"{spec.label}: f is not invariant under the involution")
        if np.min(np.linalg.norm(img - pts, axis=1)) <= 0.1:
            raise FixedPointError(f"{spec.label}: involution has (near) fixed points")
        # Fixed points lie in the +1 eigenspace.  Phi is invariant, so its
        # gradient there lies in that eigenspace too, and Newton projection
        # started inside it stays inside: project the midpoints (p + sp)/2.
        mids = 0.5 * (pts + img)
        mids = mids[np.linalg.norm(mids, axis=1) > 1e-9]
        if len(mids):
            Q, ok = project_to_manifold_batch(spec, mids)
            Q = Q[ok]
            if len(Q) and np.min(np.linalg.norm(Q @ s.T - Q, axis=1)) <= 1e-6:
                raise FixedPointError(f"{spec.label}: involution fixes {Q[np.argmin(np.linalg.norm(Q @ s.T - Q, axis=1))]}")
    f0 = spec.f.jet(pts, 1)[0]
    for i, m in enumerate(spec.symmetries):
        m = np.asarray(m, dtype=float)
        if np.max(np.abs(m @ m.T - np.eye(spec.ambient_dim))) > 1e-10:
            raise InvalidSpecError(f"{spec.label}: symmetry {i} is not orthogonal")
        img = pts @ m.T
        cv, _, _ = constraint_jets_batch(spec, img, 1)
        if np.max(np.abs(cv)) > 1e-10:
            raise InvalidSpecError(f"{spec.label}: symmetry {i} does not preserve the manifold")
        if np.max(np.abs(spec.f.jet(img, 1)[0] - f0)) > 1e-10:
            raise InvalidSpecError(f"{spec.label}: f is not invariant under symmetry {i}")
    return pts
