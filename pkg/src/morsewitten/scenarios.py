"""Built-in scenarios."""

from __future__ import annotations

import math

import numpy as np

from .errors import ScenarioError
from .geometry import ManifoldSpec
from .symbolics import parse_expression

SPHERE = "x1^2+x2^2+x3^2-1"
QUADRATIC = "3*x1^2+2*x2^2+x3^2"
TWO_PEAKS = "x3+2*x1^2"
# a torus of radii 2 and 1 standing upright: its axis of rotation is x2
TORUS = "(sqrt(x1^2+x3^2)-2)^2+x2^2-1"


def _reflections(*axes, n=3):
    out = []
    for a in axes:
        m = np.eye(n)
        m[a, a] = -1.0
        out.append(m)
    return tuple(out)


def _spec(label, constraints, f, involution=None, symmetries=(), box=4.0):
    N = 3
    return ManifoldSpec(
        ambient_dim=N,
        constraints=tuple(parse_expression(c, N) for c in constraints),
        f=parse_expression(f, N),
        dim=N - len(constraints),
        involution=involution,
        label=label,
        box=box,
        symmetries=symmetries,
    )


def sphere_quadratic():
    return _spec("sphere_quadratic", [SPHERE], QUADRATIC, symmetries=_reflections(0, 1, 2), box=1.5)


def sphere_two_peaks():
    return _spec("sphere_two_peaks", [SPHERE], TWO_PEAKS, symmetries=_reflections(0, 1), box=1.5)


def sphere_height():
    return _spec("sphere_height", [SPHERE], "x3", symmetries=_reflections(0, 1), box=1.5)


def torus_untilted():
    return _spec("torus_untilted", [TORUS], "x3", symmetries=_reflections(0, 1))


def torus_tilted(theta=0.3):
    """Height function tilted towards the rotation axis by ``theta``."""
    f = f"{math.cos(theta)!r}*x3+{math.sin(theta)!r}*x2"
    return _spec(f"torus_tilted({theta:g})", [TORUS], f, symmetries=_reflections(0))


def rp2():
    """The quadratic function on the sphere, divided by the antipodal map."""
    return _spec("rp2", [SPHERE], QUADRATIC, involution=-np.eye(3), symmetries=_reflections(0, 1, 2), box=1.5)


BUILTINS = {
    "sphere_quadratic": sphere_quadratic,
    "sphere_two_peaks": sphere_two_peaks,
    "sphere_height": sphere_height,
    "torus_tilted": torus_tilted,
    "torus_untilted": torus_untilted,
    "rp2": rp2,
}

# known Euler characteristics, used as a completeness guard on the search
EULER = {
    "sphere_quadratic": 2,
    "sphere_two_peaks": 2,
    "sphere_height": 2,
    "torus_tilted": 0,
    "torus_untilted": 0,
    "rp2": 1,
}


def builtin(name):
    """Look up a built-in by name; ``torus_tilted(0.2)`` passes a tilt angle."""
    base, arg = name, None
    if name.endswith(")") and "(" in name:
        base, arg = name[:-1].split("(", 1)
    if base not in BUILTINS:
        raise ScenarioError(f"unknown scenario {name!r}; built-ins are {', '.join(sorted(BUILTINS))}")
    if arg is None:
        return BUILTINS[base]()
    if base != "torus_tilted":
        raise ScenarioError(f"scenario {base!r} takes no parameter")
    try:
        return torus_tilted(float(arg))
    except ValueError:
        raise ScenarioError(f"bad tilt angle {arg!r}") from None
