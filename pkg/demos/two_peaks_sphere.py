"""
Two peaks on a sphere
=====================

The function f = x3 + 2*x1^2 on the unit sphere has two maxima at
(+-sqrt(15)/4, 0, 1/4), a saddle at the north pole and a minimum at the
south pole.  Here we let the library find them, count the flow lines
between them, and read off the homology of the sphere.
"""

import numpy as np

import morsewitten as mw

spec = mw.builtin("sphere_two_peaks")
print(spec.label, "in R^%d, manifold of dimension %d" % (spec.ambient_dim, spec.dim))

# multistart Newton on the Lagrange system, seeded from a Halton sequence
crits = mw.find_critical_points(spec)
for c in crits:
    print("  point %d  index %d  f = % .6f  at %s" % (c.id, c.index, c.value, np.round(c.location, 6)))

# each maximum sends one flow line into the saddle along the meridian
# x2 = 0, and the saddle sends two down to the minimum: four in total
Or = mw.assign_orientations(crits, seed=0)
print("Morse-Smale:", mw.check_morse_smale(spec, crits).passed)
catalog = mw.OrbitCatalog(spec, crits, Or)
orbits = catalog.all()
print("isolated flow lines:", len(orbits))
for o in orbits:
    print("  %d -> %d  sign %+d  crosses f = %.3f at %s" % (o.source, o.target, o.sign, o.level, np.round(o.point, 4)))

# assemble the complex; assembly fails loudly if the boundary does not square to zero
cx = mw.assemble_complex(crits, catalog.orbits, spec.dim)
for k in (1, 2):
    print("boundary from degree %d, columns %s, rows %s" % (k, cx.generators[k], cx.generators[k - 1]))
    print(cx.d(k))

# homology over Z and over Z2
for ring in ("Z", "Z2"):
    h = mw.homology(cx, ring)
    print(ring, [h.describe(k) for k in range(3)])

# the top class is the difference of the two maxima
basis = mw.homology_basis(cx, 2)
top = basis.free[:, 0]
print("H2 generator:", " ".join("%+d*c%d" % (a, g) for a, g in zip(top, cx.generators[2]) if a))
