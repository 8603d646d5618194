"""
Torsion on the projective plane
===============================

RP^2 is the unit sphere with antipodal points identified.  We keep working
upstairs on the sphere and remember the involution p -> -p.  The function
3*x1^2 + 2*x2^2 + x3^2 is even, so it descends to RP^2, where it has one
critical point of each index.  The two flow lines from the maximum to the
saddle arrive with the same sign, and this is where the Z/2 comes from.
"""

import numpy as np

import morsewitten as mw
from morsewitten.geometry import ScaledFunction, involution_preserves_orientation

spec = mw.builtin("rp2")
print("involution:\n", spec.involution)

crits = mw.find_critical_points(spec)
for c in crits:
    print("  point %d  index %d  f = %.1f  at %s" % (c.id, c.index, c.value, np.round(c.location, 6)))

Or = mw.assign_orientations(crits, seed=0)
catalog = mw.OrbitCatalog(spec, crits, Or)
for o in catalog.all():
    print("  %d -> %d (lift %d)  sign %+d" % (o.source, o.target, o.target_lift, o.sign))

# d_2 = -2 and d_1 = 0: the two upstairs flow lines into the saddle add up
cx = mw.assemble_complex(crits, catalog.orbits, spec.dim)
print("d_1 =", cx.d(1).tolist(), "  d_2 =", cx.d(2).tolist())

# integral homology sees torsion in degree 1, and cohomology moves it up
for title, fn in (("homology", mw.homology), ("cohomology", mw.cohomology)):
    for ring in ("Z", "Z2"):
        h = fn(cx, ring)
        print("%-10s over %-2s: %s" % (title, ring, [h.describe(k) for k in range(3)]))

# the antipodal map reverses the orientation of the sphere, so the quotient
# is not orientable and duality only holds with Z2 coefficients
print("orientable quotient:", involution_preserves_orientation(spec))
neg = spec.with_function(ScaledFunction(spec.f, -1.0), label="-f")
ncrits = mw.find_critical_points(neg)
ncat = mw.OrbitCatalog(neg, ncrits, mw.assign_orientations(ncrits, 0))
ncx = mw.assemble_complex(ncrits, ncat.orbits, neg.dim)
for ring in ("Z2", "Z"):
    print("duality over %-2s:" % ring, mw.poincare_duality_check(cx, ncx, ring).passed)
