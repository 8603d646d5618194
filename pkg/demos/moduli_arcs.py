"""
Broken flow lines at the ends of moduli arcs
============================================

On the sphere with f = 3*x1^2 + 2*x2^2 + x3^2 the flow lines from the
maximum at (1, 0, 0) to the minimum at (0, 0, 1) form one-parameter
families.  Each family meets a regular level set in an open arc.  Walking
along an arc towards one of its ends, the flow lines pinch onto a saddle
and break into two isolated flow lines.  The two broken lines at the ends
of an arc carry sign products that cancel, which is exactly why the
boundary squares to zero.
"""

import numpy as np

import morsewitten as mw
from morsewitten.moduli import regular_level

spec = mw.builtin("sphere_quadratic")
crits = mw.find_critical_points(spec)
Or = mw.assign_orientations(crits, seed=0)
catalog = mw.OrbitCatalog(spec, crits, Or)

top = [c.id for c in crits if c.index == 2]
bottom = [c.id for c in crits if c.index == 0]
print("maxima", top, " minima", bottom)

x, z = top[0], bottom[0]
a = regular_level(crits, x, z)
print("tracing flow lines %d -> %d on the level f = %.3f" % (x, z, a))

arcs = mw.trace_connecting_moduli(spec, crits, x, z, a, catalog=catalog)
for i, arc in enumerate(arcs):
    print("  arc %d: %d samples, %s" % (i, len(arc.points), "closed" if arc.closed else "open"))
    for end in arc.ends:
        print("    ends at %s, breaking at saddle %s" % (np.round(end.point, 4), end.intermediate[0]))

# each open end matches one broken orbit x -> y -> z, and the signs cancel
report = mw.pair_broken_orbits(spec, crits, catalog, x, z, arcs)
for (y, u, v) in report.broken:
    print("  broken orbit through saddle %d: signs %+d, %+d" % (y[0], u, v))
print("bijection:", report.bijection, "  sign sums per arc:", report.arc_sums)

# the same cancellation, read off the complex
cx = mw.assemble_complex(crits, catalog.orbits, spec.dim)
print("d_1 d_2 =", (cx.d(1) @ cx.d(2)).tolist())
