"""
Why the torus has to be tilted
==============================

Stand a torus upright and take the height x3.  The two saddles sit
exactly above each other and the flow runs straight from one to the other,
a flow line between points of the same index.  Counting flow lines then
means nothing: the pair is not Morse-Smale.  Tilting the height function a
little towards the rotation axis breaks the connection.
"""

import numpy as np

import morsewitten as mw

upright = mw.builtin("torus_untilted")
crits = mw.find_critical_points(upright)
print("upright torus, critical values:", [round(c.value, 4) for c in crits])
ms = mw.check_morse_smale(upright, crits)
print("Morse-Smale:", ms.passed, " offending flow lines:", ms.offending)

for theta in (0.1, 0.3):
    spec = mw.builtin("torus_tilted(%g)" % theta)
    crits = mw.find_critical_points(spec)
    ms = mw.check_morse_smale(spec, crits)
    catalog = mw.OrbitCatalog(spec, crits, mw.assign_orientations(crits, 0))
    cx = mw.assemble_complex(crits, catalog.orbits, spec.dim)
    h = mw.homology(cx, "Z")
    print("tilt %.1f: Morse-Smale %s, %d flow lines, Betti %s, torsion %s"
          % (theta, ms.passed, len(catalog.all()), h.betti, h.torsion))
    # every flow line between saddles and extrema cancels in pairs
    for k in (1, 2):
        print("  d_%d =" % k, cx.d(k).tolist())

# the Morse inequalities become an equality of Euler characteristics
report = mw.morse_inequalities_check(cx, h)
print("critical points per index:", report.counts, " Euler characteristic:", report.euler)
