"""
Comparing two functions on the sphere
=====================================

The quadratic 3*x1^2 + 2*x2^2 + x3^2 and the two-peaks function
x3 + 2*x1^2 give different complexes on the same sphere: six critical
points against four.  A continuation map relates them.  We build the
function

    F(p, s) = kappa/2 (1 + s1) + f_s(p)

on the sphere times a circle, where f_s slides from one function to the
other as s goes around the circle, and count its flow lines from the
slice s1 = +1 down to the slice s1 = -1.  Kappa is taken large enough
that the circle direction dominates every other force.

This takes a minute or two: the shooting happens on a 3-manifold.
"""

import numpy as np

import morsewitten as mw

A = mw.morse_complex(mw.builtin("sphere_quadratic"))
B = mw.morse_complex(mw.builtin("sphere_two_peaks"))
print("generators of the quadratic complex:", A.complex.generators)
print("generators of the two-peaks complex:", B.complex.generators)

fwd = mw.continuation(A, B)
print("kappa = %.4f, flattening width = %.2f" % (fwd.kappa, fwd.delta))
for k in sorted(fwd.psi):
    print("psi_%d =" % k, fwd.psi[k].tolist())

# a chain map: psi commutes with the boundaries
for k in (1, 2):
    lhs = B.complex.d(k) @ fwd.psi[k]
    rhs = fwd.psi[k - 1] @ A.complex.d(k)
    print("degree %d: d psi == psi d:" % k, np.array_equal(lhs, rhs))

# going there and back again is the identity on homology
back = mw.continuation(B, A)
there = mw.induced_map_on_homology(fwd.psi, A.complex, B.complex)
again = mw.induced_map_on_homology(back.psi, B.complex, A.complex)
for k in sorted(there):
    print("H_%d round trip:" % k, (again[k].free @ there[k].free).tolist())
