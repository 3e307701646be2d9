"""
Two hypotheses on the 4-bus system
==================================

Line 1 is out.  One PMU at bus 2 sees the change, blurred by noise.  The
decision boundary between "line 1" and "line 2" is the perpendicular
bisector of the two expected changes in the complex plane.
"""

import numpy as np

from outageid.montecarlo import NoiseModel, scatter_demo
from outageid.netmodel import load_case

net = load_case("case4gs")
bus2 = net.bus_index(2)

demo = scatter_demo(net, realizations=1000, monitored_bus=bus2)
a, r = demo.expected_actual, demo.expected_rival
print(f"expected change, line 1 out: {a.real:+.5f}{a.imag:+.5f}j")
print(f"expected change, line 2 out: {r.real:+.5f}{r.imag:+.5f}j")
print(f"distance between them: {abs(a - r):.4f} pu")

spread = demo.observed - a
print(f"observed spread (std of re, im): {spread.real.std():.2e}, {spread.imag.std():.2e}")
print(f"fraction on line 2's side: {demo.misidentified_fraction:.4f}")

# how much noise before the two clouds start to overlap
for scale in (1, 5, 10, 20):
    m = NoiseModel(0.002 / np.sqrt(3) * scale, 0.01 / np.sqrt(3) * scale)
    d = scatter_demo(net, 1000, m, monitored_bus=bus2)
    print(f"noise x{scale:<2}: fraction closer to line 2 = {d.misidentified_fraction:.3f}")
