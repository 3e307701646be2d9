"""
Solving the 30-bus base case
============================

Load the bundled IEEE 30-bus case, solve the AC power flow and compare it
with the linear DC approximation.
"""

import numpy as np

from outageid.netmodel import load_case
from outageid.powerflow import branch_flows, solve_ac, solve_dc

net = load_case("case_ieee30")
print(f"{net.n_bus} buses, {net.n_branch} branches, base {net.base_mva:g} MVA")

# Newton from a flat start; generator Q limits are not enforced
sol = solve_ac(net)
print(f"converged={sol.converged} in {sol.iterations} iterations, mismatch {sol.max_mismatch:.1e} pu")

# voltages are kept in pu and radians; degrees only for display
for k in (0, 4, 29):
    print(f"bus {net.external_ids[k]:>2}: |V|={sol.Vm[k]:.4f} pu  angle={np.degrees(sol.Va[k]):8.3f} deg")

# losses = sum of what enters both ends of every branch
Sf, St = branch_flows(net, sol)
print(f"series losses: {(Sf + St).real.sum() * net.base_mva:.3f} MW")

# the DC model drops magnitudes and resistance, so angles drift a little
theta = solve_dc(net)
print(f"largest AC-DC angle gap: {np.degrees(np.abs(theta - sol.Va)).max():.3f} deg")
