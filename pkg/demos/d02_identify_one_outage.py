"""
Identifying one line outage
===========================

Build the signature bank for every non-islanding branch, fake a noisy PMU
observation of one outage and rank the hypotheses.
"""

import numpy as np

from outageid.identify import Placement, apply_filter, rank_candidates
from outageid.montecarlo import NoiseModel, prepare, sample_noise, synthesize_observation
from outageid.powerflow import PowerFlowSolution
from outageid.scenario import bridges

from outageid.netmodel import load_case

net = load_case("case_ieee30")

# branches whose loss splits the grid are not hypotheses
print("islanding branches:", sorted(bridges(net)))

prep = prepare(net)
sigs = prep.ac
print(f"{sigs.L} candidate outages, all solved: {bool(sigs.solved.all())}")

# PMUs on five buses (external numbering), branch 22 taken out
pmus = Placement(tuple(net.bus_index(b) for b in (2, 10, 15, 24, 27)))
actual = 22
post = sigs.post_voltage(actual)
post_sol = PowerFlowSolution(np.abs(post), np.angle(post), True, 0, 0.0)

noise = sample_noise(NoiseModel(seed=3), net.n_bus, 1)[0]
obs = synthesize_observation(prep.base, post_sol, noise[:, 0], noise[:, 1], pmus)

ranking = rank_candidates(sigs, obs)
for bid, e in ranking.head(4):
    print(f"  branch {bid:>2}  E={e:.3e}")

# a gap below epsilon means "too close to call"
for eps in (0.0, 1e-3, 5e-3):
    v = apply_filter(ranking, eps)
    print(f"eps={eps:g}: identified {v.identified}, gap {v.delta_E:.2e}, conclusive={v.conclusive}")
