"""
Trading misidentification for inconclusive calls
================================================

Run the 3-PMU experiment once, keep every trial's top-two gap, and re-read
the outcome rates for a range of rejection thresholds without re-simulating.
"""

import numpy as np

from outageid.montecarlo import ExperimentConfig, calibrate_epsilon, run_experiment, sweep_threshold

cfg = ExperimentConfig(P=(3,), placements=200, realizations=50)
res = run_experiment(cfg)
print(f"{res.rows[0]['n_trials']} trials")

grid = np.round(np.arange(0, 0.0046, 0.0005), 6)
table = sweep_threshold(cfg, res, grid)
print(" epsilon  correct  misid  correct_filt  misid_filt")
for row in table.rows:
    print(f"{row['epsilon']:8.4f}  {row['rate_correct']:.3f}   {row['rate_misidentified']:.3f}"
          f"     {row['rate_correct_filtered']:.3f}       {row['rate_misidentified_filtered']:.3f}")

store = res.store(3)
eps = calibrate_epsilon(store, 0.01, np.linspace(0, 0.01, 201))
print(f"smallest epsilon with misidentification <= 1%: {eps}")
