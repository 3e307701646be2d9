"""
Timing the pieces
=================

Median power-flow solve time, identification time, and the signature bank
build, optionally with worker processes.  Pass a case name or a path to a
larger MATPOWER file as the first argument.
"""

import os
import sys

from outageid.cli import benchmark

case = sys.argv[1] if len(sys.argv) > 1 else "case_ieee30"
for jobs in sorted({1, min(4, os.cpu_count() or 1)}):
    r = benchmark(case, repetitions=20, jobs=jobs)
    print(f"{r['case']} ({r['n_bus']} buses, {r['L']} candidates), jobs={jobs}: "
          f"solve {r['median_solve_s'] * 1e3:.2f} ms, identify {r['median_identify_s'] * 1e3:.3f} ms, "
          f"bank {r['signature_build_s']:.2f} s")
