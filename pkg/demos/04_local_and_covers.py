"""Local coercivity on a free box, with the covering diagnostics.

The energy on B_2 x B_2 is compared with the seminorm on B_1.  The cover of
the unit ball and the chains joining its balls are the geometric scaffolding
that transports estimates from small balls to B_1.
"""

import numpy as np

from coercivity_lab.coercivity import box_center, dense_local_oracle, local_pipeline
from coercivity_lab.geometry import ball_chain, cover_count_bound, cover_unit_ball
from coercivity_lab.grid import Ball, Grid
from coercivity_lab.kernels import KernelSpec, tabulate

g = Grid(1, 32, box_length=4.0, periodic=False)
K = tabulate(KernelSpec("stripes", 0.5, 1.0, {"width": 0.25}), g)
rep = local_pipeline(K, 1.0)
c = tuple(box_center(g))
print(f"local quotient {rep.rayleigh_min:.6f}  dense oracle {dense_local_oracle(K, Ball(c, 2.0), Ball(c, 1.0)):.6f}")
print("geometry:", {k: v for k, v in rep.extras["geometry"].items() if k != "chain_cases"})

for d in (1, 2):
    for n in (0, 1):
        cov = cover_unit_ball(n, d)
        far = max(((i, j) for i in range(0, len(cov), max(1, len(cov) // 20))
                   for j in range(len(cov))),
                  key=lambda p: np.linalg.norm(np.subtract(cov.balls[p[0]].center, cov.balls[p[1]].center)))
        ch = ball_chain(cov.balls[far[0]], cov.balls[far[1]], n)
        print(f"d={d} n={n}: {len(cov)} balls (bound {cover_count_bound(n, d)}), "
              f"longest sampled chain {len(ch)} (bound {2 + 6 * 5 ** n})")
