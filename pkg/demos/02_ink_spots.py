"""Growing ink spots on a striped kernel.

The stripes kernel is nondegenerate only on every other band of directions,
so N^0(x) covers about half of the space.  Each diffusion step spreads the
nondegeneracy set; the thresholds a_j drop and the growth ratio on sampled
balls stays above one until the resolvable set is covered.
"""

from coercivity_lab.grid import Grid
from coercivity_lab.inkspots import SaturationSpec, saturation_iterations
from coercivity_lab.kernels import KernelSpec, SamplingPlan, check_assumption, tabulate

g = Grid(1, 64)
K = tabulate(KernelSpec("stripes", 0.5), g)
a1 = check_assumption(K, 1.0, "A1", SamplingPlan())
print(f"density constant mu_hat = {a1.mu_hat:.4f}")
sat = saturation_iterations(K, 1.0, a1.mu_hat, SaturationSpec())
for j, a in enumerate(sat.thresholds):
    print(f"  j={j}  a_j={a:.5g}  missing resolvable cells={sat.missing_per_step[j]}")
live = [r for r in sat.reports if not r.saturated_before]
print(f"saturated after n={sat.n} step(s); bound n0={sat.n0} from c2={sat.c2_measured} (c1={sat.c1_best})")
print(f"minimum growth ratio over {len(live)} non-saturated balls: {min(r.ratio for r in live):.3f}")
print(f"nesting violations per step: {sat.nesting_violations}")
