"""Kernels whose coercivity constant is known exactly.

The fractional kernel scaled by lambda has Rayleigh minimum lambda, and the
one-sided kernel in 1-d carries exactly half of it.  Both serve as sanity
anchors for the eigensolver.
"""

from coercivity_lab.coercivity import dense_rayleigh_oracle, rayleigh_min
from coercivity_lab.grid import Grid
from coercivity_lab.kernels import KernelSpec, tabulate

g = Grid(1, 64)
for spec in (KernelSpec("fractional_laplacian", 0.5, 2.0), KernelSpec("one_sided", 0.5)):
    K = tabulate(spec, g)
    val, u, diag = rayleigh_min(K)
    print(f"{K.kernel_id:45s} iterative {val:.12f}  dense {dense_rayleigh_oracle(K):.12f}  "
          f"sweeps {diag['sweeps']}")
