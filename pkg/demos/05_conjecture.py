"""Directional second moments against the reference value.

For the symmetric directional kernel in 1-d the normalized moment tends to
1/(2 - 2s).  Near the origin the integrand behaves like y^(1-2s), so the
cell sum misses a piece of relative size about (h/r)^(2-2s); the ball edge
adds an O(h/r) term.  Refining the grid shows the error decaying like
h^min(1, 2-2s), which is slow for s = 0.75.
"""

from coercivity_lab.grid import Grid
from coercivity_lab.kernels import KernelSpec, conjecture_ratio, tabulate

r = 0.25
for s in (0.25, 0.5, 0.75):
    ref = 1 / (2 - 2 * s)
    row = []
    for n in (128, 256, 512, 1024, 2048):
        K = tabulate(KernelSpec("directional", s, 1.0, {"b": [1.0, 1.0]}), Grid(1, n))
        row.append(abs(conjecture_ratio(K, 0, r, [1.0]) - ref) / ref)
    print(f"s={s}: rel err at N=128..2048: " + "  ".join(f"{e:.2%}" for e in row))
