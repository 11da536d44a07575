"""Constructive bound against the true constant across a small gallery.

For every kernel that passes the density assumption, the diffusion runs to
saturation and a_n / C_n is compared with the Rayleigh minimum.  The ratio
column shows how much the constructive route loses.
"""

from coercivity_lab.cli import default_gallery
from coercivity_lab.coercivity import PipelineSpec, global_pipeline
from coercivity_lab.grid import Grid
from coercivity_lab.kernels import KernelSpec, SamplingPlan, check_assumption, tabulate

g = Grid(1, 64)
print(f"{'kernel':55s} {'n':>2s} {'bound':>10s} {'rayleigh':>10s} {'ratio':>8s}")
for kc in default_gallery(0.5):
    spec = KernelSpec.from_config(kc)
    K = tabulate(spec, g)
    if not check_assumption(K, spec.lam, "A1", SamplingPlan()).mu_hat > 0:
        print(f"{K.kernel_id:55s} fails the density assumption, skipped")
        continue
    r = global_pipeline(K, spec.lam, PipelineSpec())
    print(f"{K.kernel_id:55s} {r.n:2d} {r.constructive_bound:10.4g} {r.rayleigh_min:10.4g} "
          f"{r.rayleigh_min / r.constructive_bound:8.1f}")
