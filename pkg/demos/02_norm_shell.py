"""
Where Gaussian samples live
===========================

In d dimensions a standard normal vector has norm close to sqrt(d), and the
relative spread shrinks like 1/sqrt(2d).  The solver keeps its latent inside
the shell (1 - eps) sqrt(d) <= |z| <= (1 + eps) sqrt(d).  Here we check
the empirical fraction inside the shell against the exact chi-square value,
then look at the projection itself.
"""

import numpy as np

from fmplug.harness.oracles import com_check, shell_probability
from fmplug.solver import ShellConstraint, shell_project

n = 20000
print(f"{'d':>6s} {'eps':>6s} {'empirical':>10s} {'chi2':>10s}")
for d in (4, 64, 1024, 16384):
    for eps in (0.025, 0.1):
        print(f"{d:6d} {eps:6.3f} {com_check(d, eps, n, seed=d):10.4f} "
              f"{shell_probability(d, eps):10.4f}")

# projection only rescales: direction is kept, norm is clipped into the shell
c = ShellConstraint(256, 0.025)
lo, hi = c.bounds
rng = np.random.default_rng(0)
for scale in (0.2, 1.0, 5.0):
    z = scale * rng.standard_normal(256)
    p = shell_project(z, c)
    cos = z @ p / (np.linalg.norm(z) * np.linalg.norm(p))
    print(f"|z| = {np.linalg.norm(z):7.2f} -> {np.linalg.norm(p):6.2f} "
          f"(shell [{lo:.2f}, {hi:.2f}]), cosine {cos:.6f}")
