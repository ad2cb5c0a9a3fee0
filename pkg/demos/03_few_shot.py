"""
Warm starts from a handful of clean examples
============================================

Without a degraded image worth trusting as an anchor, the warm start can use
a learned convex combination of a few clean instances instead.  Here the
anchor for inpainting comes from five draws of the same bump-signal prior.
"""

import numpy as np

from fmplug import forward_models as fm
from fmplug.generator import Generator
from fmplug.priors import bump_gmm, bundle
from fmplug.solver import SolveConfig, make_problem, solve

b = bundle("bump-gmm", bump_gmm(32, 8, seed=0))
gen = Generator(b.field)
rng = np.random.default_rng(1)
shots = b.sample(5, rng)
x_true = b.sample(1, rng)[0]

mask = fm.random_inpaint(32, keep_fraction=0.3, seed=1, noise_std=0.01)
y = fm.measure(mask, x_true, seed=1)

for label, few in (("anchor = zero-filled y", None), ("anchor = few-shot mix", shots)):
    p = make_problem(y, mask, gen, few_shot=few, reference_norm=b.rms_norm())
    res = solve(p, SolveConfig.desk(iters=400, seed=1, t_init=0.9))
    err = np.linalg.norm(res.x_hat - x_true) / np.linalg.norm(x_true)
    print(f"{label:24s} relative error {err:.3f}, t* = {res.t_star:.3f}")
    if res.w_star is not None:
        print("  mixing weights:", np.round(res.w_star, 3))

# which clean shot is nearest to the truth?
print("distances to truth:", np.round(np.linalg.norm(shots - x_true, axis=1), 3))
