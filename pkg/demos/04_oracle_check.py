"""
Comparing against exact answers
===============================

For a Gaussian prior the velocity field is affine, so the flow map
G(z) = M z + b is affine too.  That gives exact references to compare with:
the shell-constrained least-squares optimum over z, and the Gaussian MAP
estimate in signal space.
"""

import numpy as np

from fmplug import forward_models as fm
from fmplug.generator import Generator
from fmplug.harness.oracles import affine_coefficients, gaussian_map_oracle, shell_ls_oracle
from fmplug.priors import bundle, lowrank_gaussian
from fmplug.solver import SolveConfig, make_problem, solve

# a variance floor of 0.05 keeps every direction of M well conditioned; with a
# tiny floor the optimum hugs the inner shell wall and gradient descent can stall
prior = lowrank_gaussian(16, 4, floor=0.05, seed=0)
gen = Generator(bundle("g", prior).field)
M, b = affine_coefficients(gen)

rng = np.random.default_rng(2)
x_true = prior.sample(1, rng)[0]
A = fm.random_gaussian(24, 16, seed=2, noise_std=0.03)
y = fm.measure(A, x_true, seed=2)

p = make_problem(y, A, gen)
z_o = shell_ls_oracle(M, b, A, y, p.shell)
x_o = M @ z_o + b
res = solve(p, SolveConfig(iters=1000, seed=2, warm_start=False))
x_map = gaussian_map_oracle(prior, A, y)


def fit(x):
    r = y - A.matrix @ x
    return r @ r / len(y)


print(f"shell least squares  data fit {fit(x_o):.3e}")
print(f"gradient solver      data fit {fit(res.x_hat):.3e}  "
      f"(distance to oracle {np.linalg.norm(res.x_hat - x_o):.2e})")
print(f"Gaussian MAP         data fit {fit(x_map):.3e}  "
      f"error vs truth {np.linalg.norm(x_map - x_true):.3f}")
print(f"shell optimum                           error vs truth "
      f"{np.linalg.norm(x_o - x_true):.3f}")
