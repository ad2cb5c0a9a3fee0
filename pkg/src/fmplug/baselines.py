"""Reference solvers: plain plug-in and a D-Flow-style variant.

The D-Flow variant keeps its initialization (a mix of the inversion seed and
noise) and its chi-square likelihood penalty on ``z``, but is optimized with
the same Adam loop as the warm-started solver so that only the
initialization and regularizer differ.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import List

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DivergenceError
from .generator import Generator, generate, invert
from .optim import Adam
from .solver import SolveConfig, SolveResult, WarmStartProblem, data_fit, solve

log = logging.getLogger(__name__)

ZERO_PENALTY = 1e12


@dataclass(frozen=True)
class DFlowConfig:
    alpha_mix: float = 0.25
    lambda_reg: float = 0.01
    nfe: int = 6
    iters: int = 500
    seed: int = 0
    lr: float = 0.05
    solver: str = "heun2"
    patience: int = 50
    tol: float = 1e-8
    per_variable: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha_mix <= 1.0:
            raise ConfigError("alpha_mix must lie in [0, 1]")
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be non-negative")
        if self.nfe < 1 or self.iters < 1:
            raise ConfigError("nfe and iters must be positive")


def dflow_init(y, g: Generator, c: DFlowConfig, rng=None) -> np.ndarray:
    """``sqrt(a) y0 + sqrt(1 - a) z`` with ``y0`` the inversion seed of ``y``."""
    rng = rng if rng is not None else np.random.default_rng(c.seed)
    y0 = invert(g, y)
    z = rng.standard_normal(y0.shape)
    return math.sqrt(c.alpha_mix) * y0 + math.sqrt(1.0 - c.alpha_mix) * z


def chi2_nll(z) -> Node:
    """``-(d/2 - 1) log ||z||^2 + ||z||^2 / 2``: chi-square NLL of the squared norm.

    At ``z = 0`` with ``d > 2`` the value is ``-inf``; a finite penalty of
    ``1e12`` is returned instead.
    """
    z = ad.as_node(z)
    d = z.size
    u = ad.sqnorm(z)
    if d == 2:
        return ad.scale(u, 0.5)
    if float(u.value) == 0.0:
        log.warning("chi2_nll: zero vector, returning the finite penalty")
        return ad.constant(ZERO_PENALTY if d > 2 else -ZERO_PENALTY)
    return ad.scale(ad.log(u), -(d / 2.0 - 1.0)) + ad.scale(u, 0.5)


def chi2_nll_of_sqnorm(u, d: int):
    """Same function written in ``u = ||z||^2``; vectorized over ``u``."""
    u = np.asarray(u, dtype=np.float64)
    return -(d / 2.0 - 1.0) * np.log(u) + u / 2.0


def dflow_solve(p: WarmStartProblem, c: DFlowConfig) -> SolveResult:
    """Minimize ``data_fit(G(z, 0)) + lambda * chi2_nll(z)`` from the D-Flow initialization."""
    start = time.perf_counter()
    rng = np.random.default_rng(c.seed)
    g = Generator(p.generator.field, c.solver, c.nfe, p.generator.t_end)
    z = dflow_init(p.y_embed, g, c, rng)
    opt = Adam(c.lr, per_variable=c.per_variable)
    trace: List[float] = []
    best = (math.inf, None, None)
    since_best = 0
    for it in range(c.iters):
        zn = ad.variable(z)
        x = generate(g, zn, 0.0)
        loss = data_fit(p, x)
        if c.lambda_reg:
            loss = loss + ad.scale(chi2_nll(zn), c.lambda_reg)
        lv = float(loss.value)
        if not math.isfinite(lv):
            raise DivergenceError(f"non-finite loss at iterate {it}", step=it)
        trace.append(lv)
        if lv < best[0]:
            improved = best[0] - lv > c.tol * abs(lv)
            best = (lv, z.copy(), x.value.copy())
            since_best = 0 if improved else since_best + 1
        else:
            since_best += 1
        if since_best >= c.patience:
            break
        z = opt.step("z", z, ad.backward(loss, [zn])[zn])
    _, z_star, x_hat = best
    return SolveResult(
        x_hat=x_hat,
        z_star=z_star,
        t_star=0.0,
        w_star=None,
        loss_trace=trace,
        iterations_used=len(trace),
        wallclock_ms=1000.0 * (time.perf_counter() - start),
        method="dflow",
        metadata={"optimizer": "adam (substituted for line-search L-BFGS)"},
    )


def plain_solve(p: WarmStartProblem, cfg: SolveConfig, shell: bool = False) -> SolveResult:
    """Random ``N(0, I)`` start, ``t`` fixed at 0, no warm start.

    ``shell=True`` keeps the shell projection on, which is what the affine
    oracle comparison uses.
    """
    return solve(p, replace(cfg, warm_start=False, shell=shell))
