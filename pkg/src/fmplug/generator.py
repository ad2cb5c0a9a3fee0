"""ODE integration of a velocity field: the generation map ``G(z, t_start)``.

Integration runs on a uniform grid of ``nfe_steps`` steps from ``t_start`` to
``t_end``.  The step size is itself a graph node, so the output can be
differentiated with respect to ``t_start`` as well as the state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, ContractError, DivergenceError

SOLVERS = ("euler", "heun2")
EVALS_PER_STEP = {"euler": 1, "heun2": 2}


def steps_from_nfe(nfe: int, solver: str, counting: str = "steps") -> int:
    """Number of solver steps implied by an NFE budget.

    ``counting="steps"`` treats NFE as the step count; ``"evaluations"``
    divides by the field evaluations per step (rounding down, at least one).
    """
    if counting == "steps":
        return int(nfe)
    if counting == "evaluations":
        return max(1, int(nfe) // EVALS_PER_STEP[solver])
    raise ConfigError(f"unknown NFE counting mode {counting!r}")


@dataclass(frozen=True)
class Generator:
    field: Callable
    solver: str = "heun2"
    nfe_steps: int = 3
    t_end: float = 1.0 - 1e-6

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if self.nfe_steps < 1:
            raise ConfigError("nfe_steps must be at least 1")
        if not self.t_end <= 1.0:
            raise ConfigError("t_end must not exceed 1")

    @property
    def dim(self) -> int:
        return self.field.dim

    def with_steps(self, nfe_steps: int, solver: str = None) -> "Generator":
        return Generator(self.field, solver or self.solver, nfe_steps, self.t_end)


def _step(field, solver, z, t, h):
    k1 = field(z, t)
    if solver == "euler":
        return z + h * k1
    k2 = field(z + h * k1, t + h)
    return z + (0.5 * h) * (k1 + k2)


def _integrate(g: Generator, z: Node, t0: Node, t1) -> Node:
    h = (t1 - t0) / g.nfe_steps
    for i in range(g.nfe_steps):
        t = t0 + i * h if i else t0
        z = _step(g.field, g.solver, z, t, h)
        if not np.all(np.isfinite(z.value)):
            raise DivergenceError(f"non-finite state after integration step {i}", step=i)
    return z


def generate(g: Generator, z, t_start=0.0) -> Node:
    """Integrate ``dz = v(z, t) dt`` from ``t_start`` up to ``g.t_end``."""
    z, t_start = ad.as_node(z), ad.as_node(t_start)
    ts = float(t_start.value)
    if ts > g.t_end:
        raise ContractError(f"t_start={ts} exceeds t_end={g.t_end}")
    if ts < 0.0:
        raise ContractError(f"t_start={ts} is negative")
    return _integrate(g, z, t_start, g.t_end)


def invert(g: Generator, x) -> np.ndarray:
    """Integrate backwards from ``g.t_end`` to 0 (the inversion seed)."""
    x = np.asarray(ad.value_of(x), dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractError("invert: non-finite input")
    return _integrate(g, ad.constant(x), ad.constant(g.t_end), 0.0).value


def sample(g: Generator, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` unconditional samples, generated from ``N(0, I)`` at ``t = 0``."""
    z0 = rng.standard_normal((n, g.dim))
    return generate(g, z0, 0.0).value
