"""Closed-form and exhaustive checks that do not share code with the solvers."""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from scipy import stats

from ..errors import ContractError, OracleError, SingularityError
from ..flow import GaussianPrior
from ..forward_models import ForwardModel
from ..generator import Generator, generate
from ..solver import ShellConstraint


def gaussian_map_oracle(p: GaussianPrior, m: ForwardModel, y) -> np.ndarray:
    """MAP estimate ``mu + Sigma A^T (A Sigma A^T + sigma^2 I)^{-1} (y - A mu)``."""
    a = m.matrix
    y = np.asarray(y, dtype=np.float64)
    gram = a @ p.cov @ a.T + m.noise_std ** 2 * np.eye(a.shape[0])
    try:
        sol = np.linalg.solve(gram, y - a @ p.mean)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("A Sigma A^T + sigma^2 I is singular") from exc
    return p.mean + p.cov @ a.T @ sol


def map_objective_gradient(x, p: GaussianPrior, m: ForwardModel, y) -> np.ndarray:
    """Gradient of ``||y - A x||^2 / (2 sigma^2) + (x - mu)^T Sigma^{-1} (x - mu) / 2``."""
    a = m.matrix
    prec = np.linalg.inv(p.cov)
    return a.T @ (a @ x - y) / m.noise_std ** 2 + prec @ (x - p.mean)


def affine_coefficients(g: Generator, t_start: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """``M, b`` with ``G(z) = M z + b``, read off by probing basis vectors."""
    d = g.dim
    b = generate(g, np.zeros(d), t_start).value
    cols = generate(g, np.eye(d), t_start).value  # row i is G(e_i)
    return (cols - b).T, b


def _ridge(vt, s, ur, lam):
    return vt.T @ (s * ur / (s * s + lam))


def _bisect(fun, lo, hi, iters=200):
    flo = fun(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(lo)):
            break
    return 0.5 * (lo + hi)


def shell_ls_oracle(M, b, A: ForwardModel, y, c: ShellConstraint) -> np.ndarray:
    """Exact ``argmin ||y - A (M z + b)||^2`` over the shell.

    Uses the ridge family ``z(lam) = (B^T B + lam I)^{-1} B^T r`` with
    ``B = A M`` and ``r = y - A b``: ``lam = 0`` when the minimum-norm
    least-squares solution is already feasible, ``lam > 0`` to pull it onto the
    outer sphere, and ``lam`` in ``(-s_min^2, 0)`` to push it onto the inner
    sphere when ``B`` has full column rank.  A rank-deficient ``B`` reaches
    the inner sphere along its null space without changing the objective.
    """
    B = A.matrix @ np.asarray(M, dtype=np.float64)
    r = np.asarray(y, dtype=np.float64) - A.matrix @ np.asarray(b, dtype=np.float64)
    d = B.shape[1]
    u, s, vt = np.linalg.svd(B, full_matrices=True)
    k = s.size
    rank = int(np.sum(s > 1e-13 * s.max())) if k else 0
    ur = u[:, :k].T @ r
    s_eff = np.where(np.arange(k) < rank, s, 0.0)
    inv = np.divide(1.0, s_eff, out=np.zeros_like(s_eff), where=s_eff > 0)
    z0 = vt[:k].T @ (inv * ur)
    lo, hi = c.bounds
    n0 = float(np.linalg.norm(z0))

    if lo <= n0 <= hi:
        return z0
    if n0 > hi:
        vt_k, s_k, ur_k = vt[:rank], s[:rank], ur[:rank]
        fun = lambda lam: np.linalg.norm(_ridge(vt_k, s_k, ur_k, lam)) - hi
        top = max(1e-12, float(s_k.max() ** 2))
        while fun(top) > 0:
            top *= 4.0
            if top > 1e300:
                raise OracleError("could not bracket the ridge parameter")
        return _ridge(vt_k, s_k, ur_k, _bisect(fun, 0.0, top))
    if rank < d:
        null = vt[rank]
        null = null - z0 * (z0 @ null) / max(z0 @ z0, 1e-300)
        null /= np.linalg.norm(null)
        return z0 + math.sqrt(lo * lo - n0 * n0) * null
    smin2 = float(s[-1] ** 2)
    fun = lambda lam: np.linalg.norm(_ridge(vt[:k], s, ur, lam)) - lo
    left = -smin2 * (1.0 - 1e-15)
    if fun(left) < 0:
        raise OracleError("inner-sphere case is not bracketed (hard case)")
    return _ridge(vt[:k], s, ur, _bisect(fun, left, 0.0))


def com_check(d: int, eps: float, n: int, seed: int = 0) -> float:
    """Fraction of ``n`` draws from ``N(0, I_d)`` whose norm lies in the shell."""
    if n < 1:
        raise ContractError("com_check needs n >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = (1.0 - eps) * math.sqrt(d), (1.0 + eps) * math.sqrt(d)
    hits = 0
    for start in range(0, n, 8192):
        rows = min(8192, n - start)
        norms = np.linalg.norm(rng.standard_normal((rows, d)), axis=1)
        hits += int(np.count_nonzero((norms >= lo) & (norms <= hi)))
    return hits / n


def shell_probability(d: int, eps: float) -> float:
    """``P[(1-eps) sqrt(d) <= ||z|| <= (1+eps) sqrt(d)]`` from the chi distribution."""
    lo, hi = max(0.0, 1.0 - eps) * math.sqrt(d), (1.0 + eps) * math.sqrt(d)
    return float(stats.chi2.cdf(hi * hi, d) - stats.chi2.cdf(lo * lo, d))
