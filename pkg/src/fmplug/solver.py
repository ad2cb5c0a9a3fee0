"""Warm-started plug-in solver with a Gaussian shell constraint.

The optimization variables are the source point ``z``, the start time ``t``
and, in the few-shot setting, logits ``v`` whose softmax mixes the supplied
instances.  Each iterate evaluates

    loss = || y - A G(alpha(t) anchor + beta(t) z, t) ||^2 / m

with ``anchor = y_embed`` (or ``softmax(v) @ instances``), takes one Adam step
per variable, projects ``z`` back onto the shell and clamps ``t``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from . import autodiff as ad
from . import forward_models as fm
from .autodiff import Node
from .errors import CalibrationError, ConfigError, ContractError, DimensionError, DivergenceError
from .flow import FlowSchedule, linear_schedule
from .generator import Generator, generate
from .optim import Adam

log = logging.getLogger(__name__)

METHODS = ("fmplug", "fmplug-w", "plain")


# ---------------------------------------------------------------------------
# shell constraint


@dataclass(frozen=True)
class ShellConstraint:
    dim: int
    eps: float = 0.025

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ConfigError(f"shell eps must lie in (0, 1), got {self.eps}")

    @property
    def bounds(self) -> Tuple[float, float]:
        r = math.sqrt(self.dim)
        return (1.0 - self.eps) * r, (1.0 + self.eps) * r

    def contains(self, z, slack: float = 1e-12) -> bool:
        lo, hi = self.bounds
        n = float(np.linalg.norm(z))
        return lo * (1 - slack) <= n <= hi * (1 + slack)


def shell_project(z, c: ShellConstraint, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Euclidean projection onto ``{(1-eps) sqrt(d) <= ||z|| <= (1+eps) sqrt(d)}``.

    The zero vector has no nearest point; it is mapped to a random direction
    (from ``rng``) on the inner sphere.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.size != c.dim:
        raise DimensionError(f"shell_project: z has {z.size} entries, shell dimension {c.dim}")
    lo, hi = c.bounds
    n = float(np.linalg.norm(z))
    if n == 0.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        u = rng.standard_normal(z.shape)
        log.warning("shell_project: zero vector, using a random direction")
        return lo * u / np.linalg.norm(u)
    if n >= hi:
        return hi * z / n
    if n <= lo:
        return lo * z / n
    return z.copy()


# ---------------------------------------------------------------------------
# mean-variance calibration


@dataclass(frozen=True)
class CalibrationModel:
    """Scalar mean and variance of unconditional ``z_t``, piecewise linear in ``t``."""

    ts: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=np.float64)
        if ts.ndim != 1 or ts.size < 2 or np.any(np.diff(ts) <= 0):
            raise CalibrationError("calibration grid must be strictly increasing with >= 2 points")
        if ts[0] > 0.0 or ts[-1] < 1.0:
            raise CalibrationError("calibration grid must cover [0, 1]")
        var = np.asarray(self.variances, dtype=np.float64)
        if np.any(var <= 0):
            raise CalibrationError("calibration variances must be positive")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "variances", var)

    def __call__(self, t) -> Tuple[Node, Node]:
        """Interpolated (mean, variance) at ``t`` as nodes differentiable in ``t``."""
        t = ad.as_node(t)
        tv = float(t.value)
        i = int(np.clip(np.searchsorted(self.ts, tv, side="right") - 1, 0, self.ts.size - 2))
        t0, t1 = self.ts[i], self.ts[i + 1]
        frac = (t - t0) / (t1 - t0)
        mu = self.means[i] + frac * (self.means[i + 1] - self.means[i])
        var = self.variances[i] + frac * (self.variances[i + 1] - self.variances[i])
        return mu, var

    def at(self, t: float) -> Tuple[float, float]:
        return float(np.interp(t, self.ts, self.means)), float(np.interp(t, self.ts, self.variances))


@dataclass(frozen=True)
class MLPCalibrationModel(CalibrationModel):
    """Smooth alternative: a one-hidden-layer tanh network ``t -> (mean, log variance)``.

    The grid table it was fitted to is kept in ``ts``/``means``/``variances``.
    """

    w1: np.ndarray = None
    b1: np.ndarray = None
    w2: np.ndarray = None  # (2, hidden)
    b2: np.ndarray = None

    def _raw(self, t: Node) -> Node:
        h = ad.tanh((2.0 * t - 1.0) * self.w1 + self.b1)
        return ad.matvec(self.w2, h) + self.b2

    def __call__(self, t) -> Tuple[Node, Node]:
        out = self._raw(ad.as_node(t))
        return out[0], ad.exp(out[1])

    def at(self, t: float) -> Tuple[float, float]:
        out = self._raw(ad.constant(float(t))).value
        return float(out[0]), float(np.exp(out[1]))


def fit_mlp_calibration(table: CalibrationModel, hidden: int = 8,
                        seed: int = 0) -> MLPCalibrationModel:
    """Least-squares fit of the network to a grid table (log variance, so it stays positive)."""
    s = 2.0 * table.ts - 1.0
    targets = np.concatenate([table.means, np.log(table.variances)])

    def unpack(p):
        w1, b1 = p[:hidden], p[hidden:2 * hidden]
        w2 = p[2 * hidden:4 * hidden].reshape(2, hidden)
        return w1, b1, w2, p[4 * hidden:]

    def resid(p):
        w1, b1, w2, b2 = unpack(p)
        out = np.tanh(np.outer(s, w1) + b1) @ w2.T + b2
        return np.concatenate([out[:, 0], out[:, 1]]) - targets

    p0 = np.random.default_rng(seed).normal(0.0, 1.0, 4 * hidden + 2)
    fit = least_squares(resid, p0, method="lm", xtol=1e-12, ftol=1e-12, max_nfev=20000)
    w1, b1, w2, b2 = unpack(fit.x)
    return MLPCalibrationModel(table.ts, table.means, table.variances, w1, b1, w2, b2)


def fit_calibration(g: Generator, n_samples: int = 4000, grid_size: int = 32,
                    seed: int = 0) -> CalibrationModel:
    """Record scalar moments of ``z_t`` along forward integration from ``N(0, I)``.

    The trajectory takes one solver step between consecutive grid points; the
    last grid point (``t = 1``) is evaluated at ``g.t_end``.
    """
    if n_samples < 2:
        raise CalibrationError("need at least two samples")
    if grid_size < 2:
        raise CalibrationError("need at least two grid points")
    ts = np.linspace(0.0, 1.0, grid_size)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, g.dim))
    means, variances = [], []
    for i, t in enumerate(ts):
        if i:
            t_prev = min(ts[i - 1], g.t_end)
            step = Generator(g.field, g.solver, 1, min(t, g.t_end))
            z = generate(step, z, t_prev).value
        var = float(z.var())
        if var < 1e-12:
            raise CalibrationError(f"degenerate variance {var:g} at t={t:g}")
        means.append(float(z.mean()))
        variances.append(var)
    return CalibrationModel(ts, np.array(means), np.array(variances))


def calibrate_state(z_t, t, cal: CalibrationModel) -> Node:
    """Match the coordinate mean and population variance of ``z_t`` to the model at ``t``."""
    z_t = ad.as_node(z_t)
    if z_t.size < 2:
        raise ContractError("calibration needs at least two coordinates")
    mu = ad.mean(z_t)
    centered = z_t - mu
    var = ad.mean(centered * centered)
    if float(var.value) < 1e-12:
        log.warning("calibrate_state: state variance below 1e-12, skipping calibration")
        return z_t
    target_mu, target_var = cal(t)
    return ad.sqrt(target_var / var) * centered + target_mu


# ---------------------------------------------------------------------------
# problems and configuration


@dataclass(frozen=True)
class WarmStartProblem:
    y: np.ndarray
    y_embed: np.ndarray
    model: fm.ForwardModel
    generator: Generator
    schedule: FlowSchedule
    shell: ShellConstraint
    calibration: Optional[CalibrationModel] = None
    few_shot: Optional[np.ndarray] = None  # (K, d)

    def __post_init__(self):
        d = self.generator.dim
        if self.y_embed.shape != (d,):
            raise DimensionError(f"y_embed must have shape ({d},), got {self.y_embed.shape}")
        if self.model.in_dim != d:
            raise DimensionError("forward model and generator disagree on the signal size")
        if self.y.shape != (self.model.out_dim,):
            raise DimensionError("measurement does not match the forward model")
        if self.few_shot is not None and (self.few_shot.ndim != 2 or self.few_shot.shape[1] != d):
            raise DimensionError("few-shot instances must be a (K, d) array")

    @property
    def dim(self) -> int:
        return self.generator.dim


def make_problem(y, model: fm.ForwardModel, generator: Generator, *, eps: float = 0.025,
                 schedule: Optional[FlowSchedule] = None,
                 calibration: Optional[CalibrationModel] = None, few_shot=None,
                 reference_norm: Optional[float] = None) -> WarmStartProblem:
    y = np.asarray(y, dtype=np.float64).ravel()
    shots = None if few_shot is None else np.atleast_2d(np.asarray(few_shot, dtype=np.float64))
    return WarmStartProblem(
        y=y,
        y_embed=fm.embed_measurement(model, y, reference_norm),
        model=model,
        generator=generator,
        schedule=schedule or linear_schedule(),
        shell=ShellConstraint(generator.dim, eps),
        calibration=calibration,
        few_shot=shots,
    )


@dataclass(frozen=True)
class SolveConfig:
    lr_z: float = 0.5
    lr_t: float = 0.005
    lr_v: float = 0.05
    iters: int = 500
    t_init: float = 0.5
    t_bounds: Tuple[float, float] = (1e-3, 1.0 - 1e-3)
    seed: int = 0
    calibration_on: bool = False
    warm_start: bool = True
    shell: bool = True
    patience: int = 50
    tol: float = 1e-8
    per_variable: bool = True

    def __post_init__(self):
        if min(self.lr_z, self.lr_t, self.lr_v) <= 0:
            raise ConfigError("learning rates must be positive")
        lo, hi = self.t_bounds
        if not 0.0 <= lo < hi <= 1.0:
            raise ConfigError(f"invalid t_bounds {self.t_bounds}")
        if self.warm_start and not lo <= self.t_init <= hi:
            raise ConfigError(f"t_init={self.t_init} outside t_bounds {self.t_bounds}")
        if self.iters < 1:
            raise ConfigError("iters must be positive")

    @classmethod
    def desk(cls, **overrides) -> "SolveConfig":
        """Rates suited to unit-scale toy priors instead of a latent foundation model."""
        return cls(**{"lr_z": 0.05, "lr_t": 0.002, **overrides})

    def for_method(self, method: str) -> "SolveConfig":
        if method == "fmplug":
            return replace(self, warm_start=True, shell=True)
        if method == "fmplug-w":
            return replace(self, warm_start=True, shell=False)
        if method == "plain":
            return replace(self, warm_start=False, shell=False)
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")

    @property
    def method(self) -> str:
        if not self.warm_start:
            return "plain" if not self.shell else "plain+shell"
        return "fmplug" if self.shell else "fmplug-w"


@dataclass
class SolveResult:
    x_hat: np.ndarray
    z_star: np.ndarray
    t_star: float
    w_star: Optional[np.ndarray]
    loss_trace: List[float]
    iterations_used: int
    wallclock_ms: float
    method: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def best_loss(self) -> float:
        return float(min(self.loss_trace))

    @property
    def best_trace(self) -> np.ndarray:
        return np.minimum.accumulate(self.loss_trace)


# ---------------------------------------------------------------------------
# objective


def few_shot_weights(v) -> Node:
    """Simplex weights ``softmax(v)``."""
    return ad.softmax(ad.as_node(v))


def warm_state(p: WarmStartProblem, z, t, v=None, calibrate: Optional[bool] = None) -> Node:
    """``alpha(t) anchor + beta(t) z``, optionally mean-variance calibrated.

    ``anchor`` is ``y_embed`` or, with few-shot logits ``v``, the
    ``softmax(v)``-weighted combination of the instances.
    """
    z, t = ad.as_node(z), ad.as_node(t)
    if z.shape != (p.dim,):
        raise DimensionError(f"warm_state: z must have shape ({p.dim},), got {z.shape}")
    if v is not None:
        if p.few_shot is None:
            raise ConfigError("few-shot weights supplied but the problem has no instances")
        anchor = ad.matmul(few_shot_weights(v), p.few_shot)
    else:
        anchor = p.y_embed
    state = p.schedule.alpha(t) * anchor + p.schedule.beta(t) * z
    if calibrate is None:
        calibrate = p.calibration is not None
    if calibrate:
        if p.calibration is None:
            raise ConfigError("calibration requested but the problem has no calibration model")
        state = calibrate_state(state, t, p.calibration)
    return state


def data_fit(p: WarmStartProblem, x) -> Node:
    """Mean squared residual ``||y - A x||^2 / m``; shared by every solver."""
    r = p.y - fm.apply(p.model, x)
    return ad.scale(ad.sqnorm(r), 1.0 / p.y.size)


def objective(p: WarmStartProblem, z, t, v=None, warm: bool = True,
              calibrate: bool = False, generator: Optional[Generator] = None) -> Tuple[Node, Node]:
    """Loss and reconstruction for one iterate."""
    g = generator or p.generator
    state = warm_state(p, z, t, v, calibrate=calibrate) if warm else ad.as_node(z)
    x = generate(g, state, t)
    return data_fit(p, x), x


# ---------------------------------------------------------------------------
# solver


def solve(p: WarmStartProblem, cfg: SolveConfig) -> SolveResult:
    """Projected Adam on ``(z, t[, v])``; returns the best iterate seen."""
    if cfg.calibration_on and p.calibration is None:
        raise ConfigError("calibration_on requires a calibration model on the problem")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal(p.dim)
    if cfg.shell:
        z = shell_project(z, p.shell, rng)
    t = np.float64(cfg.t_init if cfg.warm_start else 0.0)
    few = cfg.warm_start and p.few_shot is not None
    v = np.zeros(p.few_shot.shape[0]) if few else None
    opt = Adam({"z": cfg.lr_z, "t": cfg.lr_t, "v": cfg.lr_v}, per_variable=cfg.per_variable)
    lo, hi = cfg.t_bounds

    trace: List[float] = []
    best = (math.inf, None, None, None, None)
    since_best = 0
    for it in range(cfg.iters):
        zn = ad.variable(z)
        tn = ad.variable(t) if cfg.warm_start else ad.constant(t)
        vn = ad.variable(v) if few else None
        loss, x = objective(p, zn, tn, vn, warm=cfg.warm_start, calibrate=cfg.calibration_on)
        lv = float(loss.value)
        if not math.isfinite(lv):
            raise DivergenceError(f"non-finite loss at iterate {it}", step=it)
        trace.append(lv)
        if lv < best[0]:
            improved = best[0] - lv > cfg.tol * abs(lv)
            best = (lv, z.copy(), float(t), None if v is None else v.copy(), x.value.copy())
            since_best = 0 if improved else since_best + 1
        else:
            since_best += 1
        if since_best >= cfg.patience:
            break
        wrt = [zn, tn] + ([vn] if few else [])
        grads = ad.backward(loss, wrt)
        z = opt.step("z", z, grads[zn])
        if cfg.shell:
            z = shell_project(z, p.shell, rng)
        if cfg.warm_start:
            t = np.float64(np.clip(opt.step("t", t, grads[tn]), lo, hi))
        if few:
            v = opt.step("v", v, grads[vn])

    _, z_star, t_star, v_star, x_hat = best
    w_star = None if v_star is None else few_shot_weights(v_star).value.copy()
    return SolveResult(
        x_hat=x_hat,
        z_star=z_star,
        t_star=t_star,
        w_star=w_star,
        loss_trace=trace,
        iterations_used=len(trace),
        wallclock_ms=1000.0 * (time.perf_counter() - start),
        method=cfg.method,
    )
