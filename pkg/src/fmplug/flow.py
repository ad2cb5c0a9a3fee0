"""Probability paths and velocity fields.

Three families of field are provided, all callable as ``field(z, t)`` on
autodiff nodes so that the generator can be differentiated end to end:

* :class:`GaussianVelocityField`: exact marginal field of the linear path
  from ``N(0, I)`` to ``N(mu, Sigma)``.
* :class:`GMMVelocityField`: exact marginal field towards a Gaussian mixture.
* :class:`MLPVelocityField`: a small trainable network (see :func:`train_fm`).

Batched states of shape ``(n, d)`` are accepted everywhere a single state
``(d,)`` is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, ContractError, DimensionError, DivergenceError, SingularityError
from .optim import Adam

TRAIN_T_MAX = 1.0 - 1e-3
EVAL_T_MAX = 1.0 - 1e-6


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class FlowSchedule:
    """``z_t = alpha(t) x + beta(t) z0``, with time derivatives.

    Each callable accepts a float or a :class:`Node` and returns the same kind.
    """

    name: str
    alpha: Callable
    beta: Callable
    dalpha: Callable
    dbeta: Callable


def linear_schedule() -> FlowSchedule:
    return FlowSchedule(
        name="linear",
        alpha=lambda t: t,
        beta=lambda t: 1.0 - t,
        dalpha=lambda t: 1.0,
        dbeta=lambda t: -1.0,
    )


SCHEDULES = {"linear": linear_schedule}


def conditional_velocity(z, t: float, x, s: FlowSchedule) -> np.ndarray:
    """Velocity of the conditional path through ``z`` at time ``t`` towards ``x``.

    For the linear schedule this is ``(x - z) / (1 - t)``.
    """
    t = float(t)
    if t >= 1.0 - 1e-9:
        raise SingularityError(f"conditional velocity is singular at t={t}")
    if t < 0.0:
        raise ContractError(f"t must be in [0, 1), got {t}")
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise DimensionError(f"conditional_velocity: z {z.shape} vs x {x.shape}")
    z0 = (z - s.alpha(t) * x) / s.beta(t)
    return s.dalpha(t) * x + s.dbeta(t) * z0


# ---------------------------------------------------------------------------
# analytic priors


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    cov: np.ndarray
    # optional precomputed eigendecomposition (eigvals, eigvecs) of cov
    eig: Optional[Tuple[np.ndarray, np.ndarray]] = dc_field(default=None, compare=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        cov = np.asarray(self.cov, dtype=np.float64)
        d = mean.size
        if cov.shape != (d, d):
            raise DimensionError(f"covariance must be {(d, d)}, got {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ContractError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def spectrum(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.eig is not None:
            lam, u = self.eig
        else:
            lam, u = np.linalg.eigh(self.cov)
        lam = np.asarray(lam, dtype=np.float64)
        if lam.min() < -1e-10 * max(1.0, lam.max()):
            raise ContractError("covariance has negative eigenvalues")
        return np.clip(lam, 0.0, None), np.asarray(u, dtype=np.float64)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lam, u = self.spectrum
        g = rng.standard_normal((n, self.dim))
        return self.mean + (g * np.sqrt(lam)) @ u.T

    def marginal(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of ``z_t`` under the linear path."""
        return t * self.mean, t * t * self.cov + (1 - t) ** 2 * np.eye(self.dim)


@dataclass(frozen=True)
class GMMPrior:
    weights: np.ndarray
    components: Tuple[GaussianPrior, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        comps = tuple(self.components)
        if len(comps) != w.size or w.size == 0:
            raise DimensionError("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ContractError("mixture weights must lie on the simplex")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise DimensionError("all components must share a dimension")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = comp.sample(idx.size, rng)
        return out

    def second_moment(self) -> float:
        """``E ||x||^2``."""
        return float(sum(w * (c.mean @ c.mean + np.trace(c.cov))
                         for w, c in zip(self.weights, self.components)))


def _check_time(t: Node):
    tv = float(t.value)
    if not -1e-12 <= tv <= 1.0 + 1e-12:
        raise ContractError(f"t must lie in [0, 1], got {tv}")


def _component_terms(z: Node, t: Node, p: GaussianPrior):
    """Velocity and unnormalized log-density of one Gaussian component."""
    lam, u = p.spectrum
    one_minus = 1.0 - t
    s = t * t * lam + one_minus * one_minus  # eigenvalues of C_t
    if np.min(s.value) <= 1e-300:
        raise SingularityError(f"C_t is singular at t={float(t.value)}")
    centered = z - t * p.mean
    proj = ad.matmul(centered, u)  # coordinates in the eigenbasis
    coef = (t * lam - one_minus) / s
    vel = p.mean + ad.matmul(coef * proj, u.T)
    logdens = -0.5 * (ad.sum(ad.log(s)) + ad.sum(proj * proj / s, axis=-1))
    return vel, logdens


def _mixture_velocity(z: Node, t: Node, weights, comps) -> Node:
    """Fused value and adjoint of the mixture field (one graph node).

    Mathematically identical to composing :func:`_component_terms` through
    a softmax, which the tests use as the reference; fusing avoids a few
    dozen small nodes per evaluation.
    """
    zv, tv = z.value, float(t.value)
    keep = [(w, c) for w, c in zip(weights, comps) if w > 0]
    terms = []
    for w, comp in keep:
        lam, u = comp.spectrum
        s = tv * tv * lam + (1.0 - tv) ** 2
        if np.min(s) <= 1e-300:
            raise SingularityError(f"C_t is singular at t={tv}")
        c = (tv * lam - (1.0 - tv)) / s
        mu_e = comp.mean @ u
        proj = zv @ u - tv * mu_e
        vel = comp.mean + (c * proj) @ u.T
        logd = math.log(w) - 0.5 * (np.sum(np.log(s)) + np.sum(proj * proj / s, axis=-1))
        terms.append((lam, u, s, c, mu_e, proj, vel, logd))
    logits = np.stack([tm[7] for tm in terms], axis=-1)
    r = np.exp(logits - logits.max(axis=-1, keepdims=True))
    r /= r.sum(axis=-1, keepdims=True)
    out = sum(r[..., k, None] * tm[6] for k, tm in enumerate(terms))

    def vjp(g):
        gr = np.stack([np.sum(g * tm[6], axis=-1) for tm in terms], axis=-1)
        lbar = r * (gr - np.sum(r * gr, axis=-1, keepdims=True))
        zbar = np.zeros_like(zv)
        tbar = 0.0
        for k, (lam, u, s, c, mu_e, proj, vel, _) in enumerate(terms):
            a = (r[..., k, None] * g) @ u
            lk = lbar[..., k, None]
            pbar = a * c - lk * proj / s
            zbar = zbar + pbar @ u.T
            if t.requires_grad:
                batch = tuple(range(proj.ndim - 1))
                cbar = np.sum(a * proj, axis=batch)
                sbar = np.sum(lk * (0.5 * proj * proj / (s * s) - 0.5 / s), axis=batch) - cbar * c / s
                tbar += (-np.sum(pbar @ mu_e) + np.sum(cbar * (lam + 1.0) / s)
                         + np.sum(sbar * (2.0 * tv * lam - 2.0 * (1.0 - tv))))
        return zbar, np.asarray(tbar).reshape(t.shape)

    return ad._make(out, (z, t), vjp)


def gaussian_marginal_velocity(z, t, p: GaussianPrior) -> Node:
    """``mu + (t Sigma - (1 - t) I) C_t^{-1} (z - t mu)``, ``C_t = t^2 Sigma + (1 - t)^2 I``."""
    z, t = ad.as_node(z), ad.as_node(t)
    _check_time(t)
    if z.shape[-1] != p.dim:
        raise DimensionError(f"state has dimension {z.shape[-1]}, prior {p.dim}")
    return _mixture_velocity(z, t, (1.0,), (p,))


def _gmm_terms(z: Node, t: Node, p: GMMPrior):
    vels, logits = [], []
    for w, comp in zip(p.weights, p.components):
        vel, logdens = _component_terms(z, t, comp)
        vels.append(vel)
        logits.append(logdens + (math.log(w) if w > 0 else -np.inf))
    return vels, ad.stack(logits, axis=-1)


def gmm_responsibilities(z, t, p: GMMPrior) -> np.ndarray:
    z, t = ad.as_node(z), ad.as_node(t)
    _, logits = _gmm_terms(z, t, p)
    return ad.softmax(logits, axis=-1).value


def composite_gmm_velocity(z, t, p: GMMPrior) -> Node:
    """The mixture field built from elementary nodes; reference for the fused version."""
    z, t = ad.as_node(z), ad.as_node(t)
    _check_time(t)
    vels, logits = _gmm_terms(z, t, p)
    resp = ad.softmax(logits, axis=-1)
    stacked = ad.stack(vels, axis=-2)  # (..., K, d)
    resp = ad.reshape(resp, resp.shape + (1,))
    return ad.sum(stacked * resp, axis=-2)


def gmm_marginal_velocity(z, t, p: GMMPrior) -> Node:
    """Responsibility-weighted sum of the per-component Gaussian fields."""
    z, t = ad.as_node(z), ad.as_node(t)
    _check_time(t)
    if not np.all(np.isfinite(z.value)):
        raise ContractError("gmm_marginal_velocity: non-finite state")
    if z.shape[-1] != p.dim:
        raise DimensionError(f"state has dimension {z.shape[-1]}, prior {p.dim}")
    return _mixture_velocity(z, t, p.weights, p.components)


class GaussianVelocityField:
    def __init__(self, prior: GaussianPrior):
        self.prior = prior
        self.dim = prior.dim

    def __call__(self, z, t) -> Node:
        return gaussian_marginal_velocity(z, t, self.prior)


class GMMVelocityField:
    def __init__(self, prior: GMMPrior):
        self.prior = prior
        self.dim = prior.dim

    def __call__(self, z, t) -> Node:
        return gmm_marginal_velocity(z, t, self.prior)


# ---------------------------------------------------------------------------
# trainable field


class MLPVelocityField:
    """``v_theta(z, t)``: an MLP on the state with time appended as a coordinate."""

    activation = "silu"

    def __init__(self, params: Dict[str, np.ndarray], dim: int):
        self.params = {k: ad._freeze(v) for k, v in params.items()}
        self.dim = dim
        self.n_layers = len(self.params) // 2
        if self.params["W0"].shape[0] != dim + 1:
            raise DimensionError("first layer must take d + 1 inputs")
        if self.params[f"W{self.n_layers - 1}"].shape[1] != dim:
            raise DimensionError("last layer must produce d outputs")

    @classmethod
    def init(cls, dim: int, hidden: int = 64, depth: int = 3, seed: int = 0) -> "MLPVelocityField":
        rng = np.random.default_rng(seed)
        sizes = [dim + 1] + [hidden] * depth + [dim]
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"W{i}"] = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
            params[f"b{i}"] = np.zeros(fan_out)
        return cls(params, dim)

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        return [self.params[f"W{i}"].shape for i in range(self.n_layers)]

    def __call__(self, z, t, params: Optional[Dict[str, Node]] = None) -> Node:
        z, t = ad.as_node(z), ad.as_node(t)
        if z.shape[-1] != self.dim:
            raise DimensionError(f"state has dimension {z.shape[-1]}, field {self.dim}")
        if z.ndim == 1:
            tcol = ad.reshape(t, (1,))
        elif t.ndim == 0:
            tcol = t * np.ones((z.shape[0], 1))
        else:
            tcol = ad.reshape(t, (z.shape[0], 1))
        h = ad.concat([z, tcol], axis=-1)
        p = params if params is not None else self.params
        for i in range(self.n_layers):
            h = ad.matmul(h, p[f"W{i}"]) + p[f"b{i}"]
            if i < self.n_layers - 1:
                h = ad.silu(h)
        return h


def train_fm(sampler: Callable[[np.random.Generator, int], np.ndarray],
             field: MLPVelocityField,
             schedule: FlowSchedule,
             steps: int = 5000,
             batch: int = 256,
             lr: float = 1e-3,
             seed: int = 0,
             schedule_lr: str = "cosine") -> Tuple[MLPVelocityField, List[float]]:
    """Regress ``field`` onto the conditional velocity of ``schedule``.

    ``sampler(rng, n)`` must return an ``(n, d)`` array of data points.  Time
    is drawn uniformly on ``[0, 1 - 1e-3]``.  Returns a new field and the
    per-step loss trace.  ``schedule_lr="cosine"`` anneals the step size from
    ``lr`` to zero over the run; ``"constant"`` keeps it fixed.
    """
    if schedule_lr not in ("cosine", "constant"):
        raise ConfigError(f"unknown learning-rate schedule {schedule_lr!r}")
    rng = np.random.default_rng(seed)
    params = dict(field.params)
    opt = Adam(lr)
    trace: List[float] = []
    for step in range(steps):
        if schedule_lr == "cosine":
            opt.lr = 0.5 * lr * (1.0 + math.cos(math.pi * step / steps))
        x = np.asarray(sampler(rng, batch), dtype=np.float64)
        z0 = rng.standard_normal(x.shape)
        t = rng.uniform(0.0, TRAIN_T_MAX, size=batch)
        tc = t[:, None]
        zt = schedule.alpha(tc) * x + schedule.beta(tc) * z0
        target = schedule.dalpha(tc) * x + schedule.dbeta(tc) * z0
        nodes = {k: ad.variable(v) for k, v in params.items()}
        pred = field(ad.constant(zt), ad.constant(t), params=nodes)
        loss = ad.scale(ad.sqnorm(pred - target), 1.0 / batch)
        lv = float(loss.value)
        if not math.isfinite(lv):
            raise DivergenceError(f"FM training diverged at step {step}", step=step)
        trace.append(lv)
        grads = ad.backward(loss, list(nodes.values()))
        for k, node in nodes.items():
            params[k] = opt.step(k, params[k], grads[node])
    return MLPVelocityField(params, field.dim), trace


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, field: MLPVelocityField, schedule: FlowSchedule) -> None:
    """Write parameters as text; values use 17 significant digits."""
    shapes = ",".join(f"{a}x{b}" for a, b in field.layer_shapes)
    lines = [f"# fmplug-checkpoint version={CHECKPOINT_VERSION} d={field.dim} "
             f"layers={shapes} activation={field.activation} schedule={schedule.name}"]
    for name in sorted(field.params, key=lambda k: (int(k[1:]), k[0])):
        arr = field.params[name]
        lines.append(f"{name} {' '.join(str(n) for n in arr.shape)}")
        lines.append(" ".join(format(v, ".17g") for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> Tuple[MLPVelocityField, FlowSchedule]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# fmplug-checkpoint"):
        raise ConfigError(f"{path}: not a checkpoint file")
    header = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    if int(header.get("version", -1)) != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {header.get('version')}")
    if header.get("activation") != MLPVelocityField.activation:
        raise ConfigError(f"{path}: unsupported activation {header.get('activation')}")
    sched_name = header.get("schedule")
    if sched_name not in SCHEDULES:
        raise ConfigError(f"{path}: unknown schedule {sched_name}")
    params = {}
    body = lines[1:]
    for head, values in zip(body[0::2], body[1::2]):
        name, *dims = head.split()
        shape = tuple(int(n) for n in dims)
        arr = np.array([float(v) for v in values.split()], dtype=np.float64)
        params[name] = arr.reshape(shape)
    field = MLPVelocityField(params, int(header["d"]))
    expected = header.get("layers")
    got = ",".join(f"{a}x{b}" for a, b in field.layer_shapes)
    if expected != got:
        raise ConfigError(f"{path}: layer shapes {got} disagree with header {expected}")
    return field, SCHEDULES[sched_name]()
