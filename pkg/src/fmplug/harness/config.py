"""Experiment configuration: TOML with ``[prior]``, ``[task]``, ``[solver]`` and ``[suite]``.

Every section has a fixed set of keys with defaults; unknown keys, and
unknown sections, raise :class:`ConfigError`.  The builders at the bottom turn
a loaded :class:`Config` into priors, operators and solver settings.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .. import forward_models as fm
from .. import priors
from ..baselines import DFlowConfig
from ..errors import ConfigError
from ..flow import load_checkpoint
from ..generator import Generator, steps_from_nfe
from ..solver import SolveConfig

PRIOR_KINDS = ("gaussian", "lowrank-gaussian", "gmm", "bump-gmm", "checkpoint")
ALL_METHODS = ("fmplug", "fmplug-w", "plain", "dflow")

# name -> (operator kind, default parameters)
TASKS = {
    "deblur": ("gaussian_blur", {"kernel_size": 5, "kernel_std": 1.5}),
    "inpaint": ("inpaint_mask", {"keep_fraction": 0.3}),
    "sr4": ("downsample", {"factor": 4}),
    "mri4": ("subsampled_dft", {"keep_fraction": 0.25, "low_fraction": 0.5}),
    "cs": ("random_gaussian", {}),
    "regression": ("identity", {}),
}
TASK_PARAMS = ("kernel_size", "kernel_std", "keep_fraction", "low_fraction", "factor",
               "measurements")

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "prior": {
        "kind": "gmm", "dim": 16, "side": 16, "components": 4, "rank": 4, "seed": 0,
        "pixel_std": 0.12, "floor": 1e-4, "width": 2.0, "jitter": 0.05, "path": "",
        "train": {"hidden": 64, "depth": 3, "steps": 5000, "batch": 256, "lr": 1e-3, "seed": 0,
                  "lr_schedule": "cosine"},
    },
    "task": {
        "name": "deblur", "noise_std": 0.03, "seed": 0,
        **{k: None for k in TASK_PARAMS},
    },
    "solver": {
        "method": "fmplug", "preset": "desk", "lr_z": None, "lr_t": None, "lr_v": None,
        "iters": 500, "eps": 0.025, "t_init": 0.5, "calibration": "auto",
        "calibration_samples": 4000, "calibration_grid": 32, "calibration_fit": "linear",
        "ode": "heun2", "nfe": 3, "nfe_counting": "steps", "patience": 50, "tol": 1e-8,
        "few_shot": [],
        "dflow": {"alpha_mix": 0.25, "lambda_reg": 0.01, "nfe": 6, "iters": None, "lr": 0.05},
    },
    "suite": {
        "seed": 0, "instances": 20, "methods": ["fmplug", "fmplug-w", "plain", "dflow"],
        "tasks": [], "record_wallclock": False,
    },
}

# calibration="auto" switches it on at or above this noise level
AUTO_CALIBRATION_NOISE = 0.06


@dataclass(frozen=True)
class Config:
    prior: Dict[str, Any]
    task: Dict[str, Any]
    solver: Dict[str, Any]
    suite: Dict[str, Any]
    source: str = "<defaults>"

    def with_overrides(self, section: str, **values) -> "Config":
        merged = _merge(DEFAULTS[section], {**getattr(self, section), **values}, section)
        return replace(self, **{section: merged})


def _merge(defaults: Dict[str, Any], given: Dict[str, Any], where: str) -> Dict[str, Any]:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"[{where}]: unknown key {key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"[{where}.{key}] must be a table")
            out[key] = _merge(defaults[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def parse_config(text: str, source: str = "<string>") -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    extra = set(raw) - set(DEFAULTS)
    if extra:
        raise ConfigError(f"{source}: unknown sections {sorted(extra)}")
    sections = {name: _merge(DEFAULTS[name], raw.get(name, {}), name) for name in DEFAULTS}
    cfg = Config(source=source, **sections)
    validate(cfg)
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def default_config() -> Config:
    return parse_config("", "<defaults>")


def validate(cfg: Config) -> None:
    if cfg.prior["kind"] not in PRIOR_KINDS:
        raise ConfigError(f"[prior] kind must be one of {PRIOR_KINDS}, got {cfg.prior['kind']!r}")
    if cfg.prior["kind"] == "checkpoint" and not cfg.prior["path"]:
        raise ConfigError("[prior] kind='checkpoint' needs a path")
    for name in [cfg.task["name"], *cfg.suite["tasks"]]:
        if name not in TASKS:
            raise ConfigError(f"unknown task {name!r}; expected one of {sorted(TASKS)}")
    if cfg.task["noise_std"] < 0:
        raise ConfigError("[task] noise_std must be non-negative")
    methods = cfg.suite["methods"]
    if not methods or any(m not in ALL_METHODS for m in methods):
        raise ConfigError(f"[suite] methods must be a non-empty subset of {ALL_METHODS}")
    if cfg.solver["method"] not in ALL_METHODS:
        raise ConfigError(f"[solver] method must be one of {ALL_METHODS}")
    if cfg.solver["preset"] not in ("desk", "full"):
        raise ConfigError("[solver] preset must be 'desk' or 'full'")
    if cfg.solver["calibration"] not in ("auto", True, False):
        raise ConfigError("[solver] calibration must be true, false or 'auto'")
    if cfg.solver["calibration_fit"] not in ("linear", "mlp"):
        raise ConfigError("[solver] calibration_fit must be 'linear' or 'mlp'")
    if cfg.suite["instances"] < 1:
        raise ConfigError("[suite] instances must be positive")


# ---------------------------------------------------------------------------
# builders


def build_prior(section: Dict[str, Any]) -> priors.PriorBundle:
    kind = section["kind"]
    if kind == "gaussian":
        return priors.bundle("gaussian", priors.standard_gaussian(section["dim"]))
    if kind == "lowrank-gaussian":
        dist = priors.lowrank_gaussian(section["dim"], section["rank"], section["floor"],
                                       section["seed"])
        return priors.bundle("lowrank-gaussian", dist)
    if kind == "gmm":
        side = section["side"]
        dist = priors.smooth_image_gmm(side, section["components"], section["seed"],
                                       section["pixel_std"], section["floor"])
        return priors.bundle("gmm", dist, (side, side))
    if kind == "bump-gmm":
        dist = priors.bump_gmm(section["dim"], section["components"], section["width"],
                               jitter=section["jitter"], seed=section["seed"])
        return priors.bundle("bump-gmm", dist)
    field, _ = load_checkpoint(section["path"])
    side = math.isqrt(field.dim)
    return priors.PriorBundle(Path(section["path"]).stem, field, None,
                              (side, side) if side * side == field.dim else None)


def prior_section_from_arg(value: str, base: Dict[str, Any]) -> Dict[str, Any]:
    """``--prior`` value: a prior kind name, or a path to a checkpoint."""
    if value in PRIOR_KINDS and value != "checkpoint":
        return {**base, "kind": value}
    return {**base, "kind": "checkpoint", "path": value}


def build_generator(bundle: priors.PriorBundle, solver: Dict[str, Any],
                    nfe: Optional[int] = None) -> Generator:
    nfe = solver["nfe"] if nfe is None else nfe
    return Generator(bundle.field, solver["ode"], steps_from_nfe(nfe, solver["ode"],
                                                                 solver["nfe_counting"]))


def signal_shape(bundle: priors.PriorBundle):
    return bundle.image_shape if bundle.image_shape is not None else (bundle.dim,)


def build_task(task: Dict[str, Any], bundle: priors.PriorBundle, name: Optional[str] = None,
               seed: Optional[int] = None) -> fm.ForwardModel:
    name = name or task["name"]
    kind, params = TASKS[name]
    params = dict(params)
    params.update({k: task[k] for k in TASK_PARAMS if task[k] is not None})
    if kind == "random_gaussian":
        params.setdefault("measurements", max(1, bundle.dim // 2))
    allowed = {
        "gaussian_blur": {"kernel_size", "kernel_std"},
        "inpaint_mask": {"keep_fraction"},
        "downsample": {"factor"},
        "subsampled_dft": {"keep_fraction", "low_fraction"},
        "random_gaussian": {"measurements"},
        "identity": set(),
    }[kind]
    params = {k: v for k, v in params.items() if k in allowed}
    shape = signal_shape(bundle)
    if kind in ("gaussian_blur", "downsample") and len(shape) != 2:
        raise ConfigError(f"task {name!r} needs an image prior")
    return fm.make(kind, shape, task["noise_std"], task["seed"] if seed is None else seed,
                   **params)


def calibration_enabled(solver: Dict[str, Any], noise_std: float) -> bool:
    flag = solver["calibration"]
    if flag == "auto":
        return noise_std >= AUTO_CALIBRATION_NOISE
    return bool(flag)


def solve_config(solver: Dict[str, Any], seed: int, calibration_on: bool = False) -> SolveConfig:
    base = SolveConfig.desk() if solver["preset"] == "desk" else SolveConfig()
    rates = {k: solver[k] for k in ("lr_z", "lr_t", "lr_v") if solver[k] is not None}
    cfg = replace(base, iters=solver["iters"], t_init=solver["t_init"], seed=seed,
                  calibration_on=calibration_on, patience=solver["patience"],
                  tol=solver["tol"], **rates)
    return cfg.for_method(solver["method"]) if solver["method"] != "dflow" else cfg


def dflow_config(solver: Dict[str, Any], seed: int) -> DFlowConfig:
    d = solver["dflow"]
    return DFlowConfig(alpha_mix=d["alpha_mix"], lambda_reg=d["lambda_reg"], nfe=d["nfe"],
                       iters=d["iters"] if d["iters"] is not None else solver["iters"],
                       seed=seed, lr=d["lr"], solver=solver["ode"],
                       patience=solver["patience"], tol=solver["tol"])


def load_few_shot(paths: List[str], dim: int) -> Optional[np.ndarray]:
    if not paths:
        return None
    rows = []
    for p in paths:
        try:
            arr = np.loadtxt(p, delimiter=",", ndmin=1).ravel()
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read few-shot instance {p}: {exc}") from exc
        if arr.size != dim:
            raise ConfigError(f"few-shot instance {p} has {arr.size} values, expected {dim}")
        rows.append(arr)
    return np.stack(rows)
