"""Benchmark orchestration and CSV persistence.

Instance ``i`` of a suite with seed ``S`` uses the integer seed
``SeedSequence([S, i]).generate_state(1)[0]``.  That seed alone determines the
ground truth, the operator randomness (masks, kept frequencies), the noise and
the solver initialization, so a single row can be reproduced with
``fmplug solve --seed <seed>``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import forward_models as fm
from ..baselines import dflow_solve
from ..errors import CalibrationError, FMPlugError
from ..priors import PriorBundle
from ..solver import (CalibrationModel, data_fit, fit_calibration, fit_mlp_calibration,
                      make_problem, solve)
from . import metrics
from .config import (Config, build_generator, build_prior, build_task, calibration_enabled,
                     dflow_config, load_few_shot, signal_shape, solve_config)

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("seed", "task", "method", "prior", "mse", "psnr", "ssim", "loss", "t_star",
                  "iters", "wallclock_ms", "status")
SUMMARY_COLUMNS = ("task", "method", "n", "n_ok", "median_mse", "mean_mse", "median_psnr",
                   "mean_psnr", "median_ssim", "mean_ssim", "median_loss", "mean_loss")
CALIBRATION_COLUMNS = ("t", "mean", "variance")


def instance_seed(suite_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([suite_seed, index]).generate_state(1)[0])


@dataclass(frozen=True)
class Instance:
    seed: int
    task: str
    x: np.ndarray
    model: fm.ForwardModel
    y: np.ndarray
    solver_seed: int


def make_instance(cfg: Config, bundle: PriorBundle, generator, task: str, seed: int) -> Instance:
    rng = np.random.default_rng(seed)
    x = bundle.sample(1, rng, generator)[0]
    op_seed, noise_seed, solver_seed = (int(s) for s in rng.integers(0, 2 ** 31, size=3))
    model = build_task(cfg.task, bundle, task, seed=cfg.task["seed"] + op_seed)
    y = fm.measure(model, x, noise_seed)
    return Instance(seed, task, x, model, y, solver_seed)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _quality(x_hat, x, shape) -> Dict[str, float]:
    a, b = np.reshape(x_hat, shape), np.reshape(x, shape)
    s = metrics.ssim(a, b) if min(shape) >= 7 else math.nan
    return {"mse": metrics.mse(a, b), "psnr": metrics.psnr(a, b), "ssim": s}


def run_method(cfg: Config, bundle: PriorBundle, generator, inst: Instance, method: str,
               calibration: Optional[CalibrationModel] = None, few_shot=None,
               record_wallclock: bool = False) -> Dict[str, str]:
    """Solve one instance with one method and return its CSV row."""
    row = {"seed": inst.seed, "task": inst.task, "method": method, "prior": bundle.name}
    try:
        problem = make_problem(inst.y, inst.model, generator, eps=cfg.solver["eps"],
                               calibration=calibration, few_shot=few_shot,
                               reference_norm=bundle.rms_norm())
        if method == "dflow":
            res = dflow_solve(problem, dflow_config(cfg.solver, inst.solver_seed))
        else:
            scfg = solve_config({**cfg.solver, "method": method}, inst.solver_seed,
                                calibration_on=calibration is not None)
            res = solve(problem, scfg)
        q = _quality(res.x_hat, inst.x, signal_shape(bundle))
        row.update(q)
        row.update(loss=float(data_fit(problem, res.x_hat).value), t_star=res.t_star,
                   iters=res.iterations_used,
                   wallclock_ms=res.wallclock_ms if record_wallclock else 0.0, status="ok")
    except FMPlugError as exc:
        log.warning("instance %s/%s/%s failed: %s", inst.task, method, inst.seed, exc)
        row.update(mse=math.nan, psnr=math.nan, ssim=math.nan, loss=math.nan,
                   t_star=math.nan, iters=0, wallclock_ms=0.0,
                   status=f"error: {type(exc).__name__}: {exc}")
    return {k: _fmt(row[k]) for k in RESULT_COLUMNS}


def smooth_calibration(cfg: Config, table: CalibrationModel) -> CalibrationModel:
    """Apply ``[solver] calibration_fit`` to a grid table."""
    if cfg.solver["calibration_fit"] == "mlp":
        return fit_mlp_calibration(table, seed=cfg.suite["seed"])
    return table


def fit_suite_calibration(cfg: Config, generator) -> CalibrationModel:
    table = fit_calibration(generator, cfg.solver["calibration_samples"],
                            cfg.solver["calibration_grid"], seed=cfg.suite["seed"])
    return smooth_calibration(cfg, table)


# worker-process state, built once per process
_STATE: Dict[str, object] = {}


def _setup(cfg: Config):
    bundle = build_prior(cfg.prior)
    generator = build_generator(bundle, cfg.solver)
    cal = None
    if calibration_enabled(cfg.solver, cfg.task["noise_std"]):
        cal = fit_suite_calibration(cfg, generator)
    few = load_few_shot(cfg.solver["few_shot"], bundle.dim)
    return bundle, generator, cal, few


def _worker_init(cfg: Config):
    _STATE["cfg"] = cfg
    _STATE["setup"] = _setup(cfg)


def _run_one(job) -> List[Dict[str, str]]:
    task, index = job
    cfg = _STATE["cfg"]
    bundle, generator, cal, few = _STATE["setup"]
    inst = make_instance(cfg, bundle, generator, task, instance_seed(cfg.suite["seed"], index))
    return [run_method(cfg, bundle, generator, inst, m, cal, few, cfg.suite["record_wallclock"])
            for m in cfg.suite["methods"]]


def suite_jobs(cfg: Config):
    tasks = cfg.suite["tasks"] or [cfg.task["name"]]
    return [(task, i) for task in tasks for i in range(cfg.suite["instances"])]


def run_suite(cfg: Config, out_dir, workers: int = 1) -> List[Dict[str, str]]:
    """Run every (task, instance, method) and write ``results.csv`` and ``summary.csv``.

    Rows are ordered by task, instance and method regardless of ``workers``.
    """
    jobs = suite_jobs(cfg)
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(cfg,)) as pool:
            chunks = list(pool.map(_run_one, jobs))
    else:
        _worker_init(cfg)
        chunks = [_run_one(job) for job in jobs]
    rows = [row for chunk in chunks for row in chunk]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "results.csv", RESULT_COLUMNS, rows)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summarize(rows))
    return rows


def summarize(rows: Sequence[Dict[str, str]]) -> List[Dict[str, str]]:
    """Per (task, method) medians and means over successful rows."""
    groups: Dict[tuple, List[Dict[str, str]]] = {}
    for r in rows:
        groups.setdefault((r["task"], r["method"]), []).append(r)
    out = []
    for (task, method), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        rec = {"task": task, "method": method, "n": str(len(rs)), "n_ok": str(len(ok))}
        for key in ("mse", "psnr", "ssim", "loss"):
            vals = np.array([float(r[key]) for r in ok])
            vals = vals[np.isfinite(vals)]
            rec[f"median_{key}"] = _fmt(np.median(vals)) if vals.size else "nan"
            rec[f"mean_{key}"] = _fmt(np.mean(vals)) if vals.size else "nan"
        out.append(rec)
    return out


def write_csv(path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def calibration_rows(cal: CalibrationModel) -> List[Dict[str, str]]:
    return [{"t": _fmt(t), "mean": _fmt(m), "variance": _fmt(v)}
            for t, m, v in zip(cal.ts, cal.means, cal.variances)]


def read_calibration(path) -> CalibrationModel:
    rows = read_csv(path)
    if not rows or set(rows[0]) != set(CALIBRATION_COLUMNS):
        raise CalibrationError(f"{path}: expected columns {','.join(CALIBRATION_COLUMNS)}")
    col = lambda k: np.array([float(r[k]) for r in rows])
    return CalibrationModel(col("t"), col("mean"), col("variance"))
