"""Acceptance checks, one per criterion.

Each test prints a single ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line (visible without ``-s``) and then asserts the same condition.  Run just
this file with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

from fmplug import autodiff as ad
from fmplug import forward_models as fm
from fmplug.baselines import chi2_nll_of_sqnorm, plain_solve
from fmplug.cli import main as cli_main
from fmplug.generator import Generator, generate
from fmplug.harness import suite
from fmplug.harness.config import parse_config
from fmplug.harness.oracles import affine_coefficients, com_check, shell_ls_oracle, shell_probability
from fmplug.priors import bump_gmm, bundle, lowrank_gaussian, standard_gaussian
from fmplug.solver import (CalibrationModel, ShellConstraint, SolveConfig, calibrate_state,
                           fit_calibration, make_problem, objective, shell_project, solve)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        return ok
    return emit


# 1 -------------------------------------------------------------------------

def test_c01_shell_projection(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_norm = worst_idem = 0.0
    exact = True
    for _ in range(10 ** 4):
        d = int(rng.integers(1, 65))
        eps = float(rng.uniform(1e-3, 0.99))
        z = rng.standard_normal(d) * 10.0 ** rng.uniform(-3, 3)
        c = ShellConstraint(d, eps)
        lo, hi = (1 - eps) * math.sqrt(d), (1 + eps) * math.sqrt(d)
        p = shell_project(z, c)
        n = np.linalg.norm(z)
        expected = hi * z / n if n >= hi else lo * z / n if n <= lo else z
        exact &= bool(np.array_equal(p, expected))
        pn = np.linalg.norm(p)
        worst_norm = max(worst_norm, max(lo - pn, pn - hi, 0.0) / math.sqrt(d))
        worst_idem = max(worst_idem, np.max(np.abs(shell_project(p, c) - p)) / math.sqrt(d))
    elapsed = time.perf_counter() - start
    ok = worst_norm <= 1e-12 and worst_idem <= 1e-12 and exact and elapsed < 1.0
    report(1, ok, f"10^4 cases, bound violation {worst_norm:.1e}, idempotence {worst_idem:.1e}, "
                  f"branch arithmetic exact={exact}, {elapsed:.2f}s (limit 1s)")
    assert ok


# 2 -------------------------------------------------------------------------

def test_c02_gradient_fidelity(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    prior = lowrank_gaussian(8, 4, seed=1)
    g = Generator(bundle("g", prior).field, "heun2", 3)
    blur = fm.gaussian_blur((2, 4), 3, 1.0, noise_std=0.03)
    y = fm.measure(blur, prior.sample(1, rng)[0], 5)
    shots = prior.sample(4, rng)
    p = make_problem(y, blur, g, few_shot=shots)
    z0, t0, v0 = rng.standard_normal(8), 0.4, rng.standard_normal(4)
    ez = ad.grad_check(lambda z: objective(p, z, t0)[0], z0, step=1e-5)
    et = ad.grad_check(lambda t: objective(p, z0, t)[0], np.array(t0), step=1e-5)
    ev = ad.grad_check(lambda v: objective(p, z0, t0, v)[0], v0, step=1e-5)
    elapsed = time.perf_counter() - start
    ok = max(ez, et, ev) < 1e-4 and elapsed < 5.0
    report(2, ok, f"max relative error dz {ez:.1e}, dt {et:.1e}, dv {ev:.1e} (limit 1e-4), "
                  f"{elapsed:.2f}s (limit 5s)")
    assert ok


# 3 -------------------------------------------------------------------------

class _Exp:
    dim = 1

    def __call__(self, z, t):
        return ad.as_node(z) * 1.0


def test_c03_ode_order(report):
    start = time.perf_counter()

    def errors(solver):
        return np.array([abs(generate(Generator(_Exp(), solver, n, 1.0), [1.0], 0.0).value[0]
                             - math.e) for n in (4, 8, 16)])

    heun, euler = errors("heun2"), errors("euler")
    rh, re = heun[:-1] / heun[1:], euler[:-1] / euler[1:]
    elapsed = time.perf_counter() - start
    ok = (np.all((rh >= 3.5) & (rh <= 4.5)) and np.all((re >= 1.8) & (re <= 2.2))
          and elapsed < 1.0)
    report(3, ok, f"heun2 ratios {np.round(rh, 3).tolist()} in [3.5,4.5], euler ratios "
                  f"{np.round(re, 3).tolist()} in [1.8,2.2], {elapsed:.2f}s (limit 1s)")
    assert ok


# 4 -------------------------------------------------------------------------

def test_c04_oracle_equivalence(report):
    start = time.perf_counter()
    passed, lines = 0, []
    for seed in range(10):
        prior = lowrank_gaussian(16, 16, seed=seed)
        g = Generator(bundle("g", prior).field)
        A = fm.random_gaussian(8, 16, seed=seed + 100, noise_std=0.03)
        rng = np.random.default_rng(seed)
        lam, u = prior.spectrum
        # truth drawn at three prior standard deviations so the outer shell bound is active
        x = prior.mean + u @ (3.0 * np.sqrt(lam) * rng.standard_normal(16))
        y = fm.measure(A, x, seed + 7)
        p = make_problem(y, A, g)
        M, b = affine_coefficients(g)
        z_o = shell_ls_oracle(M, b, A, y, p.shell)
        x_o = M @ z_o + b
        f_o = float(np.sum((y - A.matrix @ x_o) ** 2) / A.out_dim)
        res = plain_solve(p, SolveConfig.desk(iters=1000, seed=seed, patience=1000), shell=True)
        rel_f = (res.best_loss - f_o) / f_o
        rel_x = np.linalg.norm(res.x_hat - x_o) / np.linalg.norm(x_o)
        passed += rel_f < 0.01 and rel_x < 0.02
        lines.append(f"{rel_f:.1e}/{rel_x:.1e}")
    elapsed = time.perf_counter() - start
    ok = passed >= 9 and elapsed < 120
    report(4, ok, f"{passed}/10 seeds within 1% objective and 2% reconstruction of the shell "
                  f"oracle (need 9); per seed {', '.join(lines)}; {elapsed:.0f}s (limit 120s)")
    assert ok


# 5, 6 ----------------------------------------------------------------------

SUITE_TOML = """
[prior]
kind = "gmm"
side = 16
components = 4
seed = 0

[task]
noise_std = 0.03

[solver]
preset = "desk"
iters = 500

[suite]
seed = 0
instances = 20
tasks = ["{task}"]
methods = {methods}
"""


def _run(tmp_path_factory, task, methods):
    text = SUITE_TOML.replace("{task}", task).replace("{methods}", str(list(methods)))
    cfg = parse_config(text.replace("'", '"'))
    out = tmp_path_factory.mktemp(task)
    start = time.perf_counter()
    rows = suite.run_suite(cfg, out)
    return rows, time.perf_counter() - start


def _medians(rows):
    out = {}
    for r in rows:
        if r["status"] == "ok":
            out.setdefault(r["method"], []).append(float(r["mse"]))
    return {m: float(np.median(v)) for m, v in out.items()}, {m: len(v) for m, v in out.items()}


@pytest.fixture(scope="module")
def deblur_runs(tmp_path_factory):
    ablation = _run(tmp_path_factory, "deblur", ["fmplug", "fmplug-w", "plain"])
    dflow = _run(tmp_path_factory, "deblur", ["dflow"])
    return ablation, dflow


@pytest.mark.slow
def test_c05_ablation_ordering(report, deblur_runs):
    (rows, elapsed), _ = deblur_runs
    med, n = _medians(rows)
    ok = (min(n.values()) >= 20 and med["fmplug"] <= med["fmplug-w"]
          and med["fmplug-w"] < 0.98 * med["plain"] and elapsed < 900)
    report(5, ok, f"deblur median MSE fmplug {med['fmplug']:.5f} <= fmplug-w "
                  f"{med['fmplug-w']:.5f} < 0.98 x plain {med['plain']:.5f} "
                  f"(n={min(n.values())}), {elapsed:.0f}s (limit 900s)")
    assert ok


@pytest.mark.slow
def test_c06_baseline_dominance(report, deblur_runs, tmp_path_factory):
    (ablation_rows, _), (dflow_rows, dflow_time) = deblur_runs
    deblur, _ = _medians(ablation_rows + dflow_rows)
    inpaint_rows, inpaint_time = _run(tmp_path_factory, "inpaint", ["fmplug", "dflow"])
    inpaint, n = _medians(inpaint_rows)
    elapsed = dflow_time + inpaint_time
    ok_deblur = deblur["fmplug"] < deblur["dflow"]
    ok_inpaint = inpaint["fmplug"] < inpaint["dflow"]
    ok = ok_deblur and ok_inpaint and min(n.values()) >= 20 and elapsed < 900
    report(6, ok, f"median MSE fmplug vs dflow: deblur {deblur['fmplug']:.5f} vs "
                  f"{deblur['dflow']:.5f} ({'ok' if ok_deblur else 'not below'}), inpaint "
                  f"{inpaint['fmplug']:.5f} vs {inpaint['dflow']:.5f} "
                  f"({'ok' if ok_inpaint else 'not below'}), {elapsed:.0f}s (limit 900s)")
    assert ok


@pytest.mark.slow
def test_warm_start_final_loss_not_above_plain(deblur_runs):
    (rows, _), _ = deblur_runs
    loss = {}
    for r in rows:
        loss.setdefault(r["method"], []).append(float(r["loss"]))
    assert len(loss["fmplug"]) == len(loss["plain"]) >= 20
    assert np.median(loss["fmplug"]) <= np.median(loss["plain"])


# 7 -------------------------------------------------------------------------

def test_c07_concentration_of_measure(report, capsys):
    start = time.perf_counter()
    details, ok = [], True
    for d, eps in ((1024, 0.1), (64, 0.5)):
        assert cli_main(["check-com", "--dim", str(d), "--eps", str(eps), "--n", "10000",
                         "--seed", "0"]) == 0
        out = dict(kv.split("=") for kv in capsys.readouterr().out.split())
        frac = float(out["fraction"])
        assert frac == com_check(d, eps, 10 ** 4, 0)
        p = shell_probability(d, eps)
        se = math.sqrt(p * (1 - p) / 10 ** 4)
        # with p within 1e-10 of 1 the binomial error is below one count
        within = abs(frac - p) <= max(3 * se, 0.5e-4)
        ok &= frac >= 0.999 and within
        details.append(f"d={d} eps={eps}: {frac:.4f} vs chi-square {p:.10f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1.0
    report(7, ok, f"{'; '.join(details)}; {elapsed:.2f}s (limit 1s)")
    assert ok


# 8 -------------------------------------------------------------------------

def test_c08_chi2_flatness(report):
    start = time.perf_counter()
    d = 65536
    u = np.linspace(62000.0, 70000.0, 800001)
    h = chi2_nll_of_sqnorm(u, d)
    hmin = float(chi2_nll_of_sqnorm(d - 2.0, d))
    dev = float(np.max((h - hmin) / abs(hmin)))
    elapsed = time.perf_counter() - start
    ok = dev <= 3.5e-4 and h.min() >= hmin and elapsed < 1.0
    report(8, ok, f"d=65536 max relative deviation {dev:.3e} (limit 3.5e-4), {elapsed:.2f}s")
    assert ok


# 9 -------------------------------------------------------------------------

def test_c09_calibration(report):
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    cal = CalibrationModel(np.linspace(0, 1, 9), rng.standard_normal(9), rng.uniform(0.2, 3, 9))
    worst = 0.0
    for _ in range(1000):
        dz = int(rng.integers(2, 64))
        t = float(rng.uniform())
        out = calibrate_state(rng.standard_normal(dz) * rng.uniform(0.1, 4) + rng.normal(), t, cal)
        mu, var = cal.at(t)
        worst = max(worst, abs(out.value.mean() - mu), abs(out.value.var() - var))
    g = Generator(bundle("g", standard_gaussian(16)).field)
    fit = fit_calibration(g, 4000, 32, seed=0)
    rel = float(np.max(np.abs(fit.variances / (fit.ts ** 2 + (1 - fit.ts) ** 2) - 1)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and rel <= 0.05 and elapsed < 30
    report(9, ok, f"moment error {worst:.1e} on 10^3 states (limit 1e-10); fitted variance "
                  f"within {100 * rel:.2f}% of t^2+(1-t)^2 (limit 5%), {elapsed:.1f}s (limit 30s)")
    assert ok


# 10 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_few_shot_selection(report):
    start = time.perf_counter()
    dist = bump_gmm(32, 6, seed=0)
    g = Generator(bundle("bump", dist).field)
    weights = []
    for s in range(20):
        rng = np.random.default_rng(1000 + s)
        comp = int(rng.integers(6))
        x = dist.components[comp].sample(1, rng)[0]
        others = [dist.components[k].sample(1, rng)[0] for k in range(6) if k != comp]
        delta = rng.standard_normal(32)
        near = x + 0.05 * np.linalg.norm(x) * delta / np.linalg.norm(delta)
        pos = int(rng.integers(6))
        shots = np.insert(np.array(others), pos, near, axis=0)
        dists = np.linalg.norm(shots - x, axis=1) / np.linalg.norm(x)
        assert np.sum(dists < 0.1) == 1 and dists[pos] < 0.1
        A = fm.random_gaussian(16, 32, seed=s, noise_std=0.03)
        p = make_problem(fm.measure(A, x, s), A, g, few_shot=shots)
        # the anchor is a clean instance, so the flow starts close to the data end
        res = solve(p, SolveConfig.desk(iters=500, seed=s, t_init=0.9))
        weights.append(float(res.w_star[pos]))
    wins = sum(w > 0.5 for w in weights)
    elapsed = time.perf_counter() - start
    ok = wins >= 15 and elapsed < 600
    report(10, ok, f"close instance weight > 0.5 on {wins}/20 seeds (need 15), min weight "
                   f"{min(weights):.2f}, {elapsed:.0f}s (limit 600s)")
    assert ok


# 11 ------------------------------------------------------------------------

def test_c11_reproducibility(report, tmp_path):
    cfg = tmp_path / "suite.toml"
    cfg.write_text("""
[prior]
kind = "gmm"
side = 8
components = 3

[solver]
iters = 40

[suite]
seed = 7
instances = 2
tasks = ["deblur", "inpaint", "cs"]
""")
    outs = []
    for name, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        assert cli_main(["bench", "--suite", str(cfg), "--out", str(tmp_path / name),
                         "--workers", workers]) == 0
        outs.append({f: (tmp_path / name / f).read_bytes()
                     for f in ("results.csv", "summary.csv")})
    same = outs[0] == outs[1]
    parallel = outs[0] == outs[2]
    rows = suite.read_csv(tmp_path / "a" / "results.csv")
    ok = same and parallel and len(rows) == 3 * 2 * 4 and all(r["status"] == "ok" for r in rows)
    report(11, ok, f"two reruns byte-identical={same}, 2-worker run identical={parallel}, "
                   f"{len(rows)} rows")
    assert ok
