"""Command-line entry point: ``fmplug <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys

from .errors import ConfigError, FMPlugError
from .flow import MLPVelocityField, linear_schedule, save_checkpoint, train_fm
from .harness import suite
from .harness.config import (ALL_METHODS, TASKS, build_generator, build_prior,
                             calibration_enabled, default_config, load_config, load_few_shot,
                             prior_section_from_arg)
from .harness.oracles import com_check, shell_probability
from .solver import fit_calibration

log = logging.getLogger("fmplug")


def _config(path):
    return load_config(path) if path else default_config()


def cmd_train_prior(args) -> int:
    cfg = _config(args.config)
    if cfg.prior["kind"] == "checkpoint":
        raise ConfigError("train-prior needs an analytic [prior] to draw training data from")
    bundle = build_prior(cfg.prior)
    tr = cfg.prior["train"]
    field = MLPVelocityField.init(bundle.dim, tr["hidden"], tr["depth"], tr["seed"])
    dist = bundle.distribution
    field, trace = train_fm(lambda rng, n: dist.sample(n, rng), field, linear_schedule(),
                            steps=tr["steps"], batch=tr["batch"], lr=tr["lr"], seed=tr["seed"],
                            schedule_lr=tr["lr_schedule"])
    save_checkpoint(args.out, field, linear_schedule())
    tail = trace[-100:]
    print(f"trained {tr['steps']} steps; mean loss over last {len(tail)} steps: "
          f"{sum(tail) / max(1, len(tail)):.6g}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config(args.config)
    bundle = build_prior(prior_section_from_arg(args.prior, cfg.prior))
    gen = build_generator(bundle, cfg.solver)
    cal = fit_calibration(gen, args.samples, args.grid, args.seed)
    suite.write_csv(args.out, suite.CALIBRATION_COLUMNS, suite.calibration_rows(cal))
    print(f"wrote {len(cal.ts)} calibration points to {args.out}")
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args.config)
    if args.prior:
        cfg = cfg.with_overrides("prior", **prior_section_from_arg(args.prior, cfg.prior))
    bundle = build_prior(cfg.prior)
    gen = build_generator(bundle, cfg.solver)
    cal = None
    if args.calibration:
        cal = suite.smooth_calibration(cfg, suite.read_calibration(args.calibration))
    if cal is None and args.method != "dflow" and calibration_enabled(cfg.solver,
                                                                     cfg.task["noise_std"]):
        cal = suite.fit_suite_calibration(cfg, gen)
    few = load_few_shot(cfg.solver["few_shot"], bundle.dim)
    inst = suite.make_instance(cfg, bundle, gen, args.task, args.seed)
    row = suite.run_method(cfg, bundle, gen, inst, args.method, cal, few,
                           cfg.suite["record_wallclock"])
    suite.write_csv(args.out, suite.RESULT_COLUMNS, [row])
    print(",".join(row[k] for k in suite.RESULT_COLUMNS))
    return 0 if row["status"] == "ok" else 1


def cmd_bench(args) -> int:
    cfg = load_config(args.suite)
    rows = suite.run_suite(cfg, args.out, workers=args.workers)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} records written to {args.out} ({failed} failed)")
    return 0


def cmd_check_com(args) -> int:
    frac = com_check(args.dim, args.eps, args.n, args.seed)
    p = shell_probability(args.dim, args.eps)
    se = math.sqrt(max(p * (1 - p), 1e-300) / args.n)
    dev = abs(frac - p) / se if se > 0 else 0.0
    print(f"fraction={frac:.6f} chi2_probability={p:.6f} std_error={se:.3g} "
          f"deviation_se={dev:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fmplug", description="Flow-prior plug-in solvers at desk scale.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-prior", help="train an MLP velocity field on the [prior] distribution")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_prior)

    p = sub.add_parser("calibrate", help="fit the mean-variance calibration table")
    p.add_argument("--prior", required=True, help="checkpoint path, 'gaussian' or 'gmm'")
    p.add_argument("--samples", type=int, default=4000)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("solve", help="solve one seeded instance")
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--prior", help="checkpoint path or prior kind; defaults to [prior]")
    p.add_argument("--method", required=True, choices=ALL_METHODS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--calibration", help="calibration CSV from 'calibrate'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run a suite and write results.csv and summary.csv")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("check-com", help="Gaussian norm concentration against the chi-square tail")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_com)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FMPlugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
