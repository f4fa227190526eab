"""Command line entry point: ``hotml <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import exhaustive_ml
from .bench import (Detector, DetectorKind, RunConfig, emit_csv, load_config, run_experiment, trial_rng,
                    write_csv)
from .errors import ConfigError, HotmlError
from .model import Mode, synthesize_instance
from .objective import build_context, lipschitz_bound
from .solver import DualCurve
from .unfolded import gradcheck_suite, init_params, load_params, save_params, train

GRADCHECK_TOL = 1e-5
GRADCHECK_CASES = ((Mode.ONE_BIT, 16, 8, 3), (Mode.CLASSICAL, 8, 8, 3))


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hotml", description="Homotopy ML detection for one-bit and classical MIMO.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, workers=True):
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output path (CSV, or parameter file for train)")
        p.add_argument("--plot", action="store_true", help="also render a PNG next to the output (needs matplotlib)")
        if workers:
            p.add_argument("--workers", type=int, help="worker processes")

    p = sub.add_parser("simulate", help="Monte-Carlo BER sweep, CSV output")
    p.add_argument("config")
    common(p)
    p = sub.add_parser("train", help="train an unfolded network and save its parameters")
    p.add_argument("config")
    common(p, workers=False)
    p = sub.add_parser("eval", help="benchmark a trained network against the configured detectors")
    p.add_argument("config")
    p.add_argument("--params", required=True, help="parameter file written by 'train'")
    common(p)
    p = sub.add_parser("check-duality", help="compare f* with the maximum of the grid dual on small instances")
    p.add_argument("config")
    common(p, workers=False)
    p = sub.add_parser("gradcheck", help="backward pass versus central differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=20)
    return ap


def _load(args) -> RunConfig:
    run = load_config(args.config)
    ex = run.experiment
    if args.seed is not None:
        ex.seed = args.seed
        ex.channel = replace(ex.channel, seed=args.seed)
    if getattr(args, "workers", None) is not None:
        ex.workers = args.workers
    if args.out is not None:
        ex.out = args.out
    run.plot = run.plot or args.plot
    return run


def _png(out: str | None) -> Path:
    if out is None:
        raise ConfigError("--plot needs an output path (--out or 'out' in the config)")
    return Path(out).with_suffix(".png")


def _write_rows(run: RunConfig, rows) -> None:
    out = run.experiment.out
    if out is None:
        write_csv(rows, sys.stdout)
    else:
        emit_csv(rows, out)
        print(f"wrote {out}", file=sys.stderr)
    if run.plot:
        from .report import plot_ber
        print(f"wrote {plot_ber(rows, _png(out))}", file=sys.stderr)


def cmd_simulate(args) -> int:
    run = _load(args)
    if any(d.kind == DetectorKind.DEEP for d in run.experiment.detectors):
        params = _params_for(run, run.params_path)
        run.experiment.detectors = [replace(d, params=params) if d.kind == DetectorKind.DEEP else d
                                    for d in run.experiment.detectors]
    _write_rows(run, run_experiment(run.experiment))
    return 0


def _params_for(run: RunConfig, path):
    if path is None:
        raise ConfigError("deephotml needs a parameter file ('params' in the config or --params)")
    ex = run.experiment
    params = load_params(path)
    if params.mode != ex.mode or (params.M, params.N) != (ex.channel.M, ex.channel.N):
        raise ConfigError(f"parameter file is {params.mode.value} ({params.M}, {params.N}), config is "
                          f"{ex.mode.value} ({ex.channel.M}, {ex.channel.N})")
    return params


def cmd_eval(args) -> int:
    run = _load(args)
    params = _params_for(run, args.params)
    dets = [d for d in run.experiment.detectors if d.kind != DetectorKind.DEEP]
    run.experiment.detectors = dets + [Detector(DetectorKind.DEEP, params)]
    _write_rows(run, run_experiment(run.experiment))
    return 0


def cmd_train(args) -> int:
    run = _load(args)
    ex = run.experiment
    out = args.out or run.params_path
    if out is None:
        raise ConfigError("train needs an output parameter file (--out or 'params' in the config)")
    rng = np.random.default_rng(np.random.SeedSequence(ex.seed, spawn_key=(0xD0,)))
    params = init_params(ex.mode, ex.channel.M, ex.channel.N, run.layers, rng)
    result = train(ex.mode, ex.channel, run.layers, run.train, rng, params)
    save_params(result.params, out)
    log_path = Path(out).with_suffix(".loss.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        w.writerows((i, repr(float(v))) for i, v in enumerate(result.losses))
    print(f"wrote {out} and {log_path}; final loss {result.losses[-1]:.5g}", file=sys.stderr)
    if run.plot:
        from .report import plot_training
        print(f"wrote {plot_training(result.losses, Path(out).with_suffix('.loss.png'))}", file=sys.stderr)
    return 0


def cmd_check_duality(args) -> int:
    run = _load(args)
    ex, dual = run.experiment, run.duality
    snr = ex.snr_grid_db[0]
    rows = []
    print("instance,f_star,max_dual,gap,lambda_at_max")
    for i in range(ex.trials):
        inst = synthesize_instance(ex.channel, snr, ex.mode, trial_rng(ex.seed, 0, i))
        ctx = build_context(inst, float(dual["sigma0"]))
        _, f_star = exhaustive_ml(ctx)
        lams = np.linspace(0.0, float(dual["lambda_max_factor"]) * lipschitz_bound(ctx), int(dual["lambda_points"]))
        d = DualCurve(ctx, int(dual["resolution"]))(lams)
        j = int(np.argmax(d))
        rows.append((i, f_star, float(d[j]), f_star - float(d[j]), float(lams[j])))
        print(",".join([str(i)] + [repr(v) for v in rows[-1][1:]]), flush=True)
        if run.plot and i == 0:
            from .report import plot_dual
            plot_dual(lams, d, f_star, _png(ex.out).with_name(_png(ex.out).stem + "_dual.png"))
    if ex.out is not None:
        with open(ex.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance", "f_star", "max_dual", "gap", "lambda_at_max"])
            w.writerows([r[0]] + [repr(v) for v in r[1:]] for r in rows)
    worst = max(abs(r[3]) for r in rows)
    tol = float(dual["tolerance"])
    ok = worst <= tol
    print(f"max |gap| = {worst:.3e} (tolerance {tol:g}): {'ok' if ok else 'EXCEEDED'}", file=sys.stderr)
    return 0 if ok else 1


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    ok = True
    for mode, M, N, K in GRADCHECK_CASES:
        worst, skipped = gradcheck_suite(mode, M, N, K, args.draws, rng)
        passed = worst < GRADCHECK_TOL
        ok &= passed
        print(f"{mode.value:9s} (M,N,K)=({M},{N},{K})  draws={args.draws}  discarded={skipped}  "
              f"max rel err={worst:.2e}  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval,
            "check-duality": cmd_check_duality, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (HotmlError, OSError, ValueError) as exc:
        print(f"hotml: error: {exc}", file=sys.stderr)
        return 1
    except ImportError as exc:
        print(f"hotml: error: {exc} (install the 'plot' extra for figures)", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
