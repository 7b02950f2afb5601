"""Command-line experiment runner.

    dapspp run          --config cfg.json --out DIR [--seeds 0,1,2] [--threads N]
    dapspp sweep        --config cfg.json --out DIR --param sigma_bar --values 0.2,0.5,1
    dapspp diagnose     --config cfg.json --out DIR
    dapspp oracle-check --config cfg.json [--out DIR]

Exit status: 0 on success, 2 on configuration errors, 3 when a sampler
produces a non-finite state. ``DAPSPP_LOG`` (error, info, debug) sets the
log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import rng as rngs
from .arrayfile import write_array
from .config import ConfigError, Problem, RunConfig, build_problem, load_config, serialize_config
from .diagnostics import gmm_posterior_oracle, moment_error, mse, psnr, residual_ratio, ssim
from .refine import RefineConfig, warm_start_compare
from .sampler import (
    NonFiniteStateError,
    cycle_step_size,
    dps_equivalence_check,
    run_daps_baseline,
    run_dapspp,
    run_dps_baseline,
)

log = logging.getLogger("dapspp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SWEEP_PARAMS = ("sigma_bar", "rho", "gamma", "J", "K")
TRACE_COLUMNS = ("kind", "cycle", "step", "sigma", "nfe", "residual_norm", "grad_norm",
                 "kappa", "inner_product", "score_norm", "estep")


# ---------------------------------------------------------------------------
# running one seed
# ---------------------------------------------------------------------------


def run_seed(cfg: RunConfig, problem: Problem, seed: int, keep_snapshots=False):
    s = cfg.sampler
    scfg = replace(s.to_sampler_config(seed), keep_snapshots=keep_snapshots)
    if s.algorithm == "dapspp":
        return run_dapspp(problem.model, problem.measurement, scfg)
    if s.algorithm == "daps":
        return run_daps_baseline(problem.model, problem.measurement, scfg,
                                 ode_steps=2, n_refine=int(s.J), with_prior=True)
    return run_dps_baseline(problem.model, problem.measurement, scfg)


def summarize(cfg: RunConfig, problem: Problem, seed: int, x, trace) -> dict:
    meas = problem.measurement
    r = meas.y - meas.operator.apply(x)
    out = {
        "task": cfg.task,
        "algorithm": cfg.sampler.algorithm,
        "seed": seed,
        "nfe": trace.nfe,
        "prior_evals": trace.prior_evals,
        "final_residual_norm": float(np.linalg.norm(r)),
        "residual_ratio": residual_ratio(meas.operator, x, meas.y, meas.gamma),
    }
    if problem.x_true is not None:
        out["mse"] = mse(x, problem.x_true)
        out["psnr"] = psnr(x, problem.x_true)
        shape = cfg.prior.get("shape")
        if shape is not None and len(shape) == 2:
            out["ssim"] = ssim(x.reshape(shape), problem.x_true.reshape(shape))
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def trace_rows(trace):
    for rec in trace.records:
        yield ("cycle", rec.cycle, "", rec.sigma, rec.nfe, rec.residual_norm, "",
               rec.kappa, rec.inner_product, rec.score_norm, rec.estep)
    for cycle, step, res, grad in trace.refine_rows:
        yield ("refine", cycle, step, "", "", res, grad, "", "", "", "")


def write_run(out_dir: Path, summary: dict, x, trace):
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "trace.csv", TRACE_COLUMNS, trace_rows(trace))
    write_array(out_dir / "final.dpx", x)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_all(cfg: RunConfig, out_dir: Path, threads: int = 1) -> list:
    """Run every seed into ``out_dir/seed_<s>``; returns the per-seed summaries."""
    problem = build_problem(cfg)

    def one(seed):
        x, trace = run_seed(cfg, problem, seed)
        summary = summarize(cfg, problem, seed, x, trace)
        write_run(out_dir / f"seed_{seed}", summary, x, trace)
        log.info("seed %d: NFE %d, residual ratio %.3f", seed, summary["nfe"], summary["residual_ratio"])
        return summary

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
    if threads > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            summaries = list(pool.map(one, cfg.seeds))
    else:
        summaries = [one(s) for s in cfg.seeds]
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump({"runs": summaries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summaries


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_run(cfg, args):
    run_all(cfg, _out_dir(cfg, args), args.threads)
    return EXIT_OK


def apply_sweep_value(cfg: RunConfig, param: str, value: float) -> RunConfig:
    if param == "gamma":
        return replace(cfg, measurement={**cfg.measurement, "gamma": value})
    if param == "J":
        return cfg.with_sampler(J=_as_int(value, "J"))
    if param == "K":
        return cfg.with_sampler(n_steps=_as_int(value, "K") + 1)
    return cfg.with_sampler(**{param: value})


def _as_int(value, name):
    if float(value) != int(value):
        raise ConfigError(f"sweep.{name}", f"expected an integer, got {value}")
    return int(value)


def cmd_sweep(cfg, args):
    if args.param not in SWEEP_PARAMS:
        raise ConfigError("--param", f"unknown sweep parameter {args.param!r}; expected one of {SWEEP_PARAMS}")
    values = _parse_floats(args.values, "--values")
    if not values:
        raise ConfigError("--values", "at least one value is required")
    variants = []
    for v in values:
        variant = apply_sweep_value(cfg, args.param, v)
        variant.validate()
        variants.append((v, variant))
    out = _out_dir(cfg, args)
    rows = []
    for v, variant in variants:
        summaries = run_all(variant, out / f"{args.param}={v:g}", args.threads)
        for s in summaries:
            rows.append((args.param, v, s["seed"], s["nfe"], s["residual_ratio"],
                         s.get("mse", ""), s.get("psnr", "")))
    write_csv(out / "sweep.csv", ("param", "value", "seed", "nfe", "residual_ratio", "mse", "psnr"), rows)
    return EXIT_OK


DIAG_COLUMNS = ("seed", "cycle", "sigma", "kappa", "inner_product", "score_norm",
                "residual_norm", "max_abs_diff")


def cmd_diagnose(cfg, args):
    problem = build_problem(cfg)
    out = _out_dir(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    meas = problem.measurement
    rows, warm = [], []
    for seed in cfg.seeds:
        # the per-cycle quantities are defined for the DAPS++ sampler
        dcfg = cfg.with_sampler(algorithm="dapspp", diagnostics=True)
        _, trace = run_seed(dcfg, problem, seed, keep_snapshots=True)
        scfg = dcfg.sampler.to_sampler_config(seed)
        sigmas = scfg.schedule.sigmas()
        gamma = cfg.sampler.gamma_eff
        for rec, x_in in zip(trace.records, trace.snapshots):
            k = rec.cycle
            sigma_next = float(sigmas[k]) if k < scfg.n_cycles else 0.0
            eta = cycle_step_size(scfg, k) / gamma**2
            _, _, diff = dps_equivalence_check(problem.model, meas, x_in, rec.sigma, sigma_next, eta,
                                               seed=seed * 1_000_003 + k)
            rows.append((seed, k, rec.sigma, rec.kappa, rec.inner_product, rec.score_norm,
                         rec.residual_norm, diff))
        table = warm_start_compare(
            meas, problem.model,
            cfg=RefineConfig(n_steps=50, eta=cfg.sampler.eta0, gamma=gamma,
                             grad_convention=cfg.sampler.grad_convention),
            rng=rngs.stream(seed, "warm-start"), sigma_max=cfg.sampler.sigma_max,
        )
        warm += [(seed, r["init"], r["iters_to_threshold"] if r["iters_to_threshold"] is not None else "",
                  r["initial_residual"], r["final_residual"], r["threshold"], r["init_nfe"])
                 for r in table]
    write_csv(out / "diagnostics.csv", DIAG_COLUMNS, rows)
    write_csv(out / "warm_start.csv", ("seed", "init", "iters_to_threshold", "initial_residual",
                                       "final_residual", "threshold", "init_nfe"), warm)
    log.info("diagnostics written to %s", out)
    return EXIT_OK


def cmd_oracle_check(cfg, args):
    problem = build_problem(cfg)
    meas = problem.measurement
    try:
        oracle = gmm_posterior_oracle(problem.model, meas.operator, meas.y, meas.gamma)
    except TypeError as exc:
        raise ConfigError("operator", str(exc)) from None
    samples = np.array([run_seed(cfg, problem, s)[0] for s in cfg.seeds])
    if samples.shape[0] < 2:
        raise ConfigError("seeds", "oracle-check needs at least two seeds")
    err = moment_error(samples, oracle)
    report = {
        "n": err["n"],
        "oracle_mean": oracle.mean().tolist(),
        "sample_mean": samples.mean(axis=0).tolist(),
        "mean_z": err["mean_z"].tolist(),
        "oracle_weights": oracle.weights.tolist(),
        "sample_weights": err["weights"].tolist(),
        "weight_err": err["weight_err"],
        "cov_rel_err": err["cov_rel_err"],
    }
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "diagnose": cmd_diagnose,
            "oracle-check": cmd_oracle_check}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _parse_floats(text, flag):
    if text is None or not text.strip():
        return []
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(flag, f"expected a comma-separated list of numbers, got {text!r}") from None


def _parse_seeds(text):
    try:
        seeds = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--seeds", f"expected comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds", "at least one seed is required")
    return tuple(seeds)


def _out_dir(cfg, args) -> Path:
    out = args.out or cfg.out_dir
    if not out:
        raise ConfigError("--out", "no output directory given (flag or config out_dir)")
    return Path(out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dapspp", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON run config")
        p.add_argument("--out", help="output directory (overrides the config's out_dir)")
        p.add_argument("--seeds", help="comma-separated seeds (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="seeds run concurrently")
        if name == "sweep":
            p.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
            p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def _setup_logging():
    level = os.environ.get("DAPSPP_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if level not in levels:
        log.error("ignoring unknown DAPSPP_LOG=%r", level)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        if args.seeds:
            cfg = replace(cfg, seeds=_parse_seeds(args.seeds))
            cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteStateError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
