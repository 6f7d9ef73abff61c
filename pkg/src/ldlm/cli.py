"""Command-line interface: fit, select, infer, test, and simulate.

Structured results go to JSON (floats serialized via repr, which round-trips
exactly); tabular study output goes to CSV. Every output embeds a run
manifest with the command, config snapshot, input digests, seeds, tool
version, and wall-clock duration. Exit codes: 0 success, 2 input error,
3 numerical failure, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisSpec, build_basis, subject_basis
from .criteria import VaicConsistencyError, select, vaic
from .data_model import (
    BLOCK_GAMMA,
    BLOCK_GAMMA0,
    BLOCK_GAMMA1,
    CROSSOVER,
    RANDOM_INTERCEPT,
    RANDOM_LAG,
    DatasetError,
    DesignMatrices,
    ModelConfig,
    assemble,
    read_csv,
)
from .inference import (
    difference_curve,
    gamma_band,
    gamma_curve,
    pointwise_interval,
    simultaneous_band,
    zls_test,
)
from .simstudy import SimConfig, run_power_curve, run_study, write_report_tables
from .vb import NumericalError, VariationalFit, fit as fit_vb

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4


class InputError(ValueError):
    """Malformed file, config, or flag combination."""


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest(command: str, config: dict, inputs: list[str], seeds: dict,
              started: float) -> dict:
    return {
        "command": command,
        "config": config,
        "input_digests": {path: _sha256(path) for path in inputs},
        "seeds": seeds,
        "tool_version": __version__,
        "duration_seconds": time.monotonic() - started,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")


def _load_json(path: str) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _model_config_from_json(doc: dict) -> ModelConfig:
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(doc) - known
    if unknown:
        raise InputError(f"unknown model config fields: {sorted(unknown)}")
    try:
        return ModelConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid model config: {exc}") from exc


def _sim_config_from_json(doc: dict) -> SimConfig:
    known = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(doc) - known
    if unknown:
        raise InputError(f"unknown simulation config fields: {sorted(unknown)}")
    try:
        return SimConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid simulation config: {exc}") from exc


def _bases_for(config: ModelConfig, n_lags: int) -> tuple[np.ndarray, np.ndarray | None]:
    theta_fixed = build_basis(BasisSpec(num_lags=n_lags, num_basis=config.num_basis))
    theta_random = None
    if config.random_effect == RANDOM_LAG:
        theta_random = subject_basis(n_lags, config.num_random_basis)
    return theta_fixed, theta_random


def _fit_payload(fitted: VariationalFit, dm: DesignMatrices,
                 theta_fixed: np.ndarray) -> dict:
    config = fitted.config
    curves: dict[str, list[float]] = {}
    beta = fitted.block_mean("beta")
    curves["beta_hat"] = beta.tolist()
    if config.design == CROSSOVER:
        curves["gamma0_hat"] = (theta_fixed @ fitted.block_mean(BLOCK_GAMMA0)).tolist()
        curves["gamma1_hat"] = (theta_fixed @ fitted.block_mean(BLOCK_GAMMA1)).tolist()
    else:
        curves["gamma_hat"] = (theta_fixed @ fitted.block_mean(BLOCK_GAMMA)).tolist()
    return {
        "config": dataclasses.asdict(config),
        "converged": fitted.converged,
        "iterations": fitted.iterations,
        "elbo_trace": fitted.elbo_trace.tolist(),
        "B": fitted.B,
        "mu": fitted.mu.tolist(),
        "Sigma": fitted.Sigma.tolist(),
        "block_index": {name: [r.start, r.stop] for name, r in fitted.block_index.items()},
        "curves": curves,
        "theta_fixed": theta_fixed.tolist(),
        "Y": dm.Y.tolist(),
        "C": dm.C.tolist(),
        "n_subjects": dm.n_subjects,
        "subject_rows": [[r.start, r.stop] for r in dm.subject_rows],
        "penalty_blocks": [[name, mat.tolist()] for name, mat in dm.penalty_blocks],
    }


def _fit_from_payload(doc: dict) -> tuple[VariationalFit, DesignMatrices, np.ndarray]:
    try:
        config = _model_config_from_json(doc["config"])
        block_index = {name: range(lo, hi) for name, (lo, hi) in doc["block_index"].items()}
        dm = DesignMatrices(
            Y=np.asarray(doc["Y"], dtype=float),
            C=np.asarray(doc["C"], dtype=float),
            block_index=block_index,
            penalty_blocks=tuple(
                (name, np.asarray(mat, dtype=float)) for name, mat in doc["penalty_blocks"]
            ),
            n_subjects=int(doc["n_subjects"]),
            subject_rows=tuple(range(lo, hi) for lo, hi in doc["subject_rows"]),
        )
        fitted = VariationalFit(
            mu=np.asarray(doc["mu"], dtype=float),
            Sigma=np.asarray(doc["Sigma"], dtype=float),
            B={k: float(v) for k, v in doc["B"].items()},
            elbo_trace=np.asarray(doc["elbo_trace"], dtype=float),
            iterations=int(doc["iterations"]),
            converged=bool(doc["converged"]),
            block_index=block_index,
            config=config,
        )
        theta_fixed = np.asarray(doc["theta_fixed"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed fit file: {exc}") from exc
    return fitted, dm, theta_fixed


def _cmd_fit(args: argparse.Namespace) -> int:
    started = time.monotonic()
    dataset = read_csv(args.data)
    config = _model_config_from_json(_load_json(args.config))
    theta_fixed, theta_random = _bases_for(config, dataset.n_lags)
    dm = assemble(dataset, config, theta_fixed, theta_random)
    fitted = fit_vb(dm, config)
    doc = _fit_payload(fitted, dm, theta_fixed)
    doc["manifest"] = _manifest("fit", dataclasses.asdict(config),
                                [args.data, args.config], {}, started)
    _write_json(doc, args.output)
    if not fitted.converged:
        print(f"warning: no convergence in {config.max_iter} iterations", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_select(args: argparse.Namespace) -> int:
    started = time.monotonic()
    dataset = read_csv(args.data)
    base = _model_config_from_json(_load_json(args.config))

    results: dict[str, dict] = {}
    warnings: list[str] = []
    for structure in (RANDOM_LAG, RANDOM_INTERCEPT):
        config = dataclasses.replace(base, random_effect=structure)
        theta_fixed, theta_random = _bases_for(config, dataset.n_lags)
        dm = assemble(dataset, config, theta_fixed, theta_random)
        try:
            fitted = fit_vb(dm, config)
        except NumericalError as exc:
            warnings.append(f"{structure}: {exc}")
            results[structure] = {"vaic": None, "converged": False}
            continue
        if not fitted.converged:
            warnings.append(f"{structure}: no convergence in {config.max_iter} iterations")
            results[structure] = {"vaic": None, "converged": False}
            continue
        results[structure] = {"vaic": vaic(fitted, dm), "converged": True}

    vaic_lag = results[RANDOM_LAG]["vaic"]
    vaic_int = results[RANDOM_INTERCEPT]["vaic"]
    if vaic_lag is not None and vaic_int is not None:
        decision = select(vaic_lag, vaic_int, args.rule)
        doc = {
            "vaic_lag": decision.vaic_lag,
            "vaic_intercept": decision.vaic_intercept,
            "rule": decision.rule,
            "chosen": decision.chosen,
            "abs_diff": decision.abs_diff,
            "warnings": warnings,
        }
        code = EXIT_OK
    elif vaic_lag is not None or vaic_int is not None:
        chosen = RANDOM_LAG if vaic_lag is not None else RANDOM_INTERCEPT
        warnings.append(f"only the {chosen} model converged; selection is degraded")
        doc = {
            "vaic_lag": vaic_lag,
            "vaic_intercept": vaic_int,
            "rule": args.rule,
            "chosen": chosen,
            "abs_diff": None,
            "warnings": warnings,
        }
        code = EXIT_OK
    else:
        raise NumericalError("neither random-effect structure produced a converged fit")

    doc["manifest"] = _manifest("select", dataclasses.asdict(base),
                                [args.data, args.config], {}, started)
    _write_json(doc, args.output)
    for message in warnings:
        print(f"warning: {message}", file=sys.stderr)
    return code


def _cmd_infer(args: argparse.Namespace) -> int:
    started = time.monotonic()
    fitted, dm, theta_fixed = _fit_from_payload(_load_json(args.fit))
    seed = args.seed if args.seed is not None else int(np.random.SeedSequence().entropy % 2**32)

    doc: dict = {"alpha": args.alpha, "band": args.band}
    if fitted.config.design == CROSSOVER:
        curve = difference_curve(fitted, theta_fixed)
        doc["delta_hat"] = curve.delta_hat.tolist()
        doc["sd"] = curve.sd.tolist()
        doc["gamma0_hat"] = curve.gamma0_hat.tolist()
        doc["gamma1_hat"] = curve.gamma1_hat.tolist()
        if args.band in ("pointwise", "both"):
            lower, upper = pointwise_interval(curve, args.alpha)
            doc["pointwise"] = {"lower": lower.tolist(), "upper": upper.tolist()}
        if args.band in ("simultaneous", "both"):
            band = simultaneous_band(fitted, curve, theta_fixed, args.alpha,
                                     n_draws=args.draws, rng_seed=seed)
            doc["simultaneous"] = {
                "lower": band.lower.tolist(),
                "upper": band.upper.tolist(),
                "m_crit": band.m_crit,
                "covariance_clipped": band.covariance_clipped,
            }
    else:
        curve = gamma_curve(fitted, theta_fixed)
        doc["gamma_hat"] = curve.gamma_hat.tolist()
        doc["sd"] = curve.sd.tolist()
        if args.band in ("pointwise", "both"):
            lower, upper = pointwise_interval(curve, args.alpha)
            doc["pointwise"] = {"lower": lower.tolist(), "upper": upper.tolist()}
        if args.band in ("simultaneous", "both"):
            band = gamma_band(fitted, curve, theta_fixed, args.alpha,
                              n_draws=args.draws, rng_seed=seed)
            doc["simultaneous"] = {
                "lower": band.lower.tolist(),
                "upper": band.upper.tolist(),
                "m_crit": band.m_crit,
                "covariance_clipped": band.covariance_clipped,
            }

    doc["manifest"] = _manifest("infer", {"alpha": args.alpha, "band": args.band,
                                          "draws": args.draws},
                                [args.fit], {"band_seed": seed}, started)
    _write_json(doc, args.output)
    return EXIT_OK


def _adjust_pvalues(p_values: list[float], method: str) -> list[float]:
    m = len(p_values)
    if method == "bonferroni":
        return [min(1.0, m * p) for p in p_values]
    # Benjamini-Hochberg step-up adjusted values.
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 1.0
    for rank in range(m, 0, -1):
        idx = order[rank - 1]
        running = min(running, m * p_values[idx] / rank)
        adjusted[idx] = running
    return adjusted


def _cmd_test(args: argparse.Namespace) -> int:
    started = time.monotonic()
    fitted, dm, theta_fixed = _fit_from_payload(_load_json(args.fit))
    result = zls_test(fitted, dm, theta_fixed)
    doc = {
        "G": result.G,
        "e": result.e,
        "psi": result.psi,
        "kappa": result.kappa,
        "nu": result.nu,
        "scaled_statistic": result.G / result.kappa,
        "p_value": result.p_value,
    }
    if args.adjust:
        if not args.pvalues:
            raise InputError("--adjust needs --pvalues with the other tests' p-values")
        try:
            others = [float(v) for v in args.pvalues.split(",") if v.strip()]
        except ValueError as exc:
            raise InputError(f"bad --pvalues list: {exc}") from exc
        family = [result.p_value] + others
        adjusted = _adjust_pvalues(family, args.adjust)
        doc["adjustment"] = {
            "method": args.adjust,
            "family_p_values": family,
            "adjusted_p_values": adjusted,
            "adjusted_p_value": adjusted[0],
        }
    doc["manifest"] = _manifest("test", {"adjust": args.adjust}, [args.fit], {}, started)
    _write_json(doc, args.output)
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    raw = _load_json(args.config)
    power_grid = raw.pop("power_grid", None)
    config = _sim_config_from_json(raw)
    report = run_study(config, n_jobs=args.jobs)
    if power_grid:
        report.power_curve = run_power_curve(
            config, tuple(float(s) for s in power_grid), n_jobs=args.jobs
        )
    doc = report.to_json_dict()
    doc["manifest"] = _manifest("simulate", dataclasses.asdict(config),
                                [args.config], {"rng_seed": config.rng_seed}, started)
    _write_json(doc, args.output)
    tables_dir = args.tables or (str(Path(args.output).with_suffix("")) + "_tables")
    written = write_report_tables(report, tables_dir)
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldlm",
        description="Longitudinal distributed lag models: variational fitting, "
                    "selection, and inference.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model to a dataset CSV")
    p_fit.add_argument("data", help="dataset CSV (subject,occasion,y,x1..,lag1..)")
    p_fit.add_argument("config", help="model config JSON")
    p_fit.add_argument("-o", "--output", default="fit.json")
    p_fit.set_defaults(func=_cmd_fit)

    p_sel = sub.add_parser("select", help="fit both random-effect structures and choose")
    p_sel.add_argument("data")
    p_sel.add_argument("config")
    p_sel.add_argument("--rule", choices=["min", "diff2", "diff5", "diff10"], default="min")
    p_sel.add_argument("-o", "--output", default="selection.json")
    p_sel.set_defaults(func=_cmd_select)

    p_inf = sub.add_parser("infer", help="curves and intervals from a fit file")
    p_inf.add_argument("fit")
    p_inf.add_argument("--alpha", type=float, default=0.05)
    p_inf.add_argument("--band", choices=["pointwise", "simultaneous", "both"],
                       default="both")
    p_inf.add_argument("--seed", type=int, default=None)
    p_inf.add_argument("--draws", type=int, default=10000)
    p_inf.add_argument("-o", "--output", default="inference.json")
    p_inf.set_defaults(func=_cmd_infer)

    p_test = sub.add_parser("test", help="global test of the difference curve")
    p_test.add_argument("fit")
    p_test.add_argument("--adjust", choices=["bonferroni", "bh"], default=None)
    p_test.add_argument("--pvalues", default=None,
                        help="comma-separated p-values of the other tests in the family")
    p_test.add_argument("-o", "--output", default="zls.json")
    p_test.set_defaults(func=_cmd_test)

    p_sim = sub.add_parser("simulate", help="run a replicated simulation cell")
    p_sim.add_argument("config", help="simulation config JSON")
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--tables", default=None, help="directory for CSV tables")
    p_sim.add_argument("-o", "--output", default="report.json")
    p_sim.set_defaults(func=_cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except VaicConsistencyError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
