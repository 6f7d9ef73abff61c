"""Synthetic-data generator and replicated operating-characteristic studies.

The generator is a stand-in: effect shapes, exposure curves, and magnitudes
are chosen to be plausible for oxygen-saturation-style exposure series, not
to replicate any particular dataset. Exposure curves are smooth spline
transforms of white noise rescaled into [90, 100]; subject-level random lag
curves are drawn from a column-centered spline basis so their contribution
does not scale with the mean exposure level.

Replicates are independently seeded (base seed XOR replicate index) and
aggregated in replicate order, so reports are identical no matter how many
workers run them.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .basis import BasisSpec, build_basis, subject_basis
from .criteria import RULES, select, vaic
from .data_model import (
    CROSSOVER,
    LONGITUDINAL,
    RANDOM_INTERCEPT,
    RANDOM_LAG,
    LdlmDataset,
    ModelConfig,
    assemble,
    make_dataset,
)
from .inference import (
    difference_curve,
    gamma_band,
    gamma_curve,
    pointwise_interval,
    simultaneous_band,
    zls_test,
)
from .vb import NumericalError, fit as fit_vb

EFFECTS = ("peak", "cyclical", "sigmoidal")

# Invented fixed-effect stand-ins shared by every simulated dataset.
N_COVARIATES = 2
TRUE_BETA = np.array([1.0, 0.5])

# Smoothness of the exposure curves: white noise on this many cubic basis
# functions, then rescaled into the SaO2-like range below.
EXPOSURE_BASIS_SIZE = 10
EXPOSURE_RANGE = (90.0, 100.0)

SIM_RANDOM_BASIS_SIZE = 8

DEFAULT_ALPHA_GRID = tuple(round(0.01 * k, 2) for k in range(1, 11))
COVERAGE_LEVEL = 0.95
BAND_DRAWS = 10000


@dataclass(frozen=True)
class SimConfig:
    """One simulation cell: design, generating model, effect, and sizes."""

    design: str = CROSSOVER
    true_model: str = RANDOM_INTERCEPT
    effect: str = "peak"
    n: int = 25
    ell: int = 60
    n_longitudinal_occasions: int = 2
    scaling_factor: float = 2.0
    replicates: int = 200
    rng_seed: int = 20260809
    noise_sd: float = 1.0
    random_intercept_sd: float = 1.0
    random_lag_sd: float = 0.5

    def __post_init__(self) -> None:
        if self.design not in (CROSSOVER, LONGITUDINAL):
            raise ValueError(f"unknown design {self.design!r}")
        if self.true_model not in (RANDOM_LAG, RANDOM_INTERCEPT):
            raise ValueError(f"unknown true model {self.true_model!r}")
        if self.effect not in EFFECTS:
            raise ValueError(f"unknown effect {self.effect!r}; expected one of {EFFECTS}")
        if not 2 <= self.n_longitudinal_occasions <= 5:
            raise ValueError("n_longitudinal_occasions must be between 2 and 5")
        if self.scaling_factor < 1.0:
            raise ValueError("scaling_factor must be >= 1")
        if min(self.noise_sd, self.random_intercept_sd, self.random_lag_sd) <= 0.0:
            raise ValueError("all generator standard deviations must be positive")
        if self.replicates < 1 or self.n < 2 or self.ell < 4:
            raise ValueError("replicates, n, and ell are too small")


def true_effect(effect: str, t: np.ndarray | float, ell: int, s: float = 1.0) -> np.ndarray:
    """Evaluate the scaled true lag effect at grid points t in 1..ell.

    peak: unit-height Gaussian bump centered at ell/2 with sd ell/8.
    cyclical: two full sine cycles over the lag window.
    sigmoidal: logistic ramp through the window midpoint.
    The control curve is the s = 1 version and the treatment curve the s-scaled
    one, so the difference curve is (s - 1) times the base shape.
    """
    t_arr = np.asarray(t, dtype=float)
    if effect == "peak":
        center = ell / 2.0
        width = ell / 8.0
        base = np.exp(-0.5 * ((t_arr - center) / width) ** 2)
    elif effect == "cyclical":
        base = np.sin(4.0 * np.pi * t_arr / ell)
    elif effect == "sigmoidal":
        base = 1.0 / (1.0 + np.exp(-10.0 * (t_arr / ell - 0.5)))
    else:
        raise ValueError(f"unknown effect {effect!r}; expected one of {EFFECTS}")
    return s * base


def _exposure_curve(rng: np.random.Generator, ell: int, theta_exposure: np.ndarray) -> np.ndarray:
    coefs = rng.standard_normal(theta_exposure.shape[1])
    curve = theta_exposure @ coefs
    lo, hi = float(curve.min()), float(curve.max())
    span = hi - lo
    lo_target, hi_target = EXPOSURE_RANGE
    if span <= 0.0:
        return np.full(ell, 0.5 * (lo_target + hi_target))
    return lo_target + (hi_target - lo_target) * (curve - lo) / span


def simulate_dataset(config: SimConfig, replicate_seed: int) -> LdlmDataset:
    """Draw one dataset under the configured generating model."""
    rng = np.random.default_rng(replicate_seed)
    ell = config.ell
    t_grid = np.arange(1, ell + 1, dtype=float)

    theta_exposure = build_basis(BasisSpec(num_lags=ell, num_basis=EXPOSURE_BASIS_SIZE))
    if config.design == CROSSOVER:
        gamma = {
            0: true_effect(config.effect, t_grid, ell, 1.0),
            1: true_effect(config.effect, t_grid, ell, config.scaling_factor),
        }
        occasions = (0, 1)
    else:
        gamma_shared = true_effect(config.effect, t_grid, ell, 1.0)
        occasions = tuple(range(1, config.n_longitudinal_occasions + 1))

    if config.true_model == RANDOM_LAG:
        theta_subject = subject_basis(ell, SIM_RANDOM_BASIS_SIZE)
        # Column-centering keeps the random contribution from tracking the
        # mean exposure level (which sits near 95, not 0).
        theta_subject = theta_subject - theta_subject.mean(axis=0, keepdims=True)

    rows = []
    for i in range(config.n):
        if config.true_model == RANDOM_LAG:
            coefs = config.random_lag_sd * rng.standard_normal(SIM_RANDOM_BASIS_SIZE)
            random_curve = theta_subject @ coefs
        else:
            intercept = config.random_intercept_sd * rng.standard_normal()
        for j in occasions:
            x = rng.standard_normal(N_COVARIATES)
            lags = _exposure_curve(rng, ell, theta_exposure)
            fixed_curve = gamma[j] if config.design == CROSSOVER else gamma_shared
            mean = float(x @ TRUE_BETA) + float(lags @ fixed_curve)
            if config.true_model == RANDOM_LAG:
                mean += float(lags @ random_curve)
            else:
                mean += intercept
            y = mean + config.noise_sd * rng.standard_normal()
            rows.append((f"s{i + 1:03d}", j, y, x, lags))
    return make_dataset(rows)


def replicate_seed(config: SimConfig, index: int) -> int:
    return config.rng_seed ^ index


@dataclass
class StudyReport:
    """Aggregated operating characteristics for one simulation cell."""

    config: SimConfig
    replicates_used: int
    failures: int
    selection_accuracy: dict[str, float]
    bias: dict[str, float]
    mise: dict[str, float]
    coverage_pointwise: dict[str, float]
    coverage_simultaneous: dict[str, float]
    rejection_by_alpha: dict[str, dict[float, float]]
    power_curve: dict[float, float] | None = None

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["config"] = asdict(self.config)
        if self.power_curve is not None:
            out["power_curve"] = {repr(s): rate for s, rate in self.power_curve.items()}
        out["rejection_by_alpha"] = {
            model: {repr(a): r for a, r in curve.items()}
            for model, curve in self.rejection_by_alpha.items()
        }
        return out


def _model_config(design: str, random_effect: str) -> ModelConfig:
    return ModelConfig(design=design, random_effect=random_effect)


def _true_delta(config: SimConfig) -> np.ndarray:
    t_grid = np.arange(1, config.ell + 1, dtype=float)
    base = true_effect(config.effect, t_grid, config.ell, 1.0)
    return (config.scaling_factor - 1.0) * base


def _run_replicate(config: SimConfig, index: int) -> dict:
    """Fit both random-effect structures on one simulated dataset and collect
    everything the aggregator needs. Returns {"failed": reason} on numerical
    failure or non-convergence."""
    seed = replicate_seed(config, index)
    dataset = simulate_dataset(config, seed)

    theta_fixed = build_basis(BasisSpec(num_lags=config.ell, num_basis=8))
    theta_random = subject_basis(config.ell, 8)

    if config.design == CROSSOVER:
        truth = _true_delta(config)
    else:
        t_grid = np.arange(1, config.ell + 1, dtype=float)
        truth = true_effect(config.effect, t_grid, config.ell, 1.0)

    result: dict = {"failed": None, "vaic": {}, "bias": {}, "mise": {},
                    "covered_pw": {}, "covered_sb": {}, "zls_p": {}}
    for structure in (RANDOM_LAG, RANDOM_INTERCEPT):
        model = _model_config(config.design, structure)
        dm = assemble(dataset, model, theta_fixed, theta_random)
        try:
            fitted = fit_vb(dm, model)
        except NumericalError as exc:
            return {"failed": f"{structure}: {exc}"}
        if not fitted.converged:
            return {"failed": f"{structure}: no convergence in {model.max_iter} iterations"}
        result["vaic"][structure] = vaic(fitted, dm)

        if config.design == CROSSOVER:
            curve = difference_curve(fitted, theta_fixed)
            band = simultaneous_band(
                fitted, curve, theta_fixed, 1.0 - COVERAGE_LEVEL,
                n_draws=BAND_DRAWS, rng_seed=seed + 1,
            )
            try:
                result["zls_p"][structure] = zls_test(fitted, dm, theta_fixed).p_value
            except NumericalError as exc:
                return {"failed": f"{structure}: {exc}"}
        else:
            curve = gamma_curve(fitted, theta_fixed)
            band = gamma_band(
                fitted, curve, theta_fixed, 1.0 - COVERAGE_LEVEL,
                n_draws=BAND_DRAWS, rng_seed=seed + 1,
            )
        lower, upper = pointwise_interval(curve, 1.0 - COVERAGE_LEVEL)
        errors = curve.estimate - truth
        result["bias"][structure] = float(np.mean(np.abs(errors)))
        result["mise"][structure] = float(np.mean(errors**2))
        result["covered_pw"][structure] = float(
            np.mean((truth >= lower) & (truth <= upper))
        )
        result["covered_sb"][structure] = float(
            np.mean((truth >= band.lower) & (truth <= band.upper))
        )
    return result


def run_study(
    config: SimConfig,
    n_jobs: int = 1,
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID,
) -> StudyReport:
    """Run the full replicated experiment for one cell.

    Fits both random-effect structures on every replicate; failed replicates
    (non-convergence or numerical degeneracy in either fit) are counted and
    excluded from every aggregate.
    """
    indices = list(range(config.replicates))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_replicate, [config] * len(indices), indices,
                                    chunksize=max(1, len(indices) // (4 * n_jobs))))
    else:
        results = [_run_replicate(config, i) for i in indices]

    ok = [r for r in results if r["failed"] is None]
    failures = len(results) - len(ok)

    selection_accuracy = {}
    for rule in RULES:
        correct = [
            select(r["vaic"][RANDOM_LAG], r["vaic"][RANDOM_INTERCEPT], rule).chosen
            == config.true_model
            for r in ok
        ]
        selection_accuracy[rule] = 100.0 * float(np.mean(correct)) if ok else float("nan")

    bias = {}
    mise = {}
    coverage_pw = {}
    coverage_sb = {}
    rejection: dict[str, dict[float, float]] = {}
    for structure in (RANDOM_LAG, RANDOM_INTERCEPT):
        bias[structure] = float(np.mean([r["bias"][structure] for r in ok])) if ok else float("nan")
        mise[structure] = float(np.mean([r["mise"][structure] for r in ok])) if ok else float("nan")
        coverage_pw[structure] = (
            100.0 * float(np.mean([r["covered_pw"][structure] for r in ok])) if ok else float("nan")
        )
        coverage_sb[structure] = (
            100.0 * float(np.mean([r["covered_sb"][structure] for r in ok])) if ok else float("nan")
        )
        if config.design == CROSSOVER and ok:
            p_values = np.array([r["zls_p"][structure] for r in ok])
            rejection[structure] = {a: float(np.mean(p_values < a)) for a in alpha_grid}
        else:
            rejection[structure] = {}

    return StudyReport(
        config=config,
        replicates_used=len(ok),
        failures=failures,
        selection_accuracy=selection_accuracy,
        bias=bias,
        mise=mise,
        coverage_pointwise=coverage_pw,
        coverage_simultaneous=coverage_sb,
        rejection_by_alpha=rejection,
    )


def _power_replicate(config: SimConfig, index: int, fitted_model: str, alpha: float) -> float | None:
    """ZLS rejection indicator for one replicate; None marks a failure."""
    seed = replicate_seed(config, index)
    dataset = simulate_dataset(config, seed)
    theta_fixed = build_basis(BasisSpec(num_lags=config.ell, num_basis=8))
    theta_random = subject_basis(config.ell, 8)
    model = _model_config(config.design, fitted_model)
    dm = assemble(dataset, model, theta_fixed, theta_random)
    try:
        fitted = fit_vb(dm, model)
        if not fitted.converged:
            return None
        p = zls_test(fitted, dm, theta_fixed).p_value
    except NumericalError:
        return None
    return 1.0 if p < alpha else 0.0


def run_power_curve(
    config: SimConfig,
    s_values: tuple[float, ...],
    alpha: float = 0.05,
    fitted_model: str | None = None,
    n_jobs: int = 1,
) -> dict[float, float]:
    """ZLS rejection rate versus the curve-scaling factor.

    The same replicate seeds are reused across s values (common random
    numbers), so the curve is comparable point to point. s = 1 gives the
    empirical size. Fits only the requested structure (defaults to the
    correctly specified one).
    """
    if config.design != CROSSOVER:
        raise ValueError("the power study is defined for the crossover design")
    fitted = fitted_model or config.true_model
    out: dict[float, float] = {}
    for s in s_values:
        cell = replace(config, scaling_factor=float(s))
        indices = list(range(cell.replicates))
        if n_jobs > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                flags = list(pool.map(
                    _power_replicate,
                    [cell] * len(indices), indices,
                    [fitted] * len(indices), [alpha] * len(indices),
                    chunksize=max(1, len(indices) // (4 * n_jobs)),
                ))
        else:
            flags = [_power_replicate(cell, i, fitted, alpha) for i in indices]
        usable = [f for f in flags if f is not None]
        out[float(s)] = float(np.mean(usable)) if usable else float("nan")
    return out


def write_report_json(report: StudyReport, path: str | Path) -> None:
    with open(path, "w") as handle:
        json.dump(report.to_json_dict(), handle, indent=2)
        handle.write("\n")


def write_report_tables(report: StudyReport, directory: str | Path) -> list[Path]:
    """Write the CSV tables: selection accuracy by rule, bias/MISE and
    coverage by fitted structure, and the rejection-rate curves."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    written = []

    path = directory / "selection.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["effect", "true_model", "n", "min", "diff2", "diff5", "diff10"])
        writer.writerow(
            [cfg.effect, cfg.true_model, cfg.n]
            + [f"{report.selection_accuracy[r]:.2f}" for r in ("min", "diff2", "diff5", "diff10")]
        )
    written.append(path)

    path = directory / "bias_mise.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["effect", "true_model", "n", "bias_lag", "bias_intercept",
                         "mise_lag", "mise_intercept"])
        writer.writerow([
            cfg.effect, cfg.true_model, cfg.n,
            f"{report.bias[RANDOM_LAG]:.6f}", f"{report.bias[RANDOM_INTERCEPT]:.6f}",
            f"{report.mise[RANDOM_LAG]:.6f}", f"{report.mise[RANDOM_INTERCEPT]:.6f}",
        ])
    written.append(path)

    path = directory / "coverage.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["effect", "true_model", "n", "pointwise_lag", "pointwise_intercept",
                         "simultaneous_lag", "simultaneous_intercept"])
        writer.writerow([
            cfg.effect, cfg.true_model, cfg.n,
            f"{report.coverage_pointwise[RANDOM_LAG]:.2f}",
            f"{report.coverage_pointwise[RANDOM_INTERCEPT]:.2f}",
            f"{report.coverage_simultaneous[RANDOM_LAG]:.2f}",
            f"{report.coverage_simultaneous[RANDOM_INTERCEPT]:.2f}",
        ])
    written.append(path)

    if any(report.rejection_by_alpha.values()):
        path = directory / "size_curve.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["alpha", "rate_lag", "rate_intercept"])
            alphas = sorted(report.rejection_by_alpha[RANDOM_LAG])
            for a in alphas:
                writer.writerow([
                    a,
                    report.rejection_by_alpha[RANDOM_LAG].get(a, ""),
                    report.rejection_by_alpha[RANDOM_INTERCEPT].get(a, ""),
                ])
        written.append(path)

    if report.power_curve:
        path = directory / "power_curve.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["s", "power"])
            for s in sorted(report.power_curve):
                writer.writerow([s, report.power_curve[s]])
        written.append(path)
    return written
