"""Dataset containers and design-matrix assembly.

Rows are stacked subject-major, occasion-minor everywhere; downstream code
locates coefficient blocks through ``DesignMatrices.block_index`` rather than
positional convention.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .basis import penalty_matrix

CROSSOVER = "crossover"
LONGITUDINAL = "longitudinal"
RANDOM_LAG = "lag"
RANDOM_INTERCEPT = "intercept"

# Coefficient block names, in stacking order.
BLOCK_BETA = "beta"
BLOCK_GAMMA0 = "gamma0"
BLOCK_GAMMA1 = "gamma1"
BLOCK_GAMMA = "gamma"
BLOCK_RANDOM = "random"


class DatasetError(ValueError):
    """Raised when a dataset violates its structural contract."""


@dataclass(frozen=True)
class Occasion:
    """One observed occasion: outcome, fixed covariates, and the lag vector."""

    occasion: int
    y: float
    x: np.ndarray
    lags: np.ndarray


@dataclass(frozen=True)
class Subject:
    subject_id: str
    occasions: tuple[Occasion, ...]


@dataclass(frozen=True)
class LdlmDataset:
    """Long-format repeated-measures data.

    Every occasion must share the same covariate and lag dimensions. Crossover
    data must carry exactly the occasion pair {0, 1} per subject (0 = control,
    1 = treatment).
    """

    subjects: tuple[Subject, ...]

    def __post_init__(self) -> None:
        if not self.subjects:
            raise DatasetError("dataset has no subjects")
        p = self.subjects[0].occasions[0].x.shape[0]
        ell = self.subjects[0].occasions[0].lags.shape[0]
        for subj in self.subjects:
            if not subj.occasions:
                raise DatasetError(f"subject {subj.subject_id} has no occasions")
            for occ in subj.occasions:
                if occ.x.shape != (p,):
                    raise DatasetError(
                        f"subject {subj.subject_id} occasion {occ.occasion}: "
                        f"expected {p} covariates, got {occ.x.shape[0]}"
                    )
                if occ.lags.shape != (ell,):
                    raise DatasetError(
                        f"subject {subj.subject_id} occasion {occ.occasion}: "
                        f"expected {ell} lags, got {occ.lags.shape[0]}"
                    )

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_rows(self) -> int:
        return sum(len(s.occasions) for s in self.subjects)

    @property
    def n_covariates(self) -> int:
        return self.subjects[0].occasions[0].x.shape[0]

    @property
    def n_lags(self) -> int:
        return self.subjects[0].occasions[0].lags.shape[0]

    def validate_crossover(self) -> None:
        for subj in self.subjects:
            labels = sorted(occ.occasion for occ in subj.occasions)
            if labels != [0, 1]:
                raise DatasetError(
                    f"crossover subject {subj.subject_id} must have exactly occasions "
                    f"{{0, 1}}, got {labels}"
                )


def make_dataset(rows: Iterable[tuple[str, int, float, np.ndarray, np.ndarray]]) -> LdlmDataset:
    """Build a dataset from (subject_id, occasion, y, x, lags) tuples.

    Subjects keep first-appearance order; occasions are sorted by index within
    each subject.
    """
    by_subject: dict[str, list[Occasion]] = {}
    for subject_id, occasion, y, x, lags in rows:
        occ = Occasion(
            occasion=int(occasion),
            y=float(y),
            x=np.asarray(x, dtype=float),
            lags=np.asarray(lags, dtype=float),
        )
        by_subject.setdefault(str(subject_id), []).append(occ)
    subjects = tuple(
        Subject(subject_id=sid, occasions=tuple(sorted(occs, key=lambda o: o.occasion)))
        for sid, occs in by_subject.items()
    )
    return LdlmDataset(subjects=subjects)


@dataclass(frozen=True)
class ModelConfig:
    """Model structure, priors, and convergence controls.

    num_basis is the fixed-effect spline size (shared by both treatment curves
    under the crossover design); num_random_basis is the per-subject spline
    size of the random lag curve. All variance components carry inverse-gamma
    (shape, rate) hyperparameters.
    """

    design: str = CROSSOVER
    random_effect: str = RANDOM_LAG
    num_basis: int = 8
    num_random_basis: int = 8
    xi: float = 0.01
    a_e: float = 0.01
    b_e: float = 0.01
    a_0: float = 0.01
    b_0: float = 0.01
    a_1: float = 0.01
    b_1: float = 0.01
    a_gamma: float = 0.01
    b_gamma: float = 0.01
    a_g: float = 0.01
    b_g: float = 0.01
    a_u: float = 0.01
    b_u: float = 0.01
    sigma_b2: float = 1e6
    tol: float = 1e-6
    max_iter: int = 500

    def __post_init__(self) -> None:
        if self.design not in (CROSSOVER, LONGITUDINAL):
            raise ValueError(f"unknown design {self.design!r}")
        if self.random_effect not in (RANDOM_LAG, RANDOM_INTERCEPT):
            raise ValueError(f"unknown random effect {self.random_effect!r}")
        if self.num_basis < 1 or self.num_random_basis < 1:
            raise ValueError("basis sizes must be positive")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")
        for name in ("a_e", "b_e", "a_0", "b_0", "a_1", "b_1", "a_gamma",
                     "b_gamma", "a_g", "b_g", "a_u", "b_u", "sigma_b2", "tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def hyperparameters(self, block: str) -> tuple[float, float]:
        """Inverse-gamma (shape, rate) prior for a penalized block."""
        if block == BLOCK_GAMMA0:
            return self.a_0, self.b_0
        if block == BLOCK_GAMMA1:
            return self.a_1, self.b_1
        if block == BLOCK_GAMMA:
            return self.a_gamma, self.b_gamma
        if block == BLOCK_RANDOM:
            if self.random_effect == RANDOM_LAG:
                return self.a_g, self.b_g
            return self.a_u, self.b_u
        raise KeyError(f"block {block!r} has no variance hyperparameters")


@dataclass(frozen=True)
class DesignMatrices:
    """Stacked outcome vector, full design matrix, and block bookkeeping.

    penalty_blocks holds one (block name, penalty matrix) pair per penalized
    coefficient block, in column order; the beta block is unpenalized (fixed
    Gaussian prior variance sigma_b2).
    """

    Y: np.ndarray
    C: np.ndarray
    block_index: dict[str, range]
    penalty_blocks: tuple[tuple[str, np.ndarray], ...]
    n_subjects: int
    subject_rows: tuple[range, ...]

    @property
    def n_rows(self) -> int:
        return self.Y.shape[0]

    @property
    def n_coefficients(self) -> int:
        return self.C.shape[1]

    def columns(self, block: str) -> np.ndarray:
        return self.C[:, self.block_index[block]]


def assemble(
    dataset: LdlmDataset,
    config: ModelConfig,
    theta_fixed: np.ndarray,
    theta_random: np.ndarray | None = None,
) -> DesignMatrices:
    """Stack Y and build C = [X | fixed-lag block | random block].

    Crossover: the fixed-lag block is the two treatment-specific basis
    expansions side by side (a control row touches only the first num_basis
    columns, a treatment row only the last). Longitudinal: a single expansion.
    The random block is either the per-subject basis-compressed lag rows
    (random lag) or the subject-indicator matrix (random intercept).
    """
    ell = dataset.n_lags
    if theta_fixed.shape[0] != ell:
        raise DatasetError(
            f"fixed basis has {theta_fixed.shape[0]} rows but data has {ell} lags"
        )
    k_fixed = theta_fixed.shape[1]
    if k_fixed != config.num_basis:
        raise DatasetError(
            f"fixed basis has {k_fixed} columns but config.num_basis = {config.num_basis}"
        )
    if config.design == CROSSOVER:
        dataset.validate_crossover()
    if config.random_effect == RANDOM_LAG:
        if theta_random is None:
            raise DatasetError("random-lag models need a subject basis matrix")
        if theta_random.shape[0] != ell:
            raise DatasetError(
                f"subject basis has {theta_random.shape[0]} rows but data has {ell} lags"
            )
        k_rand = theta_random.shape[1]
        if k_rand != config.num_random_basis:
            raise DatasetError(
                f"subject basis has {k_rand} columns but config.num_random_basis = "
                f"{config.num_random_basis}"
            )

    n = dataset.n_subjects
    n_rows = dataset.n_rows
    p = dataset.n_covariates

    y = np.empty(n_rows)
    x_block = np.empty((n_rows, p))
    if config.design == CROSSOVER:
        lag_block = np.zeros((n_rows, 2 * k_fixed))
    else:
        lag_block = np.zeros((n_rows, k_fixed))
    if config.random_effect == RANDOM_LAG:
        rand_block = np.zeros((n_rows, n * config.num_random_basis))
    else:
        rand_block = np.zeros((n_rows, n))

    subject_rows: list[range] = []
    row = 0
    for i, subj in enumerate(dataset.subjects):
        start = row
        for occ in subj.occasions:
            y[row] = occ.y
            x_block[row] = occ.x
            compressed = occ.lags @ theta_fixed
            if config.design == CROSSOVER:
                if occ.occasion == 0:
                    lag_block[row, :k_fixed] = compressed
                else:
                    lag_block[row, k_fixed:] = compressed
            else:
                lag_block[row] = compressed
            if config.random_effect == RANDOM_LAG:
                k_rand = config.num_random_basis
                rand_block[row, i * k_rand : (i + 1) * k_rand] = occ.lags @ theta_random
            else:
                rand_block[row, i] = 1.0
            row += 1
        subject_rows.append(range(start, row))

    c = np.hstack([x_block, lag_block, rand_block])

    block_index: dict[str, range] = {BLOCK_BETA: range(0, p)}
    col = p
    if config.design == CROSSOVER:
        block_index[BLOCK_GAMMA0] = range(col, col + k_fixed)
        block_index[BLOCK_GAMMA1] = range(col + k_fixed, col + 2 * k_fixed)
        col += 2 * k_fixed
    else:
        block_index[BLOCK_GAMMA] = range(col, col + k_fixed)
        col += k_fixed
    block_index[BLOCK_RANDOM] = range(col, col + rand_block.shape[1])

    fixed_penalty = penalty_matrix(config.num_basis, config.xi)
    penalties: list[tuple[str, np.ndarray]] = []
    if config.design == CROSSOVER:
        penalties.append((BLOCK_GAMMA0, fixed_penalty))
        penalties.append((BLOCK_GAMMA1, fixed_penalty))
    else:
        penalties.append((BLOCK_GAMMA, fixed_penalty))
    if config.random_effect == RANDOM_LAG:
        per_subject = penalty_matrix(config.num_random_basis, config.xi)
        penalties.append((BLOCK_RANDOM, _block_diag(per_subject, n)))
    else:
        penalties.append((BLOCK_RANDOM, np.eye(n)))

    return DesignMatrices(
        Y=y,
        C=c,
        block_index=block_index,
        penalty_blocks=tuple(penalties),
        n_subjects=n,
        subject_rows=tuple(subject_rows),
    )


def _block_diag(block: np.ndarray, count: int) -> np.ndarray:
    k = block.shape[0]
    out = np.zeros((count * k, count * k))
    for i in range(count):
        out[i * k : (i + 1) * k, i * k : (i + 1) * k] = block
    return out


def read_csv(path: str) -> LdlmDataset:
    """Read the long-format dataset CSV.

    Expected header: subject,occasion,y,x1..xP,lag1..lagL. One row per
    (subject, occasion).
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        n_x, n_lag = _parse_header(header, path)
        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != 3 + n_x + n_lag:
                raise DatasetError(
                    f"{path}: row {line_no} has {len(record)} fields, expected "
                    f"{3 + n_x + n_lag}"
                )
            try:
                subject = record[0]
                occasion = int(record[1])
                y = float(record[2])
                x = np.array([float(v) for v in record[3 : 3 + n_x]])
                lags = np.array([float(v) for v in record[3 + n_x :]])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {line_no}: {exc}") from None
            rows.append((subject, occasion, y, x, lags))
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return make_dataset(rows)


def _parse_header(header: list[str], path: str) -> tuple[int, int]:
    cols = [h.strip() for h in header]
    if cols[:3] != ["subject", "occasion", "y"]:
        raise DatasetError(
            f"{path}: header must start with subject,occasion,y; got {cols[:3]}"
        )
    n_x = 0
    idx = 3
    while idx < len(cols) and cols[idx] == f"x{n_x + 1}":
        n_x += 1
        idx += 1
    n_lag = 0
    while idx < len(cols) and cols[idx] == f"lag{n_lag + 1}":
        n_lag += 1
        idx += 1
    if idx != len(cols) or n_lag == 0:
        raise DatasetError(
            f"{path}: header tail must be x1..xP,lag1..lagL; got {cols[3:]}"
        )
    return n_x, n_lag


def write_csv(dataset: LdlmDataset, path: str) -> None:
    """Write a dataset in the format read_csv expects."""
    p = dataset.n_covariates
    ell = dataset.n_lags
    header = (
        ["subject", "occasion", "y"]
        + [f"x{i + 1}" for i in range(p)]
        + [f"lag{i + 1}" for i in range(ell)]
    )
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for subj in dataset.subjects:
            for occ in subj.occasions:
                writer.writerow(
                    [subj.subject_id, occ.occasion, repr(occ.y)]
                    + [repr(float(v)) for v in occ.x]
                    + [repr(float(v)) for v in occ.lags]
                )
